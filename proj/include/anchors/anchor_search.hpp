#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "anchors/dataset.hpp"
#include "anchors/errors.hpp"
#include "anchors/estimate.hpp"
#include "anchors/model.hpp"
#include "anchors/perturbation.hpp"
#include "anchors/rng.hpp"

namespace anchors {

struct SearchConfig {
  double epsilon = 0.05;   // precision slack: require precision >= 1 - epsilon
  double delta = 0.1;      // overall failure probability of the search
  int batch_size = 100;    // samples per draw
  int max_samples_per_candidate = 10000;
  int max_anchor_size = 0;  // 0 means "up to every feature"
  double tolerance_eta = 0.01;  // smallest precision gap worth separating

  void validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
      throw ConfigError("SearchConfig: epsilon must be in (0,1]");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw ConfigError("SearchConfig: delta must be in (0,1)");
    }
    if (batch_size < 1) throw ConfigError("SearchConfig: batch_size must be >= 1");
    if (max_samples_per_candidate < batch_size) {
      throw ConfigError("SearchConfig: max_samples_per_candidate must be >= batch_size");
    }
    if (max_anchor_size < 0) {
      throw ConfigError("SearchConfig: max_anchor_size must be >= 0");
    }
    if (!(tolerance_eta >= 0.0 && tolerance_eta < 1.0)) {
      throw ConfigError("SearchConfig: tolerance_eta must be in [0,1)");
    }
  }

  int max_looks() const {
    return (max_samples_per_candidate + batch_size - 1) / batch_size;
  }

  // Per-comparison confidence. Union bound over at most F rounds, F arms per
  // round, and max_looks() repeated interval evaluations per arm keeps the
  // whole search's failure probability at delta.
  double comparison_delta(int n_features) const {
    double f = std::max(1, n_features);
    return delta / (f * f * static_cast<double>(max_looks()));
  }
};

namespace detail {

// Draws n conditional samples and counts label agreement with label_x.
inline std::int64_t count_matches(const BlackBoxModel& f, int label_x,
                                  const Instance& x, const std::vector<Predicate>& c,
                                  const ConditionalSampler& D, int n, Rng& rng) {
  auto zs = D.sample(c, x, n, rng);
  auto preds = f.predict_batch(zs);
  return std::count(preds.begin(), preds.end(), label_x);
}

}  // namespace detail

// Monte-Carlo estimate of Precision(f, x, c, D): the expected rate at which
// f keeps its prediction on samples that satisfy c.
inline PrecisionEstimate estimate_precision(const BlackBoxModel& f, const Instance& x,
                                            const std::vector<Predicate>& c,
                                            const ConditionalSampler& D, int n,
                                            double delta, Rng& rng) {
  if (n < 1) throw ConfigError("estimate_precision: n must be >= 1");
  int label_x = f.predict(x);
  std::int64_t matches = detail::count_matches(f, label_x, x, c, D, n, rng);
  return PrecisionEstimate{n, matches, delta};
}

inline PrecisionEstimate estimate_precision(const BlackBoxModel& f, const Instance& x,
                                            const Anchor& c, const ConditionalSampler& D,
                                            int n, double delta, Rng& rng) {
  return estimate_precision(f, x, c.predicates, D, n, delta, rng);
}

// Exact precision under the tabular row sampler, by enumerating every source
// row. This is the ground-truth counterpart of estimate_precision for finite
// D; it deliberately does not go through a ConditionalSampler.
inline double exact_precision(const BlackBoxModel& f, const Instance& x,
                              const std::vector<Predicate>& c,
                              const std::vector<Instance>& source_rows) {
  if (source_rows.empty()) throw DataError("exact_precision: no source rows");
  int label_x = f.predict(x);
  std::vector<Instance> zs;
  zs.reserve(source_rows.size());
  for (const auto& row : source_rows) {
    Instance z = row;
    for (const auto& p : c) {
      auto fi = static_cast<std::size_t>(p.feature);
      z.raw[fi] = x.raw[fi];
      z.disc[fi] = x.disc[fi];
    }
    zs.push_back(std::move(z));
  }
  auto preds = f.predict_batch(zs);
  auto matches = std::count(preds.begin(), preds.end(), label_x);
  return static_cast<double>(matches) / static_cast<double>(source_rows.size());
}

inline double exact_precision(const BlackBoxModel& f, const Instance& x,
                              const Anchor& c, const std::vector<Instance>& source_rows) {
  return exact_precision(f, x, c.predicates, source_rows);
}

struct CandidateSelection {
  Predicate chosen;
  PrecisionEstimate estimate;
  std::int64_t samples_drawn = 0;
};

namespace detail {

struct Arm {
  Predicate predicate;
  std::vector<Predicate> extended;  // base plus this predicate
  std::int64_t n = 0;
  std::int64_t matches = 0;

  PrecisionEstimate estimate(double delta) const {
    return PrecisionEstimate{n, matches, delta};
  }
};

inline CandidateSelection select_best_candidate_impl(
    const BlackBoxModel& f, int label_x, const Instance& x, const Anchor& base,
    const std::vector<Predicate>& candidates, const ConditionalSampler& D,
    const SearchConfig& config, Rng& rng) {
  if (candidates.empty()) {
    throw std::invalid_argument("select_best_candidate: no candidates");
  }
  const double delta_cmp =
      config.comparison_delta(static_cast<int>(x.disc.size()));
  const std::int64_t cap = config.max_samples_per_candidate;

  std::vector<Arm> arms;
  arms.reserve(candidates.size());
  for (const auto& p : candidates) {
    if (base.constrains(p.feature)) {
      throw std::invalid_argument(
          "select_best_candidate: candidate feature already constrained");
    }
    if (!predicate_holds(p, x)) {
      throw std::invalid_argument(
          "select_best_candidate: candidate does not hold on the instance");
    }
    Arm arm;
    arm.predicate = p;
    Anchor ext = base;
    ext.add(p);
    arm.extended = ext.predicates;
    arms.push_back(std::move(arm));
  }
  std::int64_t total = 0;

  auto draw = [&](Arm& arm) {
    auto batch = static_cast<int>(
        std::min<std::int64_t>(config.batch_size, cap - arm.n));
    if (batch <= 0) return false;
    arm.matches += count_matches(f, label_x, x, arm.extended, D, batch, rng);
    arm.n += batch;
    total += batch;
    return true;
  };

  for (auto& arm : arms) draw(arm);

  // LUCB loop: keep sampling the empirical leader and the rival with the
  // highest upper bound until the leader's lower bound clears every rival's
  // upper bound (up to the configured tolerance), or the caps force a
  // fallback to the empirical best. Candidate order is by feature index, and
  // all argmax scans are first-wins, which realizes the lowest-feature-index
  // tie-break.
  while (true) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < arms.size(); ++i) {
      if (arms[i].estimate(delta_cmp).mean() >
          arms[best].estimate(delta_cmp).mean()) {
        best = i;
      }
    }
    if (arms.size() == 1) {
      return CandidateSelection{arms[0].predicate, arms[0].estimate(delta_cmp), total};
    }
    std::size_t rival = best == 0 ? 1 : 0;
    for (std::size_t i = 0; i < arms.size(); ++i) {
      if (i == best || i == rival) continue;
      if (arms[i].estimate(delta_cmp).upper() >
          arms[rival].estimate(delta_cmp).upper()) {
        rival = i;
      }
    }
    if (arms[best].estimate(delta_cmp).lower() >=
        arms[rival].estimate(delta_cmp).upper() - config.tolerance_eta) {
      return CandidateSelection{arms[best].predicate, arms[best].estimate(delta_cmp),
                                total};
    }
    bool sampled = draw(arms[best]);
    sampled = draw(arms[rival]) || sampled;
    if (!sampled) {
      return CandidateSelection{arms[best].predicate, arms[best].estimate(delta_cmp),
                                total};
    }
  }
}

}  // namespace detail

// Adaptive best-arm identification over the candidate predicates: with
// per-decision confidence the returned predicate's precision is within
// tolerance_eta of every rival's.
inline CandidateSelection select_best_candidate(
    const BlackBoxModel& f, const Instance& x, const Anchor& base,
    const std::vector<Predicate>& candidates, const ConditionalSampler& D,
    const SearchConfig& config, Rng& rng) {
  config.validate();
  return detail::select_best_candidate_impl(f, f.predict(x), x, base, candidates, D,
                                            config, rng);
}

struct Certification {
  PrecisionEstimate estimate;
  bool accepted = false;
};

namespace detail {

inline Certification certify_anchor_impl(const BlackBoxModel& f, int label_x,
                                         const Instance& x,
                                         const std::vector<Predicate>& c,
                                         const ConditionalSampler& D,
                                         const SearchConfig& config, Rng& rng) {
  const double delta_cmp =
      config.comparison_delta(static_cast<int>(x.disc.size()));
  const double threshold = 1.0 - config.epsilon;
  std::int64_t n = 0;
  std::int64_t matches = 0;
  while (n < config.max_samples_per_candidate) {
    auto batch = static_cast<int>(std::min<std::int64_t>(
        config.batch_size, config.max_samples_per_candidate - n));
    matches += count_matches(f, label_x, x, c, D, batch, rng);
    n += batch;
    PrecisionEstimate est{n, matches, delta_cmp};
    if (est.lower() >= threshold) return Certification{est, true};
    if (est.upper() < threshold) return Certification{est, false};
  }
  return Certification{PrecisionEstimate{n, matches, delta_cmp}, false};
}

}  // namespace detail

// Samples in batches until the Hoeffding lower bound certifies
// precision >= 1 - epsilon (accept), the upper bound rules it out (reject),
// or the sampling cap is reached (reject; the caller should extend c).
inline Certification certify_anchor(const BlackBoxModel& f, const Instance& x,
                                    const std::vector<Predicate>& c,
                                    const ConditionalSampler& D,
                                    const SearchConfig& config, Rng& rng) {
  config.validate();
  for (const auto& p : c) {
    if (!predicate_holds(p, x)) {
      throw std::invalid_argument("certify_anchor: predicate does not hold on x");
    }
  }
  return detail::certify_anchor_impl(f, f.predict(x), x, c, D, config, rng);
}

inline Certification certify_anchor(const BlackBoxModel& f, const Instance& x,
                                    const Anchor& c, const ConditionalSampler& D,
                                    const SearchConfig& config, Rng& rng) {
  return certify_anchor(f, x, c.predicates, D, config, rng);
}

// One candidate per feature: the explained instance's own bin.
inline std::vector<Predicate> candidate_predicates(const Instance& x) {
  std::vector<Predicate> out;
  for (std::size_t fi = 0; fi < x.disc.size(); ++fi) {
    if (x.disc[fi] >= 0) out.push_back(Predicate{static_cast<int>(fi), x.disc[fi]});
  }
  return out;
}

// As above but excluding unknown bins, which no predicate may name.
inline std::vector<Predicate> candidate_predicates(
    const Instance& x, const std::vector<FeatureSchema>& schema) {
  std::vector<Predicate> out;
  for (std::size_t fi = 0; fi < x.disc.size(); ++fi) {
    if (x.disc[fi] >= 0 && x.disc[fi] < schema[fi].n_bins()) {
      out.push_back(Predicate{static_cast<int>(fi), x.disc[fi]});
    }
  }
  return out;
}

struct SearchTrace {
  std::vector<Anchor> rounds;       // anchor state after each growth step
  std::int64_t total_samples = 0;
  int certifications = 0;
};

// Greedy PAC anchor construction: starting from the empty rule, repeatedly
// try to certify the current anchor at precision 1 - epsilon; while the
// certificate fails, extend by the best candidate predicate. The full
// conjunction is a guaranteed terminal point because the samplers return x
// itself once every feature is pinned.
inline Anchor find_anchor(const BlackBoxModel& f, const Instance& x,
                          const ConditionalSampler& D, const SearchConfig& config,
                          const std::vector<Predicate>& candidates, Rng& rng,
                          SearchTrace* trace = nullptr) {
  config.validate();
  const int label_x = f.predict(x);
  const std::size_t max_size =
      config.max_anchor_size > 0
          ? std::min<std::size_t>(candidates.size(),
                                  static_cast<std::size_t>(config.max_anchor_size))
          : candidates.size();

  Anchor anchor;
  anchor.anchored_label = label_x;
  SearchTrace local;
  SearchTrace& tr = trace ? *trace : local;

  while (true) {
    Certification cert =
        detail::certify_anchor_impl(f, label_x, x, anchor.predicates, D, config, rng);
    ++tr.certifications;
    tr.total_samples += cert.estimate.n_samples;
    anchor.precision = cert.estimate;
    if (cert.accepted || anchor.size() >= max_size) break;

    std::vector<Predicate> remaining;
    for (const auto& p : candidates) {
      if (!anchor.constrains(p.feature)) remaining.push_back(p);
    }
    if (remaining.empty()) break;

    CandidateSelection sel = detail::select_best_candidate_impl(
        f, label_x, x, anchor, remaining, D, config, rng);
    tr.total_samples += sel.samples_drawn;
    anchor.add(sel.chosen);
    tr.rounds.push_back(anchor);
  }

  const auto rounds = static_cast<std::int64_t>(tr.certifications);
  const auto arms = static_cast<std::int64_t>(candidates.size()) + 1;
  detail::require(tr.total_samples <=
                      rounds * arms * config.max_samples_per_candidate,
                  "find_anchor: sample budget exceeded");
  return anchor;
}

inline Anchor find_anchor(const BlackBoxModel& f, const Instance& x,
                          const ConditionalSampler& D, const SearchConfig& config,
                          Rng& rng, SearchTrace* trace = nullptr) {
  return find_anchor(f, x, D, config, candidate_predicates(x), rng, trace);
}

}  // namespace anchors
