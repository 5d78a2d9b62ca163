#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchors/dataset.hpp"
#include "anchors/errors.hpp"
#include "anchors/rng.hpp"

namespace anchors {

// A conditional perturbation distribution D(z | c, x): draws instances that
// all satisfy the predicates of c. Implementations are immutable; the caller
// owns the RNG stream, so seed partitioning across threads is the caller's
// choice.
class ConditionalSampler {
 public:
  virtual ~ConditionalSampler() = default;
  virtual std::vector<Instance> sample(const std::vector<Predicate>& c,
                                       const Instance& x, int n, Rng& rng) const = 0;
};

// Tabular sampler: draws a uniform source row, then overwrites every feature
// constrained by c with x's raw value. Constraining all features therefore
// returns x itself.
class TabularRowSampler : public ConditionalSampler {
 public:
  explicit TabularRowSampler(std::vector<Instance> source_rows)
      : rows_(std::move(source_rows)) {
    if (rows_.empty()) throw DataError("TabularRowSampler: no source rows");
  }

  static TabularRowSampler from_train_split(const Dataset& ds) {
    return TabularRowSampler(ds.split_instances(Split::train));
  }

  const std::vector<Instance>& rows() const { return rows_; }

  std::vector<Instance> sample(const std::vector<Predicate>& c, const Instance& x,
                               int n, Rng& rng) const override {
    for (const auto& p : c) {
      if (!predicate_holds(p, x)) {
        throw std::invalid_argument(
            "sample: anchor predicate does not hold on the explained instance");
      }
    }
    std::vector<Instance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Instance z = rows_[rng.next_index(rows_.size())];
      for (const auto& p : c) {
        auto fi = static_cast<std::size_t>(p.feature);
        z.raw[fi] = x.raw[fi];
        z.disc[fi] = x.disc[fi];
      }
      out.push_back(std::move(z));
    }
    return out;
  }

 private:
  std::vector<Instance> rows_;
};

// ---------------------------------------------------------------------------
// Bigram language model with add-k smoothing.

class BigramLM {
 public:
  static constexpr const char* kStart = "<s>";
  static constexpr const char* kEnd = "</s>";

  // Token ids: 0..n_real-1 are corpus tokens (sorted), then start, then end.
  static BigramLM fit(const std::vector<std::vector<std::string>>& corpus,
                      double add_k) {
    if (corpus.empty()) throw DataError("BigramLM: empty corpus");
    if (add_k < 0.0) throw ConfigError("BigramLM: add_k must be >= 0");
    BigramLM lm;
    lm.add_k_ = add_k;

    std::set<std::string> vocab;
    for (const auto& sentence : corpus) {
      for (const auto& tok : sentence) {
        if (tok == kStart || tok == kEnd) {
          throw DataError("BigramLM: corpus contains a reserved marker token");
        }
        vocab.insert(tok);
      }
    }
    lm.tokens_.assign(vocab.begin(), vocab.end());
    lm.start_id_ = static_cast<int>(lm.tokens_.size());
    lm.end_id_ = lm.start_id_ + 1;
    lm.tokens_.push_back(kStart);
    lm.tokens_.push_back(kEnd);
    for (std::size_t i = 0; i < lm.tokens_.size(); ++i) {
      lm.ids_[lm.tokens_[i]] = static_cast<int>(i);
    }

    lm.counts_.assign(lm.tokens_.size(), {});
    lm.context_totals_.assign(lm.tokens_.size(), 0);
    for (const auto& sentence : corpus) {
      int prev = lm.start_id_;
      for (const auto& tok : sentence) {
        int cur = lm.ids_.at(tok);
        lm.counts_[static_cast<std::size_t>(prev)][cur] += 1;
        lm.context_totals_[static_cast<std::size_t>(prev)] += 1;
        prev = cur;
      }
      lm.counts_[static_cast<std::size_t>(prev)][lm.end_id_] += 1;
      lm.context_totals_[static_cast<std::size_t>(prev)] += 1;
    }
    return lm;
  }

  const std::vector<std::string>& vocabulary() const { return tokens_; }
  int n_real_tokens() const { return start_id_; }
  double add_k() const { return add_k_; }
  bool has_token(const std::string& tok) const { return ids_.count(tok) > 0; }

  int token_id(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw DataError("BigramLM: token not in vocabulary: " + tok);
    return it->second;
  }
  const std::string& token(int id) const {
    return tokens_[static_cast<std::size_t>(id)];
  }

  // P(next | prev), add-k smoothed over the emittable outcomes (every real
  // token plus the end marker; the start marker is never emitted).
  double prob(int next_id, int prev_id) const {
    detail::require(next_id != start_id_, "BigramLM: start marker is not emittable");
    double n_outcomes = static_cast<double>(n_real_tokens()) + 1.0;
    double total = static_cast<double>(context_totals_[static_cast<std::size_t>(prev_id)]);
    double denom = total + add_k_ * n_outcomes;
    if (denom <= 0.0) return 0.0;  // unseen context, k = 0
    return (count(prev_id, next_id) + add_k_) / denom;
  }

  double prob(const std::string& next, const std::string& prev) const {
    return prob(token_id(next), token_id(prev));
  }

  // Distribution over real tokens given the previous token, renormalized to
  // exclude the end marker so fixed-length sampling can continue. Falls back
  // to uniform when the restricted mass is zero (k = 0 and the context was
  // only ever followed by the end marker).
  std::vector<double> continuation_distribution(int prev_id) const {
    std::vector<double> probs(static_cast<std::size_t>(n_real_tokens()), 0.0);
    double mass = 0.0;
    for (int t = 0; t < n_real_tokens(); ++t) {
      probs[static_cast<std::size_t>(t)] = prob(t, prev_id);
      mass += probs[static_cast<std::size_t>(t)];
    }
    if (mass <= 0.0) {
      std::fill(probs.begin(), probs.end(),
                1.0 / static_cast<double>(n_real_tokens()));
      return probs;
    }
    for (auto& p : probs) p /= mass;
    return probs;
  }

  int start_id() const { return start_id_; }
  int end_id() const { return end_id_; }

  json to_json() const {
    json j;
    j["format_version"] = 1;
    j["vocab"] = tokens_;
    j["add_k"] = add_k_;
    json counts = json::array();
    for (std::size_t prev = 0; prev < counts_.size(); ++prev) {
      for (const auto& [next, n] : counts_[prev]) {
        counts.push_back(json::array({static_cast<int>(prev), next, n}));
      }
    }
    j["counts"] = std::move(counts);
    return j;
  }

  static BigramLM from_json(const json& j) {
    if (j.at("format_version").get<int>() != 1) {
      throw DataError("bigram file: unsupported format_version");
    }
    BigramLM lm;
    lm.tokens_ = j.at("vocab").get<std::vector<std::string>>();
    lm.add_k_ = j.at("add_k").get<double>();
    if (lm.tokens_.size() < 2) throw DataError("bigram file: vocabulary too small");
    lm.start_id_ = static_cast<int>(lm.tokens_.size()) - 2;
    lm.end_id_ = lm.start_id_ + 1;
    for (std::size_t i = 0; i < lm.tokens_.size(); ++i) {
      lm.ids_[lm.tokens_[i]] = static_cast<int>(i);
    }
    lm.counts_.assign(lm.tokens_.size(), {});
    lm.context_totals_.assign(lm.tokens_.size(), 0);
    for (const auto& triple : j.at("counts")) {
      int prev = triple.at(0).get<int>();
      int next = triple.at(1).get<int>();
      long n = triple.at(2).get<long>();
      lm.counts_[static_cast<std::size_t>(prev)][next] = n;
      lm.context_totals_[static_cast<std::size_t>(prev)] += n;
    }
    return lm;
  }

 private:
  double count(int prev, int next) const {
    const auto& row = counts_[static_cast<std::size_t>(prev)];
    auto it = row.find(next);
    return it == row.end() ? 0.0 : static_cast<double>(it->second);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  std::vector<std::map<int, long>> counts_;
  std::vector<long> context_totals_;
  double add_k_ = 0.0;
  int start_id_ = -1;
  int end_id_ = -1;
};

inline std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> toks;
  std::string tok;
  while (in >> tok) toks.push_back(tok);
  return toks;
}

// One sentence per line, whitespace tokens.
inline std::vector<std::vector<std::string>> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus: " + path);
  std::vector<std::vector<std::string>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) corpus.push_back(std::move(toks));
  }
  if (corpus.empty()) throw DataError(path + ": empty corpus");
  return corpus;
}

namespace detail {

inline int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.next_real();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

// Draws fixed-length token sequences with the anchored positions pinned.
// Unanchored positions are sampled left to right from the bigram conditional
// on the previously emitted token; an anchored token becomes the context for
// whatever follows it.
inline std::vector<std::vector<std::string>> sample_text_conditional(
    const BigramLM& lm, const std::map<int, std::string>& anchor_tokens, int length,
    int n, Rng& rng) {
  if (length < 1) throw ConfigError("sample_text_conditional: length must be >= 1");
  std::vector<int> anchored(static_cast<std::size_t>(length), -1);
  for (const auto& [pos, tok] : anchor_tokens) {
    if (pos < 0 || pos >= length) {
      throw ConfigError("sample_text_conditional: anchored position out of range");
    }
    int id = lm.token_id(tok);  // throws DataError for out-of-vocabulary tokens
    if (id >= lm.n_real_tokens()) {
      throw DataError("sample_text_conditional: cannot anchor a marker token");
    }
    anchored[static_cast<std::size_t>(pos)] = id;
  }

  std::vector<std::vector<std::string>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    std::vector<std::string> sentence;
    sentence.reserve(static_cast<std::size_t>(length));
    int prev = lm.start_id();
    for (int pos = 0; pos < length; ++pos) {
      int id = anchored[static_cast<std::size_t>(pos)];
      if (id < 0) {
        id = detail::sample_categorical(lm.continuation_distribution(prev), rng);
      }
      sentence.push_back(lm.token(id));
      prev = id;
    }
    out.push_back(std::move(sentence));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text sentences as instances: one positional feature per token slot, the
// bin vocabulary shared across positions. This lets the anchor search and
// its samplers run unchanged on text.

struct TextDomain {
  std::vector<std::string> vocab;  // real tokens, in BigramLM id order
  int length = 0;

  static TextDomain from_lm(const BigramLM& lm, int length) {
    TextDomain d;
    d.vocab.assign(lm.vocabulary().begin(),
                   lm.vocabulary().begin() + lm.n_real_tokens());
    d.length = length;
    return d;
  }

  std::vector<FeatureSchema> schema() const {
    std::vector<FeatureSchema> out;
    for (int pos = 0; pos < length; ++pos) {
      FeatureSchema fs;
      fs.name = "token[" + std::to_string(pos) + "]";
      fs.kind = FeatureKind::categorical;
      fs.bins = vocab;
      out.push_back(std::move(fs));
    }
    return out;
  }

  Instance to_instance(const std::vector<std::string>& tokens) const {
    detail::require(static_cast<int>(tokens.size()) == length,
                    "TextDomain: sentence length mismatch");
    Instance inst;
    for (const auto& tok : tokens) {
      auto it = std::lower_bound(vocab.begin(), vocab.end(), tok);
      if (it == vocab.end() || *it != tok) {
        throw DataError("TextDomain: token not in vocabulary: " + tok);
      }
      inst.raw.emplace_back(tok);
      inst.disc.push_back(static_cast<int>(it - vocab.begin()));
    }
    return inst;
  }

  std::vector<std::string> to_tokens(const Instance& inst) const {
    std::vector<std::string> toks;
    for (int d : inst.disc) toks.push_back(vocab[static_cast<std::size_t>(d)]);
    return toks;
  }
};

// Adapter that exposes bigram sampling through the ConditionalSampler
// contract; predicates are (position, vocabulary id) pairs.
class TextConditionalSampler : public ConditionalSampler {
 public:
  TextConditionalSampler(BigramLM lm, TextDomain domain)
      : lm_(std::move(lm)), domain_(std::move(domain)) {
    for (int t = 0; t < lm_.n_real_tokens(); ++t) {
      detail::require(domain_.vocab[static_cast<std::size_t>(t)] == lm_.token(t),
                      "TextConditionalSampler: vocabulary order mismatch");
    }
  }

  std::vector<Instance> sample(const std::vector<Predicate>& c, const Instance& x,
                               int n, Rng& rng) const override {
    for (const auto& p : c) {
      if (!predicate_holds(p, x)) {
        throw std::invalid_argument(
            "sample: anchor predicate does not hold on the explained instance");
      }
    }
    std::map<int, std::string> anchor_tokens;
    for (const auto& p : c) {
      anchor_tokens[p.feature] = domain_.vocab[static_cast<std::size_t>(p.bin)];
    }
    auto sentences =
        sample_text_conditional(lm_, anchor_tokens, domain_.length, n, rng);
    std::vector<Instance> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(domain_.to_instance(s));
    return out;
  }

 private:
  BigramLM lm_;
  TextDomain domain_;
};

inline void save_bigram(const BigramLM& lm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << lm.to_json().dump(1) << "\n";
}

inline BigramLM load_bigram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return BigramLM::from_json(j);
}

}  // namespace anchors
