#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchors/dataset.hpp"
#include "anchors/errors.hpp"
#include "anchors/rng.hpp"

namespace anchors {

// The opaque predictor being explained. Implementations must be
// deterministic: the same instance yields the same label on every call.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;
  virtual int n_classes() const = 0;
  virtual int n_features() const = 0;
  virtual std::vector<int> predict_batch(const std::vector<Instance>& instances) const = 0;

  int predict(const Instance& x) const { return predict_batch({x}).front(); }

 protected:
  void check_arity(const std::vector<Instance>& instances) const {
    for (const auto& inst : instances) {
      if (static_cast<int>(inst.disc.size()) != n_features()) {
        throw DataError("predict_batch: instance has " +
                        std::to_string(inst.disc.size()) + " features, model expects " +
                        std::to_string(n_features()));
      }
    }
  }
};

// Wraps an arbitrary deterministic label function. Used for synthetic
// problems and enumeration oracles.
class FunctionModel : public BlackBoxModel {
 public:
  FunctionModel(int n_classes, int n_features, std::function<int(const Instance&)> fn)
      : n_classes_(n_classes), n_features_(n_features), fn_(std::move(fn)) {}

  int n_classes() const override { return n_classes_; }
  int n_features() const override { return n_features_; }

  std::vector<int> predict_batch(const std::vector<Instance>& instances) const override {
    check_arity(instances);
    std::vector<int> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) out.push_back(fn_(inst));
    return out;
  }

 private:
  int n_classes_;
  int n_features_;
  std::function<int(const Instance&)> fn_;
};

enum class Aggregation { vote, score_sum };

inline const char* aggregation_name(Aggregation a) {
  return a == Aggregation::vote ? "vote" : "score-sum";
}

inline Aggregation aggregation_from_name(const std::string& s) {
  if (s == "vote") return Aggregation::vote;
  if (s == "score-sum") return Aggregation::score_sum;
  throw DataError("unknown aggregation: " + s);
}

// Internal node: bin membership test on one feature, in-set goes left.
// Leaf: feature < 0, `scores` holds the class distribution.
struct TreeNode {
  int feature = -1;
  std::vector<int> bin_set;
  int left = -1;
  int right = -1;
  std::vector<double> scores;

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const std::vector<double>& leaf_scores(const Instance& z) const {
    int idx = 0;
    while (!nodes[static_cast<std::size_t>(idx)].is_leaf()) {
      const TreeNode& node = nodes[static_cast<std::size_t>(idx)];
      int bin = z.disc[static_cast<std::size_t>(node.feature)];
      bool in_set = std::binary_search(node.bin_set.begin(), node.bin_set.end(), bin);
      idx = in_set ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(idx)].scores;
  }
};

inline int argmax_lowest(const std::vector<double>& scores) {
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

struct TreeTrainOptions {
  int n_trees = 100;
  int max_depth = 8;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::score_sum;
  int min_split_size = 2;
};

// Bagged depth-limited decision trees over discretized features: bootstrap
// resampling and sqrt(F) feature subsampling per split, Gini impurity
// criterion. A pure function of Instance.disc, so exact enumeration over bin
// space is possible in tests.
class TreeEnsemble : public BlackBoxModel {
 public:
  std::vector<DecisionTree> trees;
  Aggregation aggregation = Aggregation::score_sum;

  TreeEnsemble() = default;
  TreeEnsemble(int n_classes, int n_features, std::string schema_dig)
      : n_classes_(n_classes), n_features_(n_features), schema_digest_(std::move(schema_dig)) {}

  int n_classes() const override { return n_classes_; }
  int n_features() const override { return n_features_; }
  int n_trees() const { return static_cast<int>(trees.size()); }
  const std::string& schema_digest() const { return schema_digest_; }

  std::vector<int> predict_batch(const std::vector<Instance>& instances) const override {
    check_arity(instances);
    std::vector<int> out;
    out.reserve(instances.size());
    std::vector<double> agg(static_cast<std::size_t>(n_classes_));
    for (const auto& inst : instances) {
      std::fill(agg.begin(), agg.end(), 0.0);
      for (const auto& tree : trees) {
        const auto& scores = tree.leaf_scores(inst);
        if (aggregation == Aggregation::vote) {
          agg[static_cast<std::size_t>(argmax_lowest(scores))] += 1.0;
        } else {
          for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += scores[k];
        }
      }
      out.push_back(argmax_lowest(agg));
    }
    return out;
  }

  static TreeEnsemble train(const Dataset& ds, const TreeTrainOptions& opts);

  json to_json() const {
    json j;
    j["format_version"] = 1;
    j["schema_digest"] = schema_digest_;
    j["aggregation"] = aggregation_name(aggregation);
    j["n_classes"] = n_classes_;
    j["n_features"] = n_features_;
    json jtrees = json::array();
    for (const auto& tree : trees) {
      json jnodes = json::array();
      for (const auto& node : tree.nodes) {
        json jn;
        if (node.is_leaf()) {
          jn["scores"] = node.scores;
        } else {
          jn["feature"] = node.feature;
          jn["bins"] = node.bin_set;
          jn["left"] = node.left;
          jn["right"] = node.right;
        }
        jnodes.push_back(std::move(jn));
      }
      jtrees.push_back(json{{"nodes", std::move(jnodes)}});
    }
    j["trees"] = std::move(jtrees);
    return j;
  }

  static TreeEnsemble from_json(const json& j) {
    if (j.at("format_version").get<int>() != 1) {
      throw DataError("model file: unsupported format_version");
    }
    TreeEnsemble m(j.at("n_classes").get<int>(), j.at("n_features").get<int>(),
                   j.at("schema_digest").get<std::string>());
    m.aggregation = aggregation_from_name(j.at("aggregation").get<std::string>());
    for (const auto& jtree : j.at("trees")) {
      DecisionTree tree;
      for (const auto& jn : jtree.at("nodes")) {
        TreeNode node;
        if (jn.contains("scores")) {
          node.scores = jn.at("scores").get<std::vector<double>>();
          if (static_cast<int>(node.scores.size()) != m.n_classes_) {
            throw DataError("model file: leaf score length mismatch");
          }
        } else {
          node.feature = jn.at("feature").get<int>();
          node.bin_set = jn.at("bins").get<std::vector<int>>();
          node.left = jn.at("left").get<int>();
          node.right = jn.at("right").get<int>();
          if (node.feature < 0 || node.feature >= m.n_features_) {
            throw DataError("model file: node feature index out of range");
          }
        }
        tree.nodes.push_back(std::move(node));
      }
      if (tree.nodes.empty()) throw DataError("model file: empty tree");
      m.trees.push_back(std::move(tree));
    }
    return m;
  }

 private:
  int n_classes_ = 0;
  int n_features_ = 0;
  std::string schema_digest_;
};

namespace detail {

struct TreeBuilder {
  const std::vector<const Instance*>& rows;
  const std::vector<int>& labels;      // parallel to rows
  const std::vector<int>& bin_counts;  // per feature
  int n_classes;
  int max_depth;
  int min_split_size;
  Rng& rng;
  DecisionTree tree;

  static double gini(const std::vector<double>& counts, double total) {
    if (total <= 0.0) return 0.0;
    double g = 1.0;
    for (double c : counts) {
      double p = c / total;
      g -= p * p;
    }
    return g;
  }

  int build(std::vector<std::size_t>& idx, int depth) {
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(labels[i])] += 1.0;
    double total = static_cast<double>(idx.size());

    bool pure = std::count_if(counts.begin(), counts.end(),
                              [](double c) { return c > 0.0; }) <= 1;
    if (pure || depth >= max_depth ||
        static_cast<int>(idx.size()) < min_split_size) {
      return make_leaf(counts, total);
    }

    int n_features = static_cast<int>(bin_counts.size());
    int n_try = static_cast<int>(
        std::ceil(std::sqrt(static_cast<double>(n_features))));
    std::vector<int> candidates(static_cast<std::size_t>(n_features));
    std::iota(candidates.begin(), candidates.end(), 0);
    rng.shuffle(candidates);
    candidates.resize(static_cast<std::size_t>(std::min(n_try, n_features)));

    double parent_gini = gini(counts, total);
    double best_gain = 1e-12;
    int best_feature = -1;
    std::vector<int> best_set;

    for (int fi : candidates) {
      auto [set, gain] = best_split_for_feature(idx, fi, counts, total, parent_gini);
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = fi;
        best_set = std::move(set);
      }
    }
    if (best_feature < 0) return make_leaf(counts, total);

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx) {
      int bin = rows[i]->disc[static_cast<std::size_t>(best_feature)];
      bool in_set = std::binary_search(best_set.begin(), best_set.end(), bin);
      (in_set ? left_idx : right_idx).push_back(i);
    }
    if (left_idx.empty() || right_idx.empty()) return make_leaf(counts, total);

    int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[static_cast<std::size_t>(node_id)].feature = best_feature;
    tree.nodes[static_cast<std::size_t>(node_id)].bin_set = best_set;
    idx.clear();
    idx.shrink_to_fit();
    int left = build(left_idx, depth + 1);
    int right = build(right_idx, depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].left = left;
    tree.nodes[static_cast<std::size_t>(node_id)].right = right;
    return node_id;
  }

  int make_leaf(const std::vector<double>& counts, double total) {
    TreeNode leaf;
    leaf.scores.resize(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
      leaf.scores[k] = total > 0.0 ? counts[k] / total : 0.0;
    }
    tree.nodes.push_back(std::move(leaf));
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  // Per-bin class tallies for one feature; returns the best in-set and its
  // Gini gain. For two classes the optimal binary partition is a prefix of
  // the bins ordered by positive rate; otherwise one-vs-rest splits are
  // scanned.
  std::pair<std::vector<int>, double> best_split_for_feature(
      const std::vector<std::size_t>& idx, int fi,
      const std::vector<double>& parent_counts, double total, double parent_gini) {
    int n_bins = bin_counts[static_cast<std::size_t>(fi)] + 1;  // + unknown bin
    std::vector<std::vector<double>> tally(
        static_cast<std::size_t>(n_bins),
        std::vector<double>(static_cast<std::size_t>(n_classes), 0.0));
    std::vector<double> bin_total(static_cast<std::size_t>(n_bins), 0.0);
    for (std::size_t i : idx) {
      int bin = rows[i]->disc[static_cast<std::size_t>(fi)];
      tally[static_cast<std::size_t>(bin)][static_cast<std::size_t>(labels[i])] += 1.0;
      bin_total[static_cast<std::size_t>(bin)] += 1.0;
    }
    std::vector<int> present;
    for (int b = 0; b < n_bins; ++b) {
      if (bin_total[static_cast<std::size_t>(b)] > 0.0) present.push_back(b);
    }
    if (present.size() < 2) return {{}, 0.0};

    auto split_gain = [&](const std::vector<int>& in_set) {
      std::vector<double> left(static_cast<std::size_t>(n_classes), 0.0);
      double left_total = 0.0;
      for (int b : in_set) {
        for (int k = 0; k < n_classes; ++k) {
          left[static_cast<std::size_t>(k)] +=
              tally[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
        }
        left_total += bin_total[static_cast<std::size_t>(b)];
      }
      double right_total = total - left_total;
      if (left_total <= 0.0 || right_total <= 0.0) return -1.0;
      std::vector<double> right(static_cast<std::size_t>(n_classes));
      for (int k = 0; k < n_classes; ++k) {
        right[static_cast<std::size_t>(k)] =
            parent_counts[static_cast<std::size_t>(k)] - left[static_cast<std::size_t>(k)];
      }
      return parent_gini - (left_total / total) * gini(left, left_total) -
             (right_total / total) * gini(right, right_total);
    };

    double best_gain = 0.0;
    std::vector<int> best_set;
    if (n_classes == 2) {
      std::sort(present.begin(), present.end(), [&](int a, int b) {
        double ra = tally[static_cast<std::size_t>(a)][1] / bin_total[static_cast<std::size_t>(a)];
        double rb = tally[static_cast<std::size_t>(b)][1] / bin_total[static_cast<std::size_t>(b)];
        if (ra != rb) return ra < rb;
        return a < b;
      });
      std::vector<int> prefix;
      for (std::size_t cut = 0; cut + 1 < present.size(); ++cut) {
        prefix.push_back(present[cut]);
        std::vector<int> sorted_prefix = prefix;
        std::sort(sorted_prefix.begin(), sorted_prefix.end());
        double gain = split_gain(sorted_prefix);
        if (gain > best_gain) {
          best_gain = gain;
          best_set = std::move(sorted_prefix);
        }
      }
    } else {
      for (int b : present) {
        std::vector<int> single{b};
        double gain = split_gain(single);
        if (gain > best_gain) {
          best_gain = gain;
          best_set = std::move(single);
        }
      }
    }
    return {best_set, best_gain};
  }
};

}  // namespace detail

inline TreeEnsemble TreeEnsemble::train(const Dataset& ds, const TreeTrainOptions& opts) {
  if (opts.n_trees < 1) throw ConfigError("train: n_trees must be >= 1");
  if (opts.max_depth < 1) throw ConfigError("train: max_depth must be >= 1");
  auto train_idx = ds.split_indices(Split::train);
  if (train_idx.empty()) throw DataError("train: empty train split");
  for (std::size_t r : train_idx) {
    detail::require(!ds.instances[r].disc.empty() && ds.instances[r].disc[0] >= 0,
                    "train: dataset must be discretized first");
  }

  TreeEnsemble model(ds.n_classes(), static_cast<int>(ds.n_features()),
                     schema_digest(ds.schema));
  model.aggregation = opts.aggregation;

  std::vector<const Instance*> rows;
  std::vector<int> labels;
  rows.reserve(train_idx.size());
  for (std::size_t r : train_idx) {
    rows.push_back(&ds.instances[r]);
    labels.push_back(ds.labels[r]);
  }
  std::vector<int> bin_counts;
  for (const auto& fs : ds.schema) bin_counts.push_back(fs.n_bins());

  Rng root(opts.seed);
  for (int t = 0; t < opts.n_trees; ++t) {
    Rng tree_rng = root.derive(static_cast<std::uint64_t>(t));
    std::vector<std::size_t> bootstrap(rows.size());
    for (auto& b : bootstrap) b = tree_rng.next_index(rows.size());

    detail::TreeBuilder builder{rows,           labels,
                                bin_counts,     model.n_classes(),
                                opts.max_depth, opts.min_split_size,
                                tree_rng,       {}};
    builder.build(bootstrap, 0);
    model.trees.push_back(std::move(builder.tree));
  }
  return model;
}

inline void save_model(const TreeEnsemble& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << model.to_json().dump(1) << "\n";
}

inline TreeEnsemble load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupt model file: " + e.what());
  }
  try {
    return TreeEnsemble::from_json(j);
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupt model file: " + e.what());
  }
}

}  // namespace anchors
