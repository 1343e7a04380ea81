#include "fleet/forest.h"

#include <algorithm>
#include <numeric>
#include <set>

#include "fleet/error.h"
#include "fleet/json.h"
#include "fleet/rng.h"

namespace fleet {
namespace {

using Wide = __int128;

// Weighted child purity sum_l c^2/n_l + sum_r c^2/n_r as an exact fraction.
// Maximizing it is equivalent to maximizing the Gini impurity decrease.
struct Score {
  Wide num = 0;
  Wide den = 1;
  bool operator>(const Score& o) const { return num * o.den > o.num * den; }
};

std::size_t ceil_sqrt(std::size_t n) {
  std::size_t m = 0;
  while (m * m < n) ++m;
  return m;
}

class TreeBuilder {
 public:
  TreeBuilder(const Table& data, const std::vector<std::uint32_t>& y,
              const std::vector<std::string>& classes, std::uint32_t max_depth, Rng& rng)
      : data_(data), y_(y), classes_(classes), max_depth_(max_depth), rng_(rng) {}

  Tree build(std::vector<std::size_t> sample) {
    grow(std::move(sample), 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    std::size_t feature = 0;
    double threshold = 0.0;
  };

  std::int32_t make_leaf(const std::vector<std::uint64_t>& counts) {
    TreeNode leaf;
    std::uint64_t best = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) continue;
      leaf.counts[classes_[c]] = counts[c];
      // classes_ is sorted, so strict > keeps the smallest label on ties.
      if (counts[c] > best) {
        best = counts[c];
        leaf.label = classes_[c];
      }
    }
    tree_.nodes.push_back(std::move(leaf));
    return static_cast<std::int32_t>(tree_.nodes.size() - 1);
  }

  std::vector<std::size_t> feature_subset() {
    const std::size_t f = data_.features.size();
    const std::size_t m = ceil_sqrt(f);
    std::vector<std::size_t> perm(f);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.below(f - i));
      std::swap(perm[i], perm[j]);
    }
    perm.resize(m);
    std::sort(perm.begin(), perm.end());
    return perm;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& sample,
                                  const std::vector<std::uint64_t>& counts) {
    const std::size_t n = sample.size();
    Wide parent_sq = 0;
    for (auto c : counts) parent_sq += static_cast<Wide>(c) * c;
    // Splits must strictly beat the parent: score > parent_sq / n.
    Score best{parent_sq, static_cast<Wide>(n)};
    std::optional<Split> chosen;

    std::vector<std::size_t> order(sample);
    for (std::size_t f : feature_subset()) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data_.rows[a][f] < data_.rows[b][f];
      });
      std::vector<std::uint64_t> left(counts.size(), 0);
      std::vector<std::uint64_t> right = counts;
      Wide left_sq = 0;
      Wide right_sq = parent_sq;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::uint32_t c = y_[order[k]];
        left_sq += 2 * static_cast<Wide>(left[c]) + 1;
        right_sq -= 2 * static_cast<Wide>(right[c]) - 1;
        ++left[c];
        --right[c];
        const double lo = data_.rows[order[k]][f];
        const double hi = data_.rows[order[k + 1]][f];
        if (!(lo < hi)) continue;
        const Wide nl = static_cast<Wide>(k + 1);
        const Wide nr = static_cast<Wide>(n - k - 1);
        const Score s{left_sq * nr + right_sq * nl, nl * nr};
        if (s > best) {
          best = s;
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          chosen = Split{f, mid};
        }
      }
    }
    return chosen;
  }

  std::int32_t grow(std::vector<std::size_t> sample, std::uint32_t depth) {
    std::vector<std::uint64_t> counts(classes_.size(), 0);
    for (std::size_t i : sample) ++counts[y_[i]];
    const bool pure =
        std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
    if (depth >= max_depth_ || pure || sample.size() < 2) return make_leaf(counts);

    const auto split = best_split(sample, counts);
    if (!split) return make_leaf(counts);

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t i : sample) {
      (data_.rows[i][split->feature] <= split->threshold ? left : right).push_back(i);
    }
    sample.clear();
    sample.shrink_to_fit();

    const auto self = static_cast<std::int32_t>(tree_.nodes.size());
    TreeNode node;
    node.feature = static_cast<std::int32_t>(split->feature);
    node.threshold = split->threshold;
    tree_.nodes.push_back(node);
    const std::int32_t l = grow(std::move(left), depth + 1);
    const std::int32_t r = grow(std::move(right), depth + 1);
    tree_.nodes[self].left = l;
    tree_.nodes[self].right = r;
    return self;
  }

  const Table& data_;
  const std::vector<std::uint32_t>& y_;
  const std::vector<std::string>& classes_;
  std::uint32_t max_depth_;
  Rng& rng_;
  Tree tree_;
};

std::string majority(const std::map<std::string, std::uint64_t>& votes) {
  std::string best;
  std::uint64_t top = 0;
  for (const auto& [label, n] : votes) {
    if (n > top) {
      top = n;
      best = label;
    }
  }
  return best;
}

Json node_to_json(const TreeNode& n) {
  if (n.is_leaf()) return Json{{"counts", n.counts}, {"label", n.label}};
  return Json{{"feature", n.feature},
              {"left", n.left},
              {"right", n.right},
              {"threshold", n.threshold}};
}

TreeNode node_from_json(const Json& j) {
  TreeNode n;
  if (j.contains("label")) {
    n.label = require_as<std::string>(j, "label");
    n.counts = require_as<std::map<std::string, std::uint64_t>>(j, "counts");
  } else {
    n.feature = require_as<std::int32_t>(j, "feature");
    n.threshold = require_as<double>(j, "threshold");
    n.left = require_as<std::int32_t>(j, "left");
    n.right = require_as<std::int32_t>(j, "right");
    if (n.feature < 0) throw Error(ErrorCode::MalformedDocument, "negative feature index");
  }
  return n;
}

void check_tree(const Tree& t, std::size_t n_features) {
  if (t.nodes.empty()) throw Error(ErrorCode::MalformedDocument, "empty tree");
  const auto size = static_cast<std::int32_t>(t.nodes.size());
  for (std::int32_t i = 0; i < size; ++i) {
    const TreeNode& n = t.nodes[i];
    if (n.is_leaf()) continue;
    // Children always follow their parent, which rules out cycles.
    if (n.left <= i || n.right <= i || n.left >= size || n.right >= size ||
        static_cast<std::size_t>(n.feature) >= n_features) {
      throw Error(ErrorCode::MalformedDocument, "tree node index out of range");
    }
  }
}

}  // namespace

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t out = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out = std::max(out, d[i]);
    if (!nodes[i].is_leaf()) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return out;
}

Forest train_forest(const Table& train, const ModelSpec& spec, const Fingerprint& origin,
                    TrainOptions options) {
  if (!train.label) throw Error(ErrorCode::LabelMissing, "training table has no label");
  if (train.size() == 0) throw Error(ErrorCode::EmptyTrainSet, "training set is empty");
  if (train.features.empty()) throw Error(ErrorCode::NoFeatures, "no feature columns");

  Forest forest;
  forest.features = train.features;
  forest.label = *train.label;
  std::set<std::string> vocab(train.labels.begin(), train.labels.end());
  forest.classes.assign(vocab.begin(), vocab.end());
  forest.metadata = ForestMetadata{spec.n_estimators, spec.random_state, {origin}};

  std::vector<std::uint32_t> y(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    y[i] = static_cast<std::uint32_t>(
        std::lower_bound(forest.classes.begin(), forest.classes.end(), train.labels[i]) -
        forest.classes.begin());
  }

  const std::size_t n = train.size();
  for (std::uint32_t t = 0; t < spec.n_estimators; ++t) {
    Rng rng(splitmix64_mix(spec.random_state, t));
    std::vector<std::size_t> sample(n);
    if (options.bootstrap) {
      for (auto& s : sample) s = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(sample.begin(), sample.end(), 0);
    }
    TreeBuilder builder(train, y, forest.classes, spec.max_depth, rng);
    forest.trees.push_back(builder.build(std::move(sample)));
  }
  return forest;
}

Forest aggregate_merge(std::span<const Forest> forests) {
  if (forests.empty()) throw Error(ErrorCode::MissingModel, "nothing to aggregate");
  Forest out;
  out.features = forests.front().features;
  out.label = forests.front().label;
  out.metadata.random_state = forests.front().metadata.random_state;
  std::set<std::string> vocab;
  for (const Forest& f : forests) {
    if (f.features != out.features || f.label != out.label) {
      throw Error(ErrorCode::IncompatibleSchemas, "forests were trained on different columns");
    }
    vocab.insert(f.classes.begin(), f.classes.end());
    out.trees.insert(out.trees.end(), f.trees.begin(), f.trees.end());
    out.metadata.origins.insert(out.metadata.origins.end(), f.metadata.origins.begin(),
                                f.metadata.origins.end());
  }
  out.classes.assign(vocab.begin(), vocab.end());
  out.metadata.n_estimators = static_cast<std::uint32_t>(out.trees.size());
  return out;
}

std::string predict_tree(const Tree& tree, std::span<const double> row) {
  std::size_t i = 0;
  while (!tree.nodes.at(i).is_leaf()) {
    const TreeNode& n = tree.nodes[i];
    i = static_cast<std::size_t>(row[n.feature] <= n.threshold ? n.left : n.right);
  }
  return tree.nodes[i].label;
}

std::string predict(const Forest& forest, std::span<const double> row) {
  if (forest.trees.empty()) throw Error(ErrorCode::MissingModel, "forest has no trees");
  if (row.size() < forest.features.size()) {
    throw Error(ErrorCode::MissingFeature, "row is missing feature values");
  }
  std::map<std::string, std::uint64_t> votes;
  for (const Tree& t : forest.trees) ++votes[predict_tree(t, row)];
  return majority(votes);
}

Metrics evaluate(const Forest& forest, const Table& test) {
  Metrics m;
  m.n_test = test.size();
  if (test.size() == 0) return m;
  if (!test.label) throw Error(ErrorCode::LabelMissing, "test table has no label");
  std::vector<std::size_t> column(forest.features.size());
  for (std::size_t f = 0; f < forest.features.size(); ++f) {
    auto it = std::find(test.features.begin(), test.features.end(), forest.features[f]);
    if (it == test.features.end()) {
      throw Error(ErrorCode::MissingFeature, "test table lacks '" + forest.features[f] + "'");
    }
    column[f] = static_cast<std::size_t>(it - test.features.begin());
  }
  std::size_t correct = 0;
  std::vector<double> row(forest.features.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t f = 0; f < column.size(); ++f) row[f] = test.rows[i][column[f]];
    if (predict(forest, row) == test.labels[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return m;
}

std::string serialize_forest(const Forest& forest) {
  Json trees = Json::array();
  for (const Tree& t : forest.trees) {
    Json nodes = Json::array();
    for (const TreeNode& n : t.nodes) nodes.push_back(node_to_json(n));
    trees.push_back(std::move(nodes));
  }
  Json j{{"classes", forest.classes},
         {"features", forest.features},
         {"label", forest.label},
         {"metadata",
          {{"n_estimators", forest.metadata.n_estimators},
           {"origins", forest.metadata.origins},
           {"random_state", forest.metadata.random_state}}},
         {"trees", std::move(trees)}};
  return canonical_dump(j);
}

Forest deserialize_forest(std::string_view text) {
  const Json j = parse_json(text);
  Forest f;
  f.classes = require_as<std::vector<std::string>>(j, "classes");
  f.features = require_as<std::vector<std::string>>(j, "features");
  f.label = require_as<std::string>(j, "label");
  const Json& meta = require(j, "metadata");
  f.metadata.n_estimators = require_as<std::uint32_t>(meta, "n_estimators");
  f.metadata.origins = require_as<std::vector<std::string>>(meta, "origins");
  f.metadata.random_state = require_as<std::uint64_t>(meta, "random_state");
  const Json& trees = require(j, "trees");
  if (!trees.is_array()) throw Error(ErrorCode::MalformedDocument, "trees must be an array");
  for (const Json& t : trees) {
    if (!t.is_array()) throw Error(ErrorCode::MalformedDocument, "tree must be an array");
    Tree tree;
    for (const Json& n : t) tree.nodes.push_back(node_from_json(n));
    check_tree(tree, f.features.size());
    f.trees.push_back(std::move(tree));
  }
  return f;
}

std::string serialize_metrics(const Metrics& m) {
  Json j{{"n_test", m.n_test}};
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  return canonical_dump(j);
}

Metrics deserialize_metrics(std::string_view text) {
  const Json j = parse_json(text);
  Metrics m;
  m.n_test = require_as<std::size_t>(j, "n_test");
  if (j.contains("accuracy")) m.accuracy = require_as<double>(j, "accuracy");
  return m;
}

}  // namespace fleet
