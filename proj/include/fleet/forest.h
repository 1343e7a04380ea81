#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fleet/model.h"
#include "fleet/table.h"

namespace fleet {

struct TreeNode {
  // Internal nodes: feature >= 0, samples with value <= threshold go left.
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  // Leaves.
  std::string label;
  std::map<std::string, std::uint64_t> counts;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0
  std::size_t depth() const;
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct ForestMetadata {
  std::uint32_t n_estimators = 0;
  std::uint64_t random_state = 0;
  // Fingerprints of the nodes whose trees make up this forest, in order.
  std::vector<Fingerprint> origins;
  friend bool operator==(const ForestMetadata&, const ForestMetadata&) = default;
};

struct Forest {
  std::vector<std::string> features;
  std::string label;
  std::vector<std::string> classes;  // sorted
  std::vector<Tree> trees;
  ForestMetadata metadata;
  friend bool operator==(const Forest&, const Forest&) = default;
};

struct TrainOptions {
  // Test hook: train every tree on the rows as given instead of a bootstrap
  // sample. Production paths always bootstrap.
  bool bootstrap = true;
};

// Throws EmptyTrainSet, NoFeatures, LabelMissing.
Forest train_forest(const Table& train, const ModelSpec& spec, const Fingerprint& origin = {},
                    TrainOptions options = {});

// Input order is preserved. Throws MissingModel or IncompatibleSchemas.
Forest aggregate_merge(std::span<const Forest> forests);

// `row` holds values in forest.features order. Throws MissingModel or
// MissingFeature.
std::string predict(const Forest& forest, std::span<const double> row);
std::string predict_tree(const Tree& tree, std::span<const double> row);

struct Metrics {
  std::optional<double> accuracy;
  std::size_t n_test = 0;
};

Metrics evaluate(const Forest& forest, const Table& test);

std::string serialize_forest(const Forest& forest);
Forest deserialize_forest(std::string_view text);
std::string serialize_metrics(const Metrics& m);
Metrics deserialize_metrics(std::string_view text);

}  // namespace fleet
