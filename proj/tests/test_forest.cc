#include <doctest.h>

#include "fleet/forest.h"
#include "fleet/json.h"
#include "oracles.h"
#include "support.h"

using namespace fleet;
using namespace fleet::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

ModelSpec spec(std::uint32_t trees, std::uint32_t depth, std::uint64_t seed) {
  ModelSpec m;
  m.n_estimators = trees;
  m.max_depth = depth;
  m.random_state = seed;
  return m;
}

Table stump_table() {
  Table t;
  t.features = {"x"};
  t.label = "target";
  t.rows = {{0}, {1}, {2}, {3}};
  t.labels = {"A", "A", "B", "B"};
  return t;
}

}  // namespace

TEST_SUITE("forest") {
  TEST_CASE("forced stump") {
    const Forest f = train_forest(stump_table(), spec(1, 1, 0), fp('a'), TrainOptions{false});
    REQUIRE(f.trees.size() == 1);
    const Tree& t = f.trees[0];
    REQUIRE(t.nodes.size() == 3);
    CHECK(t.nodes[0].feature == 0);
    CHECK(t.nodes[0].threshold == 1.5);
    CHECK(t.nodes[t.nodes[0].left].label == "A");
    CHECK(t.nodes[t.nodes[0].right].label == "B");
    CHECK(t.nodes[1].counts == std::map<std::string, std::uint64_t>{{"A", 2}});
    const std::vector<double> row{0.5};
    CHECK(predict(f, row) == "A");
    CHECK(f.classes == std::vector<std::string>{"A", "B"});
  }

  TEST_CASE("trees match a brute-force Gini search on small random data") {
    std::mt19937_64 rng(17);
    std::size_t mismatches = 0;
    for (int round = 0; round < 500; ++round) {
      const std::size_t features = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
      const std::size_t rows = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
      const int values = std::uniform_int_distribution<int>(1, 6)(rng);
      const Table t = random_table(rng, rows, features, values, 3);
      const std::uint32_t depth = std::uniform_int_distribution<std::uint32_t>(1, 4)(rng);
      const Forest f = train_forest(t, spec(1, depth, rng()), {}, TrainOptions{false});
      const std::string expected = render(oracle_tree(t.rows, t.labels, 0, static_cast<int>(depth)));
      const std::string actual = render(f.trees[0]);
      if (expected != actual) {
        ++mismatches;
        MESSAGE("expected " << expected << " got " << actual);
      }
      CHECK(f.trees[0].depth() <= depth);
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("ties keep the smallest label and stop at a pure node") {
    Table t;
    t.features = {"x"};
    t.label = "target";
    t.rows = {{1}, {1}};
    t.labels = {"b", "a"};
    const Forest f = train_forest(t, spec(1, 3, 0), {}, TrainOptions{false});
    REQUIRE(f.trees[0].nodes.size() == 1);
    CHECK(f.trees[0].nodes[0].label == "a");

    t.labels = {"z", "z"};
    t.rows = {{1}, {2}};
    CHECK(train_forest(t, spec(1, 3, 0), {}, TrainOptions{false}).trees[0].nodes.size() == 1);
  }

  TEST_CASE("training is deterministic and each tree has its own stream") {
    std::mt19937_64 rng(3);
    const Table t = random_table(rng, 60, 4, 20, 2);
    const Forest a = train_forest(t, spec(10, 5, 42), fp('a'));
    const Forest b = train_forest(t, spec(10, 5, 42), fp('a'));
    CHECK(serialize_forest(a) == serialize_forest(b));
    CHECK(a.trees.size() == 10);
    std::set<std::string> distinct;
    for (const auto& tree : a.trees) distinct.insert(render(tree));
    CHECK(distinct.size() > 1);
    const Forest c = train_forest(t, spec(10, 5, 43), fp('a'));
    CHECK(serialize_forest(a) != serialize_forest(c));
  }

  TEST_CASE("training preconditions") {
    Table t = stump_table();
    t.label.reset();
    CHECK(code_of([&] { train_forest(t, spec(1, 1, 0)); }) == ErrorCode::LabelMissing);
    Table empty = stump_table();
    empty.rows.clear();
    empty.labels.clear();
    CHECK(code_of([&] { train_forest(empty, spec(1, 1, 0)); }) == ErrorCode::EmptyTrainSet);
    Table featureless = stump_table();
    featureless.features.clear();
    for (auto& r : featureless.rows) r.clear();
    CHECK(code_of([&] { train_forest(featureless, spec(1, 1, 0)); }) == ErrorCode::NoFeatures);
  }

  TEST_CASE("merge concatenates trees and unions classes") {
    std::mt19937_64 rng(9);
    std::vector<Forest> parts;
    for (char c : {'a', 'b', 'c'}) {
      Table t = random_table(rng, 30, 3, 10, 2);
      if (c == 'c') t.labels[0] = "Z";
      parts.push_back(train_forest(t, spec(4, 3, 42), fp(c)));
    }
    const Forest merged = aggregate_merge(parts);
    CHECK(merged.trees.size() == 12);
    CHECK(merged.metadata.n_estimators == 12);
    CHECK(merged.metadata.random_state == 42);
    CHECK(merged.metadata.origins == std::vector<Fingerprint>{fp('a'), fp('b'), fp('c')});
    CHECK(std::find(merged.classes.begin(), merged.classes.end(), "Z") != merged.classes.end());
    CHECK(std::is_sorted(merged.classes.begin(), merged.classes.end()));
    for (std::size_t i = 0; i < 4; ++i) CHECK(merged.trees[4 + i] == parts[1].trees[i]);

    CHECK(code_of([] { aggregate_merge({}); }) == ErrorCode::MissingModel);
    Forest other = parts[0];
    other.features[0] = "renamed";
    std::vector<Forest> mixed{parts[0], other};
    CHECK(code_of([&] { aggregate_merge(mixed); }) == ErrorCode::IncompatibleSchemas);
  }

  TEST_CASE("merged predictions equal a majority vote over the union of trees") {
    std::mt19937_64 rng(21);
    std::size_t mismatches = 0;
    for (int round = 0; round < 10; ++round) {
      const std::size_t features = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      std::vector<Forest> parts;
      std::vector<Table> tables;
      for (char c : {'a', 'b', 'c'}) {
        tables.push_back(random_table(rng, std::uniform_int_distribution<std::size_t>(5, 100)(rng),
                                      features, 8, 3));
        parts.push_back(train_forest(tables.back(), spec(5, 4, 42), fp(c)));
      }
      const Forest merged = aggregate_merge(parts);
      for (const auto& t : tables) {
        for (const auto& row : t.rows) {
          if (predict(merged, row) != oracle_vote(parts, row)) ++mismatches;
        }
      }
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("forest serialization") {
    std::mt19937_64 rng(1);
    const Forest f = train_forest(random_table(rng, 40, 2, 5, 2), spec(3, 3, 7), fp('a'));
    const std::string s = serialize_forest(f);
    CHECK(deserialize_forest(s) == f);
    CHECK(serialize_forest(deserialize_forest(s)) == s);
    CHECK(canonical_dump(parse_json(s)) == s);
    CHECK(s.find(R"({"classes":)") == 0);

    Json j = parse_json(s);
    for (auto& tree : j["trees"]) {
      for (auto& node : tree) {
        if (node.contains("left")) {
          node["left"] = 0;
          break;
        }
      }
    }
    CHECK(code_of([&] { deserialize_forest(j.dump()); }) == ErrorCode::MalformedDocument);
    CHECK(code_of([] { deserialize_forest("[]"); }) == ErrorCode::MalformedDocument);
  }

  TEST_CASE("evaluation maps columns by name") {
    const Forest f = train_forest(stump_table(), spec(1, 1, 0), {}, TrainOptions{false});
    Table test;
    test.features = {"noise", "x"};
    test.label = "target";
    test.rows = {{7, 0}, {7, 3}, {7, 0}};
    test.labels = {"A", "B", "B"};
    const Metrics m = evaluate(f, test);
    CHECK(m.n_test == 3);
    REQUIRE(m.accuracy);
    CHECK(*m.accuracy == doctest::Approx(2.0 / 3.0));
    const Metrics back = deserialize_metrics(serialize_metrics(m));
    CHECK(back.accuracy == m.accuracy);

    Table empty = test;
    empty.rows.clear();
    empty.labels.clear();
    CHECK_FALSE(evaluate(f, empty).accuracy.has_value());
    CHECK(serialize_metrics(evaluate(f, empty)) == R"({"n_test":0})");

    test.features = {"noise", "y"};
    CHECK(code_of([&] { evaluate(f, test); }) == ErrorCode::MissingFeature);
  }
}
