#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "ovlp/error.hpp"
#include "ovlp/harness.hpp"
#include "support.hpp"

using namespace ovlp;

namespace {

Dataset tiny_data(std::uint64_t seed = 7, int scenes = 10) {
  GeneratorParams p;
  p.seed = seed;
  p.n_scenes = scenes;
  return generate(p);
}

RunConfig quick(int epochs = 1) {
  RunConfig c;
  c.optimizer.epochs = epochs;
  c.qa.epochs = 1;
  return c;
}

nlohmann::json without_clock(nlohmann::json j) {
  j.erase("wall_clock_seconds");
  return j;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config validation and json") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.filter.delta == 0.25);
    CHECK(c.optimizer.batch_size == 8);

    RunConfig bad = c;
    bad.optimizer.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.eval_thresholds = {0.0};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.box_head.layer_dims = {16, 32, 6};
    CHECK_THROWS_AS(bad.validate(), Error);

    const RunConfig back = RunConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"no_such_field", 1}}), Error);

    RunConfig moved = c;
    moved.train_data = "elsewhere.jsonl";
    moved.threads = 4;
    CHECK(moved.hash() == c.hash());
    RunConfig other = c;
    other.filter.delta = 0.5;
    CHECK(other.hash() != c.hash());
  }

  TEST_CASE("config must fit the dataset") {
    GeneratorParams p;
    p.n_scenes = 5;
    p.num_classes = 5;
    const Dataset ds = generate(p);
    CHECK_THROWS_AS(RunConfig{}.validate_for(ds), Error);
  }

  TEST_CASE("box refinement") {
    const Aabb3 b = Aabb3::make({1, 2, 3}, {2, 1, 0.5});
    CHECK(GroundingModel::refine(b, std::vector<double>(6, 0.0)) == b);
    const Aabb3 r = GroundingModel::refine(b, std::vector<double>{0.5, 0, 0, std::log(2.0), 0, 0});
    CHECK(r.center[0] == 2.0);
    CHECK(r.size[0] == doctest::Approx(4.0));
  }

  TEST_CASE("one epoch on ten scenes") {
    const Dataset ds = tiny_data();
    const TrainResult r = train(quick(), ds, ds);
    REQUIRE_FALSE(r.log.epochs.empty());
    for (const EpochLog& e : r.log.epochs) {
      CHECK(std::isfinite(e.mean.total));
      for (const auto& [name, v] : e.mean.per_term) {
        CHECK(std::isfinite(v));
        if (name == "occ" || name == "osc") CHECK(v >= 0.0);
      }
    }
    CHECK(r.log.epochs.front().mean.per_term.count("occ") == 1);
    CHECK(r.log.config_hash == quick().hash());
    CHECK(r.log.final_report.values.count(acc_key(0.25)) == 1);
    CHECK(r.log.final_report.values.count(em_key(10)) == 1);
  }

  TEST_CASE("plain matching when every module is off") {
    RunConfig c = quick(2);
    c.toggles = {false, false, false};
    const Dataset ds = tiny_data();
    const TrainResult r = train(c, ds, ds);
    const auto& terms = r.log.epochs.front().mean.per_term;
    CHECK(terms.count("vg") == 1);
    CHECK(terms.count("oid") == 0);
    CHECK(terms.count("occ") == 0);
    CHECK(terms.count("osc") == 0);
  }

  TEST_CASE("runs are reproducible") {
    const Dataset ds = tiny_data(7, 12);
    const RunConfig c = quick(2);
    const TrainResult a = train(c, ds, ds), b = train(c, ds, ds);
    CHECK(without_clock(a.log.to_json()).dump() == without_clock(b.log.to_json()).dump());
    CHECK(a.model.checkpoint_json().dump() == b.model.checkpoint_json().dump());
    CHECK(evaluate(a.model, ds).to_json().dump() == evaluate(b.model, ds).to_json().dump());

    RunConfig other = c;
    other.seed = 2;
    CHECK(train(other, ds, ds).model.checkpoint_json().dump() != a.model.checkpoint_json().dump());
  }

  TEST_CASE("checkpoints round trip and guard the config") {
    const Dataset ds = tiny_data();
    const RunConfig c = quick();
    const TrainResult r = train(c, ds, ds);
    const std::string path = (std::filesystem::temp_directory_path() / "ovlp_test_ckpt.json").string();
    r.model.save(path);
    const GroundingModel loaded = GroundingModel::load(path);
    std::remove(path.c_str());
    for (const auto& [name, p] : r.model.params().params()) CHECK(loaded.params().at(name).value == p.value);
    CHECK(evaluate(loaded, ds).to_json() == evaluate(r.model, ds).to_json());

    const nlohmann::json ckpt = r.model.checkpoint_json();
    CHECK_NOTHROW(evaluate_checkpoint(ckpt, ds, &c));
    RunConfig changed = c;
    changed.filter.epsilon = 0.2;
    try {
      evaluate_checkpoint(ckpt, ds, &changed);
      FAIL("mismatched config accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConfigMismatch);
    }
  }

  TEST_CASE("oracle predictions reproduce the audit") {
    const Dataset ds = tiny_data(7, 200);
    const auto preds = oracle_predictions(ds);
    const std::vector<double> ks{0.25, 0.5};
    const std::vector<std::size_t> em{1};
    const MetricReport r = evaluate_predictions(ds, preds, ks, em);
    CHECK(r.values.at(acc_key(0.25)).overall == ds.audit.coverage_at_025);
    CHECK(r.values.at(acc_key(0.5)).overall == ds.audit.coverage_at_050);
  }

  TEST_CASE("exact-match threshold") {
    const Dataset ds = tiny_data();
    std::vector<Prediction> preds = oracle_predictions(ds);
    std::size_t exact = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (i % 2) preds[i].box = ds.samples[i].target().box;
      exact += iou(preds[i].box, ds.samples[i].target().box) >= 1.0;
    }
    const std::vector<double> ks{1.0};
    const std::vector<std::size_t> em{1};
    CHECK(evaluate_predictions(ds, preds, ks, em).values.at(acc_key(1.0)).overall ==
          static_cast<double>(exact) / static_cast<double>(ds.samples.size()));
  }

  TEST_CASE("training beats the untrained model") {
    const Dataset ds = tiny_data(7, 60);
    RunConfig c = quick(15);
    GroundingModel untrained(c);
    untrained.init(c.seed);
    const double before = evaluate(untrained, ds).values.at(acc_key(0.25)).overall;
    const double after = train(c, ds, ds).log.final_report.values.at(acc_key(0.25)).overall;
    CHECK(after > before);
  }

  TEST_CASE("composite gradient check") {
    const std::vector<std::uint64_t> seed{1};
    RunConfig vg_only;
    vg_only.toggles = {false, false, false};
    CHECK(gradcheck_composite(vg_only, seed, 1e-5, 1e-4).pass);
    const CompositeGradcheck bad = gradcheck_composite(vg_only, seed, 1e-5, 1e-4, true);
    CHECK_FALSE(bad.pass);
  }

  TEST_CASE("single-cell ablation equals one run") {
    const Dataset ds = tiny_data();
    const RunConfig c = quick();
    const std::vector<AblationRow> rows{{"all", {}}};
    const std::vector<std::uint64_t> seeds{c.seed};
    const AblationTable t = ablate(c, rows, seeds, ds, ds);
    REQUIRE(t.cells.size() == 1);
    REQUIRE(t.cells[0].reports[0].has_value());
    CHECK(t.cells[0].reports[0]->to_json() == train(c, ds, ds).log.final_report.to_json());
    CHECK(ablation_rows().size() == 5);
  }

  TEST_CASE("single-delta sweep") {
    const Dataset ds = tiny_data();
    const RunConfig c = quick();
    const std::vector<double> deltas{0.25};
    const std::vector<std::uint64_t> seeds{c.seed};
    const SweepResult s = delta_sweep(c, deltas, seeds, ds, ds);
    REQUIRE(s.points.size() == 2);
    const double acc50 = train(c, ds, ds).log.final_report.values.at(acc_key(0.5)).overall;
    for (const SweepPoint& p : s.points)
      if (p.variant == "full") CHECK(p.acc50.median == acc50);
    CHECK(s.csv("full", "acc@0.5").find("0.25") != std::string::npos);
  }
}
