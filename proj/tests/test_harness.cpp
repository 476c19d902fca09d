#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "capflow/harness.hpp"
#include "doctest.h"

using namespace capflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), "missing " << p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// every file in a must exist in b with identical bytes, and vice versa
void check_dirs_equal(const fs::path& a, const fs::path& b) {
  int na = 0, nb = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / e.path().filename()),
                  "differs: " << e.path().filename().string());
    ++na;
  }
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++nb;
  CHECK(na == nb);
  CHECK(na > 0);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

harness::TrialRecord rec(const std::string& sub, double target, int rep, double final_true) {
  harness::TrialRecord r;
  r.substance = sub;
  r.target = target;
  r.rep = rep;
  r.seed = 42 + rep;
  r.day = 900 + rep;
  r.result.substance = sub;
  r.result.target = target;
  r.result.w_stop = target - 5.0;
  r.result.w_hat_at_stop = target - 5.0;
  r.result.final_true = final_true;
  r.result.final_pred = final_true + 0.5;
  return r;
}

}  // namespace

TEST_CASE("checked-in default catalog matches the built-in one") {
  auto text = slurp(fs::path(CAPFLOW_REPO_DIR) / "configs" / "catalog_default.cfg");
  auto cat = simworld::Catalog::parse(text);
  CHECK(cat.serialize() == simworld::Catalog::defaults().serialize());
  CHECK(text == simworld::Catalog::defaults().serialize());  // file is canonical
}

TEST_CASE("ablation electrode sets are fixed") {
  CHECK(harness::electrode_set("10") == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(harness::electrode_set("6") == std::vector<int>{1, 3, 5, 6, 8, 10});
  CHECK(harness::electrode_set("2") == std::vector<int>{6, 10});
  CHECK(harness::electrode_set("1") == std::vector<int>{8});
  CHECK_THROWS_AS(harness::electrode_set("3"), std::invalid_argument);
  CHECK_THROWS_AS(harness::electrode_set(""), std::invalid_argument);
}

TEST_CASE("experiment config validation") {
  harness::ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  SUBCASE("unknown variant") {
    cfg.variants = {"full", "bonus"};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("duplicate variant") {
    cfg.variants = {"full", "bc", "full"};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("empty variant list") {
    cfg.variants.clear();
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("zero counts") {
    cfg.trials_per_cell = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("too few training pours to cover the substances") {
    cfg.pwp_train_trials = 4;  // five pourable substances
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("config hash tracks content, not destination") {
  harness::ExperimentConfig a;
  harness::ExperimentConfig b;
  CHECK(a.config_hash() == b.config_hash());
  CHECK(a.config_hash() == a.config_hash());

  b.out_dir = "/tmp/somewhere/else";
  CHECK(a.config_hash() == b.config_hash());  // destination is not content

  b.seed = 2;
  CHECK(a.config_hash() != b.config_hash());
  b.seed = a.seed;

  b.catalog.substances[0].transport_delay += 0.01;
  CHECK(a.config_hash() != b.config_hash());  // catalog is content

  CHECK(a.serialize().find("out_dir") == std::string::npos);
}

TEST_CASE("tabulate matches hand-computed statistics") {
  std::vector<harness::TrialRecord> trials;
  trials.push_back(rec("water", 50, 0, 48.0));  // abs 2, signed -2
  trials.push_back(rec("water", 50, 1, 53.0));  // abs 3, signed +3
  trials.push_back(rec("water", 75, 0, 80.0));  // abs 5, signed +5
  trials.push_back(rec("oil", 50, 0, 50.0));    // abs 0, signed  0

  auto tab = harness::tabulate("full", trials);
  CHECK(tab.variant == "full");
  REQUIRE(tab.rows.size() == 3);

  CHECK(tab.rows[0].substance == "water");
  CHECK(tab.rows[0].target == 50.0);
  CHECK(tab.rows[0].n == 2);
  CHECK(tab.rows[0].mean_abs == doctest::Approx(2.5));
  CHECK(tab.rows[0].std_abs == doctest::Approx(std::sqrt(0.5)));  // sample std
  CHECK(tab.rows[0].mean_signed == doctest::Approx(0.5));
  CHECK(tab.rows[0].std_signed == doctest::Approx(std::sqrt(12.5)));

  CHECK(tab.rows[1].target == 75.0);
  CHECK(tab.rows[1].n == 1);
  CHECK(tab.rows[1].std_abs == 0.0);  // single sample

  CHECK(tab.rows[2].substance == "oil");
  CHECK(tab.rows[2].mean_abs == 0.0);

  CHECK(tab.aggregate.substance == "all");
  CHECK(tab.aggregate.target == 0.0);
  CHECK(tab.aggregate.n == 4);
  CHECK(tab.aggregate.mean_abs == doctest::Approx((2 + 3 + 5 + 0) / 4.0));
  CHECK(tab.aggregate.mean_signed == doctest::Approx((-2 + 3 + 5 + 0) / 4.0));
  CHECK(tab.aggregate.std_abs == doctest::Approx(std::sqrt(13.0 / 3.0)));

  // pooled aggregate equals the n-weighted mean of the rows
  double wsum = 0;
  int n = 0;
  for (const auto& r : tab.rows) {
    wsum += r.mean_abs * r.n;
    n += r.n;
  }
  CHECK(tab.aggregate.mean_abs == doctest::Approx(wsum / n));
}

TEST_CASE("training pour roster is stratified and deterministic") {
  harness::ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.pwp_train_trials = 7;  // 5 substances: first two get an extra pour

  auto pours = harness::make_training_pours(cfg);
  REQUIRE(pours.size() == 7);

  std::map<std::string, int> counts;
  for (const auto& p : pours) {
    counts[p.substance] += 1;
    CHECK(p.kind == signals::TrialKind::Pour);
    CHECK(p.frames.size() == 2000);  // 20 s at 100 Hz, half-open
    CHECK(!p.scale.empty());
  }
  CHECK(counts["water"] == 2);
  CHECK(counts["vinegar"] == 2);
  CHECK(counts["oil"] == 1);
  CHECK(counts["rice"] == 1);
  CHECK(counts["lentils"] == 1);

  auto again = harness::make_training_pours(cfg);
  REQUIRE(again.size() == pours.size());
  for (std::size_t i = 0; i < pours.size(); ++i)
    CHECK(signals::serialize_trial(pours[i]) == signals::serialize_trial(again[i]));

  cfg.seed = 6;
  auto moved = harness::make_training_pours(cfg);
  CHECK(signals::serialize_trial(pours[0]) != signals::serialize_trial(moved[0]));
}

TEST_CASE("noise-free classification suite is exact at miniature scale") {
  harness::ExperimentConfig cfg;
  cfg.seed = 7;
  cfg.train_days = 1;
  cfg.iterations = 1;
  cfg.noise_free = true;
  cfg.chance_shuffles = 5;

  auto rep = harness::run_classification_suite(cfg);
  CHECK(rep.n_train == 81);
  CHECK(rep.n_test == 81);
  CHECK(rep.main.n == 81);
  CHECK(rep.main.joint_acc == 1.0);  // drift-free: test day repeats training exactly
  CHECK(rep.main.container_acc == 1.0);
  CHECK(rep.main.substance_acc == 1.0);
  CHECK(rep.chance_acc < 0.15);
  CHECK(rep.chance_acc >= 0.0);

  REQUIRE(rep.ablation.size() == 4);
  CHECK(rep.ablation[0].name == "10");
  CHECK(rep.ablation[0].electrodes.size() == 10);
  CHECK(rep.ablation[0].report.joint_acc == rep.main.joint_acc);
  CHECK(rep.ablation[1].name == "6");
  CHECK(rep.ablation[2].name == "2");
  CHECK(rep.ablation[3].name == "1");
  for (const auto& row : rep.ablation) CHECK(row.report.joint_acc > 0.9);

  REQUIRE(rep.scaling.size() == 4);
  int want[] = {9, 27, 54, 81};
  for (int i = 0; i < 4; ++i) {
    CHECK(rep.scaling[i].n_classes == want[i]);
    CHECK(rep.scaling[i].n_train == want[i]);  // one iteration, one day
    CHECK(rep.scaling[i].n_test == want[i]);
  }
  CHECK(rep.scaling[3].joint_acc == rep.main.joint_acc);

  SUBCASE("artifacts are byte-deterministic") {
    TempDir da("capflow_cls_a");
    TempDir db("capflow_cls_b");
    cfg.out_dir = da.path;
    harness::write_classification_artifacts(cfg, rep);
    cfg.out_dir = db.path;
    harness::write_classification_artifacts(cfg, rep);
    check_dirs_equal(da.path, db.path);

    for (const char* f : {"accuracy.csv", "confusion_container.csv", "confusion_container.svg",
                          "confusion_substance.csv", "confusion_substance.svg",
                          "electrode_ablation.csv", "class_scaling.csv", "class_scaling.svg",
                          "manifest.txt"})
      CHECK_MESSAGE(fs::exists(da.path / f), f);

    auto acc = slurp(da.path / "accuracy.csv");
    CHECK(acc.find("simulator") != std::string::npos);
    CHECK(acc.find("hardware_reference") != std::string::npos);
    auto man = slurp(da.path / "manifest.txt");
    CHECK(man.find("config_hash") != std::string::npos);
    CHECK(man.find("suite classification") != std::string::npos);
  }
}

TEST_CASE("pouring stages compose at miniature scale") {
  harness::ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.pwp_train_trials = 5;  // one pour per substance, no validation split
  cfg.pwp_epochs = 1;
  cfg.pwp_batch = 64;
  cfg.trials_per_cell = 1;

  auto pours = harness::make_training_pours(cfg);
  REQUIRE(pours.size() == 5);

  auto tr = harness::train_pwp_stage(cfg, pours, true, harness::electrode_set("10"));
  CHECK(tr.best_epoch == 0);  // no validation set: last epoch wins
  REQUIRE(tr.curve.size() == 1);
  CHECK(std::isfinite(tr.curve[0].train_total));
  CHECK(int(tr.model.vocab.size()) == 5);

  SUBCASE("evaluate_variant needs exactly one driver") {
    control::BcModel bc;
    CHECK_THROWS_AS(harness::evaluate_variant(cfg, "full", nullptr, nullptr, nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(harness::evaluate_variant(cfg, "full", &tr.model, nullptr, &bc),
                    std::invalid_argument);
  }

  SUBCASE("uncorrected grid evaluation") {
    auto out = harness::evaluate_variant(cfg, "no_owe", &tr.model, nullptr, nullptr);
    CHECK(out.variant == "no_owe");
    CHECK(out.coeffs.empty());
    CHECK(out.model.n_params == tr.model.params.spec.param_count());
    REQUIRE(out.trials.size() == 5 * 4);  // substances x targets, one rep

    // grid order is substance-major over the catalog, target-minor
    CHECK(out.trials[0].substance == "water");
    CHECK(out.trials[0].target == harness::kEvalTargets[0]);
    CHECK(out.trials[1].target == harness::kEvalTargets[1]);
    CHECK(out.trials[4].substance == "vinegar");
    CHECK(out.trials.back().substance == "lentils");
    CHECK(out.trials.back().target == harness::kEvalTargets[3]);

    for (const auto& t : out.trials) {
      CHECK(t.day == 900);  // held-out drift day, rep 0
      CHECK(t.result.substance == t.substance);
      // prediction log is an exact running sum
      double acc = 0.0;
      for (const auto& row : t.result.log) {
        acc += row.dw_hat;
        CHECK(acc == row.w_hat);
      }
    }

    CHECK(out.table.rows.size() == 20);
    CHECK(out.table.aggregate.n == 20);

    auto again = harness::evaluate_variant(cfg, "no_owe", &tr.model, nullptr, nullptr);
    REQUIRE(again.trials.size() == out.trials.size());
    for (std::size_t i = 0; i < out.trials.size(); ++i) {
      CHECK(again.trials[i].seed == out.trials[i].seed);
      CHECK(again.trials[i].result.final_true == out.trials[i].result.final_true);
      CHECK(again.trials[i].result.final_pred == out.trials[i].result.final_pred);
      CHECK(again.trials[i].result.log.size() == out.trials[i].result.log.size());
    }
  }
}

TEST_CASE("pouring artifacts are byte-deterministic") {
  harness::ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.variants = {"full"};
  cfg.trials_per_cell = 1;

  // hand-built report: two trials with tiny logs, one fitted correction
  harness::PouringReport rep;
  rep.variants = {"full"};
  harness::VariantOutcome& oc = rep.outcomes["full"];
  oc.variant = "full";
  oc.model = {4, 0.25, 500221};
  owe::OweCoeffs k;
  k.substance = "water";
  k.a = 1e-4;
  k.b = 0.05;
  k.c = 1.2;
  k.rmse = 0.3;
  k.n = 24;
  oc.coeffs.push_back(k);

  auto t0 = rec("water", 50, 0, 49.0);
  t0.result.log.push_back({0.09, control::Phase::Forward, 0.81, 1.0, 1.0, 0.8, 0.8, 1.5, 0.2});
  t0.result.log.push_back({0.19, control::Phase::Forward, 1.71, 2.0, 3.0, 2.6, 2.6, 1.5, 0.2});
  t0.result.log.push_back({0.29, control::Phase::Retract, 1.71, 0.5, 3.5, 3.4, 3.4, 1.5, 0.2});
  t0.result.log.push_back({0.39, control::Phase::Done, 0.0, 0.0, 3.5, 49.0, 49.0, 0.0, 0.0});
  auto t1 = rec("oil", 75, 0, 73.0);
  t1.result.log = t0.result.log;
  oc.trials = {t0, t1};
  oc.table = harness::tabulate("full", oc.trials);

  TempDir da("capflow_pour_a");
  TempDir db("capflow_pour_b");
  cfg.out_dir = da.path;
  harness::write_pouring_artifacts(cfg, rep);
  cfg.out_dir = db.path;
  harness::write_pouring_artifacts(cfg, rep);
  check_dirs_equal(da.path, db.path);

  for (const char* f : {"table_full.csv", "trials_full.csv", "owe_full.csv",
                        "trace_full_water_50.svg", "trace_full_oil_75.svg", "manifest.txt"})
    CHECK_MESSAGE(fs::exists(da.path / f), f);

  auto table = slurp(da.path / "table_full.csv");
  CHECK(table.find("hardware_reference") != std::string::npos);
  CHECK(table.find("all") != std::string::npos);
  auto man = slurp(da.path / "manifest.txt");
  CHECK(man.find("suite pouring") != std::string::npos);
  CHECK(man.find("full") != std::string::npos);
  auto trace = slurp(da.path / "trace_full_water_50.svg");
  CHECK(trace.find("<svg") != std::string::npos);
}
