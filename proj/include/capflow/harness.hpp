#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "capflow/classify.hpp"
#include "capflow/control.hpp"
#include "capflow/owe.hpp"
#include "capflow/pwp.hpp"
#include "capflow/signals.hpp"
#include "capflow/simworld.hpp"

namespace capflow::harness {

// Canonical ablation subsets: everything; first/third/fifth of each panel;
// the outer pair of the pouring-side panel; that panel's middle electrode.
const std::vector<int>& electrode_set(const std::string& name);  // "10"|"6"|"2"|"1"

struct ExperimentConfig {
  std::string id = "default";
  std::uint64_t seed = 1;
  simworld::Catalog catalog = simworld::Catalog::defaults();

  // grasp classification
  int train_days = 3;
  int iterations = 10;  // grasp cycles per class per day
  bool noise_free = false;
  int chance_shuffles = 20;
  int scaling_chains = 8;  // independent nested-subset shuffles averaged per point

  // pouring
  std::vector<std::string> variants = {"full",  "no_owe", "no_offsets",
                                       "elec6", "elec2",  "bc"};
  int trials_per_cell = 10;   // pours per (substance, target) cell
  int pwp_train_trials = 50;  // split 4:1 train/validation per substance
  int pwp_epochs = 12;        // reduced budget, see README
  int pwp_batch = 128;
  int owe_reps = 3;           // calibration pours per target
  int bc_demos_per_cell = 5;  // demonstrations per (substance, target)
  int bc_epochs = 50;

  std::filesystem::path out_dir;  // empty: keep results in memory only

  void validate() const;
  // canonical text form; its fnv1a hash goes into the manifest
  std::string serialize() const;
  std::uint64_t config_hash() const;
};

// ---- grasp classification suite ----

struct AblationRow {
  std::string name;  // electrode-set label
  std::vector<int> electrodes;
  classify::EvalReport report;
};

struct ScalingPoint {
  int n_classes = 0;
  int n_train = 0;
  int n_test = 0;
  double joint_acc = 0.0;
};

struct ClassificationReport {
  int n_train = 0;
  int n_test = 0;
  classify::EvalReport main;
  double chance_acc = 0.0;            // vs shuffled labels, averaged
  std::vector<AblationRow> ablation;  // 10 / 6 / 2 / 1 electrodes
  std::vector<ScalingPoint> scaling;  // 9 / 27 / 54 / 81 nested classes
};

ClassificationReport run_classification_suite(const ExperimentConfig& cfg);

// ---- pouring suite ----

inline constexpr std::array<double, 4> kEvalTargets = {50.0, 75.0, 100.0, 125.0};

struct ResultRow {
  std::string substance;  // "all" on the aggregate row
  double target = 0.0;    // 0 on the aggregate row
  int n = 0;
  double mean_abs = 0.0, std_abs = 0.0;
  double mean_signed = 0.0, std_signed = 0.0;
};

// Per-cell error statistics plus a pooled aggregate.  The aggregate is the
// mean over every trial, which equals the n-weighted mean of the rows.
struct ResultTable {
  std::string variant;
  std::vector<ResultRow> rows;  // substance-major, target-minor
  ResultRow aggregate;
};

struct TrialRecord {
  std::string substance;
  double target = 0.0;
  int rep = 0;
  std::uint64_t seed = 0;
  std::int64_t day = 0;
  control::PourResult result;
};

struct ModelInfo {
  int best_epoch = -1;
  double best_val = 0.0;
  std::int64_t n_params = 0;
};

struct VariantOutcome {
  std::string variant;
  ResultTable table;
  std::vector<TrialRecord> trials;
  std::vector<owe::OweCoeffs> coeffs;  // empty for no_owe and bc
  ModelInfo model;
};

struct PouringReport {
  std::vector<std::string> variants;  // run order
  std::map<std::string, VariantOutcome> outcomes;
};

PouringReport run_pouring_suite(const ExperimentConfig& cfg);

// The suite's stages, reusable piecemeal.  A stage only reads the config
// fields it names, so partial configs work for focused experiments.
std::vector<signals::Trial> make_training_pours(const ExperimentConfig& cfg);
pwp::TrainResult train_pwp_stage(const ExperimentConfig& cfg,
                                 const std::vector<signals::Trial>& pours, bool offsets,
                                 const std::vector<int>& electrodes);
std::vector<owe::OweCoeffs> fit_owe_stage(const ExperimentConfig& cfg,
                                          const pwp::PwpModel& model);
std::vector<control::BcDemo> make_bc_demos(const ExperimentConfig& cfg);

// Runs the 200-trial grid for one variant.  `model` drives model-based
// variants (coeffs null for the uncorrected ablation); `bc` drives the
// cloned baseline.  Exactly one of model/bc must be non-null.
VariantOutcome evaluate_variant(const ExperimentConfig& cfg, const std::string& variant,
                                const pwp::PwpModel* model,
                                const std::vector<owe::OweCoeffs>* coeffs,
                                const control::BcModel* bc);

ResultTable tabulate(const std::string& variant, const std::vector<TrialRecord>& trials);

// Artifact writers; no-ops when cfg.out_dir is empty.  Every file they
// produce is byte-deterministic in (config, seed).
void write_classification_artifacts(const ExperimentConfig& cfg,
                                    const ClassificationReport& rep);
void write_pouring_artifacts(const ExperimentConfig& cfg, const PouringReport& rep);

}  // namespace capflow::harness
