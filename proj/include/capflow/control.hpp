#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "capflow/owe.hpp"
#include "capflow/pwp.hpp"
#include "capflow/simworld.hpp"

namespace capflow::control {

enum class Phase { Forward, Retract, Settle, Done };
const char* phase_name(Phase p);

// One row per prediction tick (every h), plus a terminal row.
struct StepLog {
  double t = 0.0;
  Phase phase = Phase::Forward;
  double angle = 0.0;
  double dw_hat = 0.0;
  double w_hat = 0.0;
  double scale_true = 0.0;
  double scale_read = 0.0;
  double o_s = 0.0;  // predicted offsets for this window, 0 when absent
  double o_e = 0.0;
};

struct PourResult {
  std::string substance;
  double target = 0.0;
  double w_stop = 0.0;         // threshold the controller retracted at
  double w_hat_at_stop = 0.0;  // cumulative prediction when retraction triggered
  double final_true = 0.0;     // receiving-scale mass after settling
  double final_pred = 0.0;     // cumulative prediction including the tail
  bool exhausted = false;      // forward budget ran out before the threshold
  bool safe_stopped = false;   // predictor failure forced retraction
  std::vector<StepLog> log;

  double error() const { return std::abs(final_true - target); }
  double signed_error() const { return final_true - target; }
};

using WindowFrames = std::vector<std::array<double, signals::kNumElectrodes>>;

// Window-to-prediction hook.  The live true scale reading rides along so
// oracle upper-bound experiments can cheat; real predictors ignore it.
using DeltaFn = std::function<pwp::PwpOutput(const WindowFrames&, double scale_true)>;

struct RunOptions {
  std::int64_t day = 0;
  std::uint64_t seed = 0;
  double max_forward_s = 40.0;
  double settle_floor_s = 0.5;
};

// Phase machine over the 100 Hz stream: Forward at the wrist rate, predict
// on the trailing window every h, retract once the accumulated prediction
// crosses the threshold (effective the next tick), settle one transport
// delay plus three stream-inertia constants after the wrist is home.
PourResult run_pour_with(const DeltaFn& fn, const simworld::Catalog& cat,
                         const std::string& substance, double w_stop, double target,
                         const RunOptions& opt = {});

// Full controller: threshold from the overpour fit when available, the raw
// target otherwise.
PourResult run_pour(const pwp::PwpModel& model, const owe::OweCoeffs* coeffs,
                    const simworld::Catalog& cat, const std::string& substance, double target,
                    const RunOptions& opt = {});

// Calibration protocol: targets 30..100 g in 10 g steps, `reps` pours each,
// thresholding on the uncorrected prediction.  Exhausted or safe-stopped
// pours are excluded with a warning on stderr.
std::vector<owe::OverpourSample> collect_overpour(const pwp::PwpModel& model,
                                                  const simworld::Catalog& cat,
                                                  const std::string& substance, int reps = 3,
                                                  const RunOptions& base = {},
                                                  int* n_excluded = nullptr);
std::vector<owe::OverpourSample> collect_overpour_with(
    const std::function<DeltaFn()>& make_fn, const simworld::Catalog& cat,
    const std::string& substance, int reps = 3, const RunOptions& base = {},
    int* n_excluded = nullptr);

// ---- behavior-cloning baseline ----

inline constexpr std::array<double, 4> kBcTargets = {50.0, 75.0, 100.0, 125.0};
int bc_target_class(double target);  // index into kBcTargets, throws otherwise

struct BcDemo {
  signals::Trial trial;
  std::vector<int> actions;  // per frame: 1 = Forward, 0 = Backward
  double target = 0.0;
  int target_class = 0;
  double margin = 0.0;  // demonstrator's inertia allowance at the switch
};

// Scripted demonstrator: forward until true scale + in-flight + the decay
// tail would reach the target, then retract; exactly one switch per demo.
BcDemo generate_bc_demo(const simworld::Catalog& cat, const std::string& substance,
                        double target, std::int64_t day, std::uint64_t seed,
                        double max_s = 40.0);
std::vector<BcDemo> generate_bc_demos(const simworld::Catalog& cat,
                                      const std::string& substance, double target, int n,
                                      std::int64_t day, std::uint64_t base_seed);

// Same residual trunk as the weight predictor; input is the normalized
// window plus a 4-wide one-hot target class, output one sigmoid.
struct BcModel {
  neural::Params params;
  std::vector<std::string> vocab;
  std::vector<signals::ElectrodeBounds> bounds;  // per vocab entry

  int label_of(const std::string& substance) const;
  // probability of commanding Forward
  double predict_window(const std::vector<double>& values, int label, int target_class) const;
  double predict_frames(const WindowFrames& frames, int label, int target_class) const;
};

neural::NetSpec bc_spec(int n_electrodes, int vocab_size);

struct BcTrainConfig {
  int epochs = 50;
  int batch = 128;
  neural::AdamConfig adam;
  std::uint64_t seed = 0;
  double val_frac = 0.2;
};

struct BcTrainResult {
  BcModel model;  // best-validation snapshot
  int best_epoch = -1;
  double best_val = 0.0;
  std::vector<double> train_bce, val_bce;
};

// Windows on the h grid labeled with the action taken at the window's end;
// demos split by trial, bounds pooled from the training split.
BcTrainResult train_bc(const std::vector<BcDemo>& demos, const std::vector<std::string>& vocab,
                       const BcTrainConfig& cfg);

// Cloned policy in the loop: decision refreshed every h, wrist follows it.
// Ends once the policy holds Backward with the wrist home, or at the time
// budget (flagged exhausted).
PourResult run_bc_pour(const BcModel& bc, const simworld::Catalog& cat,
                       const std::string& substance, double target, const RunOptions& opt = {});

}  // namespace capflow::control
