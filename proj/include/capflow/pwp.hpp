#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capflow/neural.hpp"
#include "capflow/signals.hpp"

namespace capflow::pwp {

// Loss = weight term + alpha * rollout consistency + beta * offset floor
// hinge + gamma * offset continuity.
struct LossWeights {
  double alpha = 0.2;
  double beta = 1.0;
  double gamma = 0.1;
  double o_min = 0.15;  // s, smallest physically plausible offset
};

// Piecewise-linear weight-over-time built from the 10 Hz scale track.
// Flat extension outside the recorded span; at a knot the slope is the
// right-hand segment's.
class WeightTrajectory {
public:
  WeightTrajectory() = default;
  explicit WeightTrajectory(const std::vector<signals::ScaleSample>& samples);
  double at(double t) const;
  double slope_at(double t) const;
  double end_t() const;
  bool empty() const { return pts_.empty(); }

private:
  std::vector<signals::ScaleSample> pts_;
};

struct TrialData {
  std::vector<signals::WindowFeature> windows;  // strided, per-trial normalized
  std::vector<int> h_grid;                      // indices into windows
  WeightTrajectory traj;
  int label = 0;
  double t_last = 0.0;
};

struct Dataset {
  std::vector<TrialData> trials;
  std::vector<std::string> vocab;       // substance names; label = index
  std::vector<int> electrodes;          // empty = all ten
  std::vector<signals::ElectrodeBounds> substance_bounds;  // raw extrema per vocab entry
  int window_dim = 0;

  std::size_t total_windows() const;
};

// Windows are normalized per trial (the whole recording is available
// offline); raw per-substance extrema are pooled for deployment-time
// normalization.
Dataset build_dataset(const std::vector<signals::Trial>& trials,
                      const std::vector<std::string>& vocab,
                      const std::vector<int>& electrodes = {});

// 7 residual blocks of 256 with a 50-dim substance embedding.  The ablated
// variant drops the offset heads and predicts the weight delta alone.
neural::NetSpec pwp_spec(int n_electrodes, int vocab_size, bool offsets = true);

struct BatchElement {
  int trial = 0;
  int window = 0;  // strided index; also the L_weight anchor
};

struct AuxDraw {
  int trial = 0;
  int t_rand = 0;  // h-grid position; prefix 0..t_rand-1 rolls up to it
};

struct LossBreakdown {
  double weight = 0.0, aux = 0.0, p1 = 0.0, p2 = 0.0;
  int n_weight = 0, n_aux = 0, n_p2 = 0;
  double total(const LossWeights& lw) const {
    return weight + lw.alpha * aux + lw.beta * p1 + lw.gamma * p2;
  }
};

// One batch of the four-term loss.  Primary elements carry the weight term
// and the offset hinge; a primary whose h-successor window exists also
// contributes a continuity pair; each aux draw rolls predicted deltas along
// its trial prefix.  With grad != nullptr the parameter gradient (flat
// layout) is written there.  n_shards splits the assembled batch into
// column chunks with a fixed reduction order; results match the unsharded
// run to float-sum precision.
LossBreakdown compute_loss(const neural::Params& params, const Dataset& ds,
                           const std::vector<BatchElement>& batch,
                           const std::vector<AuxDraw>& aux, const LossWeights& lw,
                           const neural::Mode& mode, Eigen::VectorXd* grad,
                           int n_shards = 1);

// Eval-mode loss over every window of every trial, aux drawn
// deterministically per trial from `seed`.
LossBreakdown eval_dataset_loss(const neural::Params& params, const Dataset& ds,
                                const LossWeights& lw, std::uint64_t seed);

struct PwpOutput {
  double dw = 0.0;   // grams over the next h
  double o_s = 0.0;  // start offset, s
  double o_e = 0.0;  // end offset, s
};

// Trained predictor plus everything deployment needs: vocabulary, frozen
// per-substance normalization bounds, electrode subset.
struct PwpModel {
  neural::Params params;
  std::vector<std::string> vocab;
  std::vector<signals::ElectrodeBounds> bounds;
  std::vector<int> electrodes;  // empty = all
  bool offsets = true;

  int label_of(const std::string& substance) const;
  int n_electrodes() const {
    return electrodes.empty() ? signals::kNumElectrodes : int(electrodes.size());
  }

  // raw 100 Hz frames, oldest first, exactly kWindowFrames of them
  PwpOutput predict_frames(const std::vector<std::array<double, signals::kNumElectrodes>>& frames,
                           int label) const;
  // an already-normalized window row
  PwpOutput predict_window(const std::vector<double>& values, int label) const;

  void save(const std::filesystem::path& path) const;
  static PwpModel load(const std::filesystem::path& path);
};

struct TrainConfig {
  int epochs = 150;
  int batch = 128;
  neural::AdamConfig adam;  // defaults already match the training recipe
  LossWeights loss;
  std::uint64_t seed = 0;
  int aux_every = 1;   // one rollout draw every this many steps
  int n_shards = 1;
  bool offsets = true;
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  double train_total = 0.0, val_total = 0.0;
};

struct TrainResult {
  PwpModel model;  // best-validation snapshot
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  double best_val = 0.0;
};

TrainResult train_pwp(const Dataset& train, const Dataset& val, const TrainConfig& cfg);

}  // namespace capflow::pwp
