#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace capflow::signals {

// Sampling layout shared by the whole pipeline.  Capacitance runs at 100 Hz,
// the reference scale at 10 Hz, and every downstream consumer reasons in
// h = 0.1 s chunks (10 frames).
inline constexpr double kFrameDt = 0.01;       // s between capacitance frames
inline constexpr double kScaleDt = 0.1;        // s between scale samples
inline constexpr double kWindowSpan = 0.1;     // h, horizon of one window
inline constexpr int kNumElectrodes = 10;      // 2 panels x 5 bands
inline constexpr int kWindowFrames = 10;       // frames per window
inline constexpr int kGraspFrames = 200;       // 2 s grasp cycle
inline constexpr int kGraspFeatureDim = 4000;  // 10 electrodes x (200 + 200)

enum class TrialKind { Grasp, Pour };

struct CapacitanceFrame {
  double t = 0.0;
  std::array<double, kNumElectrodes> readings{};  // raw counts, non-negative
};

struct ScaleSample {
  double t = 0.0;
  double grams = 0.0;  // quantized to 1 g by the scale
};

// One recorded session: either a 2 s grasp cycle (no scale track) or a pour
// with synchronized scale ground truth.
struct Trial {
  TrialKind kind = TrialKind::Pour;
  std::string substance;
  std::string container;  // "none" for pours (source container is fixed)
  std::int64_t day = 0;   // session identifier, drives drift grouping
  double fill_g = 150.0;  // grams in the source container at t=0
  std::vector<CapacitanceFrame> frames;  // strictly increasing t
  std::vector<ScaleSample> scale;        // strictly increasing t, pours only
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text round trip.  serialize_trial is canonical: header, then all C lines,
// then all S lines, fixed 6-decimal fields, so equal trials produce
// byte-identical files.
std::string serialize_trial(const Trial& trial);
Trial parse_trial(std::string_view text);
void save_trial(const Trial& trial, const std::filesystem::path& path);
Trial load_trial(const std::filesystem::path& path);

// ---- grasp features ----

// How finite-difference gradients are scaled.  PerIndex differences
// neighboring samples directly; PerSecond divides by the frame spacing.
// Classification is invariant to the constant factor; PerIndex is the
// default so feature magnitudes stay comparable to the raw channels.
enum class GradientScale { PerIndex, PerSecond };

// 4000-dim descriptor of a grasp cycle: per electrode, the 200 raw samples
// followed by their finite-difference gradient (central differences inside,
// one-sided at the ends).  Layout: [c1, c1', c2, c2', ..., c10, c10'].
std::vector<double> grasp_features(const Trial& trial,
                                   GradientScale scale = GradientScale::PerIndex);

// Per-coordinate affine normalizer fit on a training matrix (row = sample).
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;  // 0 where the training column was constant
};

Standardizer standardize_fit(const std::vector<std::vector<double>>& rows);
std::vector<double> standardize_apply(const Standardizer& s, const std::vector<double>& x);

// ---- pour windows ----

// Per-electrode raw extrema, the normalization reference for pour windows.
struct ElectrodeBounds {
  std::array<double, kNumElectrodes> lo{};
  std::array<double, kNumElectrodes> hi{};
};

ElectrodeBounds trial_bounds(const Trial& trial);
// elementwise union, for pooling bounds across a training set
ElectrodeBounds merge_bounds(const ElectrodeBounds& a, const ElectrodeBounds& b);

// One normalized window of kWindowFrames consecutive frames over a chosen
// electrode subset, frame-major: [e0@f0..ek@f0, e0@f1..].
struct WindowFeature {
  int start_frame = 0;  // index into Trial::frames
  double t_start = 0.0;
  std::vector<double> values;  // kWindowFrames * n_electrodes, in [0,1]
};

// All maximal-overlap windows (stride one frame).  A trial with n frames
// yields n - kWindowFrames + 1 windows.  Values are normalized per
// electrode against `bounds` and clamped to [0,1]; electrodes lists
// 1-based channel ids in ascending order (empty = all ten).
std::vector<WindowFeature> pour_windows(const Trial& trial,
                                        const ElectrodeBounds& bounds,
                                        const std::vector<int>& electrodes = {});

// Convenience: normalize against the trial's own extrema (offline training
// path, where the full recording is available).
std::vector<WindowFeature> pour_windows(const Trial& trial,
                                        const std::vector<int>& electrodes = {});

// Indices (into the strided window list) of the non-overlapping h-grid:
// windows starting at multiples of h whose full [t, t+h] span lies inside
// the recording.  20 s at 100 Hz gives 199 of them.
std::vector<int> h_grid_indices(int n_frames);

}  // namespace capflow::signals
