#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "capflow/rng.hpp"
#include "capflow/signals.hpp"

namespace capflow::simworld {

// Plant constants.  The wrist is rate-limited and the source container is
// always loaded with the same nominal fill.
inline constexpr double kWristRate = 9.0;     // deg/s
inline constexpr double kMaxAngle = 123.5;    // deg, hard stop
inline constexpr double kCapacity = 150.0;    // g, nominal source fill
inline constexpr double kGraspFillFrac = 0.75;

// All poured mass moves in integer multiples of this quantum (2^-30 g,
// ~1e-9 g).  Every holding (source, in-flight parcels, scale) then stays
// exactly representable in double, so conservation checks are exact.
inline constexpr double kMassQuantum = 0x1.0p-30;

struct SubstanceParams {
  std::string name;
  bool pourable = false;
  double flow_peak = 0.0;        // g per 0.1 s, sustained reference rate
  double onset_angle = 0.0;      // deg at full container
  double transport_delay = 0.0;  // s from lip to scale
  double stream_inertia = 0.0;   // s, decay constant after retraction starts
  bool granular = false;
  double avalanche_gain = 0.0;   // burst amplitude for granular media
  double coupling = 1.0;         // capacitive signature strength
};

struct ContainerParams {
  std::string name;
  std::array<double, signals::kNumElectrodes> baseline{};  // counts per electrode
  double thickness_factor = 1.0;  // wall attenuation, also shapes grasp rise
};

struct NoiseParams {
  double meas_sigma = 0.0;       // per-frame electrode noise, counts
  double day_global_sigma = 0.0; // common-mode per-day offset, counts
  double day_elec_sigma = 0.0;   // per-electrode per-day offset, counts
  double scale_noise_prob = 0.0; // chance of a +-1 g scale misread
};

struct Catalog {
  std::vector<SubstanceParams> substances;  // 9, pourable subset first
  std::vector<ContainerParams> containers;  // 9
  NoiseParams noise;

  const SubstanceParams& substance(const std::string& name) const;
  const ContainerParams& container(const std::string& name) const;
  std::vector<std::string> pourable_names() const;

  static Catalog defaults();
  static Catalog parse(std::string_view text);
  static Catalog load(const std::filesystem::path& path);
  std::string serialize() const;
};

enum class WristCommand { Forward, Backward, Hold };

struct Parcel {
  double arrive_t = 0.0;
  double grams = 0.0;
};

// Session-level sensor offsets, shared by every trial recorded on one day.
struct DayEffects {
  double global = 0.0;
  std::array<double, signals::kNumElectrodes> per_electrode{};

  static DayEffects derive(std::int64_t day, const NoiseParams& noise);
};

struct SimState {
  double t = 0.0;
  double angle = 0.0;       // deg
  double remaining = 0.0;   // g in source
  double scale_true = 0.0;  // g landed
  std::deque<Parcel> in_flight;

  // retraction stream decay
  bool decay_mode = false;
  double decay_flow = 0.0;     // g/s captured when Backward began
  double decay_elapsed = 0.0;
  double last_flow = 0.0;      // most recent gated flow, g/s

  // granular burst process
  double burst_level = 1.0;
  double burst_until = 0.0;

  Rng process_rng;
  Rng sensor_rng;

  SimState(double fill_g, std::uint64_t seed);

  double in_flight_mass() const;
  double total_mass() const { return remaining + scale_true + in_flight_mass(); }
};

// Gated flow with the burst multiplier already applied, clamped to
// 10 * flow_peak g/s.  burst = 1 for non-granular media.
double flow_rate(const SubstanceParams& sub, double angle_deg, double remaining_g, double burst);

// Advance the plant by dt under one wrist command.  Mass is conserved
// exactly (see kMassQuantum).
void step(SimState& s, const SubstanceParams& sub, WristCommand cmd,
          double dt = signals::kFrameDt);

// Sensor models.  Both draw from s.sensor_rng; pass the same DayEffects for
// every trial of a session.
std::array<double, signals::kNumElectrodes> emit_capacitance(
    const SimState& s, const SubstanceParams& sub, const ContainerParams& source,
    const NoiseParams& noise, const DayEffects& day, Rng& rng);

double emit_scale(const SimState& s, const NoiseParams& noise, Rng& rng);

struct SimObservation {
  double t = 0.0;
  double angle = 0.0;
  std::array<double, signals::kNumElectrodes> frame{};
  double scale_read = 0.0;  // latest 10 Hz reading
};

using WristPolicy = std::function<WristCommand(const SimObservation&)>;

// Record one pour under an arbitrary policy.  Frames at 100 Hz, scale at
// 10 Hz, both emitted before the step they precede.  The source container
// is always the stock "pp" cup.
signals::Trial run_scripted_pour(const Catalog& catalog, const std::string& substance,
                                 const WristPolicy& policy, std::int64_t day,
                                 std::uint64_t seed, double duration_s = 20.0);

// Seeded piecewise wrist schedule used to generate training pours: an
// initial advance past flow onset, then a mix of holds, nudges and partial
// retractions, ending with a full retraction.
WristPolicy scripted_profile(const SubstanceParams& sub, std::uint64_t seed,
                             double duration_s = 20.0);

// One 2 s grasp cycle of `container` filled with `substance`.
signals::Trial grasp_signature(const Catalog& catalog, const std::string& container,
                               const std::string& substance, std::int64_t day,
                               std::uint64_t seed);

}  // namespace capflow::simworld
