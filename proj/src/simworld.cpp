#include "capflow/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace capflow::simworld {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCoverScale = 55.0;  // counts for full coverage at coupling 1
constexpr double kAmbient = 20.0;     // open-finger reading, counts
constexpr double kCoverSharpness = 0.18;
constexpr double kFlowAngleScale = 25.0;  // deg, rise constant past onset
constexpr double kOnsetDepleteExp = 1.2;

// fixed per-electrode geometry spread
constexpr std::array<double, signals::kNumElectrodes> kElecGain = {
    1.00, 0.98, 1.03, 0.97, 1.02, 0.99, 1.01, 0.96, 1.04, 1.00};

double band_height(int e) { return 0.1 + 0.2 * (e % 5); }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double quantize_mass(double g) { return std::round(g / kMassQuantum) * kMassQuantum; }

// apparent fill fraction seen by one panel: tilt sloshes the surface toward
// the spout, raising the right panel and lowering the left
double effective_level(double y, double sin_tilt, bool right_panel) {
  double bias = right_panel ? 0.35 : -0.20;
  double y_eff = y + bias * sin_tilt * 2.0 * y * (1.0 - y);
  return std::clamp(y_eff, 0.0, 1.0);
}

void advance_bursts(SimState& s, const SubstanceParams& sub) {
  if (s.t < s.burst_until) return;
  Rng& r = s.process_rng;
  if (r.uniform() < 0.35) {
    s.burst_level = 1.0 + sub.avalanche_gain * r.uniform(0.4, 1.0);
    s.burst_until = s.t + r.uniform(0.15, 0.45);
  } else {
    s.burst_level = std::max(0.0, 1.0 - 0.3 * sub.avalanche_gain);
    s.burst_until = s.t + r.uniform(0.25, 0.9);
  }
}

}  // namespace

const SubstanceParams& Catalog::substance(const std::string& name) const {
  for (const auto& s : substances)
    if (s.name == name) return s;
  throw std::invalid_argument("unknown substance '" + name + "'");
}

const ContainerParams& Catalog::container(const std::string& name) const {
  for (const auto& c : containers)
    if (c.name == name) return c;
  throw std::invalid_argument("unknown container '" + name + "'");
}

std::vector<std::string> Catalog::pourable_names() const {
  std::vector<std::string> out;
  for (const auto& s : substances)
    if (s.pourable) out.push_back(s.name);
  return out;
}

SimState::SimState(double fill_g, std::uint64_t seed)
    : remaining(quantize_mass(fill_g)),
      process_rng(Rng::mix(seed, 0x70726f63ull)),
      sensor_rng(Rng::mix(seed, 0x73656e73ull)) {}

double SimState::in_flight_mass() const {
  double m = 0.0;
  for (const auto& p : in_flight) m += p.grams;
  return m;
}

double flow_rate(const SubstanceParams& sub, double angle_deg, double remaining_g, double burst) {
  if (!sub.pourable || remaining_g <= 0.0) return 0.0;
  double frac_gone = std::clamp(1.0 - remaining_g / kCapacity, 0.0, 1.0);
  double onset_eff = sub.onset_angle + (kMaxAngle - sub.onset_angle) * std::pow(frac_gone, kOnsetDepleteExp);
  double excess = angle_deg - onset_eff;
  if (excess <= 0.0) return 0.0;
  double cap = 10.0 * sub.flow_peak;  // g/s
  double q = cap * (1.0 - std::exp(-excess / kFlowAngleScale)) * burst;
  return std::clamp(q, 0.0, cap);
}

void step(SimState& s, const SubstanceParams& sub, WristCommand cmd, double dt) {
  if (cmd == WristCommand::Forward)
    s.angle = std::min(s.angle + kWristRate * dt, kMaxAngle);
  else if (cmd == WristCommand::Backward)
    s.angle = std::max(s.angle - kWristRate * dt, 0.0);

  double q;
  if (cmd == WristCommand::Backward) {
    // retraction does not cut the stream instantly; it decays from the
    // last gated rate over stream_inertia
    if (!s.decay_mode) {
      s.decay_mode = true;
      s.decay_flow = s.last_flow;
      s.decay_elapsed = 0.0;
    }
    q = sub.stream_inertia > 0.0
            ? s.decay_flow * std::exp(-s.decay_elapsed / sub.stream_inertia)
            : 0.0;
    s.decay_elapsed += dt;
    s.last_flow = q;
  } else {
    s.decay_mode = false;
    if (sub.granular) advance_bursts(s, sub);
    q = flow_rate(sub, s.angle, s.remaining, sub.granular ? s.burst_level : 1.0);
    s.last_flow = q;
  }

  double out = std::min(quantize_mass(q * dt), s.remaining);
  if (out > 0.0) {
    s.remaining -= out;
    s.in_flight.push_back({s.t + sub.transport_delay, out});
  }

  double t_next = s.t + dt;
  while (!s.in_flight.empty() && s.in_flight.front().arrive_t <= t_next + 1e-9) {
    s.scale_true += s.in_flight.front().grams;
    s.in_flight.pop_front();
  }
  s.t = t_next;
}

DayEffects DayEffects::derive(std::int64_t day, const NoiseParams& noise) {
  DayEffects d;
  Rng r(Rng::mix(0xda1172a9ull, static_cast<std::uint64_t>(day)));
  d.global = noise.day_global_sigma * r.normal();
  for (auto& v : d.per_electrode) v = noise.day_elec_sigma * r.normal();
  return d;
}

std::array<double, signals::kNumElectrodes> emit_capacitance(
    const SimState& s, const SubstanceParams& sub, const ContainerParams& source,
    const NoiseParams& noise, const DayEffects& day, Rng& rng) {
  std::array<double, signals::kNumElectrodes> out{};
  double y = std::clamp(s.remaining / kCapacity, 0.0, 1.0);
  double st = std::sin(s.angle * kPi / 180.0);
  double tf = source.thickness_factor;
  for (int e = 0; e < signals::kNumElectrodes; ++e) {
    double y_eff = effective_level(y, st, e >= 5);
    double cov = logistic((y_eff - band_height(e)) / kCoverSharpness);
    double v = source.baseline[e] * tf + (sub.coupling / tf) * kCoverScale * kElecGain[e] * cov +
               day.global + day.per_electrode[e];
    if (noise.meas_sigma > 0.0) v += noise.meas_sigma * rng.normal();
    out[e] = std::max(0.0, v);
  }
  return out;
}

double emit_scale(const SimState& s, const NoiseParams& noise, Rng& rng) {
  double r = std::round(s.scale_true);
  if (noise.scale_noise_prob > 0.0 && rng.uniform() < noise.scale_noise_prob)
    r += rng.uniform() < 0.5 ? -1.0 : 1.0;
  return std::max(0.0, r);
}

signals::Trial run_scripted_pour(const Catalog& catalog, const std::string& substance,
                                 const WristPolicy& policy, std::int64_t day,
                                 std::uint64_t seed, double duration_s) {
  const auto& sub = catalog.substance(substance);
  if (!sub.pourable) throw std::invalid_argument("substance '" + substance + "' is not pourable");
  const auto& src = catalog.container("pp");
  DayEffects de = DayEffects::derive(day, catalog.noise);

  SimState st(kCapacity, seed);
  signals::Trial tr;
  tr.kind = signals::TrialKind::Pour;
  tr.substance = substance;
  tr.container = "none";
  tr.day = day;
  tr.fill_g = kCapacity;

  int n = static_cast<int>(std::lround(duration_s / signals::kFrameDt));
  double scale_read = 0.0;
  for (int i = 0; i < n; ++i) {
    double t = i * signals::kFrameDt;
    SimObservation obs;
    obs.t = t;
    obs.angle = st.angle;
    obs.frame = emit_capacitance(st, sub, src, catalog.noise, de, st.sensor_rng);
    if (i % 10 == 0) {
      scale_read = emit_scale(st, catalog.noise, st.sensor_rng);
      tr.scale.push_back({t, scale_read});
    }
    obs.scale_read = scale_read;
    tr.frames.push_back({t, obs.frame});
    step(st, sub, policy(obs), signals::kFrameDt);
  }
  return tr;
}

WristPolicy scripted_profile(const SubstanceParams& sub, std::uint64_t seed, double duration_s) {
  Rng r(seed);
  struct Seg {
    double end_t;
    WristCommand cmd;
  };
  std::vector<Seg> segs;

  // advance past onset, wander, then retract near the end
  double target = std::min(kMaxAngle, sub.onset_angle + r.uniform(6.0, 22.0));
  double t = target / kWristRate;
  segs.push_back({t, WristCommand::Forward});
  double t_retract = duration_s - r.uniform(2.5, 4.5);
  while (t < t_retract) {
    double u = r.uniform();
    WristCommand c = u < 0.45 ? WristCommand::Hold
                   : u < 0.75 ? WristCommand::Forward
                              : WristCommand::Backward;
    double d = c == WristCommand::Hold     ? r.uniform(0.4, 1.8)
               : c == WristCommand::Forward ? r.uniform(0.3, 1.2)
                                            : r.uniform(0.2, 0.7);
    t = std::min(t + d, t_retract);
    segs.push_back({t, c});
  }
  segs.push_back({duration_s + 1.0, WristCommand::Backward});

  return [segs](const SimObservation& o) {
    for (const auto& s : segs)
      if (o.t < s.end_t) return s.cmd;
    return WristCommand::Backward;
  };
}

signals::Trial grasp_signature(const Catalog& catalog, const std::string& container,
                               const std::string& substance, std::int64_t day,
                               std::uint64_t seed) {
  const auto& sub = catalog.substance(substance);
  const auto& cont = catalog.container(container);
  DayEffects de = DayEffects::derive(day, catalog.noise);
  Rng sensor(Rng::mix(seed, 0x67726173ull));

  double tf = cont.thickness_factor;
  std::array<double, signals::kNumElectrodes> plateau{};
  for (int e = 0; e < signals::kNumElectrodes; ++e) {
    double cov = logistic((kGraspFillFrac - band_height(e)) / kCoverSharpness);
    plateau[e] = cont.baseline[e] * tf + (sub.coupling / tf) * kCoverScale * kElecGain[e] * cov;
  }
  // container stiffness shapes how fast the fingers seat
  double rise_exp = 0.7 + 0.6 * tf;

  signals::Trial tr;
  tr.kind = signals::TrialKind::Grasp;
  tr.substance = substance;
  tr.container = container;
  tr.day = day;
  tr.fill_g = kGraspFillFrac * kCapacity;
  for (int i = 0; i < signals::kGraspFrames; ++i) {
    double u = double(i) / (signals::kGraspFrames - 1);
    double sm = u * u * (3.0 - 2.0 * u);
    double env = std::pow(sm, rise_exp);
    signals::CapacitanceFrame f;
    f.t = i * signals::kFrameDt;
    for (int e = 0; e < signals::kNumElectrodes; ++e) {
      double v = kAmbient + (plateau[e] - kAmbient) * env + de.global + de.per_electrode[e];
      if (catalog.noise.meas_sigma > 0.0) v += catalog.noise.meas_sigma * sensor.normal();
      f.readings[e] = std::max(0.0, v);
    }
    tr.frames.push_back(f);
  }
  return tr;
}

// ---- catalog ----

Catalog Catalog::defaults() {
  Catalog c;
  auto sub = [&](const char* name, bool pourable, double peak, double onset, double delay,
                 double inertia, bool granular, double gain, double coupling) {
    c.substances.push_back({name, pourable, peak, onset, delay, inertia, granular, gain, coupling});
  };
  sub("water", true, 6.0, 58.0, 0.18, 0.30, false, 0.0, 1.00);
  sub("vinegar", true, 5.6, 60.0, 0.20, 0.28, false, 0.0, 0.93);
  sub("oil", true, 5.0, 64.0, 0.26, 0.40, false, 0.0, 0.45);
  sub("rice", true, 10.2, 66.0, 0.30, 0.22, true, 0.8, 0.56);
  sub("lentils", true, 8.2, 62.0, 0.28, 0.24, true, 0.7, 0.62);
  sub("oats", false, 0.0, 0.0, 0.0, 0.0, true, 0.0, 0.40);
  sub("honey", false, 0.0, 0.0, 0.0, 0.0, false, 0.0, 0.70);
  sub("starch", false, 0.0, 0.0, 0.0, 0.0, true, 0.0, 0.88);
  sub("sugar", false, 0.0, 0.0, 0.0, 0.0, true, 0.0, 0.52);

  struct ContSeed {
    const char* name;
    double level, slope, tf;
  };
  const ContSeed seeds[] = {
      {"paper", 38.0, -0.10, 0.85},  {"styrofoam", 34.0, 0.12, 1.20},
      {"ceramic", 58.0, 0.05, 1.15}, {"glass", 66.0, -0.08, 1.10},
      {"wood", 46.0, 0.15, 1.05},    {"silicon", 52.0, -0.15, 0.90},
      {"pet", 42.0, 0.08, 0.80},     {"pp", 44.0, -0.04, 0.95},
      {"pc", 48.0, 0.10, 1.00},
  };
  for (std::size_t ci = 0; ci < std::size(seeds); ++ci) {
    ContainerParams p;
    p.name = seeds[ci].name;
    p.thickness_factor = seeds[ci].tf;
    for (int e = 0; e < signals::kNumElectrodes; ++e) {
      double jitter = double(Rng::mix(ci + 1, e) % 301) / 100.0 - 1.5;
      double v = seeds[ci].level * (1.0 + seeds[ci].slope * (band_height(e) - 0.5)) + jitter;
      p.baseline[e] = std::round(v * 100.0) / 100.0;
    }
    c.containers.push_back(p);
  }

  c.noise = {0.45, 2.2, 0.6, 0.3};
  return c;
}

namespace {

void append_num(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  out += buf;
}

}  // namespace

std::string Catalog::serialize() const {
  std::string out;
  out += "# simulated pouring catalog\n\n[noise]\n";
  out += "meas_sigma = ";
  append_num(out, noise.meas_sigma);
  out += "\nday_global_sigma = ";
  append_num(out, noise.day_global_sigma);
  out += "\nday_elec_sigma = ";
  append_num(out, noise.day_elec_sigma);
  out += "\nscale_noise_prob = ";
  append_num(out, noise.scale_noise_prob);
  out += "\n";
  for (const auto& s : substances) {
    out += "\n[substance " + s.name + "]\n";
    out += "pourable = " + std::string(s.pourable ? "1" : "0") + "\n";
    out += "flow_peak = ";
    append_num(out, s.flow_peak);
    out += "\nonset_angle = ";
    append_num(out, s.onset_angle);
    out += "\ntransport_delay = ";
    append_num(out, s.transport_delay);
    out += "\nstream_inertia = ";
    append_num(out, s.stream_inertia);
    out += "\ngranular = " + std::string(s.granular ? "1" : "0") + "\n";
    out += "avalanche_gain = ";
    append_num(out, s.avalanche_gain);
    out += "\ncoupling = ";
    append_num(out, s.coupling);
    out += "\n";
  }
  for (const auto& p : containers) {
    out += "\n[container " + p.name + "]\n";
    out += "baseline =";
    for (double b : p.baseline) {
      out += ' ';
      append_num(out, b);
    }
    out += "\nthickness_factor = ";
    append_num(out, p.thickness_factor);
    out += "\n";
  }
  return out;
}

namespace {

[[noreturn]] void cfail(int line_no, const std::string& what) {
  throw std::runtime_error("catalog line " + std::to_string(line_no) + ": " + what);
}

double cnum(const std::string& v, int line_no) {
  char* end = nullptr;
  double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty() || !std::isfinite(d))
    cfail(line_no, "bad number '" + v + "'");
  return d;
}

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

Catalog Catalog::parse(std::string_view text) {
  Catalog c;
  c.noise = {};
  enum class Sec { None, Noise, Substance, Container };
  Sec sec = Sec::None;
  SubstanceParams* sub = nullptr;
  ContainerParams* cont = nullptr;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') cfail(line_no, "unterminated section header");
      std::string head = trim(line.substr(1, line.size() - 2));
      if (head == "noise") {
        sec = Sec::Noise;
      } else if (head.rfind("substance ", 0) == 0) {
        sec = Sec::Substance;
        c.substances.push_back({});
        sub = &c.substances.back();
        sub->name = trim(head.substr(10));
        if (sub->name.empty()) cfail(line_no, "substance needs a name");
      } else if (head.rfind("container ", 0) == 0) {
        sec = Sec::Container;
        c.containers.push_back({});
        cont = &c.containers.back();
        cont->name = trim(head.substr(10));
        if (cont->name.empty()) cfail(line_no, "container needs a name");
      } else {
        cfail(line_no, "unknown section '" + head + "'");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) cfail(line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    switch (sec) {
      case Sec::None:
        cfail(line_no, "key outside any section");
      case Sec::Noise:
        if (key == "meas_sigma") c.noise.meas_sigma = cnum(val, line_no);
        else if (key == "day_global_sigma") c.noise.day_global_sigma = cnum(val, line_no);
        else if (key == "day_elec_sigma") c.noise.day_elec_sigma = cnum(val, line_no);
        else if (key == "scale_noise_prob") c.noise.scale_noise_prob = cnum(val, line_no);
        else cfail(line_no, "unknown noise key '" + key + "'");
        break;
      case Sec::Substance:
        if (key == "pourable") sub->pourable = cnum(val, line_no) != 0.0;
        else if (key == "flow_peak") sub->flow_peak = cnum(val, line_no);
        else if (key == "onset_angle") sub->onset_angle = cnum(val, line_no);
        else if (key == "transport_delay") sub->transport_delay = cnum(val, line_no);
        else if (key == "stream_inertia") sub->stream_inertia = cnum(val, line_no);
        else if (key == "granular") sub->granular = cnum(val, line_no) != 0.0;
        else if (key == "avalanche_gain") sub->avalanche_gain = cnum(val, line_no);
        else if (key == "coupling") sub->coupling = cnum(val, line_no);
        else cfail(line_no, "unknown substance key '" + key + "'");
        break;
      case Sec::Container:
        if (key == "baseline") {
          std::istringstream vs(val);
          std::string tok;
          int e = 0;
          while (vs >> tok) {
            if (e >= signals::kNumElectrodes) cfail(line_no, "too many baseline values");
            cont->baseline[e++] = cnum(tok, line_no);
          }
          if (e != signals::kNumElectrodes) cfail(line_no, "baseline needs 10 values");
        } else if (key == "thickness_factor") {
          cont->thickness_factor = cnum(val, line_no);
          if (cont->thickness_factor <= 0.0) cfail(line_no, "thickness_factor must be positive");
        } else {
          cfail(line_no, "unknown container key '" + key + "'");
        }
        break;
    }
  }
  for (const auto& s : c.substances)
    if (s.pourable) {
      if (s.flow_peak <= 0.0) throw std::runtime_error("substance " + s.name + ": flow_peak must be positive");
      if (s.onset_angle <= 0.0 || s.onset_angle >= kMaxAngle)
        throw std::runtime_error("substance " + s.name + ": onset_angle out of range");
      if (s.transport_delay < 0.0 || s.stream_inertia < 0.0)
        throw std::runtime_error("substance " + s.name + ": negative time constant");
    }
  return c;
}

Catalog Catalog::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open catalog: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace capflow::simworld
