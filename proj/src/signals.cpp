#include "capflow/signals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace capflow::signals {

namespace {

void append_fixed(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  out += buf;
}

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

double parse_double(std::string_view tok, int line_no, const char* what) {
  char* end = nullptr;
  std::string tmp(tok);
  double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || tmp.empty() || !std::isfinite(v))
    fail(line_no, std::string("bad ") + what + " '" + tmp + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string serialize_trial(const Trial& trial) {
  std::string out;
  out.reserve(64 + trial.frames.size() * 96 + trial.scale.size() * 24);
  out += "#trial kind=";
  out += trial.kind == TrialKind::Grasp ? "grasp" : "pour";
  out += " substance=" + trial.substance;
  out += " container=" + (trial.container.empty() ? std::string("none") : trial.container);
  out += " day=" + std::to_string(trial.day);
  out += " fill_g=";
  append_fixed(out, trial.fill_g);
  out += '\n';
  for (const auto& f : trial.frames) {
    out += "C ";
    append_fixed(out, f.t);
    for (double r : f.readings) {
      out += ' ';
      append_fixed(out, r);
    }
    out += '\n';
  }
  for (const auto& s : trial.scale) {
    out += "S ";
    append_fixed(out, s.t);
    out += ' ';
    append_fixed(out, s.grams);
    out += '\n';
  }
  return out;
}

Trial parse_trial(std::string_view text) {
  Trial trial;
  bool have_header = false;
  int line_no = 0;
  int frame_idx = 0;
  int scale_idx = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, (eol == std::string_view::npos ? text.size() : eol) - pos);
    pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    if (line[0] == '#') {
      auto toks = split_ws(line.substr(1));
      if (toks.empty() || toks[0] != "trial") fail(line_no, "unknown directive");
      if (have_header) fail(line_no, "duplicate header");
      have_header = true;
      bool saw_kind = false;
      for (std::size_t i = 1; i < toks.size(); ++i) {
        auto eq = toks[i].find('=');
        if (eq == std::string_view::npos) fail(line_no, "expected key=value, got '" + std::string(toks[i]) + "'");
        std::string_view key = toks[i].substr(0, eq);
        std::string_view val = toks[i].substr(eq + 1);
        if (val.empty()) fail(line_no, "empty value for '" + std::string(key) + "'");
        if (key == "kind") {
          saw_kind = true;
          if (val == "grasp") trial.kind = TrialKind::Grasp;
          else if (val == "pour") trial.kind = TrialKind::Pour;
          else fail(line_no, "unknown kind '" + std::string(val) + "'");
        } else if (key == "substance") {
          trial.substance = std::string(val);
        } else if (key == "container") {
          trial.container = std::string(val);
        } else if (key == "day") {
          trial.day = static_cast<std::int64_t>(parse_double(val, line_no, "day"));
        } else if (key == "fill_g") {
          trial.fill_g = parse_double(val, line_no, "fill_g");
          if (trial.fill_g < 0.0) fail(line_no, "fill_g must be non-negative");
        } else {
          fail(line_no, "unknown header key '" + std::string(key) + "'");
        }
      }
      if (!saw_kind) fail(line_no, "header missing kind");
      continue;
    }

    if (!have_header) fail(line_no, "record before #trial header");
    auto toks = split_ws(line);
    if (toks[0] == "C") {
      if (static_cast<int>(toks.size()) - 2 != kNumElectrodes)
        fail(line_no, "frame " + std::to_string(frame_idx) + ": expected " +
                          std::to_string(kNumElectrodes) + " readings, got " +
                          std::to_string(static_cast<int>(toks.size()) - 2));
      CapacitanceFrame f;
      f.t = parse_double(toks[1], line_no, "timestamp");
      for (int e = 0; e < kNumElectrodes; ++e) {
        f.readings[e] = parse_double(toks[2 + e], line_no, "reading");
        if (f.readings[e] < 0.0)
          fail(line_no, "frame " + std::to_string(frame_idx) + ": negative reading");
      }
      if (!trial.frames.empty() && f.t <= trial.frames.back().t)
        fail(line_no, "frame " + std::to_string(frame_idx) + ": timestamps not increasing");
      trial.frames.push_back(f);
      ++frame_idx;
    } else if (toks[0] == "S") {
      if (trial.kind == TrialKind::Grasp)
        fail(line_no, "scale record in grasp trial");
      if (toks.size() != 3)
        fail(line_no, "scale sample " + std::to_string(scale_idx) + ": expected 't grams'");
      ScaleSample s;
      s.t = parse_double(toks[1], line_no, "timestamp");
      s.grams = parse_double(toks[2], line_no, "grams");
      if (s.grams < 0.0) fail(line_no, "scale sample " + std::to_string(scale_idx) + ": negative weight");
      if (!trial.scale.empty() && s.t <= trial.scale.back().t)
        fail(line_no, "scale sample " + std::to_string(scale_idx) + ": timestamps not increasing");
      trial.scale.push_back(s);
      ++scale_idx;
    } else {
      fail(line_no, "unknown record '" + std::string(toks[0]) + "'");
    }
  }
  if (!have_header) throw ParseError("line 1: missing #trial header");
  if (trial.substance.empty()) throw ParseError("line 1: header missing substance");
  if (trial.kind == TrialKind::Grasp && static_cast<int>(trial.frames.size()) != kGraspFrames)
    throw ParseError("grasp trial must have exactly " + std::to_string(kGraspFrames) +
                     " frames, got " + std::to_string(trial.frames.size()));
  return trial;
}

void save_trial(const Trial& trial, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  std::string text = serialize_trial(trial);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Trial load_trial(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_trial(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<double> grasp_features(const Trial& trial, GradientScale scale) {
  if (trial.kind != TrialKind::Grasp)
    throw std::invalid_argument("grasp_features: trial is not a grasp cycle");
  if (static_cast<int>(trial.frames.size()) != kGraspFrames)
    throw std::invalid_argument("grasp_features: expected " + std::to_string(kGraspFrames) +
                                " frames, got " + std::to_string(trial.frames.size()));
  const double gscale = scale == GradientScale::PerSecond ? 1.0 / kFrameDt : 1.0;
  std::vector<double> out(kGraspFeatureDim);
  double* p = out.data();
  for (int e = 0; e < kNumElectrodes; ++e) {
    for (int i = 0; i < kGraspFrames; ++i) p[i] = trial.frames[i].readings[e];
    double* g = p + kGraspFrames;
    g[0] = (p[1] - p[0]) * gscale;
    for (int i = 1; i < kGraspFrames - 1; ++i) g[i] = 0.5 * (p[i + 1] - p[i - 1]) * gscale;
    g[kGraspFrames - 1] = (p[kGraspFrames - 1] - p[kGraspFrames - 2]) * gscale;
    p += 2 * kGraspFrames;
  }
  return out;
}

Standardizer standardize_fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("standardize_fit: empty training set");
  const std::size_t d = rows[0].size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.inv_std.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("standardize_fit: ragged rows");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t j = 0; j < d; ++j) s.mean[j] *= inv_n;
  std::vector<double> var(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      double c = r[j] - s.mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    double sd = std::sqrt(var[j] * inv_n);
    s.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  return s;
}

std::vector<double> standardize_apply(const Standardizer& s, const std::vector<double>& x) {
  if (x.size() != s.mean.size())
    throw std::invalid_argument("standardize_apply: dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - s.mean[j]) * s.inv_std[j];
  return out;
}

ElectrodeBounds trial_bounds(const Trial& trial) {
  ElectrodeBounds b;
  if (trial.frames.empty()) return b;
  for (int e = 0; e < kNumElectrodes; ++e) {
    b.lo[e] = b.hi[e] = trial.frames[0].readings[e];
  }
  for (const auto& f : trial.frames)
    for (int e = 0; e < kNumElectrodes; ++e) {
      b.lo[e] = std::min(b.lo[e], f.readings[e]);
      b.hi[e] = std::max(b.hi[e], f.readings[e]);
    }
  return b;
}

ElectrodeBounds merge_bounds(const ElectrodeBounds& a, const ElectrodeBounds& b) {
  ElectrodeBounds m;
  for (int e = 0; e < kNumElectrodes; ++e) {
    m.lo[e] = std::min(a.lo[e], b.lo[e]);
    m.hi[e] = std::max(a.hi[e], b.hi[e]);
  }
  return m;
}

namespace {

std::vector<int> resolve_electrodes(const std::vector<int>& electrodes) {
  std::vector<int> ids = electrodes;
  if (ids.empty()) {
    ids.resize(kNumElectrodes);
    for (int e = 0; e < kNumElectrodes; ++e) ids[e] = e + 1;
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 1 || ids[i] > kNumElectrodes)
      throw std::invalid_argument("electrode id out of range: " + std::to_string(ids[i]));
    if (i > 0 && ids[i] <= ids[i - 1])
      throw std::invalid_argument("electrode ids must be strictly ascending");
  }
  return ids;
}

}  // namespace

std::vector<WindowFeature> pour_windows(const Trial& trial,
                                        const ElectrodeBounds& bounds,
                                        const std::vector<int>& electrodes) {
  auto ids = resolve_electrodes(electrodes);
  const int n = static_cast<int>(trial.frames.size());
  std::vector<WindowFeature> out;
  if (n < kWindowFrames) return out;

  std::array<double, kNumElectrodes> lo{}, inv_span{};
  for (int e = 0; e < kNumElectrodes; ++e) {
    lo[e] = bounds.lo[e];
    double span = bounds.hi[e] - bounds.lo[e];
    inv_span[e] = span > 1e-12 ? 1.0 / span : 0.0;
  }

  const int ne = static_cast<int>(ids.size());
  out.reserve(n - kWindowFrames + 1);
  for (int start = 0; start + kWindowFrames <= n; ++start) {
    WindowFeature w;
    w.start_frame = start;
    w.t_start = trial.frames[start].t;
    w.values.resize(std::size_t(kWindowFrames) * ne);
    for (int f = 0; f < kWindowFrames; ++f) {
      const auto& r = trial.frames[start + f].readings;
      for (int k = 0; k < ne; ++k) {
        int e = ids[k] - 1;
        double v = inv_span[e] > 0.0 ? (r[e] - lo[e]) * inv_span[e] : 0.0;
        w.values[std::size_t(f) * ne + k] = std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<WindowFeature> pour_windows(const Trial& trial, const std::vector<int>& electrodes) {
  return pour_windows(trial, trial_bounds(trial), electrodes);
}

std::vector<int> h_grid_indices(int n_frames) {
  std::vector<int> out;
  for (int i = 0; i + kWindowFrames <= n_frames - 1; i += kWindowFrames) out.push_back(i);
  return out;
}

}  // namespace capflow::signals
