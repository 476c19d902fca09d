#include "capflow/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <stdexcept>

namespace capflow::control {

using signals::kFrameDt;
using signals::kNumElectrodes;
using signals::kWindowFrames;
using simworld::WristCommand;

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Forward: return "forward";
    case Phase::Retract: return "retract";
    case Phase::Settle: return "settle";
    case Phase::Done: return "done";
  }
  return "?";
}

namespace {

double settle_horizon(const simworld::SubstanceParams& sub, double floor_s) {
  return std::max(floor_s, sub.transport_delay + 3.0 * sub.stream_inertia);
}

std::vector<double> normalize_window(const WindowFrames& frames,
                                     const signals::ElectrodeBounds& b) {
  // same min-max scheme as the offline window builder
  std::vector<double> out;
  out.reserve(frames.size() * kNumElectrodes);
  for (const auto& fr : frames)
    for (int e = 0; e < kNumElectrodes; ++e) {
      double span = b.hi[e] - b.lo[e];
      double v = span > 1e-12 ? (fr[e] - b.lo[e]) / span : 0.0;
      out.push_back(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

}  // namespace

PourResult run_pour_with(const DeltaFn& fn, const simworld::Catalog& cat,
                         const std::string& substance, double w_stop, double target,
                         const RunOptions& opt) {
  const auto& sub = cat.substance(substance);
  if (!sub.pourable)
    throw std::invalid_argument("substance '" + substance + "' is not pourable");
  const auto& src = cat.container("pp");
  auto de = simworld::DayEffects::derive(opt.day, cat.noise);
  simworld::SimState st(simworld::kCapacity, opt.seed);
  const double settle_s = settle_horizon(sub, opt.settle_floor_s);

  PourResult res;
  res.substance = substance;
  res.target = target;
  res.w_stop = w_stop;

  std::deque<std::array<double, kNumElectrodes>> buf;
  WindowFrames window(kWindowFrames);
  Phase phase = Phase::Forward;
  double w_hat = 0.0, scale_read = 0.0, settle_until = 0.0, t = 0.0;
  const int cap =
      int((opt.max_forward_s + simworld::kMaxAngle / simworld::kWristRate + settle_s + 5.0) /
          kFrameDt);
  bool done = false;

  for (int i = 0; i <= cap && !done; ++i) {
    t = i * kFrameDt;
    double angle = st.angle;
    auto frame = simworld::emit_capacitance(st, sub, src, cat.noise, de, st.sensor_rng);
    if (i % 10 == 0) scale_read = simworld::emit_scale(st, cat.noise, st.sensor_rng);
    buf.push_back(frame);
    if (buf.size() > std::size_t(kWindowFrames)) buf.pop_front();

    // the command reflects the phase entering this tick; a threshold
    // crossing detected below turns the wrist around one tick later
    WristCommand cmd = phase == Phase::Forward    ? WristCommand::Forward
                       : phase == Phase::Retract ? WristCommand::Backward
                                                 : WristCommand::Hold;

    if (i % 10 == 9) {
      pwp::PwpOutput out;
      std::copy(buf.begin(), buf.end(), window.begin());
      try {
        out = fn(window, st.scale_true);
      } catch (...) {
        res.safe_stopped = true;
        out = {};
      }
      w_hat += out.dw;
      res.log.push_back(
          {t, phase, angle, out.dw, w_hat, st.scale_true, scale_read, out.o_s, out.o_e});
    }

    switch (phase) {
      case Phase::Forward:
        if (w_hat >= w_stop || res.safe_stopped) {
          phase = Phase::Retract;
          res.w_hat_at_stop = w_hat;
        } else if (t >= opt.max_forward_s) {
          res.exhausted = true;
          phase = Phase::Retract;
          res.w_hat_at_stop = w_hat;
        }
        break;
      case Phase::Retract:
        if (angle == 0.0) {
          phase = Phase::Settle;
          settle_until = t + settle_s;
        }
        break;
      case Phase::Settle:
        if (t >= settle_until) {
          phase = Phase::Done;
          done = true;
        }
        break;
      case Phase::Done: done = true; break;
    }
    if (!done) simworld::step(st, sub, cmd);
  }
  if (!done) res.exhausted = true;  // budget math failed; never expected

  res.final_true = st.scale_true;
  res.final_pred = w_hat;
  res.log.push_back({t, Phase::Done, st.angle, 0.0, w_hat, st.scale_true, scale_read});
  return res;
}

PourResult run_pour(const pwp::PwpModel& model, const owe::OweCoeffs* coeffs,
                    const simworld::Catalog& cat, const std::string& substance, double target,
                    const RunOptions& opt) {
  int label = model.label_of(substance);
  double threshold = target;
  if (coeffs && target > 0.0) threshold = owe::stop_weight(*coeffs, target);
  DeltaFn fn = [&model, label](const WindowFrames& w, double) {
    return model.predict_frames(w, label);
  };
  return run_pour_with(fn, cat, substance, threshold, target, opt);
}

std::vector<owe::OverpourSample> collect_overpour_with(
    const std::function<DeltaFn()>& make_fn, const simworld::Catalog& cat,
    const std::string& substance, int reps, const RunOptions& base, int* n_excluded) {
  std::vector<owe::OverpourSample> samples;
  int excluded = 0;
  for (int target = 30; target <= 100; target += 10)
    for (int rep = 0; rep < reps; ++rep) {
      RunOptions opt = base;
      opt.seed = Rng::mix(base.seed, std::uint64_t(target), std::uint64_t(rep));
      auto r = run_pour_with(make_fn(), cat, substance, double(target), double(target), opt);
      if (r.exhausted || r.safe_stopped) {
        ++excluded;
        std::fprintf(stderr,
                     "warning: overpour calibration pour excluded (%s, target %d g, rep %d%s)\n",
                     substance.c_str(), target, rep,
                     r.safe_stopped ? ", predictor failure" : ", threshold never reached");
        continue;
      }
      samples.push_back({r.w_hat_at_stop, r.final_true - r.w_hat_at_stop});
    }
  if (n_excluded) *n_excluded = excluded;
  return samples;
}

std::vector<owe::OverpourSample> collect_overpour(const pwp::PwpModel& model,
                                                  const simworld::Catalog& cat,
                                                  const std::string& substance, int reps,
                                                  const RunOptions& base, int* n_excluded) {
  int label = model.label_of(substance);
  auto make_fn = [&model, label]() {
    return DeltaFn([&model, label](const WindowFrames& w, double) {
      return model.predict_frames(w, label);
    });
  };
  return collect_overpour_with(make_fn, cat, substance, reps, base, n_excluded);
}

// ---- behavior cloning ----

int bc_target_class(double target) {
  for (std::size_t i = 0; i < kBcTargets.size(); ++i)
    if (target == kBcTargets[i]) return int(i);
  throw std::invalid_argument("target weight outside the trained classes");
}

BcDemo generate_bc_demo(const simworld::Catalog& cat, const std::string& substance,
                        double target, std::int64_t day, std::uint64_t seed, double max_s) {
  const auto& sub = cat.substance(substance);
  if (!sub.pourable)
    throw std::invalid_argument("substance '" + substance + "' is not pourable");
  const auto& src = cat.container("pp");
  auto de = simworld::DayEffects::derive(day, cat.noise);
  simworld::SimState st(simworld::kCapacity, seed);
  const double settle_s = settle_horizon(sub, 0.5);

  BcDemo demo;
  demo.target = target;
  demo.target_class = bc_target_class(target);
  demo.trial.kind = signals::TrialKind::Pour;
  demo.trial.substance = substance;
  demo.trial.container = "none";
  demo.trial.day = day;
  demo.trial.fill_g = simworld::kCapacity;

  bool switched = false;
  double settle_until = 0.0;
  const int cap = int((max_s + simworld::kMaxAngle / simworld::kWristRate + settle_s + 5.0) /
                      kFrameDt);
  for (int i = 0; i <= cap; ++i) {
    double t = i * kFrameDt;
    auto frame = simworld::emit_capacitance(st, sub, src, cat.noise, de, st.sensor_rng);
    if (i % 10 == 0)
      demo.trial.scale.push_back({t, simworld::emit_scale(st, cat.noise, st.sensor_rng)});
    demo.trial.frames.push_back({t, frame});

    if (!switched) {
      double tail = st.in_flight_mass() + st.last_flow * sub.stream_inertia;
      if (st.scale_true + tail >= target || t >= max_s) {
        switched = true;
        demo.margin = tail;
      }
    }
    WristCommand cmd = switched ? WristCommand::Backward : WristCommand::Forward;
    demo.actions.push_back(cmd == WristCommand::Forward ? 1 : 0);

    if (switched && st.angle == 0.0) {
      if (settle_until == 0.0) settle_until = t + settle_s;
      if (t >= settle_until) break;
    }
    simworld::step(st, sub, cmd);
  }
  return demo;
}

std::vector<BcDemo> generate_bc_demos(const simworld::Catalog& cat, const std::string& substance,
                                      double target, int n, std::int64_t day,
                                      std::uint64_t base_seed) {
  std::vector<BcDemo> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(generate_bc_demo(cat, substance, target, day,
                                   Rng::mix(base_seed, std::uint64_t(i))));
  return out;
}

neural::NetSpec bc_spec(int n_electrodes, int vocab_size) {
  neural::NetSpec s;
  s.input_dim = kWindowFrames * n_electrodes + int(kBcTargets.size()) + 50;
  s.blocks = 7;
  s.width = 256;
  s.dropout = 0.05;
  s.output_dim = 1;
  s.output_activation = neural::Activation::Sigmoid;
  s.embeddings = {{vocab_size, 50}};
  return s;
}

int BcModel::label_of(const std::string& substance) const {
  auto it = std::find(vocab.begin(), vocab.end(), substance);
  if (it == vocab.end())
    throw std::invalid_argument("substance '" + substance + "' not in vocabulary");
  return int(it - vocab.begin());
}

double BcModel::predict_window(const std::vector<double>& values, int label,
                               int target_class) const {
  if (target_class < 0 || target_class >= int(kBcTargets.size()))
    throw std::out_of_range("bad target class");
  std::vector<double> feats = values;
  for (std::size_t i = 0; i < kBcTargets.size(); ++i)
    feats.push_back(i == std::size_t(target_class) ? 1.0 : 0.0);
  if (int(feats.size()) != params.spec.feature_dim())
    throw std::invalid_argument("clone: window dimension mismatch");
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(feats.data(), Eigen::Index(feats.size()));
  return neural::forward(params, x, {{label}}, neural::Mode::eval())(0, 0);
}

double BcModel::predict_frames(const WindowFrames& frames, int label, int target_class) const {
  if (int(frames.size()) != kWindowFrames)
    throw std::invalid_argument("clone: need exactly one window of frames");
  if (label < 0 || label >= int(bounds.size()))
    throw std::out_of_range("clone: label outside vocabulary");
  return predict_window(normalize_window(frames, bounds[label]), label, target_class);
}

namespace {

struct BcSample {
  std::vector<double> feats;  // window + one-hot, normalized
  int sub = 0;
  int action = 0;
};

void append_samples(const BcDemo& demo, int sub_label,
                    const signals::ElectrodeBounds& bounds, std::vector<BcSample>& out) {
  auto windows = signals::pour_windows(demo.trial, bounds);
  int n_frames = int(demo.trial.frames.size());
  for (int w : signals::h_grid_indices(n_frames)) {
    BcSample s;
    s.feats = windows[w].values;
    int act_frame = std::min(w + kWindowFrames, n_frames - 1);
    s.action = demo.actions[act_frame];
    s.sub = sub_label;
    for (std::size_t k = 0; k < kBcTargets.size(); ++k)
      s.feats.push_back(k == std::size_t(demo.target_class) ? 1.0 : 0.0);
    out.push_back(std::move(s));
  }
}

double bce(double y, int a) {
  double p = std::clamp(y, 1e-12, 1.0 - 1e-12);
  return a ? -std::log(p) : -std::log(1.0 - p);
}

double bce_over(const neural::Params& params, const std::vector<BcSample>& set) {
  if (set.empty()) return 0.0;
  int d = int(set[0].feats.size());
  Eigen::MatrixXd x(d, set.size());
  std::vector<int> labels(set.size());
  for (std::size_t c = 0; c < set.size(); ++c) {
    x.col(c) = Eigen::Map<const Eigen::VectorXd>(set[c].feats.data(), d);
    labels[c] = set[c].sub;
  }
  Eigen::MatrixXd y = neural::forward(params, x, {labels}, neural::Mode::eval());
  double sum = 0.0;
  for (std::size_t c = 0; c < set.size(); ++c) sum += bce(y(0, c), set[c].action);
  return sum / set.size();
}

}  // namespace

BcTrainResult train_bc(const std::vector<BcDemo>& demos, const std::vector<std::string>& vocab,
                       const BcTrainConfig& cfg) {
  if (demos.size() < 2) throw std::invalid_argument("clone training needs at least two demos");
  std::vector<bool> have(kBcTargets.size(), false);
  for (const auto& d : demos) have.at(d.target_class) = true;
  for (std::size_t i = 0; i < have.size(); ++i)
    if (!have[i])
      throw std::invalid_argument("no demonstrations for target class " +
                                  std::to_string(kBcTargets[i]) + " g");

  // split by demo, then pool normalization bounds from the training split
  std::vector<int> order(demos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0xbc5911ull));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.below(i)]);
  int n_val = std::max(1, int(std::lround(cfg.val_frac * double(demos.size()))));
  if (n_val >= int(demos.size())) n_val = int(demos.size()) - 1;

  std::vector<int> labels(demos.size());
  for (std::size_t i = 0; i < demos.size(); ++i) {
    auto it = std::find(vocab.begin(), vocab.end(), demos[i].trial.substance);
    if (it == vocab.end())
      throw std::invalid_argument("substance '" + demos[i].trial.substance +
                                  "' not in vocabulary");
    labels[i] = int(it - vocab.begin());
  }

  std::vector<signals::ElectrodeBounds> bounds(vocab.size());
  std::vector<bool> seen(vocab.size(), false);
  for (std::size_t k = n_val; k < order.size(); ++k) {
    int i = order[k];
    auto tb = signals::trial_bounds(demos[i].trial);
    bounds[labels[i]] = seen[labels[i]] ? signals::merge_bounds(bounds[labels[i]], tb) : tb;
    seen[labels[i]] = true;
  }

  std::vector<BcSample> train_set, val_set;
  for (std::size_t k = 0; k < order.size(); ++k) {
    int i = order[k];
    append_samples(demos[i], labels[i], bounds[labels[i]],
                   k < std::size_t(n_val) ? val_set : train_set);
  }
  if (train_set.empty()) throw std::invalid_argument("no training windows");

  neural::NetSpec spec = bc_spec(kNumElectrodes, int(vocab.size()));
  neural::Params params = neural::init_params(spec, Rng::mix(cfg.seed, 0xbc17ull));
  neural::AdamState opt = neural::AdamState::init(spec);
  const int d = spec.feature_dim();

  BcTrainResult res;
  Eigen::VectorXd best_params = params.flat;
  std::vector<int> idx(train_set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
  std::int64_t global_step = 0;
  Eigen::VectorXd g;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng er(Rng::mix(cfg.seed, 0xbce7ull, std::uint64_t(epoch)));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[er.below(i)]);

    double train_sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      std::size_t stop = std::min(idx.size(), start + cfg.batch);
      int B = int(stop - start);
      Eigen::MatrixXd x(d, B);
      std::vector<int> lab(B);
      for (int c = 0; c < B; ++c) {
        const auto& s = train_set[idx[start + c]];
        x.col(c) = Eigen::Map<const Eigen::VectorXd>(s.feats.data(), d);
        lab[c] = s.sub;
      }
      neural::Tape tape;
      neural::Mode m = neural::Mode::training(Rng::mix(cfg.seed, 0xbcd0ull), global_step);
      Eigen::MatrixXd y = neural::forward(params, x, {lab}, m, &tape);
      Eigen::MatrixXd dz(1, B);
      for (int c = 0; c < B; ++c) {
        int a = train_set[idx[start + c]].action;
        train_sum += bce(y(0, c), a);
        dz(0, c) = (y(0, c) - a) / B;
      }
      g = neural::backward(params, tape, dz, true);
      neural::adam_step(opt, params, g, cfg.adam);
      ++global_step;
    }
    res.train_bce.push_back(train_sum / train_set.size());
    double v = bce_over(params, val_set);
    res.val_bce.push_back(v);
    if (res.best_epoch < 0 || v < res.best_val) {
      res.best_val = v;
      res.best_epoch = epoch;
      best_params = params.flat;
    }
  }

  res.model.params.spec = spec;
  res.model.params.flat = std::move(best_params);
  res.model.vocab = vocab;
  res.model.bounds = std::move(bounds);
  return res;
}

PourResult run_bc_pour(const BcModel& bc, const simworld::Catalog& cat,
                       const std::string& substance, double target, const RunOptions& opt) {
  const auto& sub = cat.substance(substance);
  if (!sub.pourable)
    throw std::invalid_argument("substance '" + substance + "' is not pourable");
  int label = bc.label_of(substance);
  int tclass = bc_target_class(target);
  const auto& src = cat.container("pp");
  auto de = simworld::DayEffects::derive(opt.day, cat.noise);
  simworld::SimState st(simworld::kCapacity, opt.seed);
  const double settle_s = settle_horizon(sub, opt.settle_floor_s);

  PourResult res;
  res.substance = substance;
  res.target = target;

  std::deque<std::array<double, kNumElectrodes>> buf;
  WindowFrames window(kWindowFrames);
  bool forward = true, settling = false, done = false;
  double settle_until = 0.0, scale_read = 0.0, t = 0.0;
  const int cap =
      int((opt.max_forward_s + simworld::kMaxAngle / simworld::kWristRate + settle_s + 5.0) /
          kFrameDt);

  for (int i = 0; i <= cap && !done; ++i) {
    t = i * kFrameDt;
    double angle = st.angle;
    auto frame = simworld::emit_capacitance(st, sub, src, cat.noise, de, st.sensor_rng);
    if (i % 10 == 0) scale_read = simworld::emit_scale(st, cat.noise, st.sensor_rng);
    buf.push_back(frame);
    if (buf.size() > std::size_t(kWindowFrames)) buf.pop_front();

    WristCommand cmd = settling ? WristCommand::Hold
                      : forward ? WristCommand::Forward
                                : WristCommand::Backward;

    if (i % 10 == 9 && !settling) {
      std::copy(buf.begin(), buf.end(), window.begin());
      double p = bc.predict_frames(window, label, tclass);
      forward = p >= 0.5;
      res.log.push_back({t, forward ? Phase::Forward : Phase::Retract, angle, 0.0, 0.0,
                         st.scale_true, scale_read});
    }

    if (!settling && t >= opt.max_forward_s) {
      res.exhausted = true;
      forward = false;
    }
    if (!settling && !forward && angle == 0.0 && i > 0) {
      settling = true;
      settle_until = t + settle_s;
    } else if (settling && t >= settle_until) {
      done = true;
    }
    if (!done) simworld::step(st, sub, cmd);
  }
  if (!done) res.exhausted = true;

  res.final_true = st.scale_true;
  res.log.push_back({t, Phase::Done, st.angle, 0.0, 0.0, st.scale_true, scale_read});
  return res;
}

}  // namespace capflow::control
