#include "capflow/pwp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <stdexcept>

namespace capflow::pwp {

using signals::kNumElectrodes;
using signals::kWindowFrames;
using signals::kWindowSpan;

WeightTrajectory::WeightTrajectory(const std::vector<signals::ScaleSample>& samples)
    : pts_(samples) {
  for (std::size_t i = 1; i < pts_.size(); ++i)
    if (pts_[i].t <= pts_[i - 1].t)
      throw std::invalid_argument("weight trajectory needs strictly increasing timestamps");
}

double WeightTrajectory::at(double t) const {
  if (pts_.empty()) return 0.0;
  if (t <= pts_.front().t) return pts_.front().grams;
  if (t >= pts_.back().t) return pts_.back().grams;
  auto it = std::upper_bound(pts_.begin(), pts_.end(), t,
                             [](double v, const signals::ScaleSample& s) { return v < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  double u = (t - a.t) / (b.t - a.t);
  return a.grams + u * (b.grams - a.grams);
}

double WeightTrajectory::slope_at(double t) const {
  if (pts_.size() < 2) return 0.0;
  if (t < pts_.front().t || t >= pts_.back().t) return 0.0;
  auto it = std::upper_bound(pts_.begin(), pts_.end(), t,
                             [](double v, const signals::ScaleSample& s) { return v < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  return (b.grams - a.grams) / (b.t - a.t);
}

double WeightTrajectory::end_t() const { return pts_.empty() ? 0.0 : pts_.back().t; }

std::size_t Dataset::total_windows() const {
  std::size_t n = 0;
  for (const auto& t : trials) n += t.windows.size();
  return n;
}

Dataset build_dataset(const std::vector<signals::Trial>& trials,
                      const std::vector<std::string>& vocab,
                      const std::vector<int>& electrodes) {
  Dataset ds;
  ds.vocab = vocab;
  ds.electrodes = electrodes;
  ds.substance_bounds.resize(vocab.size());
  std::vector<bool> seen(vocab.size(), false);
  for (const auto& tr : trials) {
    if (tr.kind != signals::TrialKind::Pour)
      throw std::invalid_argument("pour dataset got a grasp trial");
    if (tr.scale.empty())
      throw std::invalid_argument("pour trial without a scale track cannot be used for training");
    auto it = std::find(vocab.begin(), vocab.end(), tr.substance);
    if (it == vocab.end())
      throw std::invalid_argument("substance '" + tr.substance + "' not in vocabulary");
    int label = int(it - vocab.begin());

    TrialData td;
    td.windows = signals::pour_windows(tr, electrodes);
    td.h_grid = signals::h_grid_indices(int(tr.frames.size()));
    td.traj = WeightTrajectory(tr.scale);
    td.label = label;
    td.t_last = tr.frames.empty() ? 0.0 : tr.frames.back().t;
    if (td.windows.empty()) throw std::invalid_argument("pour trial too short for any window");
    ds.window_dim = int(td.windows[0].values.size());

    auto tb = signals::trial_bounds(tr);
    ds.substance_bounds[label] = seen[label] ? signals::merge_bounds(ds.substance_bounds[label], tb) : tb;
    seen[label] = true;
    ds.trials.push_back(std::move(td));
  }
  return ds;
}

neural::NetSpec pwp_spec(int n_electrodes, int vocab_size, bool offsets) {
  neural::NetSpec s;
  s.input_dim = kWindowFrames * n_electrodes + 50;
  s.blocks = 7;
  s.width = 256;
  s.dropout = 0.05;
  s.output_dim = offsets ? 3 : 1;
  s.output_activation = neural::Activation::ReLU;
  s.embeddings = {{vocab_size, 50}};
  return s;
}

LossBreakdown compute_loss(const neural::Params& params, const Dataset& ds,
                           const std::vector<BatchElement>& batch,
                           const std::vector<AuxDraw>& aux, const LossWeights& lw,
                           const neural::Mode& mode, Eigen::VectorXd* grad, int n_shards) {
  const bool offsets = params.spec.output_dim == 3;
  if (!offsets && params.spec.output_dim != 1)
    throw std::invalid_argument("predictor must have 1 or 3 outputs");
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const double h = kWindowSpan;
  const int B = int(batch.size());

  struct RowRef {
    int trial, window;
  };
  std::vector<RowRef> rows;
  rows.reserve(batch.size() * 2 + aux.size() * 32);
  for (const auto& b : batch) {
    if (b.trial < 0 || b.trial >= int(ds.trials.size()))
      throw std::out_of_range("batch trial out of range");
    if (b.window < 0 || b.window >= int(ds.trials[b.trial].windows.size()))
      throw std::out_of_range("batch window out of range");
    rows.push_back({b.trial, b.window});
  }
  std::vector<int> partner(B, -1);
  if (offsets) {
    for (int i = 0; i < B; ++i) {
      int succ = batch[i].window + kWindowFrames;
      if (succ < int(ds.trials[batch[i].trial].windows.size())) {
        partner[i] = int(rows.size());
        rows.push_back({batch[i].trial, succ});
      }
    }
  }
  struct AuxRef {
    int first = 0, count = 0, t_rand_col = 0, trial = 0;
  };
  std::vector<AuxRef> aux_refs;
  for (const auto& a : aux) {
    const auto& td = ds.trials.at(a.trial);
    if (a.t_rand < 1 || a.t_rand >= int(td.h_grid.size()))
      throw std::out_of_range("aux draw outside the h grid");
    AuxRef ar;
    ar.first = int(rows.size());
    ar.count = a.t_rand;
    ar.trial = a.trial;
    for (int j = 0; j < a.t_rand; ++j) rows.push_back({a.trial, td.h_grid[j]});
    ar.t_rand_col = int(rows.size());
    rows.push_back({a.trial, td.h_grid[a.t_rand]});
    aux_refs.push_back(ar);
  }

  const int R = int(rows.size());
  Eigen::MatrixXd feats(ds.window_dim, R);
  std::vector<int> labels(R);
  for (int c = 0; c < R; ++c) {
    const auto& td = ds.trials[rows[c].trial];
    const auto& w = td.windows[rows[c].window];
    feats.col(c) = Eigen::Map<const Eigen::VectorXd>(w.values.data(), ds.window_dim);
    labels[c] = td.label;
  }

  // forward in column shards; tapes kept only when a gradient is wanted
  n_shards = std::clamp(n_shards, 1, R);
  std::vector<int> cuts(n_shards + 1);
  for (int s = 0; s <= n_shards; ++s) cuts[s] = int(std::int64_t(R) * s / n_shards);
  std::vector<neural::Tape> tapes(grad ? n_shards : 0);
  Eigen::MatrixXd Y(params.spec.output_dim, R);
  for (int s = 0; s < n_shards; ++s) {
    int a = cuts[s], b = cuts[s + 1];
    if (a == b) continue;
    neural::Mode m = mode;
    m.row_offset = mode.row_offset + a;
    std::vector<std::vector<int>> lab = {std::vector<int>(labels.begin() + a, labels.begin() + b)};
    Y.middleCols(a, b - a) =
        neural::forward(params, feats.middleCols(a, b - a), lab, m, grad ? &tapes[s] : nullptr);
  }

  auto o_s = [&](int c) { return offsets ? Y(1, c) : 0.0; };
  auto o_e = [&](int c) { return offsets ? Y(2, c) : 0.0; };

  Eigen::MatrixXd dY;
  if (grad) dY = Eigen::MatrixXd::Zero(params.spec.output_dim, R);

  LossBreakdown bd;
  bd.n_weight = B;

  for (int i = 0; i < B; ++i) {
    const auto& td = ds.trials[rows[i].trial];
    double t = td.windows[rows[i].window].t_start;
    double os = o_s(i), oe = o_e(i);
    double target = td.traj.at(t + h + oe) - td.traj.at(t + os);
    double resid = Y(0, i) - target;
    bd.weight += resid * resid;
    if (grad) {
      dY(0, i) += 2.0 * resid / B;
      if (offsets) {
        dY(1, i) += 2.0 * resid * td.traj.slope_at(t + os) / B;
        dY(2, i) -= 2.0 * resid * td.traj.slope_at(t + h + oe) / B;
      }
    }
    if (offsets) {
      if (os < lw.o_min) {
        bd.p1 += lw.o_min - os;
        if (grad) dY(1, i) -= lw.beta / B;
      }
      if (oe < lw.o_min) {
        bd.p1 += lw.o_min - oe;
        if (grad) dY(2, i) -= lw.beta / B;
      }
    }
  }
  bd.weight /= B;
  bd.p1 /= B;

  if (offsets) {
    for (int i = 0; i < B; ++i) bd.n_p2 += partner[i] >= 0;
    if (bd.n_p2 > 0) {
      for (int i = 0; i < B; ++i) {
        if (partner[i] < 0) continue;
        double d = o_s(partner[i]) - o_e(i);
        bd.p2 += d * d;
        if (grad) {
          dY(1, partner[i]) += lw.gamma * 2.0 * d / bd.n_p2;
          dY(2, i) -= lw.gamma * 2.0 * d / bd.n_p2;
        }
      }
      bd.p2 /= bd.n_p2;
    }
  }

  bd.n_aux = int(aux_refs.size());
  for (const auto& ar : aux_refs) {
    const auto& td = ds.trials[ar.trial];
    double roll = 0.0;
    for (int c = ar.first; c < ar.first + ar.count; ++c) roll += Y(0, c);
    double oe = o_e(ar.t_rand_col);
    double t_r = td.windows[rows[ar.t_rand_col].window].t_start;
    double resid = roll - td.traj.at(t_r + oe);
    bd.aux += resid * resid;
    if (grad) {
      for (int c = ar.first; c < ar.first + ar.count; ++c)
        dY(0, c) += lw.alpha * 2.0 * resid / bd.n_aux;
      if (offsets)
        dY(2, ar.t_rand_col) -= lw.alpha * 2.0 * resid * td.traj.slope_at(t_r + oe) / bd.n_aux;
    }
  }
  if (bd.n_aux > 0) bd.aux /= bd.n_aux;

  if (grad) {
    grad->setZero(params.flat.size());
    for (int s = 0; s < n_shards; ++s) {
      int a = cuts[s], b = cuts[s + 1];
      if (a == b) continue;
      *grad += neural::backward(params, tapes[s], dY.middleCols(a, b - a));
    }
  }
  return bd;
}

LossBreakdown eval_dataset_loss(const neural::Params& params, const Dataset& ds,
                                const LossWeights& lw, std::uint64_t seed) {
  double w_sum = 0, aux_sum = 0, p1_sum = 0, p2_sum = 0;
  std::int64_t nw = 0, na = 0, np2 = 0;
  for (std::size_t ti = 0; ti < ds.trials.size(); ++ti) {
    const auto& td = ds.trials[ti];
    std::vector<BatchElement> batch;
    batch.reserve(td.windows.size());
    for (int i = 0; i < int(td.windows.size()); ++i) batch.push_back({int(ti), i});
    std::vector<AuxDraw> aux;
    if (td.h_grid.size() >= 2) {
      Rng r(Rng::mix(seed, ti));
      aux.push_back({int(ti), 1 + int(r.below(td.h_grid.size() - 1))});
    }
    LossBreakdown bd =
        compute_loss(params, ds, batch, aux, lw, neural::Mode::eval(), nullptr, 1);
    w_sum += bd.weight * bd.n_weight;
    p1_sum += bd.p1 * bd.n_weight;
    aux_sum += bd.aux * bd.n_aux;
    p2_sum += bd.p2 * bd.n_p2;
    nw += bd.n_weight;
    na += bd.n_aux;
    np2 += bd.n_p2;
  }
  LossBreakdown out;
  out.weight = nw ? w_sum / nw : 0.0;
  out.p1 = nw ? p1_sum / nw : 0.0;
  out.aux = na ? aux_sum / na : 0.0;
  out.p2 = np2 ? p2_sum / np2 : 0.0;
  out.n_weight = int(nw);
  out.n_aux = int(na);
  out.n_p2 = int(np2);
  return out;
}

int PwpModel::label_of(const std::string& substance) const {
  auto it = std::find(vocab.begin(), vocab.end(), substance);
  if (it == vocab.end()) throw std::invalid_argument("substance '" + substance + "' not in vocabulary");
  return int(it - vocab.begin());
}

PwpOutput PwpModel::predict_window(const std::vector<double>& values, int label) const {
  Eigen::MatrixXd feats =
      Eigen::Map<const Eigen::VectorXd>(values.data(), Eigen::Index(values.size()));
  if (int(values.size()) != params.spec.feature_dim())
    throw std::invalid_argument("predict: window dimension mismatch");
  Eigen::MatrixXd y = neural::forward(params, feats, {{label}}, neural::Mode::eval());
  PwpOutput out;
  out.dw = y(0, 0);
  if (offsets) {
    out.o_s = y(1, 0);
    out.o_e = y(2, 0);
  }
  return out;
}

PwpOutput PwpModel::predict_frames(
    const std::vector<std::array<double, kNumElectrodes>>& frames, int label) const {
  if (int(frames.size()) != kWindowFrames)
    throw std::invalid_argument("predict: need exactly one window of frames");
  if (label < 0 || label >= int(bounds.size()))
    throw std::out_of_range("predict: label outside vocabulary");
  std::vector<int> ids = electrodes;
  if (ids.empty())
    for (int e = 1; e <= kNumElectrodes; ++e) ids.push_back(e);
  const auto& b = bounds[label];
  std::vector<double> values;
  values.reserve(frames.size() * ids.size());
  for (const auto& fr : frames)
    for (int id : ids) {
      int e = id - 1;
      double span = b.hi[e] - b.lo[e];
      double v = span > 1e-12 ? (fr[e] - b.lo[e]) / span : 0.0;
      values.push_back(std::clamp(v, 0.0, 1.0));
    }
  return predict_window(values, label);
}

namespace {

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string format_bounds(const signals::ElectrodeBounds& b) {
  char buf[40];
  std::string out;
  for (int e = 0; e < kNumElectrodes; ++e) {
    std::snprintf(buf, sizeof(buf), "%.17g", b.lo[e]);
    out += buf;
    out += ',';
  }
  for (int e = 0; e < kNumElectrodes; ++e) {
    std::snprintf(buf, sizeof(buf), "%.17g", b.hi[e]);
    out += buf;
    if (e + 1 < kNumElectrodes) out += ',';
  }
  return out;
}

signals::ElectrodeBounds parse_bounds(const std::string& s) {
  auto parts = split(s, ',');
  if (parts.size() != 2 * kNumElectrodes)
    throw std::runtime_error("model file: bad bounds entry");
  signals::ElectrodeBounds b;
  for (int e = 0; e < kNumElectrodes; ++e) {
    b.lo[e] = std::strtod(parts[e].c_str(), nullptr);
    b.hi[e] = std::strtod(parts[kNumElectrodes + e].c_str(), nullptr);
  }
  return b;
}

}  // namespace

void PwpModel::save(const std::filesystem::path& path) const {
  std::map<std::string, std::string> extra;
  extra["kind"] = "pwp";
  extra["vocab"] = join(vocab, ',');
  if (electrodes.empty()) {
    extra["electrodes"] = "all";
  } else {
    std::string s;
    for (std::size_t i = 0; i < electrodes.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(electrodes[i]);
    }
    extra["electrodes"] = s;
  }
  extra["offsets"] = offsets ? "1" : "0";
  for (std::size_t i = 0; i < vocab.size(); ++i)
    extra["bounds." + vocab[i]] = format_bounds(bounds[i]);
  neural::save_checkpoint(params, extra, path);
}

PwpModel PwpModel::load(const std::filesystem::path& path) {
  auto [params, extra] = neural::load_checkpoint(path);
  PwpModel m;
  m.params = std::move(params);
  if (!extra.count("vocab")) throw std::runtime_error("model file: missing vocab");
  m.vocab = split(extra.at("vocab"), ',');
  m.offsets = extra.count("offsets") ? extra.at("offsets") == "1" : true;
  std::string el = extra.count("electrodes") ? extra.at("electrodes") : "all";
  if (el != "all")
    for (const auto& tok : split(el, ',')) m.electrodes.push_back(std::stoi(tok));
  m.bounds.resize(m.vocab.size());
  for (std::size_t i = 0; i < m.vocab.size(); ++i) {
    auto key = "bounds." + m.vocab[i];
    if (!extra.count(key)) throw std::runtime_error("model file: missing " + key);
    m.bounds[i] = parse_bounds(extra.at(key));
  }
  return m;
}

TrainResult train_pwp(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  if (train.trials.empty()) throw std::invalid_argument("train_pwp: empty training set");
  int ne = train.electrodes.empty() ? kNumElectrodes : int(train.electrodes.size());
  neural::NetSpec spec = pwp_spec(ne, int(train.vocab.size()), cfg.offsets);
  neural::Params params = neural::init_params(spec, Rng::mix(cfg.seed, 0x1417ull));
  {
    // Fan-in init leaves the rectified head predicting O(1) grams per tick;
    // the first epoch then drives every output coordinate down through zero
    // and the rectifier cuts the gradient for good.  Start small and
    // slightly positive instead: near the per-tick scale of the targets.
    auto layout = neural::Layout::of(spec);
    params.seg(layout.find("head.W")) *= 0.1;
    params.seg(layout.find("head.b")).array() += 0.3;
  }
  neural::AdamState opt = neural::AdamState::init(spec);

  std::vector<BatchElement> all;
  all.reserve(train.total_windows());
  for (int ti = 0; ti < int(train.trials.size()); ++ti)
    for (int w = 0; w < int(train.trials[ti].windows.size()); ++w) all.push_back({ti, w});

  TrainResult res;
  Eigen::VectorXd best_params;
  std::int64_t global_step = 0;
  Eigen::VectorXd g;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, 0xE70c4ull, std::uint64_t(epoch)));
    for (std::size_t i = all.size(); i > 1; --i)
      std::swap(all[i - 1], all[shuffle_rng.below(i)]);
    Rng aux_rng(Rng::mix(cfg.seed, 0xa0d7ull, std::uint64_t(epoch)));

    double w_sum = 0, aux_sum = 0, p1_sum = 0, p2_sum = 0;
    std::int64_t nw = 0, na = 0, np2 = 0;
    for (std::size_t start = 0; start < all.size(); start += cfg.batch) {
      std::size_t stop = std::min(all.size(), start + cfg.batch);
      std::vector<BatchElement> batch(all.begin() + start, all.begin() + stop);
      std::vector<AuxDraw> aux;
      if (cfg.offsets && cfg.aux_every > 0 && global_step % cfg.aux_every == 0) {
        for (int attempt = 0; attempt < 8; ++attempt) {
          int ti = int(aux_rng.below(train.trials.size()));
          const auto& hg = train.trials[ti].h_grid;
          if (hg.size() >= 2) {
            aux.push_back({ti, 1 + int(aux_rng.below(hg.size() - 1))});
            break;
          }
        }
      }
      neural::Mode m = neural::Mode::training(Rng::mix(cfg.seed, 0xd207ull), global_step);
      LossBreakdown bd = compute_loss(params, train, batch, aux, cfg.loss, m, &g, cfg.n_shards);
      neural::adam_step(opt, params, g, cfg.adam);
      w_sum += bd.weight * bd.n_weight;
      p1_sum += bd.p1 * bd.n_weight;
      aux_sum += bd.aux * bd.n_aux;
      p2_sum += bd.p2 * bd.n_p2;
      nw += bd.n_weight;
      na += bd.n_aux;
      np2 += bd.n_p2;
      ++global_step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.train.weight = nw ? w_sum / nw : 0;
    st.train.p1 = nw ? p1_sum / nw : 0;
    st.train.aux = na ? aux_sum / na : 0;
    st.train.p2 = np2 ? p2_sum / np2 : 0;
    st.train.n_weight = int(nw);
    st.train.n_aux = int(na);
    st.train.n_p2 = int(np2);
    st.train_total = st.train.total(cfg.loss);
    if (!val.trials.empty()) {
      st.val = eval_dataset_loss(params, val, cfg.loss, Rng::mix(cfg.seed, 0x7a1ull));
      st.val_total = st.val.total(cfg.loss);
      if (res.best_epoch < 0 || st.val_total < res.best_val) {
        res.best_val = st.val_total;
        res.best_epoch = epoch;
        best_params = params.flat;
      }
    }
    res.curve.push_back(st);
  }

  if (val.trials.empty() || res.best_epoch < 0) {
    res.best_epoch = cfg.epochs - 1;
    res.best_val = res.curve.empty() ? 0.0 : res.curve.back().train_total;
    best_params = params.flat;
  }

  res.model.params.spec = spec;
  res.model.params.flat = std::move(best_params);
  res.model.vocab = train.vocab;
  res.model.bounds = train.substance_bounds;
  res.model.electrodes = train.electrodes;
  res.model.offsets = cfg.offsets;
  return res;
}

}  // namespace capflow::pwp
