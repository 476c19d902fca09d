#include "capflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "capflow/rng.hpp"

namespace capflow::harness {

namespace fs = std::filesystem;

const std::vector<int>& electrode_set(const std::string& name) {
  static const std::vector<int> all = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  static const std::vector<int> six = {1, 3, 5, 6, 8, 10};
  static const std::vector<int> two = {6, 10};
  static const std::vector<int> one = {8};
  if (name == "10") return all;
  if (name == "6") return six;
  if (name == "2") return two;
  if (name == "1") return one;
  throw std::invalid_argument("unknown electrode set '" + name + "'");
}

namespace {

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::uint64_t mix2(std::uint64_t a, std::uint64_t b) { return Rng::mix(a, b); }
std::uint64_t mix3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return Rng::mix(a, b, c);
}

const std::vector<std::string> kVariantNames = {"full",  "no_owe", "no_offsets",
                                                "elec6", "elec2",  "bc"};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("experiment config: ") + what);
  };
  need(train_days >= 1, "train_days must be at least 1");
  need(iterations >= 1, "iterations must be at least 1");
  need(chance_shuffles >= 1, "chance_shuffles must be at least 1");
  need(scaling_chains >= 1, "scaling_chains must be at least 1");
  need(!variants.empty(), "variant list is empty");
  for (const auto& v : variants) {
    need(std::find(kVariantNames.begin(), kVariantNames.end(), v) != kVariantNames.end(),
         "unrecognized variant");
    need(std::count(variants.begin(), variants.end(), v) == 1, "duplicate variant");
  }
  need(trials_per_cell >= 1, "trials_per_cell must be at least 1");
  need(pwp_train_trials >= int(catalog.pourable_names().size()),
       "pwp_train_trials must cover every pourable substance");
  need(pwp_epochs >= 1, "pwp_epochs must be at least 1");
  need(pwp_batch >= 1, "pwp_batch must be at least 1");
  need(owe_reps >= 1, "owe_reps must be at least 1");
  need(bc_demos_per_cell >= 1, "bc_demos_per_cell must be at least 1");
  need(bc_epochs >= 1, "bc_epochs must be at least 1");
}

std::string ExperimentConfig::serialize() const {
  // out_dir is deliberately excluded: where artifacts land does not change
  // what the experiment computes
  std::string s;
  s += "id " + id + "\n";
  s += fmt("seed %llu\n", (unsigned long long)seed);
  s += fmt("train_days %d\niterations %d\nnoise_free %d\nchance_shuffles %d\n", train_days,
           iterations, int(noise_free), chance_shuffles);
  s += fmt("scaling_chains %d\n", scaling_chains);
  s += "variants";
  for (const auto& v : variants) s += " " + v;
  s += "\n";
  s += fmt("trials_per_cell %d\npwp_train_trials %d\npwp_epochs %d\npwp_batch %d\n",
           trials_per_cell, pwp_train_trials, pwp_epochs, pwp_batch);
  s += fmt("owe_reps %d\nbc_demos_per_cell %d\nbc_epochs %d\n", owe_reps, bc_demos_per_cell,
           bc_epochs);
  s += catalog.serialize();
  return s;
}

std::uint64_t ExperimentConfig::config_hash() const {
  std::string s = serialize();
  return fnv1a(s.data(), s.size());
}

// ---- grasp classification ----

namespace {

struct GraspData {
  Eigen::MatrixXd train_x, test_x;  // standardized features
  std::vector<int> train_y, test_y;
};

GraspData generate_grasp_data(const ExperimentConfig& cfg, const simworld::Catalog& cat) {
  std::vector<std::vector<double>> train_rows, test_rows;
  GraspData d;
  const std::uint64_t root = mix2(cfg.seed, 0x6772617370ull);
  // train_days sessions of `iterations` cycles per class, then one more
  // session of the same size held out for testing
  for (int day = 1; day <= cfg.train_days + 1; ++day) {
    bool test = day == cfg.train_days + 1;
    for (int it = 0; it < cfg.iterations; ++it)
      for (int c = 0; c < classify::kNumContainers; ++c)
        for (int s = 0; s < classify::kNumSubstances; ++s) {
          int joint = classify::joint_label(c, s);
          auto tr = simworld::grasp_signature(cat, cat.containers[c].name,
                                              cat.substances[s].name, day,
                                              mix3(root, std::uint64_t(day) << 16 | it, joint));
          auto f = signals::grasp_features(tr);
          (test ? test_rows : train_rows).push_back(std::move(f));
          (test ? d.test_y : d.train_y).push_back(joint);
        }
  }
  auto st = signals::standardize_fit(train_rows);
  auto pack = [&](std::vector<std::vector<double>>& rows, Eigen::MatrixXd& X) {
    X.resize(Eigen::Index(rows.size()), Eigen::Index(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto z = signals::standardize_apply(st, rows[i]);
      for (std::size_t j = 0; j < z.size(); ++j) X(Eigen::Index(i), Eigen::Index(j)) = z[j];
      rows[i].clear();
      rows[i].shrink_to_fit();
    }
  };
  pack(train_rows, d.train_x);
  pack(test_rows, d.test_x);
  return d;
}

classify::EvalReport fit_and_eval(const Eigen::MatrixXd& trx, const std::vector<int>& try_,
                                  const Eigen::MatrixXd& tex, const std::vector<int>& tey,
                                  int n_classes, std::uint64_t seed) {
  classify::ForestConfig fc;
  fc.seed = seed;
  auto forest = classify::fit_forest(trx, try_, n_classes, fc);
  return classify::evaluate_joint(forest.predict_all(tex), tey);
}

}  // namespace

ClassificationReport run_classification_suite(const ExperimentConfig& cfg) {
  cfg.validate();
  simworld::Catalog cat = cfg.catalog;
  if (cfg.noise_free) {
    cat.noise.meas_sigma = 0.0;
    cat.noise.day_global_sigma = 0.0;
    cat.noise.day_elec_sigma = 0.0;
    cat.noise.scale_noise_prob = 0.0;
  }

  ClassificationReport rep;
  GraspData d = generate_grasp_data(cfg, cat);
  rep.n_train = int(d.train_y.size());
  rep.n_test = int(d.test_y.size());

  classify::ForestConfig fc;
  fc.seed = mix2(cfg.seed, 0xf07e57ull);
  auto forest = classify::fit_forest(d.train_x, d.train_y, classify::kNumJointClasses, fc);
  auto preds = forest.predict_all(d.test_x);
  rep.main = classify::evaluate_joint(preds, d.test_y);

  // chance sanity: the same predictions scored against shuffled truth
  Rng shuffle_rng(mix2(cfg.seed, 0xc4a7ceull));
  double acc_sum = 0.0;
  std::vector<int> shuffled = d.test_y;
  for (int k = 0; k < cfg.chance_shuffles; ++k) {
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[shuffle_rng.below(i)]);
    int hit = 0;
    for (std::size_t i = 0; i < shuffled.size(); ++i) hit += preds[i] == shuffled[i];
    acc_sum += double(hit) / double(shuffled.size());
  }
  rep.chance_acc = acc_sum / cfg.chance_shuffles;

  // electrode ablation; the full set reuses the main fit
  for (const char* name : {"10", "6", "2", "1"}) {
    AblationRow row;
    row.name = name;
    row.electrodes = electrode_set(name);
    if (row.electrodes.size() == signals::kNumElectrodes) {
      row.report = rep.main;
    } else {
      auto trx = classify::electrode_subset(d.train_x, row.electrodes);
      auto tex = classify::electrode_subset(d.test_x, row.electrodes);
      row.report = fit_and_eval(trx, d.train_y, tex, d.test_y, classify::kNumJointClasses,
                                mix3(cfg.seed, 0xab1a7ull, row.electrodes.size()));
    }
    rep.ablation.push_back(std::move(row));
  }

  // Nested class subsets.  A single chain's curve is hostage to which
  // classes land in the early prefixes, so each point averages the same
  // prefix size over `scaling_chains` independent shuffles; prefix sizes
  // are nested within every chain.
  for (int k : {9, 27, 54, 81}) {
    ScalingPoint pt;
    pt.n_classes = k;
    pt.n_train = k * cfg.train_days * cfg.iterations;
    pt.n_test = k * cfg.iterations;
    rep.scaling.push_back(pt);
  }
  rep.scaling.back().joint_acc = rep.main.joint_acc;  // full set: one fit, any chain
  for (int chain = 0; chain < cfg.scaling_chains; ++chain) {
    std::vector<int> perm(classify::kNumJointClasses);
    std::iota(perm.begin(), perm.end(), 0);
    Rng perm_rng(mix3(cfg.seed, 0x5ca11e5ull, std::uint64_t(chain)));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[perm_rng.below(i)]);
    for (auto& pt : rep.scaling) {
      const int k = pt.n_classes;
      if (k == classify::kNumJointClasses) continue;
      std::vector<int> relabel(classify::kNumJointClasses, -1);
      for (int i = 0; i < k; ++i) relabel[perm[i]] = i;
      auto filter = [&](const Eigen::MatrixXd& X, const std::vector<int>& y,
                        Eigen::MatrixXd& fx, std::vector<int>& fy) {
        std::vector<int> keep;
        for (std::size_t i = 0; i < y.size(); ++i)
          if (relabel[y[i]] >= 0) keep.push_back(int(i));
        fx.resize(Eigen::Index(keep.size()), X.cols());
        for (std::size_t i = 0; i < keep.size(); ++i) {
          fx.row(Eigen::Index(i)) = X.row(keep[i]);
          fy.push_back(relabel[y[keep[i]]]);
        }
      };
      Eigen::MatrixXd trx, tex;
      std::vector<int> try_, tey;
      filter(d.train_x, d.train_y, trx, try_);
      filter(d.test_x, d.test_y, tex, tey);
      auto seed = mix3(cfg.seed, 0x5ca1eull, std::uint64_t(chain) << 8 | unsigned(k));
      pt.joint_acc +=
          fit_and_eval(trx, try_, tex, tey, k, seed).joint_acc / cfg.scaling_chains;
    }
  }

  write_classification_artifacts(cfg, rep);
  return rep;
}

// ---- pouring stages ----

std::vector<signals::Trial> make_training_pours(const ExperimentConfig& cfg) {
  auto names = cfg.catalog.pourable_names();
  const int per = cfg.pwp_train_trials / int(names.size());
  const int extra = cfg.pwp_train_trials % int(names.size());
  std::vector<signals::Trial> pours;
  pours.reserve(cfg.pwp_train_trials);
  for (std::size_t si = 0; si < names.size(); ++si) {
    int n = per + (int(si) < extra ? 1 : 0);
    const auto& sub = cfg.catalog.substance(names[si]);
    for (int k = 0; k < n; ++k) {
      std::uint64_t seed = mix3(mix2(cfg.seed, 0x7ea125ull), si, k);
      auto policy = simworld::scripted_profile(sub, mix2(seed, 1), 20.0);
      pours.push_back(
          simworld::run_scripted_pour(cfg.catalog, names[si], policy, 1 + (k % 4), seed, 20.0));
    }
  }
  return pours;
}

pwp::TrainResult train_pwp_stage(const ExperimentConfig& cfg,
                                 const std::vector<signals::Trial>& pours, bool offsets,
                                 const std::vector<int>& electrodes) {
  auto vocab = cfg.catalog.pourable_names();
  // per-substance 4:1 split, validation taken from the tail of each group
  std::map<std::string, int> count, seen;
  for (const auto& t : pours) ++count[t.substance];
  std::vector<signals::Trial> train, val;
  for (const auto& t : pours) {
    int n = count[t.substance];
    int n_val = n >= 2 ? std::max(1, n / 5) : 0;
    (seen[t.substance]++ < n - n_val ? train : val).push_back(t);
  }

  auto train_ds = pwp::build_dataset(train, vocab, electrodes);
  auto val_ds = pwp::build_dataset(val, vocab, electrodes);

  std::uint64_t ekey = 0;
  for (int id : electrodes) ekey = mix2(ekey, std::uint64_t(id));
  pwp::TrainConfig tc;
  tc.epochs = cfg.pwp_epochs;
  tc.batch = cfg.pwp_batch;
  tc.offsets = offsets;
  tc.seed = mix3(cfg.seed, 0x9e7000ull + (offsets ? 0 : 1), ekey);
  auto res = pwp::train_pwp(train_ds, val_ds, tc);
  if (!res.curve.empty() && !std::isfinite(res.curve.back().train_total))
    throw std::runtime_error("weight predictor training diverged (non-finite loss)");
  return res;
}

std::vector<owe::OweCoeffs> fit_owe_stage(const ExperimentConfig& cfg,
                                          const pwp::PwpModel& model) {
  std::vector<owe::OweCoeffs> out;
  auto names = cfg.catalog.pourable_names();
  for (std::size_t si = 0; si < names.size(); ++si) {
    control::RunOptions base;
    base.day = 600 + std::int64_t(si);
    base.seed = mix3(cfg.seed, 0x09e5ull, si);
    auto samples =
        control::collect_overpour(model, cfg.catalog, names[si], cfg.owe_reps, base);
    out.push_back(owe::fit_owe(samples, names[si]));
  }
  return out;
}

std::vector<control::BcDemo> make_bc_demos(const ExperimentConfig& cfg) {
  std::vector<control::BcDemo> demos;
  auto names = cfg.catalog.pourable_names();
  for (std::size_t si = 0; si < names.size(); ++si)
    for (std::size_t ti = 0; ti < kEvalTargets.size(); ++ti)
      for (int rep = 0; rep < cfg.bc_demos_per_cell; ++rep)
        demos.push_back(control::generate_bc_demo(
            cfg.catalog, names[si], kEvalTargets[ti], 1 + (rep % 4),
            mix3(mix2(cfg.seed, 0xbcde40ull), si << 8 | ti, rep)));
  return demos;
}

ResultTable tabulate(const std::string& variant, const std::vector<TrialRecord>& trials) {
  ResultTable t;
  t.variant = variant;
  auto stats = [](const std::vector<const TrialRecord*>& group, ResultRow& row) {
    row.n = int(group.size());
    double sa = 0.0, ss = 0.0;
    for (auto* tr : group) {
      sa += tr->result.error();
      ss += tr->result.signed_error();
    }
    row.mean_abs = sa / row.n;
    row.mean_signed = ss / row.n;
    double va = 0.0, vs = 0.0;
    for (auto* tr : group) {
      va += (tr->result.error() - row.mean_abs) * (tr->result.error() - row.mean_abs);
      vs += (tr->result.signed_error() - row.mean_signed) *
            (tr->result.signed_error() - row.mean_signed);
    }
    row.std_abs = row.n > 1 ? std::sqrt(va / (row.n - 1)) : 0.0;
    row.std_signed = row.n > 1 ? std::sqrt(vs / (row.n - 1)) : 0.0;
  };

  // cells in first-encounter order (the grid emits substance-major)
  std::vector<std::pair<std::string, double>> cells;
  for (const auto& tr : trials) {
    std::pair<std::string, double> key = {tr.substance, tr.target};
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  for (const auto& [sub, target] : cells) {
    std::vector<const TrialRecord*> group;
    for (const auto& tr : trials)
      if (tr.substance == sub && tr.target == target) group.push_back(&tr);
    ResultRow row;
    row.substance = sub;
    row.target = target;
    stats(group, row);
    t.rows.push_back(std::move(row));
  }
  std::vector<const TrialRecord*> all;
  for (const auto& tr : trials) all.push_back(&tr);
  t.aggregate.substance = "all";
  t.aggregate.target = 0.0;
  if (!all.empty()) stats(all, t.aggregate);
  return t;
}

VariantOutcome evaluate_variant(const ExperimentConfig& cfg, const std::string& variant,
                                const pwp::PwpModel* model,
                                const std::vector<owe::OweCoeffs>* coeffs,
                                const control::BcModel* bc) {
  if (!!model == !!bc)
    throw std::invalid_argument("evaluate_variant needs exactly one of model/bc");
  VariantOutcome out;
  out.variant = variant;
  // training metadata is the caller's to fill; the size is the model's own
  out.model.n_params =
      (model ? model->params.spec : bc->params.spec).param_count();
  auto names = cfg.catalog.pourable_names();
  for (std::size_t si = 0; si < names.size(); ++si)
    for (std::size_t ti = 0; ti < kEvalTargets.size(); ++ti)
      for (int rep = 0; rep < cfg.trials_per_cell; ++rep) {
        TrialRecord rec;
        rec.substance = names[si];
        rec.target = kEvalTargets[ti];
        rec.rep = rep;
        rec.day = 900 + rep;  // drift days unseen in any training stage
        rec.seed = mix3(mix2(cfg.seed, 0xe7a100ull), si << 8 | ti, rep);
        control::RunOptions opt;
        opt.day = rec.day;
        opt.seed = rec.seed;
        if (bc) {
          rec.result = control::run_bc_pour(*bc, cfg.catalog, rec.substance, rec.target, opt);
        } else {
          const owe::OweCoeffs* k =
              coeffs ? &owe::find_coeffs(*coeffs, rec.substance) : nullptr;
          rec.result = control::run_pour(*model, k, cfg.catalog, rec.substance, rec.target, opt);
        }
        out.trials.push_back(std::move(rec));
      }
  out.table = tabulate(variant, out.trials);
  return out;
}

PouringReport run_pouring_suite(const ExperimentConfig& cfg) {
  cfg.validate();
  PouringReport rep;
  rep.variants = cfg.variants;

  std::vector<signals::Trial> pours;
  auto ensure_pours = [&] {
    if (pours.empty()) pours = make_training_pours(cfg);
  };
  std::optional<pwp::TrainResult> full_tr;
  std::vector<owe::OweCoeffs> full_coeffs;
  auto ensure_full = [&] {
    if (!full_tr) {
      ensure_pours();
      full_tr = train_pwp_stage(cfg, pours, true, {});
    }
  };
  auto info = [](const pwp::TrainResult& tr) {
    return ModelInfo{tr.best_epoch, tr.best_val, tr.model.params.spec.param_count()};
  };

  for (const auto& v : cfg.variants) {
    VariantOutcome out;
    if (v == "full") {
      ensure_full();
      if (full_coeffs.empty()) full_coeffs = fit_owe_stage(cfg, full_tr->model);
      out = evaluate_variant(cfg, v, &full_tr->model, &full_coeffs, nullptr);
      out.coeffs = full_coeffs;
      out.model = info(*full_tr);
    } else if (v == "no_owe") {
      ensure_full();
      out = evaluate_variant(cfg, v, &full_tr->model, nullptr, nullptr);
      out.model = info(*full_tr);
    } else if (v == "no_offsets") {
      ensure_pours();
      auto tr = train_pwp_stage(cfg, pours, false, {});
      auto ks = fit_owe_stage(cfg, tr.model);
      out = evaluate_variant(cfg, v, &tr.model, &ks, nullptr);
      out.coeffs = std::move(ks);
      out.model = info(tr);
    } else if (v == "elec6" || v == "elec2") {
      ensure_pours();
      auto tr = train_pwp_stage(cfg, pours, true, electrode_set(v == "elec6" ? "6" : "2"));
      auto ks = fit_owe_stage(cfg, tr.model);
      out = evaluate_variant(cfg, v, &tr.model, &ks, nullptr);
      out.coeffs = std::move(ks);
      out.model = info(tr);
    } else {  // bc
      auto demos = make_bc_demos(cfg);
      control::BcTrainConfig bcc;
      bcc.epochs = cfg.bc_epochs;
      bcc.seed = mix2(cfg.seed, 0xbc7741ull);
      auto btr = control::train_bc(demos, cfg.catalog.pourable_names(), bcc);
      out = evaluate_variant(cfg, v, nullptr, nullptr, &btr.model);
      out.model = {btr.best_epoch, btr.best_val, btr.model.params.spec.param_count()};
    }
    rep.outcomes.emplace(v, std::move(out));
  }

  write_pouring_artifacts(cfg, rep);
  return rep;
}

// ---- artifacts ----

namespace {

// minimal deterministic SVG plotting: line charts and heatmaps only

struct Series {
  std::string color;
  bool dashed = false;
  std::vector<std::pair<double, double>> pts;
};

struct Marker {
  double x = 0.0, y = 0.0;
  std::string color;
};

double nice_step(double range) {
  if (range <= 0.0) return 1.0;
  double raw = range / 5.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double r = raw / mag;
  double step = r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0;
  return step * mag;
}

std::string line_chart_svg(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series,
                           const std::vector<Marker>& markers) {
  const int W = 640, H = 420, L = 58, R = 16, T = 34, B = 44;
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const auto& s : series)
    for (auto [x, y] : s.pts) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  double ypad = 0.05 * (ymax - ymin);
  ymin = std::min(0.0, ymin - ypad);
  ymax += ypad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::string s = fmt(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
      "viewBox=\"0 0 %d %d\" font-family=\"sans-serif\" font-size=\"11\">\n",
      W, H, W, H);
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += fmt("<text x=\"%d\" y=\"20\" font-size=\"14\">%s</text>\n", L, title.c_str());
  s += fmt("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" "
           "stroke=\"#444\"/>\n",
           L, T, W - L - R, H - T - B);
  double xs = nice_step(xmax - xmin), ys = nice_step(ymax - ymin);
  for (double x = std::ceil(xmin / xs) * xs; x <= xmax + 1e-9; x += xs) {
    s += fmt("<line x1=\"%.1f\" y1=\"%d\" x2=\"%.1f\" y2=\"%d\" stroke=\"#ddd\"/>\n", px(x), T,
             px(x), H - B);
    s += fmt("<text x=\"%.1f\" y=\"%d\" text-anchor=\"middle\">%g</text>\n", px(x), H - B + 16,
             x);
  }
  for (double y = std::ceil(ymin / ys) * ys; y <= ymax + 1e-9; y += ys) {
    s += fmt("<line x1=\"%d\" y1=\"%.1f\" x2=\"%d\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", L, py(y),
             W - R, py(y));
    s += fmt("<text x=\"%d\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n", L - 6, py(y) + 4, y);
  }
  s += fmt("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">%s</text>\n", (L + W - R) / 2, H - 8,
           xlabel.c_str());
  s += fmt("<text x=\"14\" y=\"%d\" text-anchor=\"middle\" transform=\"rotate(-90 14 %d)\">%s"
           "</text>\n",
           (T + H - B) / 2, (T + H - B) / 2, ylabel.c_str());
  for (const auto& sr : series) {
    std::string pts;
    for (auto [x, y] : sr.pts) pts += fmt("%.2f,%.2f ", px(x), py(y));
    s += fmt("<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" stroke-width=\"1.6\"%s/>\n",
             pts.c_str(), sr.color.c_str(),
             sr.dashed ? " stroke-dasharray=\"6 4\"" : "");
  }
  for (const auto& m : markers)
    s += fmt("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\"/>\n", px(m.x), py(m.y),
             m.color.c_str());
  s += "</svg>\n";
  return s;
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& labels,
                        const Eigen::MatrixXi& counts) {
  const int n = int(counts.rows());
  const int cell = 34, L = 86, T = 56, pad = 12;
  const int W = L + n * cell + pad, H = T + n * cell + 30;
  int peak = 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) peak = std::max(peak, counts(i, j));

  std::string s = fmt(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
      "viewBox=\"0 0 %d %d\" font-family=\"sans-serif\" font-size=\"10\">\n",
      W, H, W, H);
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += fmt("<text x=\"%d\" y=\"18\" font-size=\"14\">%s</text>\n", L, title.c_str());
  for (int i = 0; i < n; ++i) {
    s += fmt("<text x=\"%d\" y=\"%d\" text-anchor=\"end\">%s</text>\n", L - 6,
             T + i * cell + cell / 2 + 4, labels[i].c_str());
    s += fmt("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" transform=\"rotate(-55 %d %d)\">"
             "%s</text>\n",
             L + i * cell + cell / 2, T - 8, L + i * cell + cell / 2, T - 8, labels[i].c_str());
    for (int j = 0; j < n; ++j) {
      double u = double(counts(i, j)) / peak;
      int r = int(255 - u * (255 - 31)), g = int(255 - u * (255 - 82)),
          b = int(255 - u * (255 - 156));
      s += fmt("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,%d)\" "
               "stroke=\"#ccc\"/>\n",
               L + j * cell, T + i * cell, cell, cell, r, g, b);
      if (counts(i, j) > 0)
        s += fmt("<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" fill=\"%s\">%d</text>\n",
                 L + j * cell + cell / 2, T + i * cell + cell / 2 + 4,
                 u > 0.55 ? "white" : "#222", counts(i, j));
    }
  }
  s += fmt("<text x=\"%d\" y=\"%d\">rows: true, columns: predicted</text>\n", L, T + n * cell + 20);
  s += "</svg>\n";
  return s;
}

std::string confusion_csv(const std::vector<std::string>& labels, const Eigen::MatrixXi& m) {
  std::string s = "true\\predicted";
  for (const auto& l : labels) s += "," + l;
  s += "\n";
  for (int i = 0; i < m.rows(); ++i) {
    s += labels[i];
    for (int j = 0; j < m.cols(); ++j) s += fmt(",%d", m(i, j));
    s += "\n";
  }
  return s;
}

std::string manifest_header(const ExperimentConfig& cfg, const char* suite) {
  std::string s;
  s += "experiment " + cfg.id + "\n";
  s += std::string("suite ") + suite + "\n";
  s += fmt("config_hash %016llx\n", (unsigned long long)cfg.config_hash());
  s += fmt("seed %llu\n", (unsigned long long)cfg.seed);
  return s;
}

std::string join_names(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "+" : "") + std::to_string(ids[i]);
  return s;
}

}  // namespace

void write_classification_artifacts(const ExperimentConfig& cfg,
                                    const ClassificationReport& rep) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(cfg.out_dir / name, content);
    files.push_back(name);
  };

  std::string acc = "metric,value,provenance\n";
  acc += fmt("container_accuracy,%.6f,simulator\n", rep.main.container_acc);
  acc += fmt("substance_accuracy,%.6f,simulator\n", rep.main.substance_acc);
  acc += fmt("joint_accuracy,%.6f,simulator\n", rep.main.joint_acc);
  acc += fmt("chance_accuracy,%.6f,simulator\n", rep.chance_acc);
  acc += "container_accuracy,0.978,hardware_reference\n";
  acc += "substance_accuracy,0.849,hardware_reference\n";
  acc += "joint_accuracy,0.847,hardware_reference\n";
  acc += "chance_accuracy,0.012,hardware_reference\n";
  emit("accuracy.csv", acc);

  std::vector<std::string> cnames, snames;
  for (const auto& c : cfg.catalog.containers) cnames.push_back(c.name);
  for (const auto& su : cfg.catalog.substances) snames.push_back(su.name);
  emit("confusion_container.csv", confusion_csv(cnames, rep.main.confusion_container));
  emit("confusion_substance.csv", confusion_csv(snames, rep.main.confusion_substance));
  emit("confusion_container.svg",
       heatmap_svg("Container confusion", cnames, rep.main.confusion_container));
  emit("confusion_substance.svg",
       heatmap_svg("Substance confusion", snames, rep.main.confusion_substance));

  std::string abl =
      "electrodes,n_electrodes,container_accuracy,substance_accuracy,joint_accuracy,"
      "provenance\n";
  for (const auto& row : rep.ablation)
    abl += fmt("%s,%d,%.6f,%.6f,%.6f,simulator\n", join_names(row.electrodes).c_str(),
               int(row.electrodes.size()), row.report.container_acc, row.report.substance_acc,
               row.report.joint_acc);
  const double ref[4] = {0.847, 0.810, 0.695, 0.469};
  const int refn[4] = {10, 6, 2, 1};
  for (int i = 0; i < 4; ++i)
    abl += fmt(",%d,,,%.3f,hardware_reference\n", refn[i], ref[i]);
  emit("electrode_ablation.csv", abl);

  std::string sc = "n_classes,n_train,n_test,joint_accuracy,provenance\n";
  Series curve{"#1f77b4", false, {}};
  for (const auto& pt : rep.scaling) {
    sc += fmt("%d,%d,%d,%.6f,simulator\n", pt.n_classes, pt.n_train, pt.n_test, pt.joint_acc);
    curve.pts.push_back({double(pt.n_classes), pt.joint_acc});
  }
  emit("class_scaling.csv", sc);
  emit("class_scaling.svg",
       line_chart_svg("Joint accuracy vs class count", "classes", "accuracy", {curve}, {}));

  std::string man = manifest_header(cfg, "classification");
  man += fmt("n_train %d\nn_test %d\nnoise_free %d\n", rep.n_train, rep.n_test,
             int(cfg.noise_free));
  for (const auto& f : files) man += "artifact " + f + "\n";
  write_file(cfg.out_dir / "manifest.txt", man);
}

void write_pouring_artifacts(const ExperimentConfig& cfg, const PouringReport& rep) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(cfg.out_dir / name, content);
    files.push_back(name);
  };

  // aggregate reference errors reported by the original hardware study
  // of this pipeline, for orientation only
  std::map<std::string, std::pair<double, double>> refs = {
      {"full", {3.2, 4.3}}, {"no_owe", {23.7, 6.1}}, {"no_offsets", {5.7, 0.0}},
      {"bc", {23.9, 0.0}}};

  for (const auto& v : rep.variants) {
    const auto& out = rep.outcomes.at(v);
    std::string tab =
        "substance,target_g,n,mean_abs_g,std_abs_g,mean_signed_g,std_signed_g,provenance\n";
    auto row_line = [&](const ResultRow& r) {
      return fmt("%s,%g,%d,%.6f,%.6f,%.6f,%.6f,simulator\n", r.substance.c_str(), r.target,
                 r.n, r.mean_abs, r.std_abs, r.mean_signed, r.std_signed);
    };
    for (const auto& r : out.table.rows) tab += row_line(r);
    tab += row_line(out.table.aggregate);
    if (auto it = refs.find(v); it != refs.end()) {
      tab += fmt("all,0,,%.1f,%s,,,hardware_reference\n", it->second.first,
                 it->second.second > 0 ? fmt("%.1f", it->second.second).c_str() : "");
    }
    emit("table_" + v + ".csv", tab);

    std::string tr =
        "substance,target_g,rep,seed,day,w_stop_g,w_hat_at_stop_g,final_true_g,final_pred_g,"
        "abs_error_g,signed_error_g,exhausted,safe_stopped\n";
    for (const auto& t : out.trials)
      tr += fmt("%s,%g,%d,%llu,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n",
                t.substance.c_str(), t.target, t.rep, (unsigned long long)t.seed,
                (long long)t.day, t.result.w_stop, t.result.w_hat_at_stop, t.result.final_true,
                t.result.final_pred, t.result.error(), t.result.signed_error(),
                int(t.result.exhausted), int(t.result.safe_stopped));
    emit("trials_" + v + ".csv", tr);

    if (!out.coeffs.empty()) {
      std::string oc = "substance,a,b,c,rmse,n\n";
      for (const auto& k : out.coeffs)
        oc += fmt("%s,%.17g,%.17g,%.17g,%.17g,%d\n", k.substance.c_str(), k.a, k.b, k.c,
                  k.rmse, k.n);
      emit("owe_" + v + ".csv", oc);
    }
  }

  // weight traces for the primary variant, first repetition of every cell
  if (rep.outcomes.count("full")) {
    for (const auto& t : rep.outcomes.at("full").trials) {
      if (t.rep != 0) continue;
      Series truth{"#1f77b4", false, {}}, pred{"#ff7f0e", false, {}}, tgt{"#888", true, {}};
      std::vector<Marker> marks;
      const auto& log = t.result.log;
      for (const auto& row : log) {
        truth.pts.push_back({row.t, row.scale_true});
        if (row.phase != control::Phase::Done)
          pred.pts.push_back({row.t + row.o_e, row.w_hat});
      }
      double tend = log.empty() ? 1.0 : log.back().t;
      tgt.pts = {{0.0, t.target}, {tend, t.target}};
      for (std::size_t i = 1; i < log.size(); ++i)
        if (log[i].phase == control::Phase::Retract &&
            log[i - 1].phase == control::Phase::Forward) {
          marks.push_back({log[i - 1].t + log[i - 1].o_e, log[i - 1].w_hat, "#d62728"});
          break;
        }
      std::string name = fmt("trace_full_%s_%g.svg", t.substance.c_str(), t.target);
      emit(name, line_chart_svg(
                     fmt("%s to %g g: true vs predicted weight", t.substance.c_str(), t.target),
                     "time s (prediction shifted by its end offset)", "grams",
                     {tgt, truth, pred}, marks));
    }
  }

  std::string man = manifest_header(cfg, "pouring");
  man += "variants";
  for (const auto& v : rep.variants) man += " " + v;
  man += "\n";
  man += fmt("trials_per_variant %d\n",
             int(cfg.trials_per_cell * kEvalTargets.size() *
                 cfg.catalog.pourable_names().size()));
  for (const auto& v : rep.variants) {
    const auto& m = rep.outcomes.at(v).model;
    man += fmt("model %s best_epoch %d best_val %.17g params %lld\n", v.c_str(), m.best_epoch,
               m.best_val, (long long)m.n_params);
  }
  for (const auto& f : files) man += "artifact " + f + "\n";
  write_file(cfg.out_dir / "manifest.txt", man);
}

}  // namespace capflow::harness
