#include "capflow.h"

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "capflow/harness.hpp"
#include "capflow/rng.hpp"

using namespace capflow;

namespace {

thread_local std::string g_err;

char* dup_string(const std::string& s) {
  // malloc so capflow_free_string can free() without touching the C++ heap
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// every entry point funnels through here so exceptions never cross the ABI
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_err.clear();
    return CAPFLOW_OK;
  } catch (const std::invalid_argument& e) {
    g_err = e.what();
    return CAPFLOW_EINVAL;
  } catch (const std::ios_base::failure& e) {
    g_err = e.what();
    return CAPFLOW_EIO;
  } catch (const std::exception& e) {
    g_err = e.what();
    return CAPFLOW_EFAIL;
  } catch (...) {
    g_err = "unknown failure";
    return CAPFLOW_EFAIL;
  }
}

int fail(int code, const std::string& msg) {
  g_err = msg;
  return code;
}

}  // namespace

struct capflow_experiment {
  harness::ExperimentConfig cfg;
};

struct capflow_model {
  pwp::PwpModel model;
};

extern "C" {

const char* capflow_version(void) { return "0.1.0"; }

const char* capflow_last_error(void) { return g_err.c_str(); }

void capflow_free_string(char* s) { std::free(s); }

capflow_experiment* capflow_experiment_new(void) {
  try {
    return new capflow_experiment{};
  } catch (...) {
    return nullptr;
  }
}

void capflow_experiment_free(capflow_experiment* e) { delete e; }

int capflow_experiment_load_catalog(capflow_experiment* e, const char* path) {
  if (!e || !path) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::ios_base::failure(fmt("cannot read catalog '%s'", path));
    std::stringstream ss;
    ss << f.rdbuf();
    e->cfg.catalog = simworld::Catalog::parse(ss.str());
  });
}

int capflow_experiment_set_seed(capflow_experiment* e, uint64_t seed) {
  if (!e) return fail(CAPFLOW_EINVAL, "null experiment");
  e->cfg.seed = seed;
  g_err.clear();
  return CAPFLOW_OK;
}

int capflow_experiment_set_out_dir(capflow_experiment* e, const char* dir) {
  if (!e) return fail(CAPFLOW_EINVAL, "null experiment");
  e->cfg.out_dir = dir ? dir : "";
  g_err.clear();
  return CAPFLOW_OK;
}

int capflow_experiment_set_variants(capflow_experiment* e, const char* csv) {
  if (!e || !csv) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    std::vector<std::string> vs;
    std::string cur;
    for (const char* p = csv;; ++p) {
      if (*p == ',' || *p == '\0') {
        if (!cur.empty()) vs.push_back(cur);
        cur.clear();
        if (*p == '\0') break;
      } else if (*p != ' ') {
        cur += *p;
      }
    }
    harness::ExperimentConfig probe = e->cfg;
    probe.variants = vs;
    probe.validate();
    e->cfg.variants = std::move(vs);
  });
}

int capflow_experiment_set_field(capflow_experiment* e, const char* key, long long value) {
  if (!e || !key) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    harness::ExperimentConfig probe = e->cfg;
    const std::string k = key;
    auto v = int(value);
    if (k == "train_days") probe.train_days = v;
    else if (k == "iterations") probe.iterations = v;
    else if (k == "noise_free") probe.noise_free = value != 0;
    else if (k == "chance_shuffles") probe.chance_shuffles = v;
    else if (k == "scaling_chains") probe.scaling_chains = v;
    else if (k == "trials_per_cell") probe.trials_per_cell = v;
    else if (k == "pwp_train_trials") probe.pwp_train_trials = v;
    else if (k == "pwp_epochs") probe.pwp_epochs = v;
    else if (k == "pwp_batch") probe.pwp_batch = v;
    else if (k == "owe_reps") probe.owe_reps = v;
    else if (k == "bc_demos_per_cell") probe.bc_demos_per_cell = v;
    else if (k == "bc_epochs") probe.bc_epochs = v;
    else throw std::invalid_argument("unknown field '" + k + "'");
    probe.validate();
    e->cfg = std::move(probe);
  });
}

char* capflow_experiment_describe(const capflow_experiment* e) {
  if (!e) return nullptr;
  try {
    return dup_string(e->cfg.serialize());
  } catch (...) {
    return nullptr;
  }
}

int capflow_run_classification(const capflow_experiment* e, char** summary) {
  if (!e) return fail(CAPFLOW_EINVAL, "null experiment");
  return guarded([&] {
    e->cfg.validate();
    auto rep = harness::run_classification_suite(e->cfg);
    if (!summary) return;
    std::string s;
    s += fmt("n_train %d\nn_test %d\n", rep.n_train, rep.n_test);
    s += fmt("joint_acc %.6f\ncontainer_acc %.6f\nsubstance_acc %.6f\nchance_acc %.6f\n",
             rep.main.joint_acc, rep.main.container_acc, rep.main.substance_acc,
             rep.chance_acc);
    s += "ablation";
    for (const auto& a : rep.ablation)
      s += fmt(" %s=%.6f", a.name.c_str(), a.report.joint_acc);
    s += "\nscaling";
    for (const auto& p : rep.scaling) s += fmt(" %d=%.6f", p.n_classes, p.joint_acc);
    s += "\n";
    *summary = dup_string(s);
  });
}

int capflow_run_pouring(const capflow_experiment* e, char** summary) {
  if (!e) return fail(CAPFLOW_EINVAL, "null experiment");
  return guarded([&] {
    e->cfg.validate();
    auto rep = harness::run_pouring_suite(e->cfg);
    if (!summary) return;
    std::string s;
    for (const auto& v : rep.variants) {
      const auto& t = rep.outcomes.at(v).table.aggregate;
      s += fmt("%s mean_abs %.3f std_abs %.3f mean_signed %.3f n %d\n", v.c_str(),
               t.mean_abs, t.std_abs, t.mean_signed, t.n);
    }
    *summary = dup_string(s);
  });
}

capflow_model* capflow_model_load(const char* path) {
  if (!path) {
    g_err = "null path";
    return nullptr;
  }
  try {
    auto* m = new capflow_model{pwp::PwpModel::load(path)};
    g_err.clear();
    return m;
  } catch (const std::exception& e) {
    g_err = e.what();
    return nullptr;
  } catch (...) {
    g_err = "unknown failure";
    return nullptr;
  }
}

void capflow_model_free(capflow_model* m) { delete m; }

int capflow_train_pwp(const capflow_experiment* e, const char* electrode_set, int offsets,
                      const char* model_path, char** summary) {
  if (!e) return fail(CAPFLOW_EINVAL, "null experiment");
  return guarded([&] {
    const auto& electrodes = harness::electrode_set(electrode_set ? electrode_set : "10");
    auto pours = harness::make_training_pours(e->cfg);
    auto tr = harness::train_pwp_stage(e->cfg, pours, offsets != 0, electrodes);
    if (model_path) tr.model.save(model_path);
    if (summary) {
      std::string s =
          fmt("trials %d epochs %d best_epoch %d best_val %.6f params %lld\n",
              int(pours.size()), int(tr.curve.size()), tr.best_epoch, tr.best_val,
              (long long)tr.model.params.spec.param_count());
      if (model_path) s += fmt("saved %s\n", model_path);
      *summary = dup_string(s);
    }
  });
}

int capflow_fit_owe(const capflow_experiment* e, const capflow_model* m, char** csv) {
  if (!e || !m) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    auto coeffs = harness::fit_owe_stage(e->cfg, m->model);
    if (!csv) return;
    std::string s = "substance,a,b,c,rmse,n\n";
    for (const auto& k : coeffs)
      s += fmt("%s,%.17g,%.17g,%.17g,%.17g,%d\n", k.substance.c_str(), k.a, k.b, k.c,
               k.rmse, k.n);
    *csv = dup_string(s);
  });
}

int capflow_pour_once(const capflow_experiment* e, const capflow_model* m,
                      const char* substance, double target_g, int use_owe, char** log_csv) {
  if (!e || !m || !substance) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    const owe::OweCoeffs* k = nullptr;
    owe::OweCoeffs fitted;
    if (use_owe) {
      control::RunOptions base;
      base.day = 600;
      base.seed = e->cfg.seed;
      auto samples =
          control::collect_overpour(m->model, e->cfg.catalog, substance, e->cfg.owe_reps, base);
      fitted = owe::fit_owe(samples, substance);
      k = &fitted;
    }
    control::RunOptions opt;
    opt.day = 900;  // a drift day no training stage touches
    opt.seed = e->cfg.seed;
    auto r = control::run_pour(m->model, k, e->cfg.catalog, substance, target_g, opt);
    if (!log_csv) return;
    std::string s;
    s += fmt("# substance %s\n# target %g\n", substance, target_g);
    s += fmt("# w_stop %.6f\n# w_hat_at_stop %.6f\n", r.w_stop, r.w_hat_at_stop);
    s += fmt("# final_true %.6f\n# final_pred %.6f\n", r.final_true, r.final_pred);
    s += fmt("# exhausted %d\n# safe_stopped %d\n", int(r.exhausted), int(r.safe_stopped));
    s += "t,phase,angle,dw_hat,w_hat,scale_true,scale_read,o_s,o_e\n";
    for (const auto& row : r.log)
      s += fmt("%.2f,%s,%.4f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.t,
               control::phase_name(row.phase), row.angle, row.dw_hat, row.w_hat,
               row.scale_true, row.scale_read, row.o_s, row.o_e);
    *log_csv = dup_string(s);
  });
}

int capflow_sim_trial(const capflow_experiment* e, const char* substance,
                      const char* container, int64_t day, double duration_s,
                      char** trial_text) {
  if (!e || !substance) return fail(CAPFLOW_EINVAL, "null argument");
  return guarded([&] {
    signals::Trial tr;
    if (!container || std::strcmp(container, "none") == 0) {
      const auto& sub = e->cfg.catalog.substance(substance);
      auto policy = simworld::scripted_profile(sub, Rng::mix(e->cfg.seed, 1), duration_s);
      tr = simworld::run_scripted_pour(e->cfg.catalog, substance, policy, day, e->cfg.seed,
                                       duration_s);
    } else {
      tr = simworld::grasp_signature(e->cfg.catalog, container, substance, day, e->cfg.seed);
    }
    if (trial_text) *trial_text = dup_string(signals::serialize_trial(tr));
  });
}

}  // extern "C"
