// Command-line front end.  Everything goes through the C API on purpose:
// this doubles as the reference consumer of capflow.h.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "capflow.h"

namespace {

struct ExpDeleter {
  void operator()(capflow_experiment* e) const { capflow_experiment_free(e); }
};
struct ModelDeleter {
  void operator()(capflow_model* m) const { capflow_model_free(m); }
};
using Experiment = std::unique_ptr<capflow_experiment, ExpDeleter>;
using Model = std::unique_ptr<capflow_model, ModelDeleter>;

struct CommonOpts {
  std::string config;
  std::uint64_t seed = 1;
  std::vector<std::string> sets;  // KEY=VALUE integer overrides
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config, "substance catalog file (built-in when omitted)");
  cmd->add_option("--seed", c.seed, "master seed")->capture_default_str();
  cmd->add_option("--set", c.sets, "integer knob override, KEY=VALUE, repeatable");
}

[[noreturn]] void die(const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, capflow_last_error());
  std::exit(1);
}

Experiment make_experiment(const CommonOpts& c) {
  Experiment e(capflow_experiment_new());
  if (!e) die("experiment_new");
  if (!c.config.empty() && capflow_experiment_load_catalog(e.get(), c.config.c_str()))
    die("load_catalog");
  capflow_experiment_set_seed(e.get(), c.seed);
  for (const auto& kv : c.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
      std::exit(1);
    }
    long long v = 0;
    try {
      v = std::stoll(kv.substr(eq + 1));
    } catch (...) {
      std::fprintf(stderr, "error: --set value in '%s' is not an integer\n", kv.c_str());
      std::exit(1);
    }
    if (capflow_experiment_set_field(e.get(), kv.substr(0, eq).c_str(), v)) die("set_field");
  }
  return e;
}

// text results go to --out when given, stdout otherwise
void deliver(const std::string& out, char* text) {
  if (!text) return;
  if (out.empty()) {
    std::fputs(text, stdout);
  } else {
    std::ofstream f(out, std::ios::binary);
    f << text;
    if (!f) {
      std::fprintf(stderr, "error: cannot write %s\n", out.c_str());
      capflow_free_string(text);
      std::exit(1);
    }
  }
  capflow_free_string(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capacitive pouring pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", capflow_version());

  CommonOpts c_cls, c_pour, c_train, c_owe, c_once, c_sim;

  auto* cls = app.add_subcommand("classify-suite", "grasp classification experiment");
  std::string cls_out;
  add_common(cls, c_cls);
  cls->add_option("--out", cls_out, "artifact directory");

  auto* pour = app.add_subcommand("pour-suite", "pouring experiment over variants");
  std::string pour_out, pour_variants;
  add_common(pour, c_pour);
  pour->add_option("--out", pour_out, "artifact directory");
  pour->add_option("--variant", pour_variants,
                   "comma list: full,no_owe,no_offsets,elec6,elec2,bc");

  auto* train = app.add_subcommand("train-pwp", "train a poured-weight predictor");
  std::string train_out, train_electrodes = "10";
  bool no_offsets = false;
  add_common(train, c_train);
  train->add_option("--out", train_out, "model file to write")->required();
  train->add_option("--electrodes", train_electrodes, "electrode set: 10|6|2|1")
      ->capture_default_str();
  train->add_flag("--no-offsets", no_offsets, "drop the start/end-shift outputs");

  auto* owe = app.add_subcommand("fit-owe", "overpour calibration for a trained model");
  std::string owe_model, owe_out;
  add_common(owe, c_owe);
  owe->add_option("--model", owe_model, "trained model file")->required();
  owe->add_option("--out", owe_out, "coefficient table destination (stdout when omitted)");

  auto* once = app.add_subcommand("pour-once", "one closed-loop pour with a trained model");
  std::string once_model, once_sub = "water", once_out;
  double once_target = 75.0;
  bool no_owe = false;
  add_common(once, c_once);
  once->add_option("--model", once_model, "trained model file")->required();
  once->add_option("--substance", once_sub, "pourable substance")->capture_default_str();
  once->add_option("--target", once_target, "grams to pour")->capture_default_str();
  once->add_flag("--no-owe", no_owe, "skip overpour correction");
  once->add_option("--out", once_out, "log destination (stdout when omitted)");

  auto* sim = app.add_subcommand("sim-trial", "emit one simulated trial as text");
  std::string sim_sub = "water", sim_container = "none", sim_out;
  std::int64_t sim_day = 1;
  double sim_duration = 20.0;
  add_common(sim, c_sim);
  sim->add_option("--substance", sim_sub, "substance name")->capture_default_str();
  sim->add_option("--container", sim_container, "grasp container, 'none' for a pour")
      ->capture_default_str();
  sim->add_option("--day", sim_day, "session day, drives drift")->capture_default_str();
  sim->add_option("--duration", sim_duration, "pour length in seconds")
      ->capture_default_str();
  sim->add_option("--out", sim_out, "trial destination (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  if (cls->parsed()) {
    auto e = make_experiment(c_cls);
    if (!cls_out.empty()) capflow_experiment_set_out_dir(e.get(), cls_out.c_str());
    char* summary = nullptr;
    if (capflow_run_classification(e.get(), &summary)) die("classify-suite");
    deliver("", summary);
    return 0;
  }

  if (pour->parsed()) {
    auto e = make_experiment(c_pour);
    if (!pour_out.empty()) capflow_experiment_set_out_dir(e.get(), pour_out.c_str());
    if (!pour_variants.empty() &&
        capflow_experiment_set_variants(e.get(), pour_variants.c_str()))
      die("set_variants");
    char* summary = nullptr;
    if (capflow_run_pouring(e.get(), &summary)) die("pour-suite");
    deliver("", summary);
    return 0;
  }

  if (train->parsed()) {
    auto e = make_experiment(c_train);
    char* summary = nullptr;
    if (capflow_train_pwp(e.get(), train_electrodes.c_str(), no_offsets ? 0 : 1,
                          train_out.c_str(), &summary))
      die("train-pwp");
    deliver("", summary);
    return 0;
  }

  if (owe->parsed()) {
    auto e = make_experiment(c_owe);
    Model m(capflow_model_load(owe_model.c_str()));
    if (!m) die("model_load");
    char* csv = nullptr;
    if (capflow_fit_owe(e.get(), m.get(), &csv)) die("fit-owe");
    deliver(owe_out, csv);
    return 0;
  }

  if (once->parsed()) {
    auto e = make_experiment(c_once);
    Model m(capflow_model_load(once_model.c_str()));
    if (!m) die("model_load");
    char* log = nullptr;
    if (capflow_pour_once(e.get(), m.get(), once_sub.c_str(), once_target, no_owe ? 0 : 1,
                          &log))
      die("pour-once");
    deliver(once_out, log);
    return 0;
  }

  auto e = make_experiment(c_sim);
  char* text = nullptr;
  if (capflow_sim_trial(e.get(), sim_sub.c_str(), sim_container.c_str(), sim_day,
                        sim_duration, &text))
    die("sim-trial");
  deliver(sim_out, text);
  return 0;
}
