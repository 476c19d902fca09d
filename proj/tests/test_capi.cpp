// Exercises the C surface through the shared library alone; nothing here
// may touch the C++ headers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <string>

#include "capflow.h"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Exp {
  capflow_experiment* p;
  Exp() : p(capflow_experiment_new()) { REQUIRE(p != nullptr); }
  ~Exp() { capflow_experiment_free(p); }
};

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out = s;
  capflow_free_string(s);
  return out;
}

}  // namespace

TEST_CASE("version and error channel") {
  CHECK(std::strlen(capflow_version()) > 0);
  CHECK(capflow_last_error() != nullptr);
}

TEST_CASE("experiment settings round-trip through describe") {
  Exp e;
  CHECK(capflow_experiment_set_seed(e.p, 77) == CAPFLOW_OK);
  CHECK(capflow_experiment_set_field(e.p, "train_days", 2) == CAPFLOW_OK);
  auto text = take(capflow_experiment_describe(e.p));
  CHECK(text.find("seed 77") != std::string::npos);
  CHECK(text.find("train_days 2") != std::string::npos);
  CHECK(text.find("substance water") != std::string::npos);  // catalog included
}

TEST_CASE("bad settings are rejected and leave the config alone") {
  Exp e;
  CHECK(capflow_experiment_set_field(e.p, "wheels", 4) == CAPFLOW_EINVAL);
  CHECK(std::strlen(capflow_last_error()) > 0);
  CHECK(capflow_experiment_set_field(e.p, "train_days", 0) == CAPFLOW_EINVAL);
  auto text = take(capflow_experiment_describe(e.p));
  CHECK(text.find("train_days 3") != std::string::npos);  // default survived

  CHECK(capflow_experiment_set_variants(e.p, "full,bonus") == CAPFLOW_EINVAL);
  CHECK(capflow_experiment_set_variants(e.p, "bc, full") == CAPFLOW_OK);
  text = take(capflow_experiment_describe(e.p));
  CHECK(text.find("variants bc full") != std::string::npos);

  CHECK(capflow_experiment_load_catalog(e.p, "/nonexistent/catalog.cfg") == CAPFLOW_EIO);
  CHECK(capflow_experiment_load_catalog(e.p, nullptr) == CAPFLOW_EINVAL);
}

TEST_CASE("checked-in catalog loads through the C surface") {
  Exp e;
  auto path = (fs::path(CAPFLOW_REPO_DIR) / "configs" / "catalog_default.cfg").string();
  CHECK(capflow_experiment_load_catalog(e.p, path.c_str()) == CAPFLOW_OK);
  auto text = take(capflow_experiment_describe(e.p));
  CHECK(text.find("substance lentils") != std::string::npos);
}

TEST_CASE("simulated trials come back as canonical text") {
  Exp e;
  capflow_experiment_set_seed(e.p, 9);

  char* text = nullptr;
  REQUIRE(capflow_sim_trial(e.p, "water", nullptr, 3, 2.0, &text) == CAPFLOW_OK);
  auto pour = take(text);
  CHECK(pour.rfind("#trial kind=pour substance=water", 0) == 0);

  text = nullptr;
  REQUIRE(capflow_sim_trial(e.p, "honey", "glass", 3, 0.0, &text) == CAPFLOW_OK);
  auto grasp = take(text);
  CHECK(grasp.rfind("#trial kind=grasp", 0) == 0);
  CHECK(grasp.find("container=glass") != std::string::npos);

  CHECK(capflow_sim_trial(e.p, "water", "mug", 1, 2.0, &text) == CAPFLOW_EINVAL);
  CHECK(std::string(capflow_last_error()).find("mug") != std::string::npos);
  CHECK(capflow_sim_trial(e.p, "granite", nullptr, 1, 2.0, &text) != CAPFLOW_OK);
}

TEST_CASE("train, save, reload, pour") {
  Exp e;
  capflow_experiment_set_seed(e.p, 11);
  capflow_experiment_set_field(e.p, "pwp_train_trials", 5);
  capflow_experiment_set_field(e.p, "pwp_epochs", 1);
  capflow_experiment_set_field(e.p, "pwp_batch", 64);

  auto model_path = (fs::temp_directory_path() / "capflow_capi_model.txt").string();
  fs::remove(model_path);

  char* summary = nullptr;
  REQUIRE_MESSAGE(capflow_train_pwp(e.p, "10", 1, model_path.c_str(), &summary) == CAPFLOW_OK,
                  capflow_last_error());
  auto s = take(summary);
  CHECK(s.find("trials 5") != std::string::npos);
  CHECK(s.find("params") != std::string::npos);
  CHECK(fs::exists(model_path));

  CHECK(capflow_model_load("/nonexistent/model.txt") == nullptr);
  CHECK(std::strlen(capflow_last_error()) > 0);

  capflow_model* m = capflow_model_load(model_path.c_str());
  REQUIRE_MESSAGE(m != nullptr, capflow_last_error());

  char* log = nullptr;
  REQUIRE_MESSAGE(capflow_pour_once(e.p, m, "water", 60.0, 0, &log) == CAPFLOW_OK,
                  capflow_last_error());
  auto l = take(log);
  CHECK(l.find("# substance water") != std::string::npos);
  CHECK(l.find("t,phase,angle,dw_hat,w_hat") != std::string::npos);
  CHECK(l.find("done") != std::string::npos);  // terminal log row

  CHECK(capflow_pour_once(e.p, m, "honey", 60.0, 0, &log) == CAPFLOW_EINVAL);

  capflow_model_free(m);
  fs::remove(model_path);
}
