#include <array>
#include <cmath>
#include <filesystem>

#include "capflow/owe.hpp"
#include "capflow/rng.hpp"
#include "doctest.h"

using namespace capflow;
using owe::OverpourSample;
using owe::OweCoeffs;

namespace {

// Weighted normal equations (A^T W A) x = A^T W y solved by Gaussian
// elimination with partial pivoting; deliberately shares no code with the
// production fit.
std::array<double, 3> normal_fit(const std::vector<OverpourSample>& samples,
                                 const std::vector<double>& weights) {
  double M[3][4] = {};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double w = samples[i].w_stop;
    double phi[3] = {w * w, w, 1.0};
    double wt = weights.empty() ? 1.0 : weights[i];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) M[r][c] += wt * phi[r] * phi[c];
      M[r][3] += wt * phi[r] * samples[i].overpour;
    }
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(M[r][col]) > std::abs(M[piv][col])) piv = r;
    for (int c = 0; c < 4; ++c) std::swap(M[col][c], M[piv][c]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      double f = M[r][col] / M[col][col];
      for (int c = 0; c < 4; ++c) M[r][c] -= f * M[col][c];
    }
  }
  return {M[0][3] / M[0][0], M[1][3] / M[1][1], M[2][3] / M[2][2]};
}

std::vector<OverpourSample> planted(double a, double b, double c, double noise_amp,
                                    std::uint64_t seed) {
  Rng r(seed);
  std::vector<OverpourSample> out;
  for (int target = 30; target <= 100; target += 10)
    for (int rep = 0; rep < 3; ++rep) {
      double w = target + r.uniform(-2.0, 2.0);
      out.push_back({w, (a * w + b) * w + c + noise_amp * r.normal()});
    }
  return out;
}

}  // namespace

TEST_CASE("quadratic fit recovers planted coefficients exactly") {
  auto s = planted(0.002, 0.05, 1.0, 0.0, 11);
  auto k = owe::fit_owe(s, "water");
  CHECK(k.substance == "water");
  CHECK(k.n == 24);
  CHECK(std::abs(k.a - 0.002) < 1e-8);
  CHECK(std::abs(k.b - 0.05) < 1e-8);
  CHECK(std::abs(k.c - 1.0) < 1e-8);
  CHECK(k.rmse < 1e-8);
  CHECK(k.predict(50.0) == doctest::Approx(0.002 * 2500 + 0.05 * 50 + 1.0));
}

TEST_CASE("constant data fits as a constant") {
  std::vector<OverpourSample> s;
  for (double w : {30.0, 50.0, 70.0, 90.0}) s.push_back({w, 4.25});
  auto k = owe::fit_owe(s);
  CHECK(std::abs(k.a) < 1e-10);
  CHECK(std::abs(k.b) < 1e-8);
  CHECK(std::abs(k.c - 4.25) < 1e-7);
}

TEST_CASE("fit agrees with the normal equations and leaves orthogonal residuals") {
  auto s = planted(0.0015, 0.08, 1.7, 0.8, 29);
  auto k = owe::fit_owe(s);
  auto ref = normal_fit(s, {});
  CHECK(std::abs(k.a - ref[0]) < 1e-9 * std::max(1.0, std::abs(ref[0])));
  CHECK(std::abs(k.b - ref[1]) < 1e-9 * std::max(1.0, std::abs(ref[1])));
  CHECK(std::abs(k.c - ref[2]) < 1e-9 * std::max(1.0, std::abs(ref[2])));

  // residual _|_ each design column, scaled against the accumulation size
  double dot[3] = {}, scale[3] = {};
  for (const auto& p : s) {
    double phi[3] = {p.w_stop * p.w_stop, p.w_stop, 1.0};
    double r = p.overpour - k.predict(p.w_stop);
    for (int j = 0; j < 3; ++j) {
      dot[j] += phi[j] * r;
      scale[j] += std::abs(phi[j] * r);
    }
  }
  for (int j = 0; j < 3; ++j) CHECK(std::abs(dot[j]) <= 1e-9 * std::max(1.0, scale[j]));
}

TEST_CASE("duplicating a point equals doubling its weight") {
  auto s = planted(0.001, 0.1, 2.0, 1.2, 47);
  auto dup = s;
  dup.push_back(s[5]);
  auto k = owe::fit_owe(dup);
  std::vector<double> weights(s.size(), 1.0);
  weights[5] = 2.0;
  auto ref = normal_fit(s, weights);
  CHECK(std::abs(k.a - ref[0]) < 1e-9);
  CHECK(std::abs(k.b - ref[1]) < 1e-8);
  CHECK(std::abs(k.c - ref[2]) < 1e-7);
}

TEST_CASE("fit refuses rank-deficient designs") {
  std::vector<OverpourSample> s = {{30, 1}, {30, 2}, {50, 3}, {50, 2}};
  CHECK_THROWS(owe::fit_owe(s));
  CHECK_THROWS(owe::fit_owe({}));
  CHECK_THROWS(owe::fit_owe({{40, 1}, {50, 2}}));
  CHECK_THROWS(owe::fit_owe({{40, 1}, {50, 2}, {-1, 0}}));
  CHECK_NOTHROW(owe::fit_owe({{40, 1}, {50, 2}, {60, 3}}));
}

TEST_CASE("stop weight solves the retraction threshold") {
  SUBCASE("constant overpour shifts the target") {
    OweCoeffs k{"", 0.0, 0.0, 5.0, 0, 0};
    CHECK(owe::stop_weight(k, 50.0) == doctest::Approx(45.0).epsilon(1e-12));
  }
  SUBCASE("unit-slope overpour halves it") {
    OweCoeffs k{"", 0.0, 1.0, 0.0, 0, 0};
    CHECK(owe::stop_weight(k, 100.0) == doctest::Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("quadratic worked example") {
    OweCoeffs k{"", 0.001, 0.1, 2.0, 0, 0};
    double w = owe::stop_weight(k, 75.0);
    CHECK(std::abs(w - 62.78) < 0.01);
    CHECK(std::abs(w + k.predict(w) - 75.0) <= 1e-9);
  }
  SUBCASE("zero overpour is the identity") {
    OweCoeffs k{};
    CHECK(owe::stop_weight(k, 33.0) == 33.0);
  }
  SUBCASE("self-consistency across a coefficient grid") {
    // non-negative increasing overpour curves always cross the target line
    Rng r(404);
    for (int i = 0; i < 500; ++i) {
      OweCoeffs k{"", r.uniform(0.0, 0.004), r.uniform(0.0, 0.4), r.uniform(0.0, 6.0), 0, 0};
      double target = r.uniform(20.0, 130.0);
      double w = owe::stop_weight(k, target);
      CHECK(w > 0.0);
      CHECK(w < target);
      CHECK(std::abs(w + k.predict(w) - target) <= 1e-9 * std::max(1.0, target));
    }
  }
  SUBCASE("rootless parabola falls back to the clamped iteration") {
    OweCoeffs k{"", 1.0, 0.0, 60.0, 0, 0};  // overpour >= target everywhere
    double w = owe::stop_weight(k, 50.0);
    CHECK(w <= 1e-9);
  }
  SUBCASE("a grazing parabola exhausts the iteration budget") {
    // w + predict(w) - 10 = (w-5)^2 + 1e-4: no root, flat near w = 5
    OweCoeffs k{"", 1.0, -11.0, 35.0001, 0, 0};
    CHECK_THROWS_AS(owe::stop_weight(k, 10.0), std::runtime_error);
  }
  SUBCASE("rejects non-positive targets") {
    OweCoeffs k{};
    CHECK_THROWS(owe::stop_weight(k, 0.0));
    CHECK_THROWS(owe::stop_weight(k, -5.0));
  }
}

TEST_CASE("coefficient tables round trip") {
  std::vector<OweCoeffs> all = {
      {"water", 0.0012345678901234567, -0.05, 1.25, 0.375, 24},
      {"rice", 2e-3, 0.11, 2.5, 1.0 / 3.0, 21},
  };
  auto path = std::filesystem::temp_directory_path() / "capflow_owe_roundtrip.txt";
  owe::save_coeffs(all, path);
  auto back = owe::load_coeffs(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].substance == all[i].substance);
    CHECK(back[i].a == all[i].a);
    CHECK(back[i].b == all[i].b);
    CHECK(back[i].c == all[i].c);
    CHECK(back[i].rmse == all[i].rmse);
    CHECK(back[i].n == all[i].n);
  }
  CHECK(owe::find_coeffs(back, "rice").n == 21);
  CHECK_THROWS(owe::find_coeffs(back, "oil"));
}
