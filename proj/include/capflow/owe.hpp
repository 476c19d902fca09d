#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace capflow::owe {

// One calibration pour: the predicted cumulative weight at the moment
// retraction was triggered, and how much extra landed after it.
struct OverpourSample {
  double w_stop = 0.0;    // grams, >= 0
  double overpour = 0.0;  // grams; noise can push it slightly negative
};

// overpour(w) = a w^2 + b w + c, one fit per substance.
struct OweCoeffs {
  std::string substance;
  double a = 0.0, b = 0.0, c = 0.0;
  double rmse = 0.0;
  int n = 0;

  double predict(double w) const { return (a * w + b) * w + c; }
};

// Least squares on the design [w^2, w, 1] via a column-pivoted QR.  Needs
// at least three distinct stop weights; exact on noise-free quadratics.
OweCoeffs fit_owe(const std::vector<OverpourSample>& samples,
                  const std::string& substance = {});

// Retraction threshold: the w solving w + predict(w) = w_target.  Picks the
// quadratic root inside [0, w_target] (the smaller one if both fit) and
// verifies it to 1e-9.  Degenerate or rootless fits fall back to a damped
// clamped fixed point from w_target; 100 iterations without settling is an
// error carrying the last iterate.
double stop_weight(const OweCoeffs& k, double w_target);

// text table, one `substance a b c rmse n` line per fit
void save_coeffs(const std::vector<OweCoeffs>& all, const std::filesystem::path& path);
std::vector<OweCoeffs> load_coeffs(const std::filesystem::path& path);
const OweCoeffs& find_coeffs(const std::vector<OweCoeffs>& all, const std::string& substance);

}  // namespace capflow::owe
