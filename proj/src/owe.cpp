#include "capflow/owe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace capflow::owe {

OweCoeffs fit_owe(const std::vector<OverpourSample>& samples, const std::string& substance) {
  std::vector<double> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.w_stop < 0.0) throw std::invalid_argument("negative stop weight in overpour sample");
    xs.push_back(s.w_stop);
  }
  std::sort(xs.begin(), xs.end());
  int distinct = xs.empty() ? 0 : 1;
  for (std::size_t i = 1; i < xs.size(); ++i) distinct += xs[i] != xs[i - 1];
  if (distinct < 3)
    throw std::invalid_argument("quadratic fit needs at least 3 distinct stop weights, got " +
                                std::to_string(distinct));

  const int n = int(samples.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    double w = samples[i].w_stop;
    A(i, 0) = w * w;
    A(i, 1) = w;
    A(i, 2) = 1.0;
    y(i) = samples[i].overpour;
  }
  Eigen::Vector3d beta = A.colPivHouseholderQr().solve(y);

  OweCoeffs k;
  k.substance = substance;
  k.a = beta(0);
  k.b = beta(1);
  k.c = beta(2);
  k.n = n;
  k.rmse = std::sqrt((A * beta - y).squaredNorm() / n);
  return k;
}

double stop_weight(const OweCoeffs& k, double w_target) {
  if (!(w_target > 0.0)) throw std::invalid_argument("stop_weight needs a positive target");

  // a w^2 + (b+1) w + (c - target) = 0, solved with the cancellation-safe
  // split q = -(B + sign(B) sqrt(D)) / 2
  const double A = k.a, B = k.b + 1.0, C = k.c - w_target;
  double best = -1.0;
  bool found = false;
  auto consider = [&](double r) {
    if (!std::isfinite(r) || r < 0.0 || r > w_target) return;
    if (!found || r < best) best = r;
    found = true;
  };
  if (std::abs(A) > 1e-14) {
    double D = B * B - 4.0 * A * C;
    if (D >= 0.0) {
      double q = -0.5 * (B + std::copysign(std::sqrt(D), B));
      if (q != 0.0) {
        consider(q / A);
        consider(C / q);
      } else {
        consider(0.0);  // B = 0 and D = 0: double root at the origin
      }
    }
  } else if (std::abs(B) > 1e-14) {
    consider(-C / B);
  }
  if (found) {
    double resid = best + k.predict(best) - w_target;
    if (std::abs(resid) <= 1e-9 * std::max(1.0, std::abs(w_target))) return best;
    // fall through: a root this ill-conditioned gets the iterative treatment
  }

  double w = w_target;
  for (int it = 0; it < 100; ++it) {
    double prop = std::clamp(w_target - k.predict(w), 0.0, w_target);
    double next = 0.5 * (w + prop);
    if (std::abs(next - w) <= 1e-12 * std::max(1.0, w_target)) return next;
    w = next;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", w);
  throw std::runtime_error(std::string("stop weight iteration did not settle; last iterate ") +
                           buf);
}

void save_coeffs(const std::vector<OweCoeffs>& all, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# substance a b c rmse n\n";
  char buf[256];
  for (const auto& k : all) {
    std::snprintf(buf, sizeof(buf), "%s %.17g %.17g %.17g %.17g %d\n", k.substance.c_str(),
                  k.a, k.b, k.c, k.rmse, k.n);
    out << buf;
  }
}

std::vector<OweCoeffs> load_coeffs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<OweCoeffs> all;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    OweCoeffs k;
    if (!(ss >> k.substance >> k.a >> k.b >> k.c >> k.rmse >> k.n))
      throw std::runtime_error("coefficient table line " + std::to_string(line_no) +
                               ": expected `substance a b c rmse n`");
    all.push_back(std::move(k));
  }
  return all;
}

const OweCoeffs& find_coeffs(const std::vector<OweCoeffs>& all, const std::string& substance) {
  for (const auto& k : all)
    if (k.substance == substance) return k;
  throw std::invalid_argument("no overpour fit for substance '" + substance + "'");
}

}  // namespace capflow::owe
