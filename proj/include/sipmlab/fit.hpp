#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sipmlab {

/// Outcome of a least-squares fit. ci95 intervals always contain the point
/// estimate; parameters the data cannot constrain are listed separately and
/// carry no interval.
struct FitResult {
  std::vector<std::string> param_names;
  std::map<std::string, double> params;
  std::map<std::string, std::pair<double, double>> ci95;
  std::set<std::string> unconstrained;
  double chi2 = 0.0;
  int dof = 0;
  double chi2_nu = 0.0;
  std::vector<std::vector<double>> covariance;

  double value(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("FitResult: no parameter " + name);
    return it->second;
  }
  double sigma(const std::string& name) const {
    auto it = ci95.find(name);
    if (it == ci95.end()) return std::numeric_limits<double>::quiet_NaN();
    return (it->second.second - it->second.first) / (2.0 * 1.959963984540054);
  }
  bool covers(const std::string& name, double truth) const {
    auto it = ci95.find(name);
    if (it == ci95.end()) return false;
    return truth >= it->second.first && truth <= it->second.second;
  }
};

/// Weighted residual vector: r_i = (y_i - model(x_i; p)) / sigma_i.
using ResidualFn = std::function<std::vector<double>(const std::vector<double>&)>;

struct FitOptions {
  int max_iterations = 400;
  double ftol = 1e-14;       // relative chi2 improvement considered converged
  double step_rel = 1e-6;    // relative finite-difference step
  double step_abs = 1e-9;    // absolute finite-difference floor
  bool scale_errors_to_unit_chi2 = false;  // the chi2_nu = 1 convention
  int extra_dof_reduction = 0;             // parameters fixed upstream, for dof bookkeeping
};

namespace detail {

// Solve A x = b for symmetric positive-definite A via Cholesky.
// Returns false if A is not (numerically) positive definite.
inline bool cholesky_solve(std::vector<std::vector<double>> a, std::vector<double> b,
                           std::vector<double>& x) {
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return false;
        a[i][i] = std::sqrt(s);
      } else {
        a[i][j] = s / a[j][j];
      }
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i][k] * b[k];
    b[i] = s / a[i][i];
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k][i] * x[k];
    x[i] = s / a[i][i];
  }
  return true;
}

// Invert SPD matrix via Cholesky column solves; returns false when singular.
inline bool spd_inverse(const std::vector<std::vector<double>>& a,
                        std::vector<std::vector<double>>& inv) {
  const std::size_t n = a.size();
  inv.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> e(n, 0.0), x;
    e[c] = 1.0;
    if (!cholesky_solve(a, e, x)) return false;
    for (std::size_t r = 0; r < n; ++r) inv[r][c] = x[r];
  }
  return true;
}

inline double chi2_of(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

}  // namespace detail

/// Iterative damped least squares (Levenberg-Marquardt) with numerically
/// differentiated Jacobians. Confidence intervals come from the linearized
/// covariance at the optimum; with scale_errors_to_unit_chi2 the covariance
/// is multiplied by chi2_nu, which is the "impose chi2_nu = 1" convention.
inline FitResult fit_least_squares(const ResidualFn& residuals,
                                   const std::vector<std::string>& names,
                                   std::vector<double> p, const FitOptions& opts = {}) {
  const std::size_t np = p.size();
  if (names.size() != np) throw std::invalid_argument("fit_least_squares: names/params mismatch");
  std::vector<double> r = residuals(p);
  const std::size_t m = r.size();
  if (m < np) throw std::runtime_error("fit_least_squares: fewer residuals than parameters");
  double chi2 = detail::chi2_of(r);

  auto jacobian = [&](const std::vector<double>& at) {
    std::vector<std::vector<double>> j(m, std::vector<double>(np, 0.0));
    for (std::size_t c = 0; c < np; ++c) {
      const double h = std::max(opts.step_abs, opts.step_rel * std::fabs(at[c]));
      std::vector<double> lo = at, hi = at;
      lo[c] -= h;
      hi[c] += h;
      const std::vector<double> rlo = residuals(lo);
      const std::vector<double> rhi = residuals(hi);
      for (std::size_t i = 0; i < m; ++i) j[i][c] = (rhi[i] - rlo[i]) / (2.0 * h);
    }
    return j;
  };

  double lambda = 1e-3;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    const auto j = jacobian(p);
    // normal equations
    std::vector<std::vector<double>> jtj(np, std::vector<double>(np, 0.0));
    std::vector<double> jtr(np, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t a = 0; a < np; ++a) {
        jtr[a] += j[i][a] * r[i];
        for (std::size_t b = 0; b <= a; ++b) jtj[a][b] += j[i][a] * j[i][b];
      }
    }
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t b = a + 1; b < np; ++b) jtj[a][b] = jtj[b][a];

    bool improved = false;
    for (int attempt = 0; attempt < 16; ++attempt) {
      auto damped = jtj;
      for (std::size_t a = 0; a < np; ++a)
        damped[a][a] += lambda * (jtj[a][a] > 0.0 ? jtj[a][a] : 1.0);
      std::vector<double> step;
      std::vector<double> rhs(np);
      for (std::size_t a = 0; a < np; ++a) rhs[a] = -jtr[a];
      if (!detail::cholesky_solve(damped, rhs, step)) {
        lambda *= 10.0;
        continue;
      }
      std::vector<double> trial = p;
      for (std::size_t a = 0; a < np; ++a) trial[a] += step[a];
      std::vector<double> rt = residuals(trial);
      const double chi2t = detail::chi2_of(rt);
      if (std::isfinite(chi2t) && chi2t <= chi2) {
        const double gain = chi2 - chi2t;
        p = std::move(trial);
        r = std::move(rt);
        chi2 = chi2t;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (gain <= opts.ftol * std::max(chi2, 1e-300)) iter = opts.max_iterations;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }

  // covariance at the optimum
  const auto j = jacobian(p);
  std::vector<std::vector<double>> jtj(np, std::vector<double>(np, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t b = 0; b <= a; ++b) jtj[a][b] += j[i][a] * j[i][b];
  for (std::size_t a = 0; a < np; ++a)
    for (std::size_t b = a + 1; b < np; ++b) jtj[a][b] = jtj[b][a];

  FitResult out;
  out.param_names = names;
  out.chi2 = chi2;
  out.dof = static_cast<int>(m) - static_cast<int>(np) - opts.extra_dof_reduction;
  out.chi2_nu = out.dof > 0 ? chi2 / out.dof : 0.0;

  // columns with (numerically) zero diagonal do not influence the residuals
  double max_diag = 0.0;
  for (std::size_t a = 0; a < np; ++a) max_diag = std::max(max_diag, jtj[a][a]);
  std::set<std::size_t> dead;
  for (std::size_t a = 0; a < np; ++a)
    if (jtj[a][a] <= 1e-14 * std::max(max_diag, 1e-300)) dead.insert(a);

  std::vector<std::vector<double>> cov;
  bool have_cov = dead.empty() && detail::spd_inverse(jtj, cov);
  if (!have_cov) {
    // invert the constrained block only
    std::vector<std::size_t> live;
    for (std::size_t a = 0; a < np; ++a)
      if (!dead.count(a)) live.push_back(a);
    std::vector<std::vector<double>> sub(live.size(), std::vector<double>(live.size()));
    for (std::size_t a = 0; a < live.size(); ++a)
      for (std::size_t b = 0; b < live.size(); ++b) sub[a][b] = jtj[live[a]][live[b]];
    std::vector<std::vector<double>> subinv;
    cov.assign(np, std::vector<double>(np, std::numeric_limits<double>::quiet_NaN()));
    if (!live.empty() && detail::spd_inverse(sub, subinv)) {
      for (std::size_t a = 0; a < live.size(); ++a)
        for (std::size_t b = 0; b < live.size(); ++b) cov[live[a]][live[b]] = subinv[a][b];
    } else {
      for (std::size_t a = 0; a < np; ++a) dead.insert(a);
    }
  }

  const double scale =
      opts.scale_errors_to_unit_chi2 && out.chi2_nu > 0.0 ? out.chi2_nu : 1.0;
  out.covariance.assign(np, std::vector<double>(np, std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t a = 0; a < np; ++a) {
    out.params[names[a]] = p[a];
    if (dead.count(a)) {
      out.unconstrained.insert(names[a]);
      continue;
    }
    for (std::size_t b = 0; b < np; ++b)
      if (!dead.count(b)) out.covariance[a][b] = cov[a][b] * scale;
    const double var = cov[a][a] * scale;
    if (!std::isfinite(var) || var < 0.0) {
      out.unconstrained.insert(names[a]);
      continue;
    }
    const double half = 1.959963984540054 * std::sqrt(var);
    out.ci95[names[a]] = {p[a] - half, p[a] + half};
  }
  return out;
}

}  // namespace sipmlab
