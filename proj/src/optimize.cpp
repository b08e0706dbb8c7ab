#include "nvqpt/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace nvqpt::opt {

namespace {

struct Simplex {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> f;

  void order() {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    std::vector<Eigen::VectorXd> xs(x.size());
    std::vector<double> fs(x.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xs[k].swap(x[idx[k]]);
      fs[k] = f[idx[k]];
    }
    x.swap(xs);
    f.swap(fs);
  }

  // Only the last vertex changed: move it into place.
  void reinsert_last() {
    for (std::size_t k = x.size() - 1; k > 0 && f[k] < f[k - 1]; --k) {
      x[k].swap(x[k - 1]);
      std::swap(f[k], f[k - 1]);
    }
  }

  double spread() const { return f.back() - f.front(); }

  double size() const {
    double d = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) d = std::max(d, (x[i] - x[0]).lpNorm<Eigen::Infinity>());
    return d;
  }
};

// One Nelder-Mead descent from x0. Returns when converged or out of budget.
MinimizeResult descend(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& o, int budget) {
  const auto n = x0.size();
  const double dn = static_cast<double>(n);
  const double alpha = 1.0;
  const double beta = n > 1 ? 1.0 + 2.0 / dn : 2.0;
  const double gamma = n > 1 ? 0.75 - 0.5 / dn : 0.5;
  const double delta = n > 1 ? 1.0 - 1.0 / dn : 0.5;

  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& p) {
    ++evals;
    const double v = f(p);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  Simplex s;
  s.x.push_back(x0);
  s.f.push_back(eval(x0));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd p = x0;
    const double step = x0(i) != 0.0 ? o.initial_step * std::max(1.0, std::abs(x0(i))) : o.initial_step;
    p(i) += step;
    s.x.push_back(p);
    s.f.push_back(eval(p));
  }
  s.order();

  bool converged = false;
  while (evals < budget) {
    if (s.spread() <= o.f_tol || s.size() <= o.x_tol) {
      converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += s.x[i];
    centroid /= dn;

    const Eigen::VectorXd& worst = s.x[n];
    const Eigen::VectorXd xr = centroid + alpha * (centroid - worst);
    const double fr = eval(xr);

    if (fr < s.f[0]) {
      const Eigen::VectorXd xe = centroid + beta * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        s.x[n] = xe;
        s.f[n] = fe;
      } else {
        s.x[n] = xr;
        s.f[n] = fr;
      }
    } else if (fr < s.f[n - 1]) {
      s.x[n] = xr;
      s.f[n] = fr;
    } else {
      const bool outside = fr < s.f[n];
      const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + gamma * (xr - centroid))
                                         : Eigen::VectorXd(centroid - gamma * (centroid - worst));
      const double fc = eval(xc);
      if (fc < (outside ? fr : s.f[n])) {
        s.x[n] = xc;
        s.f[n] = fc;
      } else {
        for (Eigen::Index i = 1; i <= n; ++i) {
          s.x[i] = s.x[0] + delta * (s.x[i] - s.x[0]);
          s.f[i] = eval(s.x[i]);
        }
        s.order();
        continue;
      }
    }
    s.reinsert_last();
  }
  return {s.x[0], s.f[0], evals, converged};
}

}  // namespace

MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& options) {
  if (x0.size() == 0) throw std::invalid_argument("nelder_mead needs at least one parameter");
  MinimizeResult best = descend(f, x0, options, options.max_evaluations);
  int total = best.evaluations;
  // Stagnated simplices collapse onto a subspace; a fresh simplex around the
  // incumbent recovers the lost directions.
  double step = options.initial_step;
  for (int r = 0; r < options.max_restarts && total < options.max_evaluations; ++r) {
    step *= 0.1;
    NelderMeadOptions o = options;
    o.initial_step = std::max(step, 1e-6);
    MinimizeResult next = descend(f, best.x, o, options.max_evaluations - total);
    total += next.evaluations;
    const bool improved = next.value < best.value - options.f_tol;
    if (next.value <= best.value) {
      next.evaluations = total;
      best = next;
    }
    if (!improved) break;
  }
  best.evaluations = total;
  return best;
}

Eigen::MatrixXd numeric_jacobian(const Residuals& r, const Eigen::VectorXd& x, const Eigen::VectorXd& scale) {
  const Eigen::VectorXd r0 = r(x);
  Eigen::MatrixXd jac(r0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * std::max(std::abs(x(k)), scale(k));
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(k) += h;
    xm(k) -= h;
    jac.col(k) = (r(xp) - r(xm)) / (2.0 * h);
  }
  return jac;
}

LeastSquaresResult levenberg_marquardt(const Residuals& r, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                                       const LevenbergMarquardtOptions& options) {
  LeastSquaresResult out;
  out.x = x0;
  out.residuals = r(x0);
  out.chi_square = out.residuals.squaredNorm();
  double lambda = options.initial_lambda;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    out.jacobian = numeric_jacobian(r, out.x, scale);
    const Eigen::MatrixXd jtj = out.jacobian.transpose() * out.jacobian;
    const Eigen::VectorXd g = out.jacobian.transpose() * out.residuals;

    bool accepted = false;
    Eigen::VectorXd step;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index k = 0; k < a.rows(); ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      step = a.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd xn = out.x + step;
      const Eigen::VectorXd rn = r(xn);
      const double cn = rn.squaredNorm();
      if (std::isfinite(cn) && cn <= out.chi_square) {
        out.x = xn;
        out.residuals = rn;
        out.chi_square = cn;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }

    double rel = 0.0;
    for (Eigen::Index k = 0; k < step.size(); ++k)
      rel = std::max(rel, std::abs(step(k)) / std::max(std::abs(out.x(k)), scale(k)));
    if (!accepted || rel < options.step_tol) {
      out.converged = accepted || lambda > 1e10;
      break;
    }
  }
  out.jacobian = numeric_jacobian(r, out.x, scale);
  return out;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> sigma) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line needs at least two points");
  const bool weighted =
      sigma.size() == x.size() && std::all_of(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; });
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  if (std::abs(det) < 1e-300) throw std::invalid_argument("fit_line needs distinct abscissae");
  LineFit fit;
  fit.slope = (sw * sxy - sx * sy) / det;
  fit.intercept = (sxx * sy - sx * sxy) / det;
  double var_scale = 1.0;
  if (!weighted) {
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = y[i] - fit.intercept - fit.slope * x[i];
      rss += d * d;
    }
    var_scale = x.size() > 2 ? rss / static_cast<double>(x.size() - 2) : 0.0;
  }
  fit.sigma_intercept = std::sqrt(var_scale * sxx / det);
  fit.sigma_slope = std::sqrt(var_scale * sw / det);
  fit.covariance = -var_scale * sx / det;
  return fit;
}

std::mt19937_64 substream(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6e76u};
  return std::mt19937_64(seq);
}

}  // namespace nvqpt::opt
