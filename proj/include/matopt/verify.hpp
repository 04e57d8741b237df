#pragma once

// Numeric oracles: closed forms checked against independent minimizers and fixed points.
//
// Each check takes `closed_form_scale`; 1.0 checks the true closed form, anything else
// perturbs it and must make the check fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "matopt/linalg.hpp"
#include "matopt/optim.hpp"
#include "matopt/precond.hpp"
#include "matopt/problems.hpp"

namespace matopt {

struct VerificationReport {
  std::string check_name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string details;
  double seconds = 0.0;  // wall clock, filled by the suite runners
};

inline VerificationReport make_report(std::string name, double max_error, double tolerance, std::string details = {}) {
  VerificationReport r;
  r.check_name = std::move(name);
  r.max_error = max_error;
  r.tolerance = tolerance;
  r.passed = std::isfinite(max_error) && max_error <= tolerance;
  r.details = std::move(details);
  return r;
}

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

namespace detail {

/// Grid scan followed by golden-section refinement around the best grid point.
inline double minimize_scalar(const std::function<double(double)>& f, double lo, double hi, int grid = 4000) {
  const double h = (hi - lo) / grid;
  double best_x = lo, best_f = f(lo);
  for (int i = 1; i <= grid; ++i) {
    const double x = lo + h * i;
    const double fx = f(x);
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
  }
  double a = best_x - h, b = best_x + h;
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Composite Simpson rule with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 20000) {
  if (panels % 2) ++panels;
  const double h = (b - a) / panels;
  double acc = f(a) + f(b);
  for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(a + h * i);
  return acc * h / 3.0;
}

/// E[sign(g)] for g ~ N(mu, sigma^2), by quadrature over each half-line.
inline double expected_sign(double mu, double sigma) {
  if (sigma == 0.0) return mu > 0 ? 1.0 : (mu < 0 ? -1.0 : 0.0);
  const double inv = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  auto pdf = [&](double x) {
    const double z = (x - mu) / sigma;
    return inv * std::exp(-0.5 * z * z);
  };
  const double reach = std::abs(mu) + 12.0 * sigma;
  return simpson(pdf, 0.0, reach) - simpson(pdf, -reach, 0.0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline void require_same_length(const std::vector<double>& a, const std::vector<double>& b, const char* ctx) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, std::string(ctx) + ": length mismatch");
}

inline double relative_error(const Matrix& x, const Matrix& ref) {
  const double den = frobenius_norm(ref);
  return frobenius_distance(x, ref) / (den > 0.0 ? den : 1.0);
}

inline double lambda_max(const Matrix& a) { return sym_eig(a).eigenvalues.back(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise adaptation factors

/// gamma = mu^2 / (mu^2 + sigma^2) and gamma = 2 P(sign match) - 1, per coordinate.
inline VerificationReport oracle_elementwise_adaptation(const std::vector<double>& mean, const std::vector<double>& sigma,
                                       double closed_form_scale = 1.0) {
  detail::require_same_length(mean, sigma, "oracle_elementwise_adaptation");
  double err15 = 0.0, err16 = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double mu = mean[i], s = sigma[i];
    const double second = mu * mu + s * s;
    if (second == 0.0) continue;
    const double g15 = detail::minimize_scalar(
        [&](double g) { return g * g * second - 2.0 * g * mu * mu + mu * mu; }, -0.5, 1.5);
    err15 = std::max(err15, std::abs(g15 - closed_form_scale * mu * mu / second));

    const double sgn = mu > 0 ? 1.0 : (mu < 0 ? -1.0 : 0.0);
    const double es = detail::expected_sign(mu, s);
    const double e_sign_sq = s > 0.0 || mu != 0.0 ? 1.0 : 0.0;
    const double g16 = detail::minimize_scalar(
        [&](double g) { return g * g * e_sign_sq - 2.0 * g * sgn * es + sgn * sgn; }, -0.5, 1.5);
    const double closed16 = s == 0.0 ? 1.0 : 2.0 * detail::normal_cdf(std::abs(mu) / s) - 1.0;
    err16 = std::max(err16, std::abs(g16 - closed_form_scale * closed16));
  }
  return make_report("elementwise_adaptation_factors", std::max(err15, err16), 1e-3,
                     "eq15 err " + format_real(err15) + ", eq16 err " + format_real(err16));
}

/// gamma = |mu| / (mu^2 + sigma^2) minimizes E[(gamma g - sign(mu))^2].
inline VerificationReport oracle_sign_scaling(const std::vector<double>& mean, const std::vector<double>& sigma,
                                       double closed_form_scale = 1.0) {
  detail::require_same_length(mean, sigma, "oracle_sign_scaling");
  double err = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double mu = mean[i], s = sigma[i];
    const double second = mu * mu + s * s;
    if (second == 0.0) continue;
    const double sgn = mu > 0 ? 1.0 : (mu < 0 ? -1.0 : 0.0);
    const double closed = std::abs(mu) / second;
    const double hi = std::max(1.5, 2.0 * closed + 1.0);
    const double g = detail::minimize_scalar(
        [&](double x) { return x * x * second - 2.0 * x * sgn * mu + sgn * sgn; }, -0.5, hi);
    err = std::max(err, std::abs(g - closed_form_scale * closed) / std::max(1.0, closed));
  }
  return make_report("sign_descent_scaling", err, 1e-6);
}

// ---------------------------------------------------------------------------
// Matrix variance adaptation

namespace detail {

/// argmin_X tr(X S X^T) - 2 tr(X C^T) by gradient descent with step 1/(2 λmax(S)).
inline Matrix descend_quadratic(const Matrix& s, const Matrix& c, std::size_t max_iters, std::size_t& iters) {
  const double step = 1.0 / (2.0 * lambda_max(s));
  Matrix x(c.rows(), c.cols());
  const double stop = 1e-13 * std::max(1.0, frobenius_norm(c));
  for (iters = 0; iters < max_iters; ++iters) {
    Matrix grad = (x * s - c) * 2.0;
    if (frobenius_norm(grad) <= stop) return x;
    x -= step * grad;
  }
  throw Error(ErrorCode::NotConverged, "oracle_matrix_adaptation: gradient descent did not converge");
}

}  // namespace detail

/// A = (ΘΘ^T)^{1/2} E[GG^T]^{-1}
inline Matrix matrix_adaptation_left_closed_form(const MatrixGaussianModel& model) {
  const Matrix s = matrix_gaussian_moments(model, Matrix::identity(model.cols()), MomentSide::Left);
  return psd_power(gram_rows(model.mean), 0.5) * stabilized_inverse_root(s, 0.0, 1.0);
}

/// B = E[G^T G]^{-1} (Θ^TΘ)^{1/2}
inline Matrix matrix_adaptation_right_closed_form(const MatrixGaussianModel& model) {
  const Matrix s = matrix_gaussian_moments(model, Matrix::identity(model.rows()), MomentSide::Right);
  return stabilized_inverse_root(s, 0.0, 1.0) * psd_power(gram_cols(model.mean), 0.5);
}

/// Left closed form for B = I, right closed form for A = I, each against gradient descent.
inline VerificationReport oracle_matrix_adaptation(const MatrixGaussianModel& model, double closed_form_scale = 1.0,
                                       std::size_t max_iters = 2000000) {
  validate_model(model);
  const Matrix& th = model.mean;
  const Matrix polar = polar_svd(th);
  const Matrix s_left = matrix_gaussian_moments(model, Matrix::identity(th.cols()), MomentSide::Left);
  const Matrix s_right = matrix_gaussian_moments(model, Matrix::identity(th.rows()), MomentSide::Right);

  // E||AG - P||^2 = tr(A S A^T) - 2 tr(A Θ P^T) + const
  std::size_t it_a = 0, it_b = 0;
  const Matrix a_num = detail::descend_quadratic(s_left, polar * th.transposed(), max_iters, it_a);
  const Matrix a_closed = matrix_adaptation_left_closed_form(model) * closed_form_scale;

  // E||GB - P||^2, solved for B^T
  const Matrix bt_num = detail::descend_quadratic(s_right, polar.transposed() * th, max_iters, it_b);
  const Matrix b_closed = matrix_adaptation_right_closed_form(model) * closed_form_scale;

  const double ea = detail::relative_error(a_closed, a_num);
  const double eb = detail::relative_error(b_closed, bt_num.transposed());
  return make_report("matrix_adaptation", std::max(ea, eb), 1e-4,
                     "left err " + format_real(ea) + " (" + std::to_string(it_a) + " iters), right err " +
                         format_real(eb) + " (" + std::to_string(it_b) + " iters)");
}

// ---------------------------------------------------------------------------
// Whitening and the KL fixed point

struct WeightedModel {
  MatrixGaussianModel model;
  double weight = 1.0;
};

struct WhiteningSolution {
  Matrix a;
  Matrix b;
  Matrix left_factor;   // L (rectangular case)
  Matrix right_factor;  // R
  std::size_t iterations = 0;
  double row_residual = 0.0;
  double col_residual = 0.0;
  bool square = true;
};

namespace detail {

inline Matrix averaged_moment(const std::vector<WeightedModel>& ms, const Matrix& b, MomentSide side, bool centered) {
  Matrix out;
  for (const auto& wm : ms) {
    Matrix term = matrix_gaussian_moments(wm.model, b, side, centered) * wm.weight;
    if (out.empty()) out = std::move(term);
    else out += term;
  }
  return out;
}

inline double identity_residual(const Matrix& x) { return frobenius_norm(x - Matrix::identity(x.rows())); }

/// Square: A = avg E[G B^2 G^T]^{-1/2}, B = avg E[G^T A^2 G]^{-1/2}.
/// Rectangular: L = avg E[G R^{-1} G^T]/n, R = avg E[G^T L^{-1} G]/m, gauge tr(L)/m = tr(R)/n.
inline WhiteningSolution solve_whitening(const std::vector<WeightedModel>& ms, bool centered, std::size_t max_iters,
                                         double tol) {
  if (ms.empty()) throw Error(ErrorCode::InvalidConfig, "whitening: no models");
  const std::size_t m = ms[0].model.rows(), n = ms[0].model.cols();
  for (const auto& wm : ms) {
    validate_model(wm.model);
    if (wm.model.rows() != m || wm.model.cols() != n)
      throw Error(ErrorCode::DimensionMismatch, "whitening: models must share a shape");
  }
  WhiteningSolution sol;
  sol.square = m == n;
  if (sol.square) {
    Matrix a = Matrix::identity(m), b = Matrix::identity(n);
    for (sol.iterations = 1; sol.iterations <= max_iters; ++sol.iterations) {
      a = stabilized_inverse_root(averaged_moment(ms, b * b, MomentSide::Left, centered), 0.0, 0.5);
      b = stabilized_inverse_root(averaged_moment(ms, a * a, MomentSide::Right, centered), 0.0, 0.5);
      sol.row_residual = identity_residual(a * averaged_moment(ms, b * b, MomentSide::Left, centered) * a);
      sol.col_residual = identity_residual(b * averaged_moment(ms, a * a, MomentSide::Right, centered) * b);
      if (std::max(sol.row_residual, sol.col_residual) < tol) break;
    }
    if (sol.iterations > max_iters) throw Error(ErrorCode::NotConverged, "whitening: fixed point not reached");
    sol.a = std::move(a);
    sol.b = std::move(b);
    return sol;
  }
  Matrix l = Matrix::identity(m), r = Matrix::identity(n);
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  for (sol.iterations = 1; sol.iterations <= max_iters; ++sol.iterations) {
    l = averaged_moment(ms, stabilized_inverse_root(r, 0.0, 1.0), MomentSide::Left, centered) * (1.0 / dn);
    r = averaged_moment(ms, stabilized_inverse_root(l, 0.0, 1.0), MomentSide::Right, centered) * (1.0 / dm);
    const double c = std::sqrt(dm * trace(r) / (dn * trace(l)));
    l *= c;
    r *= 1.0 / c;
    const Matrix l_fix = averaged_moment(ms, stabilized_inverse_root(r, 0.0, 1.0), MomentSide::Left, centered) * (1.0 / dn);
    const Matrix r_fix = averaged_moment(ms, stabilized_inverse_root(l, 0.0, 1.0), MomentSide::Right, centered) * (1.0 / dm);
    sol.row_residual = relative_error(l, l_fix);
    sol.col_residual = relative_error(r, r_fix);
    if (std::max(sol.row_residual, sol.col_residual) < tol) break;
  }
  if (sol.iterations > max_iters) throw Error(ErrorCode::NotConverged, "whitening: KL fixed point not reached");
  sol.a = stabilized_inverse_root(l, 0.0, 0.5);
  sol.b = stabilized_inverse_root(r, 0.0, 0.5);
  sol.left_factor = std::move(l);
  sol.right_factor = std::move(r);
  return sol;
}

/// Residuals of a candidate solution, with A scaled by `scale`.
inline VerificationReport whitening_report(std::string name, const std::vector<WeightedModel>& ms, bool centered,
                                           WhiteningSolution sol, double scale, double tol) {
  const std::size_t m = ms[0].model.rows(), n = ms[0].model.cols();
  std::string details = "iterations " + std::to_string(sol.iterations);
  double row = 0.0, col = 0.0;
  if (sol.square) {
    const Matrix a = sol.a * scale;
    row = identity_residual(a * averaged_moment(ms, sol.b * sol.b, MomentSide::Left, centered) * a);
    col = identity_residual(sol.b * averaged_moment(ms, a * a, MomentSide::Right, centered) * sol.b);
  } else {
    const Matrix l = sol.left_factor * scale;
    const Matrix& r = sol.right_factor;
    const double dm = static_cast<double>(m), dn = static_cast<double>(n);
    row = relative_error(
        l, averaged_moment(ms, stabilized_inverse_root(r, 0.0, 1.0), MomentSide::Left, centered) * (1.0 / dn));
    col = relative_error(
        r, averaged_moment(ms, stabilized_inverse_root(l, 0.0, 1.0), MomentSide::Right, centered) * (1.0 / dm));
    const Matrix zr = sol.a * averaged_moment(ms, sol.b * sol.b, MomentSide::Left, centered) * sol.a;
    const Matrix zc = sol.b * averaged_moment(ms, sol.a * sol.a, MomentSide::Right, centered) * sol.b;
    details += "; exact identity pair infeasible for " + std::to_string(m) + "x" + std::to_string(n) +
               " (traces would need to equal both " + std::to_string(m) + " and " + std::to_string(n) +
               "); checked the gauge-fixed KL fixed point instead, where row cov = " + format_real(trace(zr) / dm) +
               " I, col cov = " + format_real(trace(zc) / dn) + " I";
  }
  details += "; row residual " + format_real(row) + ", col residual " + format_real(col);
  return make_report(std::move(name), std::max(row, col), tol, std::move(details));
}

}  // namespace detail

/// A, B with Cov_row(AGB) = I and Cov_col(AGB) = I.
inline VerificationReport check_whitening(const MatrixGaussianModel& model, std::size_t max_iters = 1000,
                                          bool centered = false, double closed_form_scale = 1.0) {
  const std::vector<WeightedModel> ms{{model, 1.0}};
  auto sol = detail::solve_whitening(ms, centered, max_iters, 1e-10);
  return detail::whitening_report("whitening", ms, centered, std::move(sol), closed_form_scale, 1e-8);
}

inline WhiteningSolution whitening_solution(const MatrixGaussianModel& model, std::size_t max_iters = 1000,
                                            bool centered = false) {
  return detail::solve_whitening({{model, 1.0}}, centered, max_iters, 1e-10);
}

/// EMA weights (1-b2) b2^{T-t}, normalized to sum to one.
inline std::vector<double> ema_weights(std::size_t count, double beta2) {
  std::vector<double> w(count);
  double total = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    w[t] = (1.0 - beta2) * std::pow(beta2, static_cast<double>(count - 1 - t));
    total += w[t];
  }
  if (!(total > 0.0)) throw Error(ErrorCode::InvalidConfig, "ema_weights: beta2 must be in [0, 1)");
  for (double& x : w) x /= total;
  return w;
}

/// Time-averaged orthogonality: EMA_t E[Z_t Z_t^T] = I and EMA_t E[Z_t^T Z_t] = I with Z_t = A G_t B.
inline VerificationReport solve_idealized_kl(const std::vector<MatrixGaussianModel>& models, double beta2,
                                             std::size_t max_iters = 500, double closed_form_scale = 1.0) {
  if (beta2 < 0.0 || beta2 >= 1.0) throw Error(ErrorCode::InvalidConfig, "solve_idealized_kl: beta2 must be in [0, 1)");
  const std::vector<double> w = ema_weights(models.size(), beta2);
  std::vector<WeightedModel> ms;
  for (std::size_t t = 0; t < models.size(); ++t) ms.push_back({models[t], w[t]});
  auto sol = detail::solve_whitening(ms, false, max_iters, 1e-10);
  return detail::whitening_report("idealized_kl", ms, false, std::move(sol), closed_form_scale, 1e-6);
}

// ---------------------------------------------------------------------------
// Instantaneous KL-Shampoo

/// x_{t+1} = b2 x_t + (1 - b2) sigma^2 / x_t; returns x_0..x_iters.
inline std::vector<double> scalar_kl_recursion(double sigma, double beta2, double x0, std::size_t iters) {
  std::vector<double> xs{x0};
  for (std::size_t t = 0; t < iters; ++t) {
    const double x = xs.back();
    xs.push_back(beta2 * x + (1.0 - beta2) * sigma * sigma / x);
  }
  return xs;
}

/// First t with |x_t - sigma| <= tol, or -1.
inline long iterations_to_converge(const std::vector<double>& xs, double sigma, double tol) {
  for (std::size_t t = 0; t < xs.size(); ++t)
    if (std::abs(xs[t] - sigma) <= tol) return static_cast<long>(t);
  return -1;
}

struct KlIterate {
  Matrix left;
  Matrix right;
};

/// Coupled KL factor recursion with fixed G, started from c0 I.
inline KlIterate run_instantaneous_kl(const Matrix& g, double beta2, double c0, std::size_t iters) {
  if (!(c0 > 0.0)) throw Error(ErrorCode::InvalidConfig, "instantaneous_kl: c0 must be positive");
  KlIterate s{Matrix::identity(g.rows()) * c0, Matrix::identity(g.cols()) * c0};
  for (std::size_t t = 0; t < iters; ++t) {
    Matrix l = beta2 * s.left + (1.0 - beta2) * (g * pseudo_inverse(s.right) * g.transposed());
    Matrix r = beta2 * s.right + (1.0 - beta2) * (g.transposed() * pseudo_inverse(s.left) * g);
    s.left = symmetrized(l);
    s.right = symmetrized(r);
  }
  return s;
}

inline VerificationReport instantaneous_kl(const Matrix& g, double beta2, double c0 = 1.0, std::size_t iters = 200,
                                           double closed_form_scale = 1.0) {
  const KlIterate s = run_instantaneous_kl(g, beta2, c0, iters);
  const Matrix z = pseudo_inverse_root(s.left, 0.5) * g * pseudo_inverse_root(s.right, 0.5);
  const double matrix_err = frobenius_distance(z, polar_svd(g) * closed_form_scale);

  // Per singular value the recursion decouples into the scalar one.
  double scalar_err = 0.0;
  for (double sv : svd(g).singular_values) {
    if (!(sv > 0.0)) continue;
    const auto xs = scalar_kl_recursion(sv, beta2, c0, iters);
    scalar_err = std::max(scalar_err, std::abs(xs.back() - sv) / sv);
  }
  return make_report("instantaneous_kl", std::max(matrix_err, scalar_err), 1e-8,
                     "beta2 " + format_real(beta2) + ", polar residual " + format_real(matrix_err) +
                         ", scalar relative error " + format_real(scalar_err));
}

// ---------------------------------------------------------------------------
// Optimizer equivalences

struct EquivalencePair {
  std::string name;
  OptimizerSpec lhs;
  OptimizerSpec rhs;
};

inline std::vector<EquivalencePair> equivalence_pairs() {
  std::vector<EquivalencePair> out;
  auto spec = [](Family f) {
    OptimizerSpec s;
    s.family = f;
    return s;
  };
  {
    auto a = spec(Family::Adam);
    a.beta1 = 0.0;
    a.beta2 = 0.0;
    a.epsilon = 0.0;
    out.push_back({"adam(b1=b2=eps=0) == signgd", a, spec(Family::SignGD)});
  }
  {
    auto a = spec(Family::Adam);
    a.beta1 = 0.0;
    auto r = spec(Family::RMSProp);
    out.push_back({"adam(b1=0) == rmsprop", a, r});
  }
  {
    auto a = spec(Family::Adam);
    a.wiring = Wiring::LaProp;
    a.beta1 = 0.0;
    a.beta2 = 0.0;
    a.beta3 = 0.9;
    a.epsilon = 0.0;
    auto b = spec(Family::SignGD);
    b.beta3 = 0.9;
    out.push_back({"laprop adam(b2=0, b3>0) == ema of sign", a, b});
  }
  {
    auto a = spec(Family::Shampoo);
    a.wiring = Wiring::BCOSm;
    a.p = 0.25;
    a.beta2 = 0.0;
    a.epsilon = 0.0;
    out.push_back({"bcosm shampoo^1/4(b2=0) == muon_svd", a, spec(Family::MuonSVD)});
  }
  {
    auto a = spec(Family::Shampoo);
    a.wiring = Wiring::LaProp;
    a.p = 0.25;
    a.beta1 = 0.0;
    a.beta2 = 0.0;
    a.epsilon = 0.0;
    out.push_back({"laprop shampoo^1/4(b2=b3=0) == spectralgd", a, spec(Family::SpectralGD)});
  }
  {
    auto a = spec(Family::Shampoo);
    a.wiring = Wiring::BCOSm;
    a.beta1 = 0.0;
    auto b = spec(Family::Shampoo);
    b.beta1 = 0.0;
    out.push_back({"bcosm shampoo(b1=0) == shampoo without momentum", a, b});
  }
  {
    auto a = spec(Family::Shampoo);
    a.wiring = Wiring::LaProp;
    a.p = 0.25;
    a.beta1 = 0.0;
    a.beta2 = 0.0;
    a.beta3 = 0.9;
    a.epsilon = 0.0;
    auto b = spec(Family::SpectralGD);
    b.beta3 = 0.9;
    out.push_back({"laprop shampoo^1/4(b2=0, b3>0) == spectralgd with momentum", a, b});
  }
  return out;
}

/// Seeded stream of well-conditioned 4x3 gradients.
inline std::vector<Matrix> gradient_stream(std::uint64_t seed, std::size_t steps, std::size_t rows = 4,
                                           std::size_t cols = 3) {
  Rng base(derive(seed, 0x7a));
  Matrix drift = base.normal_matrix(rows, cols);
  std::vector<Matrix> out;
  for (std::size_t t = 0; t < steps; ++t) {
    Rng rng(derive(seed, 0x7b, t));
    out.push_back(drift + rng.normal_matrix(rows, cols, 0.5));
  }
  return out;
}

/// Max per-step update deviation between two specs on a shared stream.
inline double equivalence_deviation(const EquivalencePair& pair, const std::vector<Matrix>& stream, double scale = 1.0) {
  const std::size_t r = stream.at(0).rows(), c = stream.at(0).cols();
  OptimizerState sa = init_state(pair.lhs, r, c), sb = init_state(pair.rhs, r, c);
  const Matrix theta(r, c);
  double worst = 0.0;
  for (const Matrix& g : stream) {
    const Matrix ua = step(pair.lhs, sa, theta, g, 1.0).update;
    const Matrix ub = step(pair.rhs, sb, theta, g, 1.0).update * scale;
    worst = std::max(worst, max_abs_diff(ua, ub));
  }
  return worst;
}

inline VerificationReport check_optimizer_equivalences(std::uint64_t stream_seed, std::size_t steps = 100,
                                                    double closed_form_scale = 1.0) {
  const auto stream = gradient_stream(stream_seed, steps);
  double worst = 0.0;
  std::string failing;
  for (const auto& pair : equivalence_pairs()) {
    const double dev = equivalence_deviation(pair, stream, closed_form_scale);
    worst = std::max(worst, dev);
    if (!(dev <= 1e-12)) failing += (failing.empty() ? "" : "; ") + pair.name + " (" + format_real(dev) + ")";
  }
  return make_report("optimizer_equivalences", worst, 1e-12,
                     failing.empty() ? std::to_string(equivalence_pairs().size()) + " pairs match"
                                     : "mismatch: " + failing);
}

// ---------------------------------------------------------------------------
// Shampoo identities

namespace detail {

inline Matrix one_step_shampoo(const Matrix& g, double p) {
  OptimizerSpec spec;
  spec.family = Family::Shampoo;
  spec.beta1 = 0.0;
  spec.beta2 = 0.0;
  spec.epsilon = 0.0;
  spec.p = p;
  OptimizerState s = init_state(spec, g.rows(), g.cols());
  return step(spec, s, Matrix(g.rows(), g.cols()), g, 1.0).update;
}

inline void require_full_rank(const Matrix& g, const char* ctx) {
  const auto sv = svd(g).singular_values;
  if (sv.empty() || !(sv.back() > 1e-12 * static_cast<double>(std::max(g.rows(), g.cols())) * sv.front()))
    throw Error(ErrorCode::RankDeficient, std::string(ctx) + ": input is not full rank");
}

}  // namespace detail

/// Shampoo^{1/4} without EMA or damping is the polar factor.
inline VerificationReport check_shampoo_polar(const Matrix& g, double closed_form_scale = 1.0) {
  detail::require_full_rank(g, "check_shampoo_polar");
  const double err = frobenius_distance(detail::one_step_shampoo(g, 0.25), polar_svd(g) * closed_form_scale);
  return make_report("shampoo_quarter_is_polar", err, 1e-8);
}

/// (L^{-p} (MM^T)^{1/4}) (U V^T) ((M^T M)^{1/4} R^{-p}) = L^{-p} M R^{-p}.
inline VerificationReport check_decomposition(const Matrix& m, const Matrix& left, const Matrix& right, double p,
                                              double closed_form_scale = 1.0) {
  const ShampooDecomposition d = shampoo_decompose(m, left, right, p);
  const Matrix direct = stabilized_inverse_root(left, 0.0, p) * m * stabilized_inverse_root(right, 0.0, p);
  const double err = detail::relative_error(d.left_adapt * d.polar * d.right_adapt * closed_form_scale, direct);
  return make_report("shampoo_decomposition", err, 1e-10);
}

/// Shampoo^{1/2} without EMA or damping gives U Σ^{-1} V^T = (G^+)^T.
inline VerificationReport check_exponent_paradox(const Matrix& g, double closed_form_scale = 1.0) {
  detail::require_full_rank(g, "check_exponent_paradox");
  const Matrix ref = pseudo_inverse(g).transposed() * closed_form_scale;
  const Matrix upd = detail::one_step_shampoo(g, 0.5);
  const double err = frobenius_distance(upd, ref) / std::max(1.0, frobenius_norm(ref));
  return make_report("exponent_paradox", err, 1e-8, "error relative to max(1, |U S^-1 V^T|)");
}

/// precondition(two-sided) vs unvec(((R + eps I) ⊗ (L + eps I))^{-p} vec(M)).
inline VerificationReport check_kron_equivalence(const Matrix& l, const Matrix& r, const Matrix& m, double p,
                                                 double epsilon, double closed_form_scale = 1.0) {
  require_square(l, "check_kron_equivalence: L");
  require_square(r, "check_kron_equivalence: R");
  if (l.rows() != m.rows() || r.rows() != m.cols())
    throw Error(ErrorCode::DimensionMismatch, "check_kron_equivalence: factor sizes do not match M");
  PreconditionerState s;
  s.factors = FactorPair{l, r, 1};
  const Matrix factored = precondition(PreconditionerKind::TwoSided, s, m, p, epsilon) * closed_form_scale;
  const Matrix big = kron(r + Matrix::identity(r.rows()) * epsilon, l + Matrix::identity(l.rows()) * epsilon);
  const Matrix vectorized = unvec(damped_inverse_root(big, 0.0, p) * vec(m), m.rows(), m.cols());
  const double err = frobenius_distance(factored, vectorized) / std::max(1.0, frobenius_norm(vectorized));
  return make_report("kron_equivalence", err, 1e-10, "error relative to max(1, |reference|)");
}

// ---------------------------------------------------------------------------
// Steepest descent under the adapted norms

/// d = -g / sqrt(E[g^2]), element-wise.
inline Matrix adapted_elementwise_direction(const MatrixGaussianModel& model, const Matrix& g) {
  validate_model(model);
  require_same_shape(model.mean, g, "adapted_elementwise_direction");
  const Matrix sr = model.row_cov(), sc = model.col_cov();
  Matrix d(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      const double mu = model.mean(i, j);
      d(i, j) = -g(i, j) / std::sqrt(mu * mu + sr(i, i) * sc(j, j));
    }
  return d;
}

/// D = -E[GG^T]^{-1/2} G
inline Matrix adapted_left_direction(const MatrixGaussianModel& model, const Matrix& g) {
  const Matrix s = matrix_gaussian_moments(model, Matrix::identity(model.cols()), MomentSide::Left);
  return -(stabilized_inverse_root(s, 0.0, 0.5) * g);
}

/// d = -g / sqrt(E[g^2]) and D = -E[GG^T]^{-1/2} G: constraint tightness and optimality against
/// random affine alternatives rescaled onto the constraint.
inline VerificationReport check_adapted_norm_descent(const MatrixGaussianModel& model, std::uint64_t seed = 0,
                                                     std::size_t alternatives = 100, double closed_form_scale = 1.0) {
  validate_model(model);
  const std::size_t m = model.rows(), n = model.cols();
  const Matrix& th = model.mean;
  const Matrix sr = model.row_cov(), sc = model.col_cov();

  // Element-wise: E[g_ij^2] through the closed form, E[d^2] through the moment routine.
  Matrix second(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) second(i, j) = th(i, j) * th(i, j) + sr(i, i) * sc(j, j);
  double err = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    Matrix e(n, n);
    e(j, j) = 1.0;
    const Matrix col = matrix_gaussian_moments(model, e, MomentSide::Left);
    for (std::size_t i = 0; i < m; ++i) {
      const double alpha = closed_form_scale / std::sqrt(second(i, j));
      err = std::max(err, std::abs(alpha * alpha * col(i, i) - 1.0));
    }
  }
  double elem_loss = 0.0;  // E[<g, d>] = -sum alpha E[g^2]
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) elem_loss -= closed_form_scale * std::sqrt(second(i, j));

  // Matrix: E[DD^T] = S^{-1/2} S S^{-1/2}.
  const Matrix s = matrix_gaussian_moments(model, Matrix::identity(n), MomentSide::Left);
  const Matrix a = stabilized_inverse_root(s, 0.0, 0.5) * closed_form_scale;
  err = std::max(err, frobenius_norm(a * s * a - Matrix::identity(m)));
  const double mat_loss = -trace(a * s);  // E[tr(G^T D)]

  Rng rng(derive(seed, 0xad));
  double worst_gap = 0.0;
  std::size_t beaten = 0;
  for (std::size_t k = 0; k < alternatives; ++k) {
    // d_ij = -(alpha g_ij + beta); feasible after per-coordinate rescaling to E[d^2] = 1.
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double al = rng.normal(), be = rng.normal();
        const double mu = th(i, j);
        const double ed2 = al * al * second(i, j) + 2.0 * al * be * mu + be * be;
        const double egd = al * second(i, j) + be * mu;
        loss -= egd / std::sqrt(ed2);
      }
    const double gap_e = elem_loss - loss;
    // D = -(P G + Q), rescaled so that λmax(E[DD^T]) = 1.
    const Matrix p = rng.normal_matrix(m, m), q = rng.normal_matrix(m, n);
    const Matrix pth_q = p * th * q.transposed();
    const Matrix edd = p * s * p.transposed() + pth_q + pth_q.transposed() + gram_rows(q);
    const double c = 1.0 / std::sqrt(detail::lambda_max(edd));
    const double loss_m = -c * (trace(p * s) + trace(th.transposed() * q));
    const double gap_m = mat_loss - loss_m;
    const double gap = std::max(gap_e, gap_m);
    if (gap > 1e-9) ++beaten;
    worst_gap = std::max(worst_gap, gap);
  }
  err = std::max(err, std::max(0.0, worst_gap));
  return make_report("adapted_norm_descent", err, 1e-6,
                     std::to_string(beaten) + " of " + std::to_string(alternatives) + " alternatives beat the boxed updates");
}

// ---------------------------------------------------------------------------
// Suites

enum class Suite { All, Linalg, Propositions, Table1 };

inline Suite parse_suite(const std::string& s) {
  if (s == "all") return Suite::All;
  if (s == "linalg") return Suite::Linalg;
  if (s == "propositions") return Suite::Propositions;
  if (s == "table1") return Suite::Table1;
  throw Error(ErrorCode::InvalidConfig, "unknown suite: " + s);
}

namespace detail {

inline Matrix conditioned_matrix(Rng& rng, std::size_t m, std::size_t n, double cond) {
  Matrix u = random_orthogonal(rng, m), v = random_orthogonal(rng, n);
  Matrix s(m, n);
  const auto sv = log_spectrum(std::min(m, n), cond);
  for (std::size_t i = 0; i < sv.size(); ++i) s(i, i) = sv[i];
  return u * s * v.transposed();
}

inline Matrix spd_matrix(Rng& rng, std::size_t n) {
  Matrix a = rng.normal_matrix(n, n);
  return gram_rows(a) * (1.0 / static_cast<double>(n)) + Matrix::identity(n) * 0.1;
}

/// Wraps a throwing check so the suite keeps going.
inline VerificationReport guarded(const std::string& name, const std::function<VerificationReport()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  VerificationReport r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r = make_report(name, std::numeric_limits<double>::infinity(), 0.0, std::string("error: ") + e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Folds many reports of the same check into one.
inline VerificationReport fold(std::string name, const std::vector<VerificationReport>& rs) {
  double worst = 0.0, tol = rs.empty() ? 0.0 : rs[0].tolerance;
  std::size_t failed = 0;
  std::string first_failure;
  double seconds = 0.0;
  for (const auto& r : rs) seconds += r.seconds;
  for (const auto& r : rs) {
    worst = std::isfinite(r.max_error) ? std::max(worst, r.max_error) : r.max_error;
    if (!r.passed) {
      if (failed == 0) first_failure = r.details;
      ++failed;
    }
    if (!std::isfinite(worst)) break;
  }
  VerificationReport out = make_report(std::move(name), worst, tol,
                                       std::to_string(rs.size() - failed) + "/" + std::to_string(rs.size()) + " instances pass");
  if (failed) {
    out.passed = false;
    if (!first_failure.empty()) out.details += "; " + first_failure;
  }
  out.seconds = seconds;
  return out;
}

}  // namespace detail

inline std::vector<VerificationReport> run_linalg_suite(std::uint64_t seed, double scale = 1.0) {
  std::vector<VerificationReport> out;
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 50; ++k) {
      Rng rng(derive(seed, 0x101, k));
      const std::size_t m = 2 + rng.next_u64() % 15, n = 2 + rng.next_u64() % 11;
      const double cond = std::pow(10.0, 3.0 * rng.uniform());
      rs.push_back(detail::guarded("shampoo_quarter_is_polar",
                                   [&] { return check_shampoo_polar(detail::conditioned_matrix(rng, m, n, cond), scale); }));
    }
    out.push_back(detail::fold("shampoo_quarter_is_polar", rs));
  }
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 50; ++k) {
      Rng rng(derive(seed, 0x102, k));
      const std::size_t m = 2 + rng.next_u64() % 5, n = 2 + rng.next_u64() % 5;
      const double p = k % 2 ? 0.5 : 0.25;
      rs.push_back(detail::guarded("shampoo_decomposition", [&] {
        return check_decomposition(detail::conditioned_matrix(rng, m, n, 10.0), detail::spd_matrix(rng, m),
                                   detail::spd_matrix(rng, n), p, scale);
      }));
    }
    out.push_back(detail::fold("shampoo_decomposition", rs));
  }
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 20; ++k) {
      Rng rng(derive(seed, 0x103, k));
      const std::size_t m = 2 + rng.next_u64() % 5, n = 2 + rng.next_u64() % 5;
      rs.push_back(detail::guarded("exponent_paradox", [&] {
        return check_exponent_paradox(detail::conditioned_matrix(rng, m, n, 30.0), scale);
      }));
    }
    out.push_back(detail::fold("exponent_paradox", rs));
  }
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 20; ++k) {
      Rng rng(derive(seed, 0x104, k));
      const std::size_t m = 2 + rng.next_u64() % 5, n = 2 + rng.next_u64() % 5;
      const double p = k % 2 ? 0.5 : 0.25;
      const double eps = k % 4 < 2 ? 0.0 : 1e-3;
      rs.push_back(detail::guarded("kron_equivalence", [&] {
        return check_kron_equivalence(detail::spd_matrix(rng, m), detail::spd_matrix(rng, n), rng.normal_matrix(m, n), p,
                                      eps, scale);
      }));
    }
    out.push_back(detail::fold("kron_equivalence", rs));
  }
  return out;
}

inline std::vector<VerificationReport> run_propositions_suite(std::uint64_t seed, double scale = 1.0) {
  std::vector<VerificationReport> out;
  Rng rng(derive(seed, 0x201));
  std::vector<double> mu{1.0, 0.0, -0.7, 2.0}, sigma{1.0, 1.0, 0.4, 0.0};
  for (int i = 0; i < 12; ++i) {
    mu.push_back(rng.normal());
    sigma.push_back(std::abs(rng.normal()) + 0.05);
  }
  out.push_back(detail::guarded("elementwise_adaptation_factors", [&] { return oracle_elementwise_adaptation(mu, sigma, scale); }));
  out.push_back(detail::guarded("sign_descent_scaling", [&] { return oracle_sign_scaling(mu, sigma, scale); }));
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 5; ++k)
      rs.push_back(detail::guarded("matrix_adaptation",
                                   [&] { return oracle_matrix_adaptation(random_model(derive(seed, 0x202, k), 3, 4, 5.0, 0.3), scale); }));
    out.push_back(detail::fold("matrix_adaptation", rs));
  }
  out.push_back(detail::guarded("whitening_square", [&] {
    auto r = check_whitening(random_model(derive(seed, 0x203), 4, 4, 5.0, 0.5), 1000, false, scale);
    r.check_name = "whitening_square";
    return r;
  }));
  out.push_back(detail::guarded("whitening_rectangular", [&] {
    auto r = check_whitening(random_model(derive(seed, 0x204), 3, 5, 5.0, 0.5), 1000, false, scale);
    r.check_name = "whitening_rectangular";
    return r;
  }));
  out.push_back(detail::guarded("idealized_kl_square", [&] {
    auto r = solve_idealized_kl({random_model(derive(seed, 0x205), 4, 4, 5.0, 0.5),
                                 random_model(derive(seed, 0x206), 4, 4, 5.0, 0.2)},
                                0.5, 500, scale);
    r.check_name = "idealized_kl_square";
    return r;
  }));
  out.push_back(detail::guarded("idealized_kl_rectangular", [&] {
    auto r = solve_idealized_kl({random_model(derive(seed, 0x207), 3, 5, 5.0, 0.5),
                                 random_model(derive(seed, 0x208), 3, 5, 5.0, 0.2)},
                                0.5, 500, scale);
    r.check_name = "idealized_kl_rectangular";
    return r;
  }));
  {
    std::vector<VerificationReport> rs;
    for (double b2 : {0.3, 0.5, 0.8}) {
      Rng r2(derive(seed, 0x209, static_cast<std::uint64_t>(b2 * 10)));
      rs.push_back(detail::guarded("instantaneous_kl", [&] {
        return instantaneous_kl(detail::conditioned_matrix(r2, 4, 4, 10.0), b2, 1.0, 200, scale);
      }));
    }
    out.push_back(detail::fold("instantaneous_kl", rs));
  }
  {
    std::vector<VerificationReport> rs;
    for (std::size_t k = 0; k < 3; ++k)
      rs.push_back(detail::guarded("adapted_norm_descent", [&] {
        return check_adapted_norm_descent(random_model(derive(seed, 0x20a, k), 3, 4, 5.0, 0.5), derive(seed, 0x20b, k),
                                          100, scale);
      }));
    out.push_back(detail::fold("adapted_norm_descent", rs));
  }
  return out;
}

inline std::vector<VerificationReport> run_equivalence_suite(std::uint64_t seed, double scale = 1.0) {
  return {detail::guarded("optimizer_equivalences", [&] { return check_optimizer_equivalences(seed, 100, scale); })};
}

inline std::vector<VerificationReport> run_suite(Suite suite, std::uint64_t seed, double scale = 1.0) {
  std::vector<VerificationReport> out;
  auto append = [&](std::vector<VerificationReport> rs) {
    for (auto& r : rs) out.push_back(std::move(r));
  };
  if (suite == Suite::All || suite == Suite::Linalg) append(run_linalg_suite(seed, scale));
  if (suite == Suite::All || suite == Suite::Propositions) append(run_propositions_suite(seed, scale));
  if (suite == Suite::All || suite == Suite::Table1) append(run_equivalence_suite(seed, scale));
  return out;
}

}  // namespace matopt
