#pragma once

// Configurable optimizer covering element-wise (Adam/sign) and matrix (Shampoo/spectral) families.
//
// One step:
//   m  <- b1 m + (1-b1) g
//   C  <- update(C, b2, feed)          feed = g, or m/c1 for BCOS-m wiring
//   u  <- scale(precondition(C, d))    d = m/c1 (raw g for RMSProp/SignGD/SpectralGD)
//   v  <- b3 v + (1-b3) u
//   th <- th - lr (v/c3 + wd th)

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "matopt/linalg.hpp"
#include "matopt/precond.hpp"

namespace matopt {

enum class Family {
  Adam,
  Signum,
  SignGD,
  RMSProp,
  SpectralGD,
  MuonSVD,
  MuonNS,
  Shampoo,
  KlShampoo,
  EShampoo,
  CenteredShampoo,
  OneSidedL,
  OneSidedR,
  FullMatrix,
  OrderN,
};

enum class Wiring { Standard, LaProp, BCOSm };

enum class Scaling { None, Graft, Classic, Moonlight, Nuclear, RmsRms };

inline bool is_elementwise(Family f) {
  return f == Family::Adam || f == Family::Signum || f == Family::SignGD || f == Family::RMSProp;
}

inline bool is_spectral(Family f) {
  return f == Family::SpectralGD || f == Family::MuonSVD || f == Family::MuonNS;
}

/// Families that keep Kronecker-style factor state.
inline bool is_factored(Family f) { return !is_elementwise(f) && !is_spectral(f); }

struct GraftSpec {
  Family family = Family::RMSProp;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct BiasCorrection {
  bool first = true;
  bool second = true;
  bool third = true;
  bool factors = false;
};

struct OptimizerSpec {
  Family family = Family::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double beta3 = 0.0;
  double epsilon = 1e-8;
  std::optional<double> p;  // per-family default when unset
  Wiring wiring = Wiring::Standard;
  Scaling scaling = Scaling::None;
  GraftSpec graft;
  BiasCorrection bias;
  double weight_decay = 0.0;
  std::size_t precondition_frequency = 1;
  int ns_steps = 5;
  NsCoeffs ns_coeffs = kQuinticCoeffs;
  std::optional<double> factor_init;  // 0 for Shampoo-style, 1 for KL when unset
  bool centered_subtract_at_use = false;
  bool nesterov = false;
  bool basis_refresh = true;
};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Adam: return "adam";
    case Family::Signum: return "signum";
    case Family::SignGD: return "signgd";
    case Family::RMSProp: return "rmsprop";
    case Family::SpectralGD: return "spectralgd";
    case Family::MuonSVD: return "muon_svd";
    case Family::MuonNS: return "muon_ns";
    case Family::Shampoo: return "shampoo";
    case Family::KlShampoo: return "kl_shampoo";
    case Family::EShampoo: return "eshampoo";
    case Family::CenteredShampoo: return "centered_shampoo";
    case Family::OneSidedL: return "one_sided_l";
    case Family::OneSidedR: return "one_sided_r";
    case Family::FullMatrix: return "full_matrix";
    case Family::OrderN: return "order_n";
  }
  return "unknown";
}

inline const char* to_string(Wiring w) {
  switch (w) {
    case Wiring::Standard: return "standard";
    case Wiring::LaProp: return "laprop";
    case Wiring::BCOSm: return "bcosm";
  }
  return "unknown";
}

inline const char* to_string(Scaling s) {
  switch (s) {
    case Scaling::None: return "none";
    case Scaling::Graft: return "graft";
    case Scaling::Classic: return "classic";
    case Scaling::Moonlight: return "moonlight";
    case Scaling::Nuclear: return "nuclear";
    case Scaling::RmsRms: return "rms_rms";
  }
  return "unknown";
}

/// Exponent actually used: explicit p, else 1/4 two-sided, 1/2 one-sided/KL/full, 1/(2N) order-N.
inline double effective_p(const OptimizerSpec& s, std::size_t tensor_order = 2) {
  if (s.p) return *s.p;
  switch (s.family) {
    case Family::Shampoo:
    case Family::CenteredShampoo:
      return 0.25;
    case Family::OrderN:
      return 1.0 / (2.0 * static_cast<double>(std::max<std::size_t>(tensor_order, 1)));
    default:
      return 0.5;
  }
}

inline double effective_factor_init(const OptimizerSpec& s) {
  if (s.factor_init) return *s.factor_init;
  return s.family == Family::KlShampoo ? 1.0 : 0.0;
}

/// Throws InvalidConfig on an inconsistent spec; returns warnings for legal but unstable settings.
inline std::vector<std::string> validate(const OptimizerSpec& s) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  auto in_unit = [](double b) { return b >= 0.0 && b < 1.0; };
  if (!in_unit(s.beta1) || !in_unit(s.beta2) || !in_unit(s.beta3)) fail("betas must lie in [0, 1)");
  if (!(s.epsilon >= 0.0)) fail("epsilon must be nonnegative");
  if (s.p && !(*s.p > 0.0)) fail("p must be positive");
  if (!(s.weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (s.precondition_frequency < 1) fail("precondition_frequency must be >= 1");
  if (s.ns_steps < 1) fail("ns_steps must be >= 1");
  if (s.wiring == Wiring::LaProp && s.beta1 != 0.0) fail("laprop wiring requires beta1 = 0 (momentum goes through beta3)");
  if (s.wiring == Wiring::BCOSm && !(is_factored(s.family) || s.family == Family::Adam)) {
    fail("bcosm wiring requires a preconditioned family");
  }
  if (s.scaling == Scaling::Graft) {
    if (!is_elementwise(s.graft.family)) fail("graft base must be an element-wise family");
    if (!in_unit(s.graft.beta2) || !(s.graft.epsilon >= 0.0)) fail("invalid graft beta2/epsilon");
  }
  std::vector<std::string> warnings;
  if (s.wiring == Wiring::Standard && s.beta1 > 0.0 && s.beta2 == 0.0 &&
      (s.family == Family::Adam || is_factored(s.family))) {
    warnings.push_back(std::string(to_string(s.family)) + " with beta1 > 0 and beta2 = 0 is unstable");
  }
  return warnings;
}

struct OptimizerState {
  Matrix m;
  Matrix v;
  PreconditionerState precond;
  Matrix second_moment;        // element-wise families
  Matrix graft_second_moment;  // grafting base
  std::vector<Matrix> roots;   // cached inverse roots
  std::size_t root_age = 0;
  std::size_t step = 0;
  std::vector<std::size_t> tensor_shape;
};

inline OptimizerState init_state(const OptimizerSpec& spec, std::size_t rows, std::size_t cols,
                                 std::vector<std::size_t> tensor_shape = {}) {
  OptimizerState s;
  s.m = Matrix(rows, cols);
  s.v = Matrix(rows, cols);
  if (tensor_shape.empty()) tensor_shape = {rows, cols};
  s.tensor_shape = tensor_shape;
  const double init = effective_factor_init(spec);
  switch (spec.family) {
    case Family::Adam:
    case Family::RMSProp:
      s.second_moment = Matrix(rows, cols);
      break;
    case Family::Shampoo:
    case Family::CenteredShampoo:
    case Family::OneSidedL:
    case Family::OneSidedR:
      s.precond.factors = make_factor_pair(rows, cols, init);
      break;
    case Family::EShampoo:
      s.precond.factors = make_factor_pair(rows, cols, init);
      s.precond.correction = make_eig_correction(rows, cols);
      break;
    case Family::KlShampoo:
      s.precond.kl = make_kl_state(rows, cols, init, spec.epsilon);
      break;
    case Family::FullMatrix:
      s.precond.full = Matrix::identity(rows * cols) * init;
      break;
    case Family::OrderN:
      s.precond.order_n = make_order_n(tensor_shape, init);
      break;
    default:
      break;
  }
  if (spec.scaling == Scaling::Graft) s.graft_second_moment = Matrix(rows, cols);
  return s;
}

inline Matrix ema_update(const Matrix& buffer, const Matrix& x, double beta) {
  require_same_shape(buffer, x, "ema_update");
  return beta * buffer + (1.0 - beta) * x;
}

inline Matrix bias_corrected(const Matrix& buffer, double beta, std::size_t t, bool enabled) {
  if (!enabled) return buffer;
  return buffer * (1.0 / (1.0 - std::pow(beta, static_cast<double>(t))));
}

/// m / (sqrt(v) + eps); entries with m = 0 map to 0.
inline Matrix adam_direction(const Matrix& m, const Matrix& v, double epsilon) {
  require_same_shape(m, v, "adam_direction");
  Matrix out(m.rows(), m.cols());
  auto md = m.data();
  auto vd = v.data();
  auto od = out.data();
  for (std::size_t k = 0; k < md.size(); ++k) {
    od[k] = md[k] == 0.0 ? 0.0 : md[k] / (std::sqrt(std::max(vd[k], 0.0)) + epsilon);
  }
  return out;
}

inline Matrix sign_direction(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  auto md = m.data();
  auto od = out.data();
  for (std::size_t k = 0; k < md.size(); ++k) od[k] = md[k] > 0.0 ? 1.0 : (md[k] < 0.0 ? -1.0 : 0.0);
  return out;
}

enum class PolarMethod { SVD, NewtonSchulz };

inline Matrix spectral_direction(const Matrix& m, PolarMethod method = PolarMethod::SVD, int steps = 5,
                                 NsCoeffs coeffs = kQuinticCoeffs) {
  if (method == PolarMethod::SVD) return polar_svd(m);
  return polar_newton_schulz(m, steps, coeffs);
}

struct AdamDecomposition {
  Matrix adaptation;          // |m| / sqrt(v)
  Matrix sign;                // sign(m)
  Matrix adaptation_relvar;   // 1 / sqrt(1 + (v - m^2) / m^2)
};

inline AdamDecomposition adam_decompose(const Matrix& m, const Matrix& v) {
  require_same_shape(m, v, "adam_decompose");
  AdamDecomposition out{Matrix(m.rows(), m.cols()), sign_direction(m), Matrix(m.rows(), m.cols())};
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double mk = m.data()[k];
    const double vk = v.data()[k];
    if (mk == 0.0) continue;
    if (!(vk > 0.0)) throw Error(ErrorCode::ZeroVariance, "adam_decompose: zero second moment at nonzero m");
    out.adaptation.data()[k] = std::abs(mk) / std::sqrt(vk);
    out.adaptation_relvar.data()[k] = 1.0 / std::sqrt(1.0 + (vk - mk * mk) / (mk * mk));
  }
  return out;
}

struct ShampooDecomposition {
  Matrix left_adapt;   // L^{-p} (M M^T)^{1/4}
  Matrix polar;        // U V^T
  Matrix right_adapt;  // (M^T M)^{1/4} R^{-p}
};

inline ShampooDecomposition shampoo_decompose(const Matrix& m, const Matrix& left, const Matrix& right, double p,
                                              double epsilon = 0.0) {
  const Svd s = svd(m);
  const std::size_t k = s.singular_values.size();
  if (k == 0 || !(s.singular_values[k - 1] > 1e-12 * static_cast<double>(std::max(m.rows(), m.cols())) *
                                                  s.singular_values[0])) {
    throw Error(ErrorCode::RankDeficient, "shampoo_decompose: direction is not full rank");
  }
  return ShampooDecomposition{stabilized_inverse_root(left, epsilon, p) * psd_power(gram_rows(m), 0.25),
                              polar_svd(m),
                              psd_power(gram_cols(m), 0.25) * stabilized_inverse_root(right, epsilon, p)};
}

/// Magnitude control: graft norm matching or a fixed shape-dependent factor.
/// `source` feeds the nuclear-norm scaling (defaults to the direction itself).
inline Matrix graft_and_scale(const Matrix& direction, const OptimizerSpec& spec, const Matrix* graft_update,
                              std::size_t rows, std::size_t cols, const Matrix* source = nullptr) {
  const double m = static_cast<double>(rows);
  const double n = static_cast<double>(cols);
  switch (spec.scaling) {
    case Scaling::None:
      return direction;
    case Scaling::Graft: {
      if (!graft_update) throw Error(ErrorCode::StateMissing, "graft_and_scale: graft update missing");
      const double gn = frobenius_norm(*graft_update);
      if (gn == 0.0) return Matrix(direction.rows(), direction.cols());
      const double dn = frobenius_norm(direction);
      if (dn == 0.0) throw Error(ErrorCode::ZeroDirection, "graft_and_scale: zero direction with nonzero graft");
      return direction * (gn / dn);
    }
    case Scaling::Classic:
      return direction * std::sqrt(std::max(1.0, m / n));
    case Scaling::Moonlight:
      return direction * (0.2 * std::sqrt(std::max(m, n)));
    case Scaling::Nuclear:
      return direction * matrix_norms(source ? *source : direction).nuclear;
    case Scaling::RmsRms:
      return direction * std::sqrt(m / n);
  }
  return direction;
}

struct StepResult {
  Matrix theta;
  Matrix update;  // v/c3 + wd * theta, so theta' = theta - lr * update
};

namespace detail {

inline PreconditionerKind kind_of(Family f) {
  switch (f) {
    case Family::OneSidedL: return PreconditionerKind::OneSidedLeft;
    case Family::OneSidedR: return PreconditionerKind::OneSidedRight;
    case Family::FullMatrix: return PreconditionerKind::FullMatrix;
    case Family::OrderN: return PreconditionerKind::OrderN;
    case Family::EShampoo: return PreconditionerKind::EigenvalueCorrected;
    default: return PreconditionerKind::TwoSided;
  }
}

inline double bias_divisor(double beta, std::size_t t, bool enabled) {
  return enabled ? 1.0 - std::pow(beta, static_cast<double>(t)) : 1.0;
}

inline void update_factors(const OptimizerSpec& spec, OptimizerState& s, const Matrix& feed, const Matrix& m_hat) {
  PreconditionerState& pc = s.precond;
  switch (spec.family) {
    case Family::Shampoo:
    case Family::OneSidedL:
    case Family::OneSidedR:
      pc.factors = shampoo_factor_update(*pc.factors, feed, spec.beta2);
      break;
    case Family::EShampoo:
      pc.factors = shampoo_factor_update(*pc.factors, feed, spec.beta2);
      pc.correction = eshampoo_correction_update(*pc.correction, *pc.factors, feed, spec.beta2,
                                                 spec.basis_refresh || pc.correction->step == 0);
      pc.correction_bias = bias_divisor(spec.beta2, s.step, spec.bias.second);
      break;
    case Family::CenteredShampoo:
      if (spec.centered_subtract_at_use) {
        pc.factors = shampoo_factor_update(*pc.factors, feed, spec.beta2);
      } else {
        pc.factors = centered_factor_update(*pc.factors, feed, m_hat, spec.beta2);
      }
      break;
    case Family::KlShampoo:
      pc.kl = kl_factor_update(*pc.kl, feed, spec.beta2, spec.epsilon, spec.precondition_frequency);
      break;
    case Family::FullMatrix:
      pc.full = full_matrix_update(*pc.full, feed, spec.beta2);
      break;
    case Family::OrderN:
      pc.order_n = order_n_factor_update(*pc.order_n, Tensor{s.tensor_shape, feed.values()}, spec.beta2);
      break;
    default:
      break;
  }
}

/// Factor state as seen by the root computation (bias correction, centering at use).
inline PreconditionerState rooted_view(const OptimizerSpec& spec, const OptimizerState& s, const Matrix& m_hat) {
  PreconditionerState view = s.precond;
  const double c2 = bias_divisor(spec.beta2, s.step, spec.bias.factors);
  auto rescale = [&](FactorPair& f) {
    if (c2 != 1.0) {
      f.left *= 1.0 / c2;
      f.right *= 1.0 / c2;
    }
  };
  if (view.factors) rescale(*view.factors);
  if (view.kl) rescale(view.kl->factors);
  if (view.full && c2 != 1.0) *view.full *= 1.0 / c2;
  if (view.order_n && c2 != 1.0)
    for (Matrix& f : view.order_n->factors) f *= 1.0 / c2;
  if (spec.family == Family::CenteredShampoo && spec.centered_subtract_at_use) {
    view.factors->left -= gram_rows(m_hat);
    view.factors->right -= gram_cols(m_hat);
  }
  return view;
}

inline Matrix elementwise_update(Family family, const Matrix& d, const Matrix& second_moment, double c2,
                                 double epsilon) {
  switch (family) {
    case Family::Adam:
    case Family::RMSProp:
      return adam_direction(d, second_moment * (1.0 / c2), epsilon);
    default:
      return sign_direction(d);
  }
}

}  // namespace detail

/// One optimizer step on a single matrix-shaped parameter.
inline StepResult step(const OptimizerSpec& spec, OptimizerState& s, const Matrix& theta, const Matrix& grad,
                       double lr) {
  require_same_shape(theta, grad, "step");
  require_same_shape(s.m, grad, "step: state");
  require_finite(grad, "step: gradient");
  ++s.step;
  const std::size_t t = s.step;

  s.m = ema_update(s.m, grad, spec.beta1);
  const double c1 = detail::bias_divisor(spec.beta1, t, spec.bias.first);
  Matrix m_hat = s.m * (1.0 / c1);
  if (spec.nesterov) m_hat = (spec.beta1 * s.m + (1.0 - spec.beta1) * grad) * (1.0 / c1);

  const bool raw_input = spec.family == Family::RMSProp || spec.family == Family::SignGD ||
                         spec.family == Family::SpectralGD;
  const Matrix& d = raw_input ? grad : m_hat;
  const Matrix& feed = spec.wiring == Wiring::BCOSm ? m_hat : grad;

  // Preconditioner update and direction.
  Matrix direction;
  if (is_elementwise(spec.family)) {
    if (!s.second_moment.empty()) s.second_moment = ema_update(s.second_moment, hadamard(feed, feed), spec.beta2);
    const double c2 = detail::bias_divisor(spec.beta2, t, spec.bias.second);
    direction = detail::elementwise_update(spec.family, d, s.second_moment, c2, spec.epsilon);
  } else if (is_spectral(spec.family)) {
    const auto method = spec.family == Family::MuonNS ? PolarMethod::NewtonSchulz : PolarMethod::SVD;
    direction = (method == PolarMethod::NewtonSchulz && frobenius_norm(d) == 0.0)
                    ? Matrix(d.rows(), d.cols())
                    : spectral_direction(d, method, spec.ns_steps, spec.ns_coeffs);
  } else {
    detail::update_factors(spec, s, feed, m_hat);
    const auto kind = detail::kind_of(spec.family);
    const PreconditionerState view = detail::rooted_view(spec, s, m_hat);
    const double p = effective_p(spec, s.tensor_shape.size());
    if (s.roots.empty() || s.root_age >= spec.precondition_frequency ||
        kind == PreconditionerKind::EigenvalueCorrected) {
      s.roots = compute_roots(kind, view, p, spec.epsilon);
      s.root_age = 0;
    }
    ++s.root_age;
    direction = apply_roots(kind, view, s.roots, d, spec.epsilon);
  }

  // Magnitude.
  Matrix u;
  if (spec.scaling == Scaling::Graft) {
    s.graft_second_moment = ema_update(s.graft_second_moment, hadamard(feed, feed), spec.graft.beta2);
    const double cg = detail::bias_divisor(spec.graft.beta2, t, spec.bias.second);
    const Matrix graft_update =
        detail::elementwise_update(spec.graft.family, d, s.graft_second_moment, cg, spec.graft.epsilon);
    u = graft_and_scale(direction, spec, &graft_update, grad.rows(), grad.cols(), &d);
  } else {
    u = graft_and_scale(direction, spec, nullptr, grad.rows(), grad.cols(), &d);
  }

  s.v = ema_update(s.v, u, spec.beta3);
  const double c3 = detail::bias_divisor(spec.beta3, t, spec.bias.third);
  Matrix update = s.v * (1.0 / c3);
  if (spec.weight_decay != 0.0) update += spec.weight_decay * theta;
  Matrix next = theta - lr * update;
  return StepResult{std::move(next), std::move(update)};
}

}  // namespace matopt
