#pragma once

// Kronecker-factored preconditioner state: factor accumulation and root application.

#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "matopt/linalg.hpp"

namespace matopt {

/// Dense row-major tensor of arbitrary order.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
  }
  std::size_t order() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
};

struct FactorPair {
  Matrix left;
  Matrix right;
  std::size_t step = 0;
};

struct KlState {
  FactorPair factors;
  Matrix cached_left_root;   // (L + eps I)^{-1/2}
  Matrix cached_right_root;  // (R + eps I)^{-1/2}
  std::size_t staleness = 0;
};

struct EigCorrectionState {
  Matrix left_basis;
  Matrix right_basis;
  Matrix corrected_second_moment;
  std::size_t step = 0;
};

struct OrderNFactors {
  std::vector<Matrix> factors;
  std::vector<std::size_t> shape;
  std::size_t step = 0;
};

/// eps > 0: stabilized root. eps == 0: root on the numerical range (pseudo-inverse root).
inline Matrix damped_inverse_root(const Matrix& a, double epsilon, double p) {
  if (epsilon > 0.0) return stabilized_inverse_root(a, epsilon, p);
  return pseudo_inverse_root(a, p);
}

inline FactorPair make_factor_pair(std::size_t m, std::size_t n, double init = 0.0) {
  return FactorPair{Matrix::identity(m) * init, Matrix::identity(n) * init, 0};
}

inline void require_factor_shape(const FactorPair& s, const Matrix& g, const char* ctx) {
  if (s.left.rows() != g.rows() || s.right.rows() != g.cols()) {
    throw Error(ErrorCode::DimensionMismatch, std::string(ctx) + ": gradient " + shape_string(g) +
                                                  " vs factors " + shape_string(s.left) + ", " + shape_string(s.right));
  }
}

inline FactorPair shampoo_factor_update(FactorPair s, const Matrix& g, double beta2) {
  require_factor_shape(s, g, "shampoo_factor_update");
  require_finite(g, "shampoo_factor_update: gradient");
  s.left = beta2 * s.left + (1.0 - beta2) * gram_rows(g);
  s.right = beta2 * s.right + (1.0 - beta2) * gram_cols(g);
  ++s.step;
  return s;
}

/// L += (1-b)(GG^T - MM^T), R analogue. Not PSD in general; clamped when rooted.
inline FactorPair centered_factor_update(FactorPair s, const Matrix& g, const Matrix& m_ema, double beta2) {
  require_factor_shape(s, g, "centered_factor_update");
  require_same_shape(g, m_ema, "centered_factor_update");
  require_finite(g, "centered_factor_update: gradient");
  s.left = beta2 * s.left + (1.0 - beta2) * (gram_rows(g) - gram_rows(m_ema));
  s.right = beta2 * s.right + (1.0 - beta2) * (gram_cols(g) - gram_cols(m_ema));
  ++s.step;
  return s;
}

inline KlState make_kl_state(std::size_t m, std::size_t n, double init, double epsilon) {
  KlState s;
  s.factors = make_factor_pair(m, n, init);
  s.cached_left_root = damped_inverse_root(s.factors.left, epsilon, 0.5);
  s.cached_right_root = damped_inverse_root(s.factors.right, epsilon, 0.5);
  return s;
}

/// Each factor accumulates the gradient whitened by the other factor's cached root.
inline KlState kl_factor_update(KlState s, const Matrix& g, double beta2, double epsilon,
                                std::size_t frequency = 1) {
  require_factor_shape(s.factors, g, "kl_factor_update");
  require_finite(g, "kl_factor_update: gradient");
  if (s.cached_left_root.empty() || s.cached_right_root.empty()) {
    throw Error(ErrorCode::StateMissing, "kl_factor_update: cached roots missing");
  }
  const Matrix gl = g * s.cached_right_root;
  const Matrix gr = s.cached_left_root * g;
  s.factors.left = beta2 * s.factors.left + (1.0 - beta2) * gram_rows(gl);
  s.factors.right = beta2 * s.factors.right + (1.0 - beta2) * gram_cols(gr);
  ++s.factors.step;
  if (++s.staleness >= std::max<std::size_t>(frequency, 1)) {
    s.cached_left_root = damped_inverse_root(s.factors.left, epsilon, 0.5);
    s.cached_right_root = damped_inverse_root(s.factors.right, epsilon, 0.5);
    s.staleness = 0;
  }
  return s;
}

/// A <- b A + (1-b) vec(g) vec(g)^T
inline Matrix full_matrix_update(const Matrix& a, const Matrix& g, double beta2) {
  const Matrix gv = vec(g);
  if (a.rows() != gv.rows() || !a.is_square()) {
    throw Error(ErrorCode::DimensionMismatch, "full_matrix_update: state " + shape_string(a) +
                                                  " vs gradient of size " + std::to_string(gv.rows()));
  }
  return beta2 * a + (1.0 - beta2) * gram_rows(gv);
}

namespace detail {

struct ModeView {
  std::size_t pre = 1, dim = 1, post = 1;
};

inline ModeView mode_view(const std::vector<std::size_t>& shape, std::size_t k) {
  ModeView v;
  for (std::size_t i = 0; i < k; ++i) v.pre *= shape[i];
  v.dim = shape[k];
  for (std::size_t i = k + 1; i < shape.size(); ++i) v.post *= shape[i];
  return v;
}

}  // namespace detail

/// G_(k) G_(k)^T for the mode-k unfolding.
inline Matrix mode_gram(const Tensor& g, std::size_t k) {
  const auto v = detail::mode_view(g.shape, k);
  Matrix out(v.dim, v.dim);
  for (std::size_t a = 0; a < v.pre; ++a) {
    for (std::size_t i = 0; i < v.dim; ++i) {
      for (std::size_t j = i; j < v.dim; ++j) {
        const double* gi = &g.data[(a * v.dim + i) * v.post];
        const double* gj = &g.data[(a * v.dim + j) * v.post];
        double acc = 0.0;
        for (std::size_t b = 0; b < v.post; ++b) acc += gi[b] * gj[b];
        out(i, j) += acc;
      }
    }
  }
  for (std::size_t i = 0; i < v.dim; ++i)
    for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
  return out;
}

/// Y = X x_k A, i.e. A applied to every mode-k fiber.
inline Tensor mode_product(const Tensor& x, const Matrix& a, std::size_t k) {
  const auto v = detail::mode_view(x.shape, k);
  if (a.cols() != v.dim) throw Error(ErrorCode::ShapeMismatch, "mode_product: factor does not match mode size");
  Tensor y = x;
  y.shape[k] = a.rows();
  y.data.assign(v.pre * a.rows() * v.post, 0.0);
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < v.dim; ++j) {
        const double aij = a(i, j);
        if (aij == 0.0) continue;
        const double* src = &x.data[(p * v.dim + j) * v.post];
        double* dst = &y.data[(p * a.rows() + i) * v.post];
        for (std::size_t b = 0; b < v.post; ++b) dst[b] += aij * src[b];
      }
  return y;
}

inline OrderNFactors make_order_n(const std::vector<std::size_t>& shape, double init = 0.0) {
  OrderNFactors s;
  s.shape = shape;
  for (std::size_t d : shape) s.factors.push_back(Matrix::identity(d) * init);
  return s;
}

inline OrderNFactors order_n_factor_update(OrderNFactors s, const Tensor& g, double beta2) {
  if (g.shape != s.shape) throw Error(ErrorCode::ShapeMismatch, "order_n_factor_update: tensor shape mismatch");
  for (double x : g.data)
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "order_n_factor_update: gradient");
  for (std::size_t k = 0; k < s.shape.size(); ++k) {
    s.factors[k] = beta2 * s.factors[k] + (1.0 - beta2) * mode_gram(g, k);
  }
  ++s.step;
  return s;
}

inline EigCorrectionState make_eig_correction(std::size_t m, std::size_t n) {
  return EigCorrectionState{Matrix::identity(m), Matrix::identity(n), Matrix(m, n), 0};
}

/// EMA of the squared gradient projected onto the factor eigenbases.
inline EigCorrectionState eshampoo_correction_update(EigCorrectionState s, const FactorPair& factors, const Matrix& g,
                                                     double beta2, bool basis_refresh) {
  require_factor_shape(factors, g, "eshampoo_correction_update");
  require_same_shape(s.corrected_second_moment, g, "eshampoo_correction_update");
  if (basis_refresh) {
    s.left_basis = sym_eig(factors.left).eigenvectors;
    s.right_basis = sym_eig(factors.right).eigenvectors;
  }
  const Matrix proj = s.left_basis.transposed() * g * s.right_basis;
  s.corrected_second_moment = beta2 * s.corrected_second_moment + (1.0 - beta2) * hadamard(proj, proj);
  ++s.step;
  return s;
}

enum class PreconditionerKind { TwoSided, OneSidedLeft, OneSidedRight, FullMatrix, OrderN, EigenvalueCorrected };

struct PreconditionerState {
  std::optional<FactorPair> factors;
  std::optional<KlState> kl;
  std::optional<Matrix> full;
  std::optional<OrderNFactors> order_n;
  std::optional<EigCorrectionState> correction;
  double correction_bias = 1.0;  // divisor applied to the corrected second moment

  const FactorPair* pair() const {
    if (factors) return &*factors;
    if (kl) return &kl->factors;
    return nullptr;
  }
};

/// Inverse roots of every factor the kind uses.
inline std::vector<Matrix> compute_roots(PreconditionerKind kind, const PreconditionerState& s, double p,
                                         double epsilon) {
  auto need_pair = [&]() -> const FactorPair& {
    const FactorPair* fp = s.pair();
    if (!fp) throw Error(ErrorCode::StateMissing, "precondition: factor pair missing");
    return *fp;
  };
  switch (kind) {
    case PreconditionerKind::TwoSided: {
      const FactorPair& f = need_pair();
      return {damped_inverse_root(f.left, epsilon, p), damped_inverse_root(f.right, epsilon, p)};
    }
    case PreconditionerKind::OneSidedLeft:
      return {damped_inverse_root(need_pair().left, epsilon, p)};
    case PreconditionerKind::OneSidedRight:
      return {damped_inverse_root(need_pair().right, epsilon, p)};
    case PreconditionerKind::FullMatrix:
      if (!s.full) throw Error(ErrorCode::StateMissing, "precondition: full-matrix state missing");
      return {damped_inverse_root(*s.full, epsilon, p)};
    case PreconditionerKind::OrderN: {
      if (!s.order_n) throw Error(ErrorCode::StateMissing, "precondition: order-N factors missing");
      std::vector<Matrix> out;
      for (const Matrix& f : s.order_n->factors) out.push_back(damped_inverse_root(f, epsilon, p));
      return out;
    }
    case PreconditionerKind::EigenvalueCorrected:
      if (!s.correction) throw Error(ErrorCode::StateMissing, "precondition: correction state missing");
      return {};
  }
  return {};
}

/// Applies precomputed roots to a matrix-shaped direction.
inline Matrix apply_roots(PreconditionerKind kind, const PreconditionerState& s, const std::vector<Matrix>& roots,
                          const Matrix& m, double epsilon) {
  switch (kind) {
    case PreconditionerKind::TwoSided:
      return roots.at(0) * m * roots.at(1);
    case PreconditionerKind::OneSidedLeft:
      return roots.at(0) * m;
    case PreconditionerKind::OneSidedRight:
      return m * roots.at(0);
    case PreconditionerKind::FullMatrix: {
      if (roots.at(0).rows() != m.size()) throw Error(ErrorCode::DimensionMismatch, "precondition: full-matrix size");
      return unvec(roots[0] * vec(m), m.rows(), m.cols());
    }
    case PreconditionerKind::OrderN: {
      if (!s.order_n) throw Error(ErrorCode::StateMissing, "precondition: order-N factors missing");
      const auto& shape = s.order_n->shape;
      const std::size_t numel = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
      if (numel != m.size()) throw Error(ErrorCode::DimensionMismatch, "precondition: order-N size");
      Tensor t{shape, std::vector<double>(m.data().begin(), m.data().end())};
      for (std::size_t k = 0; k < shape.size(); ++k) t = mode_product(t, roots.at(k), k);
      return Matrix(m.rows(), m.cols(), std::move(t.data));
    }
    case PreconditionerKind::EigenvalueCorrected: {
      if (!s.correction) throw Error(ErrorCode::StateMissing, "precondition: correction state missing");
      const EigCorrectionState& c = *s.correction;
      require_same_shape(c.corrected_second_moment, m, "precondition: eigenvalue-corrected");
      Matrix proj = c.left_basis.transposed() * m * c.right_basis;
      for (std::size_t i = 0; i < proj.rows(); ++i)
        for (std::size_t j = 0; j < proj.cols(); ++j)
        {
          const double denom = std::sqrt(c.corrected_second_moment(i, j) / s.correction_bias) + epsilon;
          proj(i, j) = denom > 0.0 ? proj(i, j) / denom : 0.0;
        }
      return c.left_basis * proj * c.right_basis.transposed();
    }
  }
  return m;
}

inline Matrix precondition(PreconditionerKind kind, const PreconditionerState& s, const Matrix& m, double p,
                           double epsilon) {
  return apply_roots(kind, s, compute_roots(kind, s, p, epsilon), m, epsilon);
}

}  // namespace matopt
