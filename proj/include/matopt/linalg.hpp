#pragma once

// Dense kernels: symmetric eigendecomposition, matrix roots, SVD, polar factors.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "matopt/matrix.hpp"

namespace matopt {

struct SymEig {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // columns
};

struct Svd {
  Matrix u;                          // m x k
  std::vector<double> singular_values;  // descending
  Matrix v;                          // n x k
};

struct MatrixNorms {
  double frobenius = 0.0;
  double spectral = 0.0;
  double nuclear = 0.0;
  double rms_rms = 0.0;
};

/// Cyclic Jacobi on (A + A^T)/2.
inline SymEig sym_eig(const Matrix& a) {
  require_square(a, "sym_eig");
  require_finite(a, "sym_eig: input");
  const std::size_t n = a.rows();
  Matrix s = symmetrized(a);
  Matrix q = Matrix::identity(n);

  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t r = p + 1; r < n; ++r) {
        const double apr = s(p, r);
        if (apr == 0.0) continue;
        const double app = s(p, p);
        const double arr = s(r, r);
        if (std::abs(apr) <= 1e-16 * std::sqrt(std::abs(app * arr)) || std::abs(apr) < 1e-300) {
          s(p, r) = s(r, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (arr - app) / (2.0 * apr);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p);
          const double skr = s(k, r);
          s(k, p) = c * skp - sn * skr;
          s(k, r) = sn * skp + c * skr;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k);
          const double srk = s(r, k);
          s(p, k) = c * spk - sn * srk;
          s(r, k) = sn * spk + c * srk;
        }
        s(p, r) = s(r, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double qkp = q(k, p);
          const double qkr = q(k, r);
          q(k, p) = c * qkp - sn * qkr;
          q(k, r) = sn * qkp + c * qkr;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return s(i, i) < s(j, j); });
  SymEig out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = s(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = q(i, order[k]);
  }
  return out;
}

/// Q f(Λ) Q^T
template <class F>
Matrix spectral_map(const SymEig& e, F&& f) {
  const std::size_t n = e.eigenvalues.size();
  std::vector<double> fl(n);
  for (std::size_t k = 0; k < n; ++k) fl[k] = f(e.eigenvalues[k]);
  Matrix out(n, n);
  const Matrix& q = e.eigenvectors;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += q(i, k) * fl[k] * q(j, k);
      out(i, j) = acc;
      out(j, i) = acc;
    }
  }
  return out;
}

/// (max(Λ,0) + εI)^{-p}
inline Matrix stabilized_inverse_root(const Matrix& a, double epsilon, double p) {
  if (epsilon < 0.0 || !(p > 0.0)) throw Error(ErrorCode::InvalidConfig, "stabilized_inverse_root: need epsilon >= 0, p > 0");
  const SymEig e = sym_eig(a);
  if (epsilon == 0.0) {
    for (double l : e.eigenvalues) {
      if (std::max(l, 0.0) <= 1e-300) {
        throw Error(ErrorCode::SingularWithoutDamping, "stabilized_inverse_root: zero eigenvalue with epsilon = 0");
      }
    }
  }
  return spectral_map(e, [&](double l) { return std::pow(std::max(l, 0.0) + epsilon, -p); });
}

/// Inverse root on the numerical range; eigenvalues <= rtol * λmax map to 0.
inline Matrix pseudo_inverse_root(const Matrix& a, double p, double rtol = -1.0) {
  const SymEig e = sym_eig(a);
  if (rtol < 0.0) rtol = 1e-12 * static_cast<double>(std::max<std::size_t>(a.rows(), 1));
  const double lmax = e.eigenvalues.empty() ? 0.0 : std::max(e.eigenvalues.back(), 0.0);
  const double cut = rtol * lmax;
  return spectral_map(e, [&](double l) { return (lmax > 0.0 && l > cut) ? std::pow(l, -p) : 0.0; });
}

/// max(Λ,0)^p for p > 0.
inline Matrix psd_power(const Matrix& a, double p) {
  const SymEig e = sym_eig(a);
  return spectral_map(e, [&](double l) { return l > 0.0 ? std::pow(l, p) : 0.0; });
}

namespace detail {

// One-sided Jacobi for m >= n.
inline Svd svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);

  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= 1e-16 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sig(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += w(i, j) * w(i, j);
    sig[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sig[i] > sig[j]; });

  Svd out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = n == 0 ? 0.0 : sig[order[0]];
  const double tiny = std::max(smax * 1e-15 * static_cast<double>(m), 1e-300);
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = sig[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v(i, j);
    if (sig[j] > tiny) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w(i, j) / sig[j];
      filled[k] = true;
    }
  }
  // Complete U for null singular values by Gram-Schmidt on the standard basis.
  std::size_t basis = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    for (; basis < m; ++basis) {
      std::vector<double> cand(m, 0.0);
      cand[basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!filled[c]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += out.u(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.u(i, c);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = cand[i] / nrm;
        filled[k] = true;
        ++basis;
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Reduced SVD, k = min(m, n).
inline Svd svd(const Matrix& a) {
  require_finite(a, "svd: input");
  if (a.rows() >= a.cols()) return detail::svd_tall(a);
  Svd t = detail::svd_tall(a.transposed());
  return Svd{std::move(t.v), std::move(t.singular_values), std::move(t.u)};
}

/// U V^T over the numerical range of a.
inline Matrix polar_svd(const Matrix& a) {
  const Svd s = svd(a);
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  const std::size_t k = s.singular_values.size();
  Matrix out(m, n);
  if (k == 0) return out;
  const double cut = 1e-12 * static_cast<double>(std::max(m, n)) * s.singular_values[0];
  for (std::size_t c = 0; c < k; ++c) {
    if (!(s.singular_values[c] > cut)) continue;
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = s.u(i, c);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += ui * s.v(j, c);
    }
  }
  return out;
}

using NsCoeffs = std::array<double, 3>;
inline constexpr NsCoeffs kQuinticCoeffs{3.4445, -4.775, 2.0315};

/// Frobenius-normalized quintic Newton-Schulz iteration.
inline Matrix polar_newton_schulz(const Matrix& a, int steps = 5, NsCoeffs coeffs = kQuinticCoeffs) {
  require_finite(a, "polar_newton_schulz: input");
  if (steps < 1) throw Error(ErrorCode::InvalidConfig, "polar_newton_schulz: steps must be >= 1");
  const double nrm = frobenius_norm(a);
  if (nrm == 0.0) throw Error(ErrorCode::ZeroMatrix, "polar_newton_schulz: zero input");
  const bool flip = a.rows() > a.cols();
  Matrix x = (flip ? a.transposed() : a) * (1.0 / nrm);
  const auto [alpha, beta, gamma] = coeffs;
  for (int s = 0; s < steps; ++s) {
    const Matrix g = gram_rows(x);
    const Matrix poly = beta * g + gamma * matmul(g, g);
    x = alpha * x + matmul(poly, x);
  }
  return flip ? x.transposed() : x;
}

/// V Σ^+ U^T
inline Matrix pseudo_inverse(const Matrix& a, double rtol = -1.0) {
  const Svd s = svd(a);
  if (rtol < 0.0) rtol = 1e-12 * static_cast<double>(std::max(a.rows(), a.cols()));
  Matrix out(a.cols(), a.rows());
  if (s.singular_values.empty()) return out;
  const double cut = rtol * s.singular_values[0];
  for (std::size_t c = 0; c < s.singular_values.size(); ++c) {
    const double sv = s.singular_values[c];
    if (!(sv > cut)) continue;
    for (std::size_t i = 0; i < a.cols(); ++i)
      for (std::size_t j = 0; j < a.rows(); ++j) out(i, j) += s.v(i, c) * s.u(j, c) / sv;
  }
  return out;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  require_finite(a, "kron: a");
  require_finite(b, "kron: b");
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

/// rms_rms = sqrt(n/m) * spectral for an m x n matrix.
inline MatrixNorms matrix_norms(const Matrix& a) {
  const Svd s = svd(a);
  MatrixNorms out;
  out.frobenius = frobenius_norm(a);
  out.spectral = s.singular_values.empty() ? 0.0 : s.singular_values[0];
  for (double x : s.singular_values) out.nuclear += x;
  if (a.rows() > 0) out.rms_rms = std::sqrt(static_cast<double>(a.cols()) / static_cast<double>(a.rows())) * out.spectral;
  return out;
}

}  // namespace matopt
