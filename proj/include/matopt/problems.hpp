#pragma once

// Synthetic objectives with exact gradients, and a matrix-Gaussian gradient noise model.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "matopt/linalg.hpp"

namespace matopt {

// ---------------------------------------------------------------------------
// Counter-based random numbers

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream key for (seed, a, b).
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

/// Stateless generator: draw k of stream `key` is a pure function of (key, k).
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform in (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix out(rows, cols);
    for (double& x : out.data()) x = scale * normal();
    return out;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Haar-distributed orthogonal matrix (Gram-Schmidt on a Gaussian matrix).
inline Matrix random_orthogonal(Rng& rng, std::size_t n) {
  Matrix q = rng.normal_matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
      }
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= nrm;
  }
  return q;
}

/// n values log-spaced from 1 down to 1/cond.
inline std::vector<double> log_spectrum(std::size_t n, double cond) {
  std::vector<double> out(n, 1.0);
  for (std::size_t i = 0; i < n && n > 1; ++i) {
    out[i] = std::pow(cond, -static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluators

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

struct LossGrads {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

/// 0.5 theta^T H theta over the flattened parameter.
inline LossGrad eval_quadratic(const Matrix& h, const Matrix& theta) {
  require_square(h, "eval_quadratic");
  if (h.rows() != theta.size()) throw Error(ErrorCode::DimensionMismatch, "eval_quadratic: H does not match theta");
  const Matrix flat(theta.size(), 1, theta.values());
  const Matrix hx = h * flat;
  double loss = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) loss += flat.data()[i] * hx.data()[i];
  return LossGrad{0.5 * loss, hx.reshaped(theta.rows(), theta.cols())};
}

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Mean binary cross-entropy with logits X w; labels in {0, 1}.
inline LossGrad eval_logistic(const Matrix& x, const std::vector<int>& y, const Matrix& w) {
  if (w.size() != x.cols() || y.size() != x.rows()) throw Error(ErrorCode::DimensionMismatch, "eval_logistic");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Matrix grad(w.rows(), w.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += x(i, j) * w.data()[j];
    loss += softplus(z) - (y[i] ? z : 0.0);
    const double r = sigmoid(z) - (y[i] ? 1.0 : 0.0);
    for (std::size_t j = 0; j < d; ++j) grad.data()[j] += r * x(i, j);
  }
  const double inv = 1.0 / static_cast<double>(n);
  grad *= inv;
  return LossGrad{loss * inv, grad};
}

/// Two-layer tanh network, params {W1 (h x d), b1 (h x 1), W2 (c x h), b2 (c x 1)}, softmax cross-entropy.
inline LossGrads eval_mlp(const std::vector<Matrix>& params, const Matrix& x, const std::vector<int>& y) {
  if (params.size() != 4) throw Error(ErrorCode::ShapeMismatch, "eval_mlp: expected 4 parameters");
  const Matrix& w1 = params[0];
  const Matrix& b1 = params[1];
  const Matrix& w2 = params[2];
  const Matrix& b2 = params[3];
  const std::size_t n = x.rows(), d = x.cols(), h = w1.rows(), c = w2.rows();
  if (w1.cols() != d || b1.rows() != h || b1.cols() != 1 || w2.cols() != h || b2.rows() != c || b2.cols() != 1 ||
      y.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "eval_mlp: inconsistent shapes");
  }
  Matrix act = x * w1.transposed();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) act(i, j) = std::tanh(act(i, j) + b1(j, 0));
  Matrix logits = act * w2.transposed();
  const double inv = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  Matrix dlogits(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      logits(i, k) += b2(k, 0);
      mx = std::max(mx, logits(i, k));
    }
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(logits(i, k) - mx);
    const double lse = mx + std::log(z);
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= c) throw Error(ErrorCode::ShapeMismatch, "eval_mlp: bad label");
    loss += lse - logits(i, y[i]);
    for (std::size_t k = 0; k < c; ++k) {
      dlogits(i, k) = (std::exp(logits(i, k) - lse) - (static_cast<int>(k) == y[i] ? 1.0 : 0.0)) * inv;
    }
  }
  LossGrads out;
  out.loss = loss * inv;
  Matrix dw2 = dlogits.transposed() * act;
  Matrix db2(c, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) db2(k, 0) += dlogits(i, k);
  Matrix dz = dlogits * w2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) dz(i, j) *= 1.0 - act(i, j) * act(i, j);
  Matrix dw1 = dz.transposed() * x;
  Matrix db1(h, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) db1(j, 0) += dz(i, j);
  out.grads = {std::move(dw1), std::move(db1), std::move(dw2), std::move(db2)};
  return out;
}

// ---------------------------------------------------------------------------
// Problems

/// Parameters are stored as matrices: order >= 2 shapes fold trailing dims into columns, 1D shapes are n x 1.
inline std::pair<std::size_t, std::size_t> storage_shape(const std::vector<std::size_t>& dims) {
  if (dims.empty()) return {1, 1};
  std::size_t cols = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) cols *= dims[i];
  return {dims[0], cols};
}

class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::vector<std::size_t>> parameter_shapes() const = 0;
  virtual std::vector<Matrix> initial_params() const = 0;
  virtual LossGrads evaluate(const std::vector<Matrix>& params) const = 0;

  double loss_at(const std::vector<Matrix>& params) const { return evaluate(params).loss; }
  std::vector<Matrix> grad_at(const std::vector<Matrix>& params) const { return evaluate(params).grads; }

  /// Exact gradient plus isotropic Gaussian noise; parameter k draws from stream derive(seed, step, k).
  std::vector<Matrix> grad_at(const std::vector<Matrix>& params, std::uint64_t seed, std::uint64_t step) const {
    std::vector<Matrix> g = grad_at(params);
    if (noise_std_ > 0.0) {
      for (std::size_t k = 0; k < g.size(); ++k) {
        Rng rng(derive(seed, step, k));
        for (double& x : g[k].data()) x += noise_std_ * rng.normal();
      }
    }
    return g;
  }

  double noise_std() const { return noise_std_; }
  void set_noise_std(double s) { noise_std_ = s; }

 protected:
  double noise_std_ = 0.0;
};

/// 0.5 vec(W)^T H vec(W) with H = Q diag(spectrum) Q^T.
/// Kronecker structure uses H = H_r (x) H_l with a square-root spectrum on each side.
class QuadraticProblem : public Problem {
 public:
  enum class Structure { Dense, Kronecker, Diagonal };

  QuadraticProblem(std::size_t rows, std::size_t cols, double condition, Structure structure, std::uint64_t seed)
      : rows_(rows), cols_(cols), seed_(seed) {
    Rng rng(derive(seed, 0x9a));
    const std::size_t d = rows * cols;
    if (structure == Structure::Kronecker) {
      const double c = std::sqrt(condition);
      Matrix ql = random_orthogonal(rng, rows), qr = random_orthogonal(rng, cols);
      std::vector<double> sl = log_spectrum(rows, c), sr = log_spectrum(cols, c);
      Matrix hl = ql * Matrix::diagonal(sl) * ql.transposed();
      Matrix hr = qr * Matrix::diagonal(sr) * qr.transposed();
      // Row-major flattening of W: vec_r(L W R) = (L (x) R^T) vec_r(W).
      h_ = symmetrized(kron(hl, hr));
    } else {
      std::vector<double> s = log_spectrum(d, condition);
      if (structure == Structure::Diagonal) {
        h_ = Matrix::diagonal(s);
      } else {
        Matrix q = random_orthogonal(rng, d);
        h_ = symmetrized(q * Matrix::diagonal(s) * q.transposed());
      }
    }
  }

  explicit QuadraticProblem(Matrix h, std::size_t rows, std::size_t cols, std::uint64_t seed = 0)
      : rows_(rows), cols_(cols), seed_(seed), h_(std::move(h)) {}

  std::string name() const override { return "quadratic"; }
  std::vector<std::vector<std::size_t>> parameter_shapes() const override { return {{rows_, cols_}}; }
  std::vector<Matrix> initial_params() const override {
    Rng rng(derive(seed_, 0x1a));
    return {rng.normal_matrix(rows_, cols_)};
  }
  LossGrads evaluate(const std::vector<Matrix>& params) const override {
    if (params.size() != 1) throw Error(ErrorCode::ShapeMismatch, "quadratic: expected one parameter");
    LossGrad lg = eval_quadratic(h_, params[0]);
    return LossGrads{lg.loss, {std::move(lg.grad)}};
  }
  const Matrix& hessian() const { return h_; }

 private:
  std::size_t rows_, cols_;
  std::uint64_t seed_;
  Matrix h_;
};

/// Two-class logistic regression; features have log-spaced scales down to 1/sqrt(condition).
class LogisticProblem : public Problem {
 public:
  LogisticProblem(std::size_t samples, std::size_t features, double feature_condition, double label_noise,
                  std::uint64_t seed, std::size_t rows = 0)
      : seed_(seed) {
    rows_ = rows == 0 ? features : rows;
    if (features % rows_ != 0) throw Error(ErrorCode::InvalidConfig, "logistic: rows must divide features");
    cols_ = features / rows_;
    Rng rng(derive(seed, 0x10));
    std::vector<double> scale = log_spectrum(features, std::sqrt(feature_condition));
    x_ = rng.normal_matrix(samples, features);
    for (std::size_t i = 0; i < samples; ++i)
      for (std::size_t j = 0; j < features; ++j) x_(i, j) *= scale[j];
    Matrix w_true = rng.normal_matrix(features, 1);
    y_.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < features; ++j) z += x_(i, j) * w_true(j, 0) / scale[j];
      int label = z > 0 ? 1 : 0;
      if (rng.uniform() < label_noise) label = 1 - label;
      y_[i] = label;
    }
  }

  std::string name() const override { return "logistic"; }
  std::vector<std::vector<std::size_t>> parameter_shapes() const override { return {{rows_, cols_}}; }
  std::vector<Matrix> initial_params() const override { return {Matrix(rows_, cols_)}; }
  LossGrads evaluate(const std::vector<Matrix>& params) const override {
    if (params.size() != 1) throw Error(ErrorCode::ShapeMismatch, "logistic: expected one parameter");
    LossGrad lg = eval_logistic(x_, y_, params[0]);
    return LossGrads{lg.loss, {std::move(lg.grad)}};
  }
  const Matrix& features() const { return x_; }
  const std::vector<int>& labels() const { return y_; }

 private:
  std::uint64_t seed_;
  std::size_t rows_ = 0, cols_ = 0;
  Matrix x_;
  std::vector<int> y_;
};

/// Gaussian-blob classification with a two-layer tanh network.
class MlpProblem : public Problem {
 public:
  MlpProblem(std::size_t samples, std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed)
      : inputs_(inputs), hidden_(hidden), classes_(classes), seed_(seed) {
    Rng rng(derive(seed, 0x20));
    Matrix centers = rng.normal_matrix(classes, inputs, 2.0);
    x_ = rng.normal_matrix(samples, inputs);
    y_.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      y_[i] = static_cast<int>(i % classes);
      for (std::size_t j = 0; j < inputs; ++j) x_(i, j) += centers(y_[i], j);
    }
  }

  std::string name() const override { return "mlp"; }
  std::vector<std::vector<std::size_t>> parameter_shapes() const override {
    return {{hidden_, inputs_}, {hidden_}, {classes_, hidden_}, {classes_}};
  }
  std::vector<Matrix> initial_params() const override {
    Rng rng(derive(seed_, 0x21));
    return {rng.normal_matrix(hidden_, inputs_, 1.0 / std::sqrt(static_cast<double>(inputs_))), Matrix(hidden_, 1),
            rng.normal_matrix(classes_, hidden_, 1.0 / std::sqrt(static_cast<double>(hidden_))), Matrix(classes_, 1)};
  }
  LossGrads evaluate(const std::vector<Matrix>& params) const override { return eval_mlp(params, x_, y_); }
  const Matrix& features() const { return x_; }
  const std::vector<int>& labels() const { return y_; }

 private:
  std::size_t inputs_, hidden_, classes_;
  std::uint64_t seed_;
  Matrix x_;
  std::vector<int> y_;
};

// ---------------------------------------------------------------------------
// Matrix-Gaussian gradient model: G = mean + row_cov_sqrt * E * col_cov_sqrt, E iid N(0, 1)

struct MatrixGaussianModel {
  Matrix mean;
  Matrix row_cov_sqrt;
  Matrix col_cov_sqrt;

  Matrix row_cov() const { return row_cov_sqrt * row_cov_sqrt; }
  Matrix col_cov() const { return col_cov_sqrt * col_cov_sqrt; }
  std::size_t rows() const { return mean.rows(); }
  std::size_t cols() const { return mean.cols(); }
};

inline void validate_model(const MatrixGaussianModel& model) {
  require_square(model.row_cov_sqrt, "matrix gaussian: row_cov_sqrt");
  require_square(model.col_cov_sqrt, "matrix gaussian: col_cov_sqrt");
  if (model.row_cov_sqrt.rows() != model.rows() || model.col_cov_sqrt.rows() != model.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "matrix gaussian: covariance sizes do not match mean");
  }
}

inline Matrix sample_matrix_gaussian(const MatrixGaussianModel& model, std::uint64_t seed) {
  validate_model(model);
  Rng rng(seed);
  Matrix e = rng.normal_matrix(model.rows(), model.cols());
  return model.mean + model.row_cov_sqrt * e * model.col_cov_sqrt;
}

enum class MomentSide {
  Left,   // E[G B G^T], B is n x n
  Right,  // E[G^T B G], B is m x m
};

/// Closed-form second moments; `centered` drops the mean term.
inline Matrix matrix_gaussian_moments(const MatrixGaussianModel& model, const Matrix& b, MomentSide side,
                                      bool centered = false) {
  validate_model(model);
  require_square(b, "matrix_gaussian_moments");
  const Matrix& th = model.mean;
  if (side == MomentSide::Left) {
    if (b.rows() != model.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix_gaussian_moments: B must be n x n");
    Matrix out = trace(b * model.col_cov()) * model.row_cov();
    if (!centered) out += th * b * th.transposed();
    return out;
  }
  if (b.rows() != model.rows()) throw Error(ErrorCode::DimensionMismatch, "matrix_gaussian_moments: B must be m x m");
  Matrix out = trace(b * model.row_cov()) * model.col_cov();
  if (!centered) out += th.transposed() * b * th;
  return out;
}

/// Isotropic model with the given mean and noise scale.
inline MatrixGaussianModel isotropic_model(Matrix mean, double noise) {
  const std::size_t m = mean.rows(), n = mean.cols();
  return MatrixGaussianModel{std::move(mean), Matrix::identity(m) * std::sqrt(noise), Matrix::identity(n) * std::sqrt(noise)};
}

/// Random model: mean with the given condition number, SPD covariance square roots.
inline MatrixGaussianModel random_model(std::uint64_t seed, std::size_t m, std::size_t n, double mean_condition,
                                        double noise) {
  Rng rng(derive(seed, 0x30));
  Matrix u = random_orthogonal(rng, m), v = random_orthogonal(rng, n);
  Matrix s(m, n);
  std::vector<double> sv = log_spectrum(std::min(m, n), mean_condition);
  for (std::size_t i = 0; i < sv.size(); ++i) s(i, i) = sv[i];
  auto spd_sqrt = [&](std::size_t d) {
    Matrix a = rng.normal_matrix(d, d);
    return psd_power(gram_rows(a) * (1.0 / static_cast<double>(d)) + Matrix::identity(d) * 0.5, 0.5) *
           std::sqrt(noise);
  };
  Matrix rs = spd_sqrt(m);
  Matrix cs = spd_sqrt(n);
  return MatrixGaussianModel{u * s * v.transposed(), std::move(rs), std::move(cs)};
}

// ---------------------------------------------------------------------------
// CSV export

inline void write_matrix_csv(const std::string& path, const Matrix& a) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path);
  char buf[64];
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", a(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

/// Features followed by the label column.
inline void write_dataset_csv(const std::string& path, const Matrix& x, const std::vector<int>& y) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path);
  char buf[64];
  for (std::size_t j = 0; j < x.cols(); ++j) out << "x" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      out << buf << ",";
    }
    out << y[i] << '\n';
  }
}

}  // namespace matopt
