// SPDX-License-Identifier: Apache-2.0
#include "pcdp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pcdp::linalg {

namespace {

constexpr double kRankCutoff = 1e-12;
constexpr double kJacobiTolerance = 1e-12;
constexpr int kPowerIterations = 1000;
constexpr double kPowerTolerance = 1e-10;
// Bases are repaired above this, an order of magnitude inside the 1e-10 contract.
constexpr double kReorthTolerance = 1e-11;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

// Basis vectors as the rows of a k x dim matrix.
ConstRowMap basis_rows(const OrthoBasis& b) { return ConstRowMap(b.vectors.data(), b.k, b.dim); }

void require_same_dim(const OrthoBasis& b, std::size_t n, const char* what) {
  if (b.dim != n) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (basis dim " +
                                std::to_string(b.dim) + ", vector " + std::to_string(n) + ")");
  }
}

// x -> P1 x - P2 x
void apply_difference(const OrthoBasis& b1, const OrthoBasis& b2, std::span<const double> x,
                      std::span<double> out, std::vector<double>& scratch) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < b1.k; ++j) axpy(dot(b1.column(j), x), b1.column(j), out);
  scratch.assign(x.size(), 0.0);
  for (std::size_t j = 0; j < b2.k; ++j) axpy(dot(b2.column(j), x), b2.column(j), scratch);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= scratch[i];
}

SpectralEstimate power_on_squared_difference(const OrthoBasis& b1, const OrthoBasis& b2,
                                             SeededRng& rng) {
  const std::size_t n = b1.dim;
  std::vector<double> x(n), y(n), z(n), scratch;
  for (auto& v : x) v = rng.normal();
  double nx = norm2(x);
  scale(1.0 / nx, x);

  SpectralEstimate est;
  double prev = -1.0;
  for (int it = 1; it <= kPowerIterations; ++it) {
    apply_difference(b1, b2, x, y, scratch);
    const double rq = dot(y, y);  // x^T D^2 x with ||x|| = 1
    est.value = std::max(est.value, std::sqrt(rq));
    est.iterations = it;
    if (rq == 0.0 || (prev >= 0.0 && std::abs(rq - prev) <= kPowerTolerance * rq)) {
      est.converged = true;
      break;
    }
    prev = rq;
    apply_difference(b1, b2, y, z, scratch);
    const double nz = norm2(z);
    if (nz == 0.0) {
      est.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;
  }
  return est;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (auto& v : x) v *= alpha;
}

SymmetricEigen jacobi_eigen(const DenseMatrix& symmetric, int max_sweeps) {
  if (symmetric.rows != symmetric.cols) throw std::invalid_argument("jacobi_eigen: matrix not square");
  const std::size_t n = symmetric.rows;
  DenseMatrix a = symmetric;
  // Row j of vt is the eigenvector estimate for a(j, j); rows keep updates contiguous.
  DenseMatrix vt(n, n);
  for (std::size_t i = 0; i < n; ++i) vt(i, i) = 1.0;

  double fro = 0.0;
  for (double x : a.data) fro += x * x;
  fro = std::sqrt(fro);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  auto rotate_rows = [n](DenseMatrix& m, std::size_t p, std::size_t q, double c, double s) {
    double* rp = m.data.data() + p * n;
    double* rq = m.data.data() + q * n;
    for (std::size_t r = 0; r < n; ++r) {
      const double x = rp[r], y = rq[r];
      rp[r] = c * x - s * y;
      rq[r] = s * x + c * y;
    }
  };

  // Pivots below this are left alone: even all of them together stay far
  // under the stopping threshold.
  const double negligible = 1e-3 * kJacobiTolerance * fro / static_cast<double>(std::max<std::size_t>(n, 1));

  SymmetricEigen out;
  if (fro == 0.0 || off_norm() <= kJacobiTolerance * fro) {
    out.converged = true;
  } else {
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
      out.sweeps = sweep;
      for (std::size_t p = 0; p + 1 < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
          const double apq = a(p, q);
          if (std::abs(apq) <= negligible) continue;
          const double app = a(p, p), aqq = a(q, q);
          const double tau = (aqq - app) / (2.0 * apq);
          const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(tau * tau + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;
          // J^T A J touches rows and columns p, q; by symmetry rotate the rows,
          // fix the 2 x 2 pivot block and mirror the rows into the columns.
          rotate_rows(a, p, q, c, s);
          a(p, p) = app - t * apq;
          a(q, q) = aqq + t * apq;
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            if (r == p || r == q) continue;
            a(r, p) = a(p, r);
            a(r, q) = a(q, r);
          }
          rotate_rows(vt, p, q, c, s);
        }
      }
      if (off_norm() <= kJacobiTolerance * fro) {
        out.converged = true;
        break;
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  out.values.resize(n);
  out.vectors = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, j) = vt(order[j], r);
  }
  return out;
}

DenseMatrix gram_rows(const DenseMatrix& a) {
  DenseMatrix g(a.rows, a.rows);
  const ConstRowMap m(a.data.data(), a.rows, a.cols);
  RowMap(g.data.data(), a.rows, a.rows).noalias() = m * m.transpose();
  return g;
}

DenseMatrix gram_cols(const DenseMatrix& a) {
  DenseMatrix g(a.cols, a.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const auto row = a.row(r);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      for (std::size_t j = i; j < a.cols; ++j) g(i, j) += ri * row[j];
    }
  }
  for (std::size_t i = 0; i < a.cols; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

OrthoBasis orthonormalize(std::vector<std::vector<double>> vectors, std::size_t dim) {
  OrthoBasis basis;
  basis.dim = dim;
  basis.requested_k = vectors.size();
  for (auto& v : vectors) {
    if (v.size() != dim) throw std::invalid_argument("orthonormalize: vector length mismatch");
    const double original = norm2(v);
    if (original == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < basis.k; ++j) {
        const double proj = dot(basis.column(j), v);
        axpy(-proj, basis.column(j), v);
      }
    }
    const double n = norm2(v);
    if (n <= 1e-10 * original) continue;
    scale(1.0 / n, v);
    basis.vectors.insert(basis.vectors.end(), v.begin(), v.end());
    ++basis.k;
  }
  basis.eigvals.assign(basis.k, 0.0);
  basis.truncated = basis.k < basis.requested_k;
  return basis;
}

OrthoBasis topk_right_singular(const DenseMatrix& a, int k) {
  if (k <= 0) throw std::invalid_argument("topk_right_singular: k must be positive");
  if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("topk_right_singular: empty matrix");
  if (std::all_of(a.data.begin(), a.data.end(), [](double x) { return x == 0.0; })) {
    throw std::invalid_argument("topk_right_singular: matrix has no nonzero row");
  }

  const bool use_gram = a.rows < a.cols;
  const SymmetricEigen eig = jacobi_eigen(use_gram ? gram_rows(a) : gram_cols(a));
  const double lambda_max = eig.values.front();
  std::size_t rank = 0;
  while (rank < eig.values.size() && eig.values[rank] > kRankCutoff * lambda_max) ++rank;

  OrthoBasis basis;
  basis.dim = a.cols;
  basis.requested_k = static_cast<std::size_t>(k);
  basis.k = std::min<std::size_t>(basis.requested_k, rank);
  basis.truncated = basis.k < basis.requested_k;
  basis.vectors.assign(basis.k * basis.dim, 0.0);
  basis.eigvals.assign(eig.values.begin(), eig.values.begin() + basis.k);

  if (!use_gram) {
    for (std::size_t j = 0; j < basis.k; ++j)
      for (std::size_t i = 0; i < basis.dim; ++i) basis.column(j)[i] = eig.vectors(i, j);
    return basis;
  }

  // v_j = A^T u_j / sqrt(lambda_j)
  {
    const ConstRowMap m(a.data.data(), a.rows, a.cols);
    const ConstRowMap u(eig.vectors.data.data(), eig.vectors.rows, eig.vectors.cols);
    RowMap v(basis.vectors.data(), basis.k, basis.dim);
    v.noalias() = u.leftCols(basis.k).transpose() * m;
    for (std::size_t j = 0; j < basis.k; ++j) v.row(j) /= std::sqrt(eig.values[j]);
  }

  // Small retained eigenvalues amplify rounding in the map above; restore
  // orthonormality without changing the leading directions' order.
  if (orthonormality_error(basis) > kReorthTolerance) reorthonormalize(basis);
  return basis;
}

std::vector<double> coefficients(const OrthoBasis& basis, std::span<const double> v) {
  require_same_dim(basis, v.size(), "coefficients");
  std::vector<double> c(basis.k);
  for (std::size_t j = 0; j < basis.k; ++j) c[j] = dot(basis.column(j), v);
  return c;
}

std::vector<double> expand(const OrthoBasis& basis, std::span<const double> coeffs) {
  if (coeffs.size() != basis.k) throw std::invalid_argument("expand: coefficient count mismatch");
  std::vector<double> out(basis.dim, 0.0);
  for (std::size_t j = 0; j < basis.k; ++j) axpy(coeffs[j], basis.column(j), out);
  return out;
}

void project_into(const OrthoBasis& basis, std::span<const double> v, std::span<double> out) {
  require_same_dim(basis, v.size(), "project");
  if (out.size() != basis.dim) throw std::invalid_argument("project: output length mismatch");
  std::vector<double> c(basis.k);
  for (std::size_t j = 0; j < basis.k; ++j) c[j] = dot(basis.column(j), v);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < basis.k; ++j) axpy(c[j], basis.column(j), out);
}

std::vector<double> project(const OrthoBasis& basis, std::span<const double> v) {
  std::vector<double> out(basis.dim);
  project_into(basis, v, out);
  return out;
}

double orthonormality_error(const OrthoBasis& basis) {
  if (basis.k == 0) return 0.0;
  const auto v = basis_rows(basis);
  const Eigen::MatrixXd g = v * v.transpose();
  return (g - Eigen::MatrixXd::Identity(basis.k, basis.k)).cwiseAbs().maxCoeff();
}

void reorthonormalize(OrthoBasis& basis) {
  if (basis.k == 0) return;
  RowMap v(basis.vectors.data(), basis.k, basis.dim);
  // Two rounds of Cholesky QR: V <- L^{-1} V with V V^T = L L^T. Row j only
  // mixes rows <= j, so the ordering of the leading directions is kept.
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::MatrixXd g = v * v.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) {
      std::vector<std::vector<double>> cols;
      for (std::size_t j = 0; j < basis.k; ++j) cols.emplace_back(basis.column(j).begin(), basis.column(j).end());
      OrthoBasis fixed = orthonormalize(std::move(cols), basis.dim);
      fixed.eigvals.assign(basis.eigvals.begin(), basis.eigvals.begin() + fixed.k);
      fixed.requested_k = basis.requested_k;
      fixed.truncated = fixed.k < fixed.requested_k;
      basis = std::move(fixed);
      return;
    }
    llt.matrixL().solveInPlace(v);
  }
}

void coefficients_rows(const OrthoBasis& basis, const double* rows, std::size_t count, std::size_t stride,
                       double* out) {
  if (basis.k == 0 || count == 0) return;
  using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
  const Strided a(rows, count, basis.dim, Eigen::OuterStride<>(stride));
  RowMap(out, count, basis.k).noalias() = a * basis_rows(basis).transpose();
}

void expand_add(const OrthoBasis& basis, std::span<const double> coeffs, std::span<double> out) {
  if (coeffs.size() != basis.k) throw std::invalid_argument("expand: coefficient count mismatch");
  require_same_dim(basis, out.size(), "expand");
  if (basis.k == 0) return;
  Eigen::Map<Eigen::RowVectorXd> o(out.data(), out.size());
  o.noalias() += Eigen::Map<const Eigen::RowVectorXd>(coeffs.data(), coeffs.size()) * basis_rows(basis);
}

SpectralEstimate spectral_norm_diff(const OrthoBasis& b1, const OrthoBasis& b2, std::uint64_t seed) {
  if (b1.dim != b2.dim) throw std::invalid_argument("spectral_norm_diff: basis dimensions differ");
  if (b1.dim == 0) return {0.0, true, 0};
  SeededRng rng(seed);
  SeededRng first = rng.fork("power-start", 0);
  SeededRng second = rng.fork("power-start", 1);
  const SpectralEstimate a = power_on_squared_difference(b1, b2, first);
  const SpectralEstimate b = power_on_squared_difference(b1, b2, second);
  SpectralEstimate best = a.value >= b.value ? a : b;
  best.converged = a.converged && b.converged;
  best.iterations = std::max(a.iterations, b.iterations);
  return best;
}

std::vector<double> gaussian_vec(std::size_t n, double stddev, SeededRng& rng) {
  if (stddev < 0.0) throw std::invalid_argument("gaussian_vec: stddev must be non-negative");
  std::vector<double> out(n, 0.0);
  if (stddev == 0.0) return out;
  for (auto& v : out) v = stddev * rng.normal();
  return out;
}

}  // namespace pcdp::linalg
