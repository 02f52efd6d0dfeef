// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels used across the toolkit: row-major matrices, orthonormal
// bases, truncated eigen/SVD through the Gram matrix, matrix-free projector
// distances and seeded Gaussian draws. Everything is float64.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pcdp/rng.hpp"

namespace pcdp::linalg {

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

// k orthonormal vectors in R^dim with the matching eigenvalues of the
// generating second-moment matrix, largest first. Vectors are stored
// contiguously (vector j occupies [j*dim, (j+1)*dim)).
struct OrthoBasis {
  std::size_t dim = 0;
  std::size_t k = 0;
  std::vector<double> vectors;
  std::vector<double> eigvals;
  // Set when fewer than the requested number of directions were available.
  bool truncated = false;
  std::size_t requested_k = 0;

  std::span<const double> column(std::size_t j) const { return {vectors.data() + j * dim, dim}; }
  std::span<double> column(std::size_t j) { return {vectors.data() + j * dim, dim}; }
};

struct SymmetricEigen {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column j is the eigenvector of values[j]
  int sweeps = 0;
  bool converged = false;
};

struct SpectralEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

// Cyclic Jacobi for a symmetric matrix. Stops when the off-diagonal
// Frobenius norm falls below 1e-12 times the matrix Frobenius norm or after
// `max_sweeps` sweeps.
SymmetricEigen jacobi_eigen(const DenseMatrix& symmetric, int max_sweeps = 100);

// A * A^T for a row-major A (rows x rows result).
DenseMatrix gram_rows(const DenseMatrix& a);
// A^T * A (cols x cols result).
DenseMatrix gram_cols(const DenseMatrix& a);

// Leading right-singular directions of `a` (eigenvectors of A^T A). Uses the
// B x B Gram matrix when rows < cols so the d x d second moment is never
// formed. Eigenpairs below 1e-12 * lambda_max are discarded; if fewer than k
// remain the basis is returned with `truncated` set.
OrthoBasis topk_right_singular(const DenseMatrix& a, int k);

// Orthonormal basis of the column span of a set of vectors via two-pass
// modified Gram-Schmidt. Nearly dependent vectors are dropped.
OrthoBasis orthonormalize(std::vector<std::vector<double>> vectors, std::size_t dim);

// V^T v
std::vector<double> coefficients(const OrthoBasis& basis, std::span<const double> v);
// V c
std::vector<double> expand(const OrthoBasis& basis, std::span<const double> coeffs);
// V (V^T v); the d x d projector is never materialized.
std::vector<double> project(const OrthoBasis& basis, std::span<const double> v);
void project_into(const OrthoBasis& basis, std::span<const double> v, std::span<double> out);

// max |V^T V - I|
double orthonormality_error(const OrthoBasis& basis);
// Restores orthonormality in place (two rounds of Cholesky QR, falling back
// to Gram-Schmidt); vector j stays in the span of vectors 0..j.
void reorthonormalize(OrthoBasis& basis);

// out (count x k, row-major) = rows * V, where row i of the input starts at
// rows + i * stride and has basis.dim entries.
void coefficients_rows(const OrthoBasis& basis, const double* rows, std::size_t count, std::size_t stride,
                       double* out);
// out += V c
void expand_add(const OrthoBasis& basis, std::span<const double> coeffs, std::span<double> out);

// || V1 V1^T - V2 V2^T ||_2 by power iteration on the squared difference
// operator, two seeded starts, max taken.
SpectralEstimate spectral_norm_diff(const OrthoBasis& b1, const OrthoBasis& b2,
                                    std::uint64_t seed = 0x5eed5eedULL);

std::vector<double> gaussian_vec(std::size_t n, double stddev, SeededRng& rng);

}  // namespace pcdp::linalg
