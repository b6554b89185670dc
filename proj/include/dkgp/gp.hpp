/*
 * Copyright 2026 The dkgp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>

#include "dkgp/mlp.hpp"
#include "dkgp/numerics.hpp"

namespace dkgp {

/// RBF hyperparameters stored as logs, so the exponentiated values are positive.
template <typename Scalar>
struct GpHyper {
  Scalar log_lengthscale = 0;
  Scalar log_signal_var = 0;
  Scalar log_noise_var = Scalar(std::log(0.01));

  Scalar lengthscale() const { return std::exp(log_lengthscale); }
  Scalar signal_var() const { return std::exp(log_signal_var); }
  Scalar noise_var() const { return std::exp(log_noise_var); }

  Vector<Scalar> as_vector() const {
    Vector<Scalar> v(3);
    v << log_lengthscale, log_signal_var, log_noise_var;
    return v;
  }
  static GpHyper from_vector(const Eigen::Ref<const Vector<Scalar>>& v) {
    return {v[0], v[1], v[2]};
  }
  bool finite() const {
    return std::isfinite(log_lengthscale) && std::isfinite(log_signal_var) &&
           std::isfinite(log_noise_var);
  }
};

/// Initial hyperparameters for a latent space of the given dimension.
template <typename Scalar>
GpHyper<Scalar> default_hyper(Index latent_dim) {
  return {Scalar(0.5 * std::log(static_cast<double>(latent_dim))), Scalar(0), Scalar(std::log(0.01))};
}

/// Counts posterior variances that came out below -1e-6 before clamping;
/// anything that negative points at a bug rather than round-off.
inline std::atomic<std::size_t>& negative_variance_warnings() {
  static std::atomic<std::size_t> count{0};
  return count;
}

template <typename D1, typename D2>
Matrix<typename D1::Scalar> squared_distances(const Eigen::MatrixBase<D1>& z1,
                                              const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  if (z1.cols() != z2.cols()) {
    throw Error(ErrorKind::Shape, "latent dimensions differ: " + std::to_string(z1.cols()) +
                                      " vs " + std::to_string(z2.cols()));
  }
  Matrix<Scalar> d2(z1.rows(), z2.rows());
  for (Index j = 0; j < z2.rows(); ++j)
    for (Index i = 0; i < z1.rows(); ++i) d2(i, j) = (z1.row(i) - z2.row(j)).squaredNorm();
  return d2;
}

/// K[i,j] = s2 * exp(-|z1_i - z2_j|^2 / (2 l^2)).
template <typename D1, typename D2, typename Scalar = typename D1::Scalar>
Matrix<Scalar> rbf_kernel(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2,
                          const GpHyper<Scalar>& hyper) {
  const Scalar l2 = std::exp(Scalar(2) * hyper.log_lengthscale);
  return hyper.signal_var() * (squared_distances(z1, z2).array() / (Scalar(-2) * l2)).exp().matrix();
}

template <typename Scalar>
struct Posterior {
  Vector<Scalar> mean;
  Vector<Scalar> variance;
};

/// Exact zero-mean GP conditioned on (Z, y): the factor of K + s_n^2 I and
/// the weight vector (K + s_n^2 I)^{-1} y are computed once at construction.
template <typename Scalar>
class GpPredictor {
 public:
  GpPredictor() = default;

  GpPredictor(Matrix<Scalar> train_z, Vector<Scalar> train_y, const GpHyper<Scalar>& hyper,
              Scalar jitter = 0)
      : train_z_(std::move(train_z)), train_y_(std::move(train_y)), hyper_(hyper) {
    if (train_z_.rows() == 0) throw Error(ErrorKind::Shape, "GP needs at least one training point");
    if (train_z_.rows() != train_y_.size()) {
      throw Error(ErrorKind::Shape, "GP training latents and targets differ in length");
    }
    Matrix<Scalar> k = rbf_kernel(train_z_, train_z_, hyper_);
    k.diagonal().array() += hyper_.noise_var();
    factor_ = cholesky(k, jitter);
    weights_ = chol_solve(factor_, train_y_);
  }

  Posterior<Scalar> predict(const Matrix<Scalar>& query_z) const {
    Posterior<Scalar> out;
    if (query_z.rows() == 0) {
      out.mean.resize(0);
      out.variance.resize(0);
      return out;
    }
    const Matrix<Scalar> cross = rbf_kernel(query_z, train_z_, hyper_);  // q x n
    out.mean = cross * weights_;
    Matrix<Scalar> v = factor_.lower.template triangularView<Eigen::Lower>().solve(cross.transpose());
    out.variance = Vector<Scalar>::Constant(query_z.rows(), hyper_.signal_var()) -
                   v.colwise().squaredNorm().transpose();
    for (Index i = 0; i < out.variance.size(); ++i) {
      if (out.variance[i] < Scalar(0)) {
        if (out.variance[i] < Scalar(-1e-6)) ++negative_variance_warnings();
        out.variance[i] = 0;
      }
    }
    return out;
  }

  const Matrix<Scalar>& train_latents() const { return train_z_; }
  const Vector<Scalar>& train_targets() const { return train_y_; }
  const GpHyper<Scalar>& hyper() const { return hyper_; }
  const CholeskyFactor<Scalar>& factor() const { return factor_; }
  const Vector<Scalar>& weights() const { return weights_; }
  bool ready() const { return factor_.size() > 0; }

 private:
  Matrix<Scalar> train_z_;
  Vector<Scalar> train_y_;
  GpHyper<Scalar> hyper_;
  CholeskyFactor<Scalar> factor_;
  Vector<Scalar> weights_;
};

template <typename Scalar>
Posterior<Scalar> gp_posterior(const Matrix<Scalar>& train_z, const Vector<Scalar>& train_y,
                               const GpHyper<Scalar>& hyper, const Matrix<Scalar>& query_z) {
  return GpPredictor<Scalar>(train_z, train_y, hyper).predict(query_z);
}

/// Marginal log likelihood and its gradient with respect to the three log
/// hyperparameters and (optionally) every latent coordinate.
template <typename Scalar>
struct MllTerms {
  Scalar mll = 0;
  Vector<Scalar> grad_hyper;   // d/d(log l), d/d(log s2), d/d(log s_n^2)
  Matrix<Scalar> grad_latent;  // same shape as Z; empty unless requested
};

template <typename Scalar>
MllTerms<Scalar> kernel_mll_terms(const Matrix<Scalar>& z, const Vector<Scalar>& y,
                                  const GpHyper<Scalar>& hyper, bool with_latent_grad,
                                  Scalar jitter = 0) {
  const Index n = z.rows();
  if (n == 0 || y.size() != n) throw Error(ErrorKind::Shape, "MLL needs matching nonempty Z and y");
  const Scalar l2 = std::exp(Scalar(2) * hyper.log_lengthscale);
  const Matrix<Scalar> d2 = squared_distances(z, z);
  const Matrix<Scalar> k = hyper.signal_var() * (d2.array() / (Scalar(-2) * l2)).exp().matrix();
  Matrix<Scalar> k_noisy = k;
  k_noisy.diagonal().array() += hyper.noise_var();
  const CholeskyFactor<Scalar> factor = cholesky(k_noisy, jitter);
  const Vector<Scalar> alpha = chol_solve(factor, y);

  MllTerms<Scalar> out;
  out.mll = Scalar(-0.5) * y.dot(alpha) - Scalar(0.5) * factor.log_determinant() -
            Scalar(0.5) * static_cast<Scalar>(n) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);

  // W = alpha alpha^T - (K + s_n^2 I)^{-1}; dMLL/dtheta = 1/2 tr(W dK/dtheta).
  Matrix<Scalar> w = chol_inverse(factor);
  w = (alpha * alpha.transpose() - w).eval();
  const Matrix<Scalar> wk = w.cwiseProduct(k);

  out.grad_hyper.resize(3);
  out.grad_hyper[0] = Scalar(0.5) * (wk.array() * d2.array()).sum() / l2;
  out.grad_hyper[1] = Scalar(0.5) * wk.sum();
  out.grad_hyper[2] = Scalar(0.5) * hyper.noise_var() * w.trace();

  if (with_latent_grad) {
    // dK_ij/dz_i = -K_ij (z_i - z_j) / l^2, counted twice by symmetry of W.
    const Vector<Scalar> row_sums = wk.rowwise().sum();
    out.grad_latent = (wk * z - row_sums.asDiagonal() * z) / l2;
  }
  return out;
}

template <typename Scalar>
Scalar gp_mll(const Matrix<Scalar>& z, const Vector<Scalar>& y, const GpHyper<Scalar>& hyper,
              Scalar jitter = 0) {
  const Index n = z.rows();
  if (n == 0 || y.size() != n) throw Error(ErrorKind::Shape, "MLL needs matching nonempty Z and y");
  Matrix<Scalar> k = rbf_kernel(z, z, hyper);
  k.diagonal().array() += hyper.noise_var();
  const CholeskyFactor<Scalar> factor = cholesky(k, jitter);
  const Vector<Scalar> alpha = chol_solve(factor, y);
  return Scalar(-0.5) * y.dot(alpha) - Scalar(0.5) * factor.log_determinant() -
         Scalar(0.5) * static_cast<Scalar>(n) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
struct MllGradients {
  Scalar mll = 0;
  MlpParams<Scalar> grad_mlp;
  Vector<Scalar> grad_hyper;
};

/// Joint gradient of the deep-kernel MLL: kernel terms chained through the
/// latent coordinates into the MLP by reverse mode.
template <typename Scalar>
MllGradients<Scalar> mll_gradients(const Matrix<Scalar>& inputs, const Vector<Scalar>& y,
                                   const MlpParams<Scalar>& mlp, const GpHyper<Scalar>& hyper,
                                   Mode mode = Mode::Eval, Rng* rng = nullptr) {
  auto forward = mlp_forward_batch(mlp, inputs, mode, rng);
  const MllTerms<Scalar> terms = kernel_mll_terms(forward.latent, y, hyper, true);
  MllGradients<Scalar> out{terms.mll, mlp_backward(mlp, forward.cache, terms.grad_latent),
                           terms.grad_hyper};
  if (!std::isfinite(static_cast<double>(out.mll)) || !out.grad_hyper.allFinite()) {
    throw Error(ErrorKind::Optimizer, "non-finite marginal likelihood or hyperparameter gradient");
  }
  for (std::size_t k = 0; k < out.grad_mlp.num_layers(); ++k) {
    if (!out.grad_mlp.weights[k].allFinite() || !out.grad_mlp.biases[k].allFinite()) {
      throw Error(ErrorKind::Optimizer, "non-finite MLP gradient in layer " + std::to_string(k));
    }
  }
  return out;
}

}  // namespace dkgp
