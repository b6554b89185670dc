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

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "dkgp/error.hpp"

namespace dkgp {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Lower Cholesky factor together with the diagonal jitter that made it succeed.
template <typename Scalar>
struct CholeskyFactor {
  Matrix<Scalar> lower;
  Scalar jitter = 0;

  Index size() const { return lower.rows(); }

  Scalar log_determinant() const {
    return Scalar(2) * lower.diagonal().array().log().sum();
  }
};

/// Default relative jitter used when a factorization first fails with zero jitter.
inline constexpr double kDefaultRelativeJitter = 1e-6;
inline constexpr int kMaxJitterEscalations = 3;

/// Factors a + jitter*I. On failure the jitter is escalated by 10x up to three
/// times (starting from 1e-6 * mean diagonal when the caller passed zero).
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& a,
                                                  typename Derived::Scalar jitter = 0) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) {
    throw Error(ErrorKind::Shape, "cholesky needs a square matrix, got " +
                                      std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
  const Index n = a.rows();
  if (n == 0) return {Matrix<Scalar>(0, 0), jitter};
  if (!a.allFinite()) throw Error(ErrorKind::Factorization, "matrix has non-finite entries");

  const Scalar scale = a.cwiseAbs().maxCoeff();
  const Scalar asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > Scalar(1e-10) * std::max(scale, Scalar(1))) {
    throw Error(ErrorKind::Shape, "cholesky input is not symmetric (max asymmetry " +
                                      std::to_string(static_cast<double>(asym)) + ")");
  }

  const Scalar mean_diag = a.diagonal().mean();
  Scalar current = jitter;
  int escalations = 0;
  while (true) {
    Matrix<Scalar> shifted = a;
    if (current != Scalar(0)) shifted.diagonal().array() += current;
    Eigen::LLT<Matrix<Scalar>> llt(shifted);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
      return {llt.matrixL(), current};
    }
    if (current == Scalar(0)) {
      current = Scalar(kDefaultRelativeJitter) * (mean_diag > Scalar(0) ? mean_diag : Scalar(1));
      continue;
    }
    if (escalations == kMaxJitterEscalations) break;
    current *= Scalar(10);
    ++escalations;
  }
  throw Error(ErrorKind::Factorization,
              "matrix not positive definite after jitter escalation (final jitter " +
                  std::to_string(static_cast<double>(current)) + ")");
}

/// Solves (L L^T) x = b for a vector or a matrix right-hand side.
template <typename Scalar, typename Derived>
Matrix<typename Derived::Scalar> chol_solve_matrix(const CholeskyFactor<Scalar>& factor,
                                                   const Eigen::MatrixBase<Derived>& b) {
  if (b.rows() != factor.size()) {
    throw Error(ErrorKind::Shape, "chol_solve: factor is " + std::to_string(factor.size()) +
                                      " but right-hand side has " + std::to_string(b.rows()) +
                                      " rows");
  }
  Matrix<Scalar> y = factor.lower.template triangularView<Eigen::Lower>().solve(b);
  factor.lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(y);
  return y;
}

template <typename Scalar>
Vector<Scalar> chol_solve(const CholeskyFactor<Scalar>& factor, const Vector<Scalar>& b) {
  return chol_solve_matrix(factor, b);
}

template <typename Scalar>
Matrix<Scalar> chol_solve(const CholeskyFactor<Scalar>& factor, const Matrix<Scalar>& b) {
  return chol_solve_matrix(factor, b);
}

/// (L L^T)^{-1}, used by gradient code that needs the full inverse.
template <typename Scalar>
Matrix<Scalar> chol_inverse(const CholeskyFactor<Scalar>& factor) {
  const Index n = factor.size();
  Matrix<Scalar> linv = Matrix<Scalar>::Identity(n, n);
  factor.lower.template triangularView<Eigen::Lower>().solveInPlace(linv);
  return linv.transpose() * linv;
}

/// Adam with bias correction and decoupled weight decay. The caller passes the
/// gradient of the quantity being minimized.
template <typename Scalar>
struct AdamState {
  std::size_t step = 0;
  Vector<Scalar> first_moment;
  Vector<Scalar> second_moment;
  Scalar learning_rate = Scalar(0.01);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  Scalar weight_decay = 0;
  /// 1 where weight decay applies, 0 elsewhere. Empty means every parameter decays.
  Vector<Scalar> decay_mask;

  AdamState() = default;
  AdamState(Index size, Scalar lr, Scalar wd = 0)
      : first_moment(Vector<Scalar>::Zero(size)),
        second_moment(Vector<Scalar>::Zero(size)),
        learning_rate(lr),
        weight_decay(wd) {}
};

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vector<Scalar>> params,
               const Eigen::Ref<const Vector<Scalar>>& grads) {
  const Index n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n ||
      (state.decay_mask.size() != 0 && state.decay_mask.size() != n)) {
    throw Error(ErrorKind::Shape, "adam_step: parameter, gradient and moment sizes differ");
  }
  if (!(state.learning_rate > 0)) throw Error(ErrorKind::Optimizer, "learning rate must be > 0");
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw Error(ErrorKind::Optimizer, "non-finite gradient at parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const auto t = static_cast<Scalar>(state.step);
  const Scalar bias1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar bias2 = Scalar(1) - std::pow(state.beta2, t);

  if (state.weight_decay != Scalar(0)) {
    const Scalar shrink = state.learning_rate * state.weight_decay;
    if (state.decay_mask.size() == 0) {
      params -= shrink * params;
    } else {
      params.array() -= shrink * state.decay_mask.array() * params.array();
    }
  }

  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment +
                        (Scalar(1) - state.beta2) * grads.cwiseProduct(grads);
  const auto m_hat = state.first_moment.array() / bias1;
  const auto v_hat = state.second_moment.array() / bias2;
  params.array() -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
template <typename Scalar, typename Fn>
Vector<Scalar> finite_diff_grad(Fn&& f, const Vector<Scalar>& x, Scalar eps) {
  Vector<Scalar> grad(x.size());
  Vector<Scalar> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar saved = probe[i];
    probe[i] = saved + eps;
    const Scalar up = f(probe);
    probe[i] = saved - eps;
    const Scalar down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (Scalar(2) * eps);
  }
  return grad;
}

}  // namespace dkgp
