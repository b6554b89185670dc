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


#include <doctest.h>

#include <cmath>

#include "dkgp/error.hpp"
#include "dkgp/numerics.hpp"
#include "dkgp/rng.hpp"

using namespace dkgp;

namespace {

MatrixXd random_psd(Rng& rng, Index n) {
  MatrixXd b(n + 2, n);
  for (Index i = 0; i < b.rows(); ++i)
    for (Index j = 0; j < n; ++j) b(i, j) = rng.normal();
  return b.transpose() * b;
}

double rel_frobenius(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace

TEST_CASE("cholesky of the identity is the identity") {
  const auto f = cholesky(MatrixXd::Identity(3, 3));
  CHECK(f.jitter == 0.0);
  CHECK((f.lower - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cholesky of a hand-computable 2x2") {
  MatrixXd a(2, 2);
  a << 4, 2, 2, 3;
  const auto f = cholesky(a);
  CHECK(f.lower(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(f.lower(0, 1) == 0.0);
  CHECK(f.lower(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f.lower(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("cholesky reconstructs random PSD matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(32));
    const MatrixXd a = random_psd(rng, n);
    const auto f = cholesky(a);
    MatrixXd shifted = a;
    shifted.diagonal().array() += f.jitter;
    REQUIRE(rel_frobenius(f.lower * f.lower.transpose(), shifted) < 1e-8);
    // Reconstructing and refactoring lands on the same factor.
    const auto again = cholesky(MatrixXd(f.lower * f.lower.transpose()));
    REQUIRE(rel_frobenius(again.lower, f.lower) < 1e-8);
  }
}

TEST_CASE("cholesky escalates jitter for singular PSD input") {
  MatrixXd a = MatrixXd::Ones(3, 3);  // rank one
  const auto f = cholesky(a);
  CHECK(f.jitter > 0.0);
  MatrixXd shifted = a;
  shifted.diagonal().array() += f.jitter;
  CHECK(rel_frobenius(f.lower * f.lower.transpose(), shifted) < 1e-8);
}

TEST_CASE("cholesky reports factorization and shape errors") {
  MatrixXd neg(2, 2);
  neg << -1, 0, 0, -1;
  try {
    cholesky(neg);
    FAIL("expected a factorization error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Factorization);
    CHECK(std::string(e.what()).find("jitter") != std::string::npos);
  }
  CHECK_THROWS_AS(cholesky(MatrixXd::Ones(2, 3)), Error);
  MatrixXd asym(2, 2);
  asym << 2, 1, 0, 2;
  try {
    cholesky(asym);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
}

TEST_CASE("chol_solve examples") {
  const auto eye = cholesky(MatrixXd::Identity(3, 3));
  VectorXd b(3);
  b << 1.5, -2, 7;
  CHECK((chol_solve(eye, b) - b).cwiseAbs().maxCoeff() == 0.0);

  MatrixXd a(2, 2);
  a << 4, 2, 2, 3;
  const auto f = cholesky(a);
  const VectorXd x = chol_solve(f, VectorXd(VectorXd::Unit(2, 0)));
  CHECK(x[0] == doctest::Approx(3.0 / 8.0).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(-0.25).epsilon(1e-14));

  CHECK_THROWS_AS(chol_solve(f, VectorXd(VectorXd::Ones(3))), Error);
}

TEST_CASE("chol_solve residuals on random systems") {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(32));
    const MatrixXd a = random_psd(rng, n);
    const auto f = cholesky(a);
    MatrixXd shifted = a;
    shifted.diagonal().array() += f.jitter;
    VectorXd b(n);
    for (Index i = 0; i < n; ++i) b[i] = rng.normal();
    const VectorXd x = chol_solve(f, b);
    REQUIRE((shifted * x - b).norm() / b.norm() < 1e-8);

    MatrixXd bm(n, 2);
    for (Index i = 0; i < bm.size(); ++i) bm.data()[i] = rng.normal();
    const MatrixXd xm = chol_solve(f, bm);
    REQUIRE((shifted * xm - bm).norm() / bm.norm() < 1e-8);
  }
}

TEST_CASE("chol_inverse matches an LU inverse") {
  Rng rng(13);
  const MatrixXd a = random_psd(rng, 6);
  const auto f = cholesky(a);
  CHECK(rel_frobenius(chol_inverse(f), a.fullPivLu().inverse()) < 1e-8);
  CHECK(f.log_determinant() == doctest::Approx(std::log(a.determinant())).epsilon(1e-10));
}

TEST_CASE("adam: zero gradients and no decay leave parameters unchanged") {
  AdamState<double> state(3, 0.1);
  VectorXd p(3);
  p << 1, -2, 3;
  const VectorXd before = p;
  for (int i = 0; i < 5; ++i) adam_step<double>(state, p, VectorXd::Zero(3));
  CHECK(p == before);
}

TEST_CASE("adam: bias-corrected first step moves by the learning rate") {
  AdamState<double> state(1, 0.1);
  VectorXd p = VectorXd::Constant(1, 2.0);
  adam_step<double>(state, p, VectorXd::Ones(1));
  CHECK(2.0 - p[0] == doctest::Approx(0.1 / (1 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: 100 steps on w^2 from 1 with lr 0.05") {
  AdamState<double> state(1, 0.05);
  VectorXd w = VectorXd::Ones(1);
  for (int i = 0; i < 100; ++i) adam_step<double>(state, w, VectorXd(2.0 * w));
  CHECK(std::abs(w[0]) < 0.2);
}

TEST_CASE("adam: decoupled decay shrinks only masked parameters") {
  AdamState<double> state(2, 0.1, 0.5);
  state.decay_mask = VectorXd(2);
  state.decay_mask << 1, 0;
  VectorXd p = VectorXd::Ones(2);
  adam_step<double>(state, p, VectorXd::Zero(2));
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  CHECK(p[1] == 1.0);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  AdamState<double> state(3, 0.1);
  VectorXd p = VectorXd::Zero(3);
  VectorXd g = VectorXd::Zero(3);
  g[2] = std::nan("");
  try {
    adam_step<double>(state, p, g);
    FAIL("expected an optimizer error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Optimizer);
    CHECK(std::string(e.what()).find("parameter 2") != std::string::npos);
  }
  CHECK(p == VectorXd::Zero(3));
  CHECK_THROWS_AS(adam_step<double>(state, p, VectorXd::Zero(2)), Error);
}

TEST_CASE("finite_diff_grad examples") {
  VectorXd x(2);
  x << 1, 2;
  const VectorXd g = finite_diff_grad([](const VectorXd& v) { return v.squaredNorm(); }, x, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));
  const VectorXd z = finite_diff_grad([](const VectorXd&) { return 3.25; }, x, 1e-5);
  CHECK(z == VectorXd::Zero(2));
}

TEST_CASE("rng stream is pinned") {
  // First SplitMix64 outputs for seed 0, published with the reference implementation.
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(rng.next_u64() == 0x06C45D188009454FULL);

  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(c.below(7) < 7u);
  }
}
