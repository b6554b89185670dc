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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dkgp/error.hpp"
#include "dkgp/numerics.hpp"
#include "dkgp/rng.hpp"

namespace dkgp {

/// Feature map: affine layers, ReLU between hidden layers, linear output.
/// weights[k] maps layer k to layer k+1 and is (layer_sizes[k+1] x layer_sizes[k]).
template <typename Scalar>
struct MlpParams {
  std::vector<Index> layer_sizes;
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;
  Scalar dropout_rate = 0;

  std::size_t num_layers() const { return weights.size(); }
  Index input_dim() const { return layer_sizes.empty() ? 0 : layer_sizes.front(); }
  Index output_dim() const { return layer_sizes.empty() ? 0 : layer_sizes.back(); }

  Index parameter_count() const {
    Index count = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) count += weights[k].size() + biases[k].size();
    return count;
  }

  void validate() const {
    if (layer_sizes.size() < 2 || weights.size() != layer_sizes.size() - 1 ||
        biases.size() != weights.size()) {
      throw Error(ErrorKind::Shape, "MLP needs at least one layer with matching weights/biases");
    }
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k].rows() != layer_sizes[k + 1] || weights[k].cols() != layer_sizes[k] ||
          biases[k].size() != layer_sizes[k + 1]) {
        throw Error(ErrorKind::Shape, "MLP layer " + std::to_string(k) + " does not conform");
      }
      if (!weights[k].allFinite() || !biases[k].allFinite()) {
        throw Error(ErrorKind::Shape, "MLP layer " + std::to_string(k) + " has non-finite entries");
      }
    }
    if (!(dropout_rate >= Scalar(0) && dropout_rate < Scalar(1))) {
      throw Error(ErrorKind::Parameter, "dropout rate must lie in [0, 1)");
    }
  }

  /// Layer by layer: weight matrix in row-major order, then the bias.
  Vector<Scalar> flatten() const {
    Vector<Scalar> flat(parameter_count());
    Index offset = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      for (Index r = 0; r < weights[k].rows(); ++r) {
        flat.segment(offset, weights[k].cols()) = weights[k].row(r).transpose();
        offset += weights[k].cols();
      }
      flat.segment(offset, biases[k].size()) = biases[k];
      offset += biases[k].size();
    }
    return flat;
  }

  void assign(const Eigen::Ref<const Vector<Scalar>>& flat) {
    if (flat.size() != parameter_count()) {
      throw Error(ErrorKind::Shape, "flat parameter vector has wrong length");
    }
    Index offset = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      for (Index r = 0; r < weights[k].rows(); ++r) {
        weights[k].row(r) = flat.segment(offset, weights[k].cols()).transpose();
        offset += weights[k].cols();
      }
      biases[k] = flat.segment(offset, biases[k].size());
      offset += biases[k].size();
    }
  }

  static MlpParams zeros_like(const MlpParams& other) {
    MlpParams z;
    z.layer_sizes = other.layer_sizes;
    z.dropout_rate = other.dropout_rate;
    for (std::size_t k = 0; k < other.weights.size(); ++k) {
      z.weights.push_back(Matrix<Scalar>::Zero(other.weights[k].rows(), other.weights[k].cols()));
      z.biases.push_back(Vector<Scalar>::Zero(other.biases[k].size()));
    }
    return z;
  }
};

/// FNV-1a over the parameter bytes and layer sizes.
template <typename Scalar>
std::uint64_t checksum(const MlpParams<Scalar>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (Index s : params.layer_sizes) mix(&s, sizeof s);
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    mix(params.weights[k].data(), sizeof(Scalar) * static_cast<std::size_t>(params.weights[k].size()));
    mix(params.biases[k].data(), sizeof(Scalar) * static_cast<std::size_t>(params.biases[k].size()));
  }
  mix(&params.dropout_rate, sizeof params.dropout_rate);
  return h;
}

/// Widths interpolated geometrically between input and latent.
inline std::vector<Index> default_layer_sizes(Index input_dim, Index latent_dim, int hidden_layers) {
  std::vector<Index> sizes{input_dim};
  const double ratio = static_cast<double>(latent_dim) / static_cast<double>(input_dim);
  for (int k = 1; k <= hidden_layers; ++k) {
    const double width =
        static_cast<double>(input_dim) * std::pow(ratio, static_cast<double>(k) / (hidden_layers + 1));
    sizes.push_back(std::max<Index>(1, static_cast<Index>(std::lround(width))));
  }
  sizes.push_back(latent_dim);
  return sizes;
}

/// Glorot-uniform weights, zero biases.
template <typename Scalar>
MlpParams<Scalar> init_mlp(const std::vector<Index>& layer_sizes, Scalar dropout_rate, Rng& rng) {
  MlpParams<Scalar> params;
  params.layer_sizes = layer_sizes;
  params.dropout_rate = dropout_rate;
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const Index fan_in = layer_sizes[k];
    const Index fan_out = layer_sizes[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix<Scalar> w(fan_out, fan_in);
    for (Index r = 0; r < fan_out; ++r)
      for (Index c = 0; c < fan_in; ++c) w(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
    params.weights.push_back(std::move(w));
    params.biases.push_back(Vector<Scalar>::Zero(fan_out));
  }
  params.validate();
  return params;
}

enum class Mode { Train, Eval };

/// What the backward pass needs from a forward pass. Rows are samples.
template <typename Scalar>
struct ForwardCache {
  std::uint64_t params_checksum = 0;
  std::vector<Matrix<Scalar>> layer_inputs;     // input to layer k (after ReLU and dropout)
  std::vector<Matrix<Scalar>> pre_activations;  // affine output of hidden layer k
  std::vector<Matrix<Scalar>> dropout_masks;    // scaled keep masks; empty in eval mode
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> latent;
  ForwardCache<Scalar> cache;
};

/// Batched forward pass; `inputs` is (samples x input_dim). In train mode,
/// inverted dropout is applied to hidden activations using `rng`.
template <typename Scalar>
ForwardResult<Scalar> mlp_forward_batch(const MlpParams<Scalar>& params,
                                        const Matrix<Scalar>& inputs, Mode mode,
                                        Rng* rng = nullptr) {
  if (inputs.cols() != params.input_dim()) {
    throw Error(ErrorKind::Shape, "MLP expects " + std::to_string(params.input_dim()) +
                                      " inputs, got " + std::to_string(inputs.cols()));
  }
  const bool dropout = mode == Mode::Train && params.dropout_rate > Scalar(0);
  if (dropout && rng == nullptr) throw Error(ErrorKind::Parameter, "train-mode dropout needs an rng");

  ForwardResult<Scalar> out;
  out.cache.params_checksum = checksum(params);
  Matrix<Scalar> h = inputs;
  const std::size_t layers = params.num_layers();
  for (std::size_t k = 0; k < layers; ++k) {
    Matrix<Scalar> a = h * params.weights[k].transpose();
    a.rowwise() += params.biases[k].transpose();
    out.cache.layer_inputs.push_back(std::move(h));
    if (k + 1 == layers) {
      out.latent = std::move(a);
      break;
    }
    h = a.cwiseMax(Scalar(0));
    out.cache.pre_activations.push_back(std::move(a));
    if (dropout) {
      const Scalar keep = Scalar(1) - params.dropout_rate;
      Matrix<Scalar> mask(h.rows(), h.cols());
      for (Index c = 0; c < mask.cols(); ++c)
        for (Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = rng->bernoulli(static_cast<double>(keep)) ? Scalar(1) / keep : Scalar(0);
      h = h.cwiseProduct(mask);
      out.cache.dropout_masks.push_back(std::move(mask));
    }
  }
  return out;
}

template <typename Scalar>
struct VectorForwardResult {
  Vector<Scalar> latent;
  ForwardCache<Scalar> cache;
};

template <typename Scalar>
VectorForwardResult<Scalar> mlp_forward(const MlpParams<Scalar>& params, const Vector<Scalar>& input,
                                        Mode mode, Rng* rng = nullptr) {
  auto batch = mlp_forward_batch<Scalar>(params, input.transpose(), mode, rng);
  return {batch.latent.row(0).transpose(), std::move(batch.cache)};
}

/// Reverse-mode pass: gradients of sum(grad_latent .* latent) with respect to
/// every weight and bias. `grad_latent` has the same shape as the forward latent.
template <typename Scalar>
MlpParams<Scalar> mlp_backward(const MlpParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                               const Matrix<Scalar>& grad_latent) {
  if (cache.params_checksum != checksum(params) ||
      cache.layer_inputs.size() != params.num_layers()) {
    throw Error(ErrorKind::Cache, "forward cache does not belong to these parameters");
  }
  const Index samples = cache.layer_inputs.front().rows();
  if (grad_latent.rows() != samples || grad_latent.cols() != params.output_dim()) {
    throw Error(ErrorKind::Shape, "latent gradient shape does not match the forward pass");
  }
  MlpParams<Scalar> grads = MlpParams<Scalar>::zeros_like(params);
  Matrix<Scalar> delta = grad_latent;
  for (std::size_t k = params.num_layers(); k-- > 0;) {
    grads.weights[k].noalias() = delta.transpose() * cache.layer_inputs[k];
    grads.biases[k] = delta.colwise().sum().transpose();
    if (k == 0) break;
    Matrix<Scalar> upstream = delta * params.weights[k];
    if (!cache.dropout_masks.empty()) upstream = upstream.cwiseProduct(cache.dropout_masks[k - 1]);
    const Matrix<Scalar>& pre = cache.pre_activations[k - 1];
    delta = (pre.array() > Scalar(0)).select(upstream, Scalar(0));
  }
  return grads;
}

template <typename Scalar>
MlpParams<Scalar> mlp_backward(const MlpParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                               const Vector<Scalar>& grad_latent) {
  return mlp_backward<Scalar>(params, cache, Matrix<Scalar>(grad_latent.transpose()));
}

}  // namespace dkgp
