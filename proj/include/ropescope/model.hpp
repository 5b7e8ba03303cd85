// Copyright 2026 The ropescope Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

/**
 * @file model.hpp
 * @brief A small forward-only decoder with rotary attention, for running the
 * head-masking and position ablations end to end.
 *
 * Each block is pre-norm: RMS norm, causal multi-head attention with rotary
 * queries and keys, residual add, RMS norm, SiLU-gated MLP, residual add.
 * Linear weights are stored out x in, so a projection is x * W^T.
 *
 * The model is templated on its scalar type. float is the working type;
 * double is instantiated too and is what the exactness tests run on.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ropescope/analysis.hpp"
#include "ropescope/rope.hpp"
#include "ropescope/tensor_store.hpp"
#include "ropescope/trace.hpp"

namespace ropescope {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int head_dim = 16;
  int ffn_dim = 128;
  int vocab_size = 256;
  double norm_eps = 1e-5;
  FreqSpec freq{16, 10000.0, 256};
  ScalingMethod scaling = NoScaling{};
  std::map<int, ScalingMethod> layer_scaling;  // per-layer overrides

  void validate() const;
  std::int64_t train_len() const { return freq.train_len; }
  const ScalingMethod& scaling_for(int layer) const;
};

template <typename Scalar>
struct LayerWeights {
  Vector<Scalar> attn_norm;
  Matrix<Scalar> wq, wk, wv, wo;
  Vector<Scalar> mlp_norm;
  Matrix<Scalar> w_gate, w_up, w_down;
};

template <typename Scalar>
struct ModelWeights {
  Matrix<Scalar> embedding;  // vocab x d_model
  std::vector<LayerWeights<Scalar>> layers;
  Vector<Scalar> final_norm;
  Matrix<Scalar> lm_head;  // vocab x d_model

  /// Throws std::invalid_argument naming the first tensor whose shape
  /// disagrees with `config`.
  void check(const ModelConfig& config) const;

  template <typename To>
  ModelWeights<To> cast() const;
};

/// Seeded N(0, 1/fan_in) projections, N(0, 1) embeddings, unit norms.
template <typename Scalar>
ModelWeights<Scalar> random_weights(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  MaskSet mask;
  // Keeps queries unrotated while keys are still rotated by their position.
  bool disable_query_rotation = false;
  bool capture_trace = false;
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;  // T x vocab
  std::optional<ActivationTrace> trace;
};

/// Under SelfExtend the attention score of (m, n) is computed at the remapped
/// distance; the captured queries and keys are still rotated by their
/// absolute positions.
template <typename Scalar>
ForwardResult<Scalar> forward(std::span<const int> tokens, const ModelWeights<Scalar>& weights,
                              const ModelConfig& config, const ForwardOptions& options = {});

/// exp of the mean next-token negative log-likelihood over positions 1..T-1,
/// where row t - 1 of `logits` predicts tokens[t].
template <typename Derived>
double perplexity_from_logits(const Eigen::MatrixBase<Derived>& logits,
                              std::span<const int> tokens);

template <typename Scalar>
double perplexity(std::span<const int> tokens, const ModelWeights<Scalar>& weights,
                  const ModelConfig& config, const ForwardOptions& options = {});

template <typename Scalar>
std::vector<int> greedy_generate(std::span<const int> prompt, int new_tokens,
                                 const ModelWeights<Scalar>& weights, const ModelConfig& config,
                                 const ForwardOptions& options = {});

// Weight files: one RSTN bundle. Rows of wq/wk are stored per head in the
// manifest's rotary layout and permuted to interleaved order on load.
template <typename Scalar>
std::vector<Tensor> weights_to_tensors(const ModelWeights<Scalar>& weights,
                                       const ModelConfig& config, RotaryLayout layout,
                                       DType dtype);

template <typename Scalar>
ModelWeights<Scalar> weights_from_tensors(const std::vector<Tensor>& tensors,
                                          const ModelConfig& config, RotaryLayout layout);

template <typename Scalar>
std::filesystem::path save_weights(const std::filesystem::path& dir, const std::string& stem,
                                   const ModelWeights<Scalar>& weights, const ModelConfig& config,
                                   RotaryLayout layout = RotaryLayout::Interleaved,
                                   DType dtype = DType::F32);

template <typename Scalar>
ModelWeights<Scalar> load_weights(const std::filesystem::path& manifest_path,
                                  const ModelConfig& config);

// ---------------------------------------------------------------------------

template <typename Derived>
double perplexity_from_logits(const Eigen::MatrixBase<Derived>& logits,
                              std::span<const int> tokens) {
  if (tokens.size() < 2) throw std::invalid_argument("perplexity: need at least 2 tokens");
  if (logits.rows() < static_cast<Eigen::Index>(tokens.size()) - 1) {
    throw std::invalid_argument("perplexity: fewer logit rows than predicted positions");
  }
  double nll = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const Eigen::VectorXd row = logits.row(static_cast<Eigen::Index>(t - 1)).transpose().template cast<double>();
    const int target = tokens[t];
    if (target < 0 || target >= row.size()) {
      throw std::invalid_argument("perplexity: token id outside the logit range");
    }
    const double peak = row.maxCoeff();
    const double log_norm = peak + std::log((row.array() - peak).exp().sum());
    nll += log_norm - row[target];
  }
  return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

}  // namespace ropescope
