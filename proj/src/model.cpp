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

#include "ropescope/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ropescope/random.hpp"

namespace ropescope {

namespace {

template <typename Scalar>
Matrix<Scalar> rms_norm(const Matrix<Scalar>& x, const Vector<Scalar>& weight, double eps) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean_sq = x.row(r).squaredNorm() / static_cast<Scalar>(x.cols());
    const Scalar inv = Scalar(1) / std::sqrt(mean_sq + static_cast<Scalar>(eps));
    out.row(r) = (x.row(r) * inv).cwiseProduct(weight.transpose());
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> causal_softmax_rows(const Matrix<Scalar>& logits) {
  const Eigen::Index t = logits.rows();
  Matrix<Scalar> probs = Matrix<Scalar>::Zero(t, t);
  for (Eigen::Index m = 0; m < t; ++m) {
    const Scalar peak = logits.row(m).head(m + 1).maxCoeff();
    probs.row(m).head(m + 1) = (logits.row(m).head(m + 1).array() - peak).exp().matrix();
    probs.row(m).head(m + 1) /= probs.row(m).head(m + 1).sum();
  }
  return probs;
}

template <typename Scalar>
void check_shape(const Matrix<Scalar>& m, Eigen::Index rows, Eigen::Index cols,
                 const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument("weight " + name + " has shape " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }
}

template <typename Scalar>
void check_shape(const Vector<Scalar>& v, Eigen::Index size, const std::string& name) {
  if (v.size() != size) {
    throw std::invalid_argument("weight " + name + " has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(size));
  }
}

template <typename Scalar>
Matrix<Scalar> gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>(stddev * standard_normal(rng));
  }
  return m;
}

std::string layer_name(int layer, const char* leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

// Reorders the rows of a per-head projection between rotary layouts.
template <typename Scalar>
Matrix<Scalar> permute_head_rows(const Matrix<Scalar>& w, int n_heads, int head_dim,
                                 bool to_interleaved) {
  Matrix<Scalar> out(w.rows(), w.cols());
  for (int h = 0; h < n_heads; ++h) {
    const auto block = w.middleRows(h * head_dim, head_dim);
    Matrix<Scalar> t = block.transpose();
    Matrix<Scalar> p = to_interleaved ? half_split_to_interleaved(t) : interleaved_to_half_split(t);
    out.middleRows(h * head_dim, head_dim) = p.transpose();
  }
  return out;
}

struct LayerRope {
  FrequencyVector theta;
  double attention_scale = 1.0;
  std::optional<SelfExtend> self_extend;
};

LayerRope layer_rope(const ModelConfig& config, int layer) {
  const ScalingMethod& method = config.scaling_for(layer);
  if (const auto* se = std::get_if<SelfExtend>(&method)) {
    validate(method);
    return {frequencies(config.freq), 1.0, *se};
  }
  ScaledFrequencies scaled = transform_frequencies(config.freq, method);
  return {std::move(scaled.theta), scaled.attention_scale, std::nullopt};
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || head_dim < 1 || ffn_dim < 1 ||
      vocab_size < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d_model != n_heads * head_dim) {
    throw std::invalid_argument("d_model must equal n_heads * head_dim");
  }
  if (!(norm_eps > 0.0)) throw std::invalid_argument("norm_eps must be positive");
  freq.validate();
  if (freq.head_dim != head_dim) {
    throw std::invalid_argument("rope head_dim does not match the model head_dim");
  }
  ropescope::validate(scaling);
  for (const auto& [layer, method] : layer_scaling) {
    if (layer < 0 || layer >= n_layers) {
      throw std::invalid_argument("scaling override for nonexistent layer " + std::to_string(layer));
    }
    ropescope::validate(method);
  }
}

const ScalingMethod& ModelConfig::scaling_for(int layer) const {
  const auto it = layer_scaling.find(layer);
  return it == layer_scaling.end() ? scaling : it->second;
}

template <typename Scalar>
void ModelWeights<Scalar>::check(const ModelConfig& config) const {
  const Eigen::Index d = config.d_model;
  const Eigen::Index f = config.ffn_dim;
  const Eigen::Index v = config.vocab_size;
  check_shape(embedding, v, d, "tok_embeddings");
  if (layers.size() != static_cast<std::size_t>(config.n_layers)) {
    throw std::invalid_argument("weights have " + std::to_string(layers.size()) +
                                " layers, config expects " + std::to_string(config.n_layers));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const int li = static_cast<int>(i);
    check_shape(l.attn_norm, d, layer_name(li, "attention_norm"));
    check_shape(l.wq, d, d, layer_name(li, "attention.wq"));
    check_shape(l.wk, d, d, layer_name(li, "attention.wk"));
    check_shape(l.wv, d, d, layer_name(li, "attention.wv"));
    check_shape(l.wo, d, d, layer_name(li, "attention.wo"));
    check_shape(l.mlp_norm, d, layer_name(li, "ffn_norm"));
    check_shape(l.w_gate, f, d, layer_name(li, "feed_forward.w_gate"));
    check_shape(l.w_up, f, d, layer_name(li, "feed_forward.w_up"));
    check_shape(l.w_down, d, f, layer_name(li, "feed_forward.w_down"));
  }
  check_shape(final_norm, d, "norm");
  check_shape(lm_head, v, d, "output");
}

template <typename Scalar>
template <typename To>
ModelWeights<To> ModelWeights<Scalar>::cast() const {
  ModelWeights<To> out;
  out.embedding = embedding.template cast<To>();
  for (const auto& l : layers) {
    out.layers.push_back({l.attn_norm.template cast<To>(), l.wq.template cast<To>(),
                          l.wk.template cast<To>(), l.wv.template cast<To>(),
                          l.wo.template cast<To>(), l.mlp_norm.template cast<To>(),
                          l.w_gate.template cast<To>(), l.w_up.template cast<To>(),
                          l.w_down.template cast<To>()});
  }
  out.final_norm = final_norm.template cast<To>();
  out.lm_head = lm_head.template cast<To>();
  return out;
}

template <typename Scalar>
ModelWeights<Scalar> random_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Eigen::Index d = config.d_model;
  const Eigen::Index f = config.ffn_dim;
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  ModelWeights<Scalar> w;
  w.embedding = gaussian<Scalar>(rng, config.vocab_size, d, 1.0);
  for (int i = 0; i < config.n_layers; ++i) {
    LayerWeights<Scalar> l;
    l.attn_norm = Vector<Scalar>::Ones(d);
    l.wq = gaussian<Scalar>(rng, d, d, in_d);
    l.wk = gaussian<Scalar>(rng, d, d, in_d);
    l.wv = gaussian<Scalar>(rng, d, d, in_d);
    l.wo = gaussian<Scalar>(rng, d, d, in_d);
    l.mlp_norm = Vector<Scalar>::Ones(d);
    l.w_gate = gaussian<Scalar>(rng, f, d, in_d);
    l.w_up = gaussian<Scalar>(rng, f, d, in_d);
    l.w_down = gaussian<Scalar>(rng, d, f, in_f);
    w.layers.push_back(std::move(l));
  }
  w.final_norm = Vector<Scalar>::Ones(d);
  w.lm_head = gaussian<Scalar>(rng, config.vocab_size, d, in_d);
  return w;
}

template <typename Scalar>
ForwardResult<Scalar> forward(std::span<const int> tokens, const ModelWeights<Scalar>& weights,
                              const ModelConfig& config, const ForwardOptions& options) {
  config.validate();
  weights.check(config);
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  for (const int id : tokens) {
    if (id < 0 || id >= config.vocab_size) {
      throw std::invalid_argument("forward: unknown token id " + std::to_string(id));
    }
  }
  for (const HeadIndex& index : options.mask.entries) {
    if (index.layer < 0 || index.layer >= config.n_layers || index.head < 0 ||
        index.head >= config.n_heads) {
      throw std::invalid_argument("forward: mask entry " + to_string(index) +
                                  " outside the model");
    }
  }

  const auto t = static_cast<Eigen::Index>(tokens.size());
  const int hd = config.head_dim;
  const Scalar inv_sqrt_hd = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  ForwardResult<Scalar> result;
  if (options.capture_trace) result.trace.emplace(config.n_layers, config.n_heads, hd, t);

  Matrix<Scalar> x(t, config.d_model);
  for (Eigen::Index i = 0; i < t; ++i) x.row(i) = weights.embedding.row(tokens[static_cast<std::size_t>(i)]);

  for (int layer = 0; layer < config.n_layers; ++layer) {
    const LayerWeights<Scalar>& lw = weights.layers[static_cast<std::size_t>(layer)];
    const LayerRope rope = layer_rope(config, layer);
    const auto attn_scale = static_cast<Scalar>(rope.attention_scale);

    const Matrix<Scalar> xn = rms_norm(x, lw.attn_norm, config.norm_eps);
    const Matrix<Scalar> q_all = xn * lw.wq.transpose();
    const Matrix<Scalar> k_all = xn * lw.wk.transpose();
    const Matrix<Scalar> v_all = xn * lw.wv.transpose();
    Matrix<Scalar> heads_out = Matrix<Scalar>::Zero(t, config.d_model);

    for (int h = 0; h < config.n_heads; ++h) {
      const Matrix<Scalar> q_raw = q_all.middleCols(h * hd, hd);
      const Matrix<Scalar> k_raw = k_all.middleCols(h * hd, hd);
      const Matrix<Scalar> q_rot =
          (options.disable_query_rotation ? q_raw : rotate_rows(q_raw, rope.theta)) * attn_scale;
      const Matrix<Scalar> k_rot = rotate_rows(k_raw, rope.theta) * attn_scale;

      Matrix<Scalar> logits(t, t);
      if (rope.self_extend && !options.disable_query_rotation) {
        logits.setConstant(neg_inf);
        for (Eigen::Index m = 0; m < t; ++m) {
          for (Eigen::Index n = 0; n <= m; ++n) {
            const std::int64_t rel = remap_distance(m - n, *rope.self_extend);
            // (R_m q)^T (R_n k) depends only on m - n, so rotate q by the
            // remapped distance and leave k raw.
            const Vector<Scalar> q_rel = apply_rotation(q_raw.row(m).transpose(), rel, rope.theta);
            logits(m, n) = q_rel.dot(k_raw.row(n).transpose()) * attn_scale * attn_scale * inv_sqrt_hd;
          }
        }
      } else {
        logits = (q_rot * k_rot.transpose()) * inv_sqrt_hd;
        logits.template triangularView<Eigen::StrictlyUpper>().setConstant(neg_inf);
      }
      const Matrix<Scalar> probs = causal_softmax_rows(logits);

      if (!options.mask.contains({layer, h})) {
        heads_out.middleCols(h * hd, hd) = probs * v_all.middleCols(h * hd, hd);
      }
      if (result.trace) {
        HeadTrace& ht = result.trace->at({layer, h});
        ht.queries = q_rot.template cast<double>();
        ht.keys = k_rot.template cast<double>();
        ht.logits = logits.template cast<double>();
        ht.probs = probs.template cast<double>();
      }
    }
    x += heads_out * lw.wo.transpose();

    const Matrix<Scalar> xm = rms_norm(x, lw.mlp_norm, config.norm_eps);
    const Matrix<Scalar> gate = xm * lw.w_gate.transpose();
    const Matrix<Scalar> up = xm * lw.w_up.transpose();
    const Matrix<Scalar> act =
        (gate.array() / (Scalar(1) + (-gate.array()).exp()) * up.array()).matrix();
    x += act * lw.w_down.transpose();
  }

  result.logits = rms_norm(x, weights.final_norm, config.norm_eps) * weights.lm_head.transpose();
  return result;
}

template <typename Scalar>
double perplexity(std::span<const int> tokens, const ModelWeights<Scalar>& weights,
                  const ModelConfig& config, const ForwardOptions& options) {
  if (tokens.size() < 2) throw std::invalid_argument("perplexity: need at least 2 tokens");
  ForwardOptions opts = options;
  opts.capture_trace = false;
  return perplexity_from_logits(forward(tokens, weights, config, opts).logits, tokens);
}

template <typename Scalar>
std::vector<int> greedy_generate(std::span<const int> prompt, int new_tokens,
                                 const ModelWeights<Scalar>& weights, const ModelConfig& config,
                                 const ForwardOptions& options) {
  ForwardOptions opts = options;
  opts.capture_trace = false;
  std::vector<int> context(prompt.begin(), prompt.end());
  std::vector<int> generated;
  for (int i = 0; i < new_tokens; ++i) {
    const Matrix<Scalar> logits = forward<Scalar>(context, weights, config, opts).logits;
    Eigen::Index next = 0;
    logits.row(logits.rows() - 1).maxCoeff(&next);
    generated.push_back(static_cast<int>(next));
    context.push_back(static_cast<int>(next));
  }
  return generated;
}

template <typename Scalar>
std::vector<Tensor> weights_to_tensors(const ModelWeights<Scalar>& weights,
                                       const ModelConfig& config, RotaryLayout layout,
                                       DType dtype) {
  weights.check(config);
  const bool half = layout == RotaryLayout::HalfSplit;
  const auto rotary = [&](const Matrix<Scalar>& w) {
    return half ? permute_head_rows(w, config.n_heads, config.head_dim, false) : w;
  };
  std::vector<Tensor> out;
  out.push_back(Tensor::from_matrix("tok_embeddings", weights.embedding, dtype));
  for (int i = 0; i < config.n_layers; ++i) {
    const auto& l = weights.layers[static_cast<std::size_t>(i)];
    out.push_back(Tensor::from_vector(layer_name(i, "attention_norm"), l.attn_norm, dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "attention.wq"), rotary(l.wq), dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "attention.wk"), rotary(l.wk), dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "attention.wv"), l.wv, dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "attention.wo"), l.wo, dtype));
    out.push_back(Tensor::from_vector(layer_name(i, "ffn_norm"), l.mlp_norm, dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "feed_forward.w_gate"), l.w_gate, dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "feed_forward.w_up"), l.w_up, dtype));
    out.push_back(Tensor::from_matrix(layer_name(i, "feed_forward.w_down"), l.w_down, dtype));
  }
  out.push_back(Tensor::from_vector("norm", weights.final_norm, dtype));
  out.push_back(Tensor::from_matrix("output", weights.lm_head, dtype));
  return out;
}

template <typename Scalar>
ModelWeights<Scalar> weights_from_tensors(const std::vector<Tensor>& tensors,
                                          const ModelConfig& config, RotaryLayout layout) {
  config.validate();
  const bool half = layout == RotaryLayout::HalfSplit;
  const auto matrix = [&](const std::string& name) {
    return find_tensor(tensors, name).template to_matrix<Scalar>();
  };
  const auto vector = [&](const std::string& name) -> Vector<Scalar> {
    const Tensor& t = find_tensor(tensors, name);
    if (t.shape.size() != 1) throw std::invalid_argument("weight " + name + " must be rank 1");
    return t.template to_matrix<Scalar>().transpose();
  };
  const auto rotary = [&](const std::string& name) {
    Matrix<Scalar> w = matrix(name);
    if (half) {
      check_shape(w, config.d_model, config.d_model, name);
      return permute_head_rows(w, config.n_heads, config.head_dim, true);
    }
    return w;
  };
  ModelWeights<Scalar> w;
  w.embedding = matrix("tok_embeddings");
  for (int i = 0; i < config.n_layers; ++i) {
    LayerWeights<Scalar> l;
    l.attn_norm = vector(layer_name(i, "attention_norm"));
    l.wq = rotary(layer_name(i, "attention.wq"));
    l.wk = rotary(layer_name(i, "attention.wk"));
    l.wv = matrix(layer_name(i, "attention.wv"));
    l.wo = matrix(layer_name(i, "attention.wo"));
    l.mlp_norm = vector(layer_name(i, "ffn_norm"));
    l.w_gate = matrix(layer_name(i, "feed_forward.w_gate"));
    l.w_up = matrix(layer_name(i, "feed_forward.w_up"));
    l.w_down = matrix(layer_name(i, "feed_forward.w_down"));
    w.layers.push_back(std::move(l));
  }
  w.final_norm = vector("norm");
  w.lm_head = matrix("output");
  w.check(config);
  return w;
}

template <typename Scalar>
std::filesystem::path save_weights(const std::filesystem::path& dir, const std::string& stem,
                                   const ModelWeights<Scalar>& weights, const ModelConfig& config,
                                   RotaryLayout layout, DType dtype) {
  Manifest manifest;
  manifest.layout = layout;
  manifest.head_dim = config.head_dim;
  manifest.rope_base = config.freq.base;
  manifest.n_layers = config.n_layers;
  manifest.n_heads = config.n_heads;
  return write_bundle(dir, stem, weights_to_tensors(weights, config, layout, dtype), manifest);
}

template <typename Scalar>
ModelWeights<Scalar> load_weights(const std::filesystem::path& manifest_path,
                                  const ModelConfig& config) {
  const Bundle bundle = read_bundle(manifest_path);
  return weights_from_tensors<Scalar>(bundle.tensors, config, bundle.manifest.layout);
}

#define ROPESCOPE_INSTANTIATE_MODEL(S)                                                         \
  template struct ModelWeights<S>;                                                             \
  template ModelWeights<S> random_weights<S>(const ModelConfig&, std::uint64_t);               \
  template ForwardResult<S> forward<S>(std::span<const int>, const ModelWeights<S>&,           \
                                       const ModelConfig&, const ForwardOptions&);             \
  template double perplexity<S>(std::span<const int>, const ModelWeights<S>&,                  \
                                const ModelConfig&, const ForwardOptions&);                    \
  template std::vector<int> greedy_generate<S>(std::span<const int>, int,                      \
                                               const ModelWeights<S>&, const ModelConfig&,     \
                                               const ForwardOptions&);                         \
  template std::vector<Tensor> weights_to_tensors<S>(const ModelWeights<S>&,                   \
                                                     const ModelConfig&, RotaryLayout, DType); \
  template ModelWeights<S> weights_from_tensors<S>(const std::vector<Tensor>&,                 \
                                                   const ModelConfig&, RotaryLayout);          \
  template std::filesystem::path save_weights<S>(const std::filesystem::path&,                 \
                                                 const std::string&, const ModelWeights<S>&,   \
                                                 const ModelConfig&, RotaryLayout, DType);     \
  template ModelWeights<S> load_weights<S>(const std::filesystem::path&, const ModelConfig&);

ROPESCOPE_INSTANTIATE_MODEL(float)
ROPESCOPE_INSTANTIATE_MODEL(double)

template ModelWeights<double> ModelWeights<float>::cast<double>() const;
template ModelWeights<float> ModelWeights<double>::cast<float>() const;

#undef ROPESCOPE_INSTANTIATE_MODEL

}  // namespace ropescope
