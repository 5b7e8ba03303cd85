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

#include "ropescope/activations.hpp"

#include <algorithm>
#include <map>
#include <regex>

#include "ropescope/errors.hpp"

namespace ropescope {

namespace {

struct HeadTensors {
  const Tensor* q = nullptr;
  const Tensor* k = nullptr;
  const Tensor* score = nullptr;
  const Tensor* logit = nullptr;
};

Matrix<double> as_matrix(const Tensor& t) {
  if (t.shape.size() != 2) {
    throw ShapeMismatchError("tensor " + t.name + " must be rank 2, has rank " +
                             std::to_string(t.shape.size()));
  }
  return t.to_matrix<double>();
}

}  // namespace

std::string activation_tensor_name(HeadIndex head, const char* leaf) {
  return to_string(head) + "." + leaf;
}

std::vector<Tensor> trace_to_tensors(const ActivationTrace& trace, RotaryLayout layout,
                                     DType dtype) {
  trace.validate();
  const bool half = layout == RotaryLayout::HalfSplit;
  std::vector<Tensor> out;
  for (const HeadIndex index : trace.head_indices()) {
    const HeadTrace& head = trace.at(index);
    out.push_back(Tensor::from_matrix(activation_tensor_name(index, "q"),
                                      half ? interleaved_to_half_split(head.queries) : head.queries,
                                      dtype));
    out.push_back(Tensor::from_matrix(activation_tensor_name(index, "k"),
                                      half ? interleaved_to_half_split(head.keys) : head.keys,
                                      dtype));
    out.push_back(Tensor::from_matrix(activation_tensor_name(index, "score"), head.probs, dtype));
    if (head.logits.size() != 0) {
      out.push_back(Tensor::from_matrix(activation_tensor_name(index, "logit"), head.logits, dtype));
    }
  }
  return out;
}

ActivationTrace trace_from_tensors(const std::vector<Tensor>& tensors, RotaryLayout layout) {
  static const std::regex pattern(R"(L(\d+)\.H(\d+)\.(q|k|score|logit))");
  std::map<HeadIndex, HeadTensors> groups;
  for (const Tensor& t : tensors) {
    std::smatch match;
    if (!std::regex_match(t.name, match, pattern)) continue;
    HeadIndex index{std::stoi(match[1].str()), std::stoi(match[2].str())};
    HeadTensors& group = groups[index];
    const std::string leaf = match[3].str();
    if (leaf == "q") group.q = &t;
    else if (leaf == "k") group.k = &t;
    else if (leaf == "score") group.score = &t;
    else group.logit = &t;
  }
  if (groups.empty()) throw ShapeMismatchError("dump contains no L{layer}.H{head} tensors");

  int n_layers = 0;
  int n_heads = 0;
  for (const auto& [index, group] : groups) {
    n_layers = std::max(n_layers, index.layer + 1);
    n_heads = std::max(n_heads, index.head + 1);
  }
  const HeadTensors& first = groups.begin()->second;
  if (!first.q) throw ShapeMismatchError("dump has no query tensor for the first head");
  if (first.q->shape.size() != 2) throw ShapeMismatchError(first.q->name + " must be rank 2");
  const auto seq_len = static_cast<std::int64_t>(first.q->shape[0]);
  const auto head_dim = static_cast<int>(first.q->shape[1]);
  if (head_dim % 2 != 0) throw ShapeMismatchError("head_dim " + std::to_string(head_dim) + " is odd");

  ActivationTrace trace(n_layers, n_heads, head_dim, seq_len);
  for (const HeadIndex index : trace.head_indices()) {
    const auto it = groups.find(index);
    if (it == groups.end() || !it->second.q || !it->second.k || !it->second.score) {
      throw ShapeMismatchError("dump is missing q, k or score for head " + to_string(index));
    }
    HeadTrace& head = trace.at(index);
    head.queries = as_matrix(*it->second.q);
    head.keys = as_matrix(*it->second.k);
    head.probs = as_matrix(*it->second.score);
    if (it->second.logit) head.logits = as_matrix(*it->second.logit);
    if (head.queries.cols() != head_dim || head.keys.cols() != head_dim) {
      throw ShapeMismatchError("head " + to_string(index) + " has inconsistent head_dim");
    }
    if (layout == RotaryLayout::HalfSplit) {
      head.queries = half_split_to_interleaved(head.queries);
      head.keys = half_split_to_interleaved(head.keys);
    }
  }
  try {
    trace.validate(1e-4);
  } catch (const InvariantError& e) {
    throw FormatError(std::string("attention scores are not causal probabilities: ") + e.what());
  }
  return trace;
}

std::filesystem::path export_activations(const ActivationTrace& trace,
                                         const std::filesystem::path& dir,
                                         const std::string& stem, RotaryLayout layout,
                                         DType dtype) {
  Manifest manifest;
  manifest.layout = layout;
  manifest.head_dim = trace.head_dim;
  manifest.n_layers = trace.n_layers;
  manifest.n_heads = trace.n_heads;
  return write_bundle(dir, stem, trace_to_tensors(trace, layout, dtype), manifest);
}

ActivationTrace ingest_activations(const std::filesystem::path& manifest_path) {
  const Bundle bundle = read_bundle(manifest_path);
  ActivationTrace trace = trace_from_tensors(bundle.tensors, bundle.manifest.layout);
  const auto mismatch = [](const char* what, int declared, int found) {
    return ShapeMismatchError(std::string("manifest declares ") + what + " " +
                              std::to_string(declared) + " but the dump has " +
                              std::to_string(found));
  };
  if (bundle.manifest.head_dim && *bundle.manifest.head_dim != trace.head_dim) {
    throw mismatch("head_dim", *bundle.manifest.head_dim, trace.head_dim);
  }
  if (bundle.manifest.n_layers && *bundle.manifest.n_layers != trace.n_layers) {
    throw mismatch("n_layers", *bundle.manifest.n_layers, trace.n_layers);
  }
  if (bundle.manifest.n_heads && *bundle.manifest.n_heads != trace.n_heads) {
    throw mismatch("n_heads", *bundle.manifest.n_heads, trace.n_heads);
  }
  return trace;
}

}  // namespace ropescope
