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

// Activation dumps are RSTN bundles with one tensor group per head:
//
//   L{layer}.H{head}.q      T x head_dim rotated queries
//   L{layer}.H{head}.k      T x head_dim rotated keys
//   L{layer}.H{head}.score  T x T causal attention probabilities
//   L{layer}.H{head}.logit  T x T pre-softmax scores (optional)
//
// Query/key columns follow the manifest's rotary layout and are converted
// to interleaved pairs on ingestion.

#include <filesystem>
#include <string>

#include "ropescope/tensor_store.hpp"
#include "ropescope/trace.hpp"

namespace ropescope {

std::string activation_tensor_name(HeadIndex head, const char* leaf);

std::vector<Tensor> trace_to_tensors(const ActivationTrace& trace, RotaryLayout layout,
                                     DType dtype);

ActivationTrace trace_from_tensors(const std::vector<Tensor>& tensors, RotaryLayout layout);

std::filesystem::path export_activations(const ActivationTrace& trace,
                                         const std::filesystem::path& dir,
                                         const std::string& stem,
                                         RotaryLayout layout = RotaryLayout::Interleaved,
                                         DType dtype = DType::F32);

/// Reads a dump given its manifest path. Format problems surface as the
/// FormatError subclasses in errors.hpp.
ActivationTrace ingest_activations(const std::filesystem::path& manifest_path);

}  // namespace ropescope
