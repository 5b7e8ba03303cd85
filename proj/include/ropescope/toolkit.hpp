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
 * @file toolkit.hpp
 * @brief Experiment configuration, pipelines and the command-line entry point.
 *
 * Every pipeline is a pure function of (configuration, input files, seed).
 * Artifacts are assembled in memory and only land in the output directory,
 * `<out>/<config hash>/`, once the whole pipeline has succeeded.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ropescope/analysis.hpp"
#include "ropescope/model.hpp"
#include "ropescope/rope.hpp"
#include "ropescope/synthetic.hpp"

namespace ropescope {

struct SyntheticSource {
  SyntheticTraceSpec spec;
  std::optional<std::uint64_t> seed;  // falls back to the run seed
};

struct ActivationSource {
  std::vector<std::filesystem::path> manifests;
};

struct ModelSource {
  ModelConfig model;
  std::optional<std::filesystem::path> weights;  // random weights when absent
  std::uint64_t weights_seed = 0;
  std::vector<std::filesystem::path> prompt_files;
  std::vector<std::string> prompts;
};

using InputSource = std::variant<SyntheticSource, ActivationSource, ModelSource>;

struct SamplingParams {
  std::int64_t rate = 100;         // random pairs per token
  std::int64_t per_query_k = 100;  // top-attention keys per query
  int top_k = 5;                   // dimensions recorded per pair
};

struct MaskParams {
  std::optional<MaskStrategy> strategy;  // empty: no mask
  double fraction = 0.0;
};

struct PasskeyParams {
  std::vector<std::size_t> context_lengths{384, 512, 768};
  int key_digits = 5;
  int trials = 3;
};

struct ExperimentConfig {
  InputSource input = SyntheticSource{};
  FreqSpec rope;
  ScalingMethod scaling = NoScaling{};
  bool disable_query_rotation = false;
  SamplingParams sampling;
  MaskParams mask;
  RankBy rank_by = RankBy::SignedRho;
  HeatmapStatistic heatmap_statistic = HeatmapStatistic::MeanTopK;
  std::vector<std::int64_t> distances;  // trig-curves; empty = powers of two
  std::vector<TokenPair> pairs;         // decompose: explicit pairs to dump
  PasskeyParams passkey;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "ropescope_out";

  void validate() const;
};

/// Parses a configuration document. Relative paths resolve against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& doc,
                                  const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// The resolved configuration with defaults filled in and the output
/// directory left out. Equal documents mean equal runs.
nlohmann::json canonical_json(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

ScalingMethod parse_scaling(std::string_view text);
std::string format_scaling(const ScalingMethod& method);
MaskParams parse_mask(std::string_view text);
std::string format_mask(const MaskParams& mask);

std::string format_real(double value);  // 9 significant digits

struct RunReport {
  std::string command;
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  double wall_seconds = 0.0;
  std::filesystem::path out_dir;
  std::vector<std::string> files;  // artifact names, relative to out_dir

  std::string to_json() const;
};

inline constexpr const char* kPipelineCommands[] = {
    "freqs", "trig-curves", "decompose", "dominant", "corr",
    "heatmap", "score-heads", "mask-eval", "passkey", "ppl"};

/// In-memory artifacts of one run, committed to disk all at once.
class ArtifactSet {
 public:
  void add(const std::string& name, std::string content);
  const std::map<std::string, std::string>& files() const { return files_; }

  /// Writes each file through a temporary and a rename. On failure every
  /// file written by this call is removed again before rethrowing.
  void commit(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::string> files_;
};

/// Runs one pipeline and returns its artifacts without touching the disk.
ArtifactSet build_artifacts(std::string_view command, const ExperimentConfig& config);

/// build_artifacts + commit + run report.
RunReport run_pipeline(std::string_view command, const ExperimentConfig& config);

/// Worker count from ROPESCOPE_THREADS, capped by the hardware.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads; the first
/// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ropescope
