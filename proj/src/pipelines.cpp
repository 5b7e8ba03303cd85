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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "ropescope/activations.hpp"
#include "ropescope/errors.hpp"
#include "ropescope/random.hpp"
#include "ropescope/tasks.hpp"
#include "ropescope/toolkit.hpp"

namespace ropescope {

namespace {

class Csv {
 public:
  explicit Csv(std::initializer_list<const char*> header) {
    bool first = true;
    for (const char* column : header) {
      if (!first) out_ << ',';
      out_ << column;
      first = false;
    }
    out_ << '\n';
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string cell(double v) { return format_real(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <typename Int, typename = std::enable_if_t<std::is_integral_v<Int>>>
  static std::string cell(Int v) {
    return std::to_string(v);
  }

  std::ostringstream out_;
};

std::uint64_t require_seed(const ExperimentConfig& config, const char* purpose) {
  if (!config.seed) throw ConfigError(std::string("a seed is required for ") + purpose);
  return *config.seed;
}

std::string head_suffix(HeadIndex h) {
  return "L" + std::to_string(h.layer) + "_H" + std::to_string(h.head);
}

// Everything a model-backed pipeline needs.
struct LoadedModel {
  ModelConfig config;
  ModelWeights<float> weights;
  std::vector<std::vector<int>> prompts;
};

LoadedModel load_model(const ModelSource& source, const ExperimentConfig& config) {
  LoadedModel m;
  m.config = source.model;
  m.config.scaling = config.scaling;
  m.weights = source.weights ? load_weights<float>(*source.weights, m.config)
                             : random_weights<float>(m.config, source.weights_seed);
  const ByteTokenizer tokenizer;
  for (const auto& path : source.prompt_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open prompt file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    m.prompts.push_back(tokenizer.encode(text.str()));
  }
  for (const auto& text : source.prompts) m.prompts.push_back(tokenizer.encode(text));
  for (const auto& p : m.prompts) {
    if (p.size() < 2) throw ConfigError("every prompt needs at least two tokens");
  }
  return m;
}

const LoadedModel& need_model(const std::optional<LoadedModel>& model, std::string_view command) {
  if (!model) throw ConfigError(std::string(command) + " needs a model input");
  return *model;
}

// Unmasked traces of every configured input.
std::vector<ActivationTrace> collect_traces(const ExperimentConfig& config,
                                            const std::optional<LoadedModel>& model) {
  std::vector<ActivationTrace> traces;
  std::visit(
      [&](const auto& src) {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          SyntheticTraceSpec spec = src.spec;
          spec.seed = src.seed ? *src.seed : require_seed(config, "the synthetic trace");
          traces.push_back(make_synthetic_trace(spec).trace);
        } else if constexpr (std::is_same_v<T, ActivationSource>) {
          for (const auto& path : src.manifests) traces.push_back(ingest_activations(path));
        } else {
          if (model->prompts.empty()) throw ConfigError("the model input has no prompts");
          ForwardOptions options;
          options.capture_trace = true;
          options.disable_query_rotation = config.disable_query_rotation;
          for (const auto& tokens : model->prompts) {
            traces.push_back(*forward<float>(tokens, model->weights, model->config, options).trace);
          }
        }
      },
      config.input);
  for (const auto& t : traces) {
    if (t.n_layers != traces.front().n_layers || t.n_heads != traces.front().n_heads ||
        t.head_dim != traces.front().head_dim) {
      throw ShapeMismatchError("input traces disagree on n_layers, n_heads or head_dim");
    }
  }
  return traces;
}

std::vector<HeadIndex> head_grid(const ActivationTrace& trace) { return trace.head_indices(); }

// Pools top-attention dominant-dimension records of each head over all traces.
std::map<HeadIndex, DistanceCurve> distance_curves(const std::vector<ActivationTrace>& traces,
                                                   const SamplingParams& sampling) {
  const std::vector<HeadIndex> heads = head_grid(traces.front());
  std::vector<DistanceCurve> curves(heads.size());
  parallel_for(heads.size(), [&](std::size_t i) {
    std::vector<DistanceDimRecord> records;
    for (const ActivationTrace& trace : traces) {
      const HeadTrace& head = trace.at(heads[i]);
      const auto pairs = sample_top_attention_pairs(head.probs, sampling.per_query_k, heads[i]);
      const auto part = dominant_records(head, pairs);
      records.insert(records.end(), part.begin(), part.end());
    }
    curves[i] = aggregate_by_distance(records);
  });
  std::map<HeadIndex, DistanceCurve> out;
  for (std::size_t i = 0; i < heads.size(); ++i) out.emplace(heads[i], std::move(curves[i]));
  return out;
}

std::vector<TokenPair> random_pairs_for(const ActivationTrace& trace, std::size_t trace_index,
                                        HeadIndex head, const ExperimentConfig& config) {
  const std::uint64_t seed = require_seed(config, "random pair sampling");
  const auto slot = static_cast<std::uint64_t>(head.layer) * 65536u + static_cast<std::uint64_t>(head.head);
  return sample_random_pairs(trace.seq_len, config.sampling.rate,
                             derive_seed(derive_seed(seed, 2, trace_index), slot));
}

std::string scores_csv(const std::vector<HeadScore>& scores) {
  Csv csv({"layer", "head", "rho", "n_points"});
  for (const HeadScore& s : scores) {
    csv.row(s.head.layer, s.head.head, s.rho ? *s.rho : std::numeric_limits<double>::quiet_NaN(),
            s.n_points);
  }
  return csv.str();
}

std::string mask_csv(const MaskSet& mask) {
  Csv csv({"layer", "head"});
  for (const HeadIndex h : mask.entries) csv.row(h.layer, h.head);
  return csv.str();
}

MaskSet resolve_mask(const ExperimentConfig& config, const std::vector<HeadScore>& scores) {
  if (!config.mask.strategy) return {};
  const std::uint64_t seed = *config.mask.strategy == MaskStrategy::Random
                                 ? require_seed(config, "a random mask")
                                 : config.seed.value_or(0);
  return select_mask(scores, *config.mask.strategy, config.mask.fraction, seed, config.rank_by);
}

// Scores the model's heads on its prompts and builds the configured mask.
MaskSet model_mask(const ExperimentConfig& config, const std::optional<LoadedModel>& model,
                   ArtifactSet& artifacts) {
  if (!config.mask.strategy) return {};
  if (config.mask.strategy == MaskStrategy::Top && config.mask.fraction > 0.0 &&
      model->prompts.empty()) {
    throw ConfigError("a top mask needs prompts to score heads on");
  }
  std::vector<HeadScore> scores;
  if (!model->prompts.empty()) {
    scores = score_heads(distance_curves(collect_traces(config, model), config.sampling),
                         config.rank_by);
  } else {
    for (int l = 0; l < model->config.n_layers; ++l) {
      for (int h = 0; h < model->config.n_heads; ++h) scores.push_back({{l, h}, std::nullopt, 0});
    }
  }
  MaskSet mask = resolve_mask(config, scores);
  artifacts.add("mask.csv", mask_csv(mask));
  return mask;
}

void run_freqs(const ExperimentConfig& config, ArtifactSet& artifacts) {
  const FrequencyVector base = frequencies(config.rope);
  const bool remaps = std::holds_alternative<SelfExtend>(config.scaling);
  const ScaledFrequencies scaled =
      remaps ? ScaledFrequencies{base, 1.0} : transform_frequencies(config.rope, config.scaling);
  Csv csv({"index", "theta", "scaled_theta", "wavelength"});
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    csv.row(static_cast<long long>(i), base(i), scaled.theta(i), 2.0 * M_PI / scaled.theta(i));
  }
  artifacts.add("freqs.csv", csv.str());
  const nlohmann::json summary = {{"head_dim", config.rope.head_dim},
                                  {"base", config.rope.base},
                                  {"train_len", config.rope.train_len},
                                  {"scaling", format_scaling(config.scaling)},
                                  {"attention_scale", format_real(scaled.attention_scale)}};
  artifacts.add("freqs.json", summary.dump(2) + "\n");
}

void run_trig_curves(const ExperimentConfig& config, ArtifactSet& artifacts) {
  std::vector<std::int64_t> distances = config.distances;
  if (distances.empty()) {
    for (std::int64_t d = 1; d <= 65536; d *= 2) distances.push_back(d);
  }
  const bool remaps = std::holds_alternative<SelfExtend>(config.scaling);
  const FrequencyVector theta =
      remaps ? frequencies(config.rope) : transform_frequencies(config.rope, config.scaling).theta;
  Csv curves({"distance", "index", "cos"});
  Csv bounds({"distance", "effective_distance", "wrap_boundary"});
  for (const std::int64_t d : distances) {
    const std::int64_t effective = remaps ? remap_distance(d, std::get<SelfExtend>(config.scaling)) : d;
    const TrigProfile profile = trig_profile(effective, theta);
    for (Eigen::Index i = 0; i < profile.cosines.size(); ++i) {
      curves.row(d, static_cast<long long>(i), profile.cosines(i));
    }
    bounds.row(d, effective, profile.wrap_boundary);
  }
  artifacts.add("trig_curves.csv", curves.str());
  artifacts.add("wrap_boundary.csv", bounds.str());
}

void run_decompose(const ExperimentConfig& config, const std::vector<ActivationTrace>& traces,
                   ArtifactSet& artifacts) {
  const std::vector<HeadIndex> heads = head_grid(traces.front());
  const int pairs_per_head = traces.front().head_dim / 2;
  const int top_k = std::min(config.sampling.top_k, pairs_per_head);
  // counts[head][dim]: how often a dim was among a pair's top-k.
  std::vector<std::vector<std::int64_t>> counts(heads.size());
  std::vector<std::int64_t> totals(heads.size(), 0);
  parallel_for(heads.size(), [&](std::size_t i) {
    counts[i].assign(static_cast<std::size_t>(pairs_per_head), 0);
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const HeadTrace& head = traces[t].at(heads[i]);
      for (const TokenPair& p : random_pairs_for(traces[t], t, heads[i], config)) {
        for (const int dim : top_contributing_dims(trace_contributions(head, p), top_k)) {
          ++counts[i][static_cast<std::size_t>(dim)];
        }
        ++totals[i];
      }
    }
  });
  Csv top({"layer", "head", "dim", "count", "frequency"});
  for (std::size_t i = 0; i < heads.size(); ++i) {
    for (int dim = 0; dim < pairs_per_head; ++dim) {
      const std::int64_t c = counts[i][static_cast<std::size_t>(dim)];
      top.row(heads[i].layer, heads[i].head, dim, c,
              totals[i] > 0 ? static_cast<double>(c) / static_cast<double>(totals[i]) : 0.0);
    }
  }
  artifacts.add("top_dims.csv", top.str());

  if (!config.pairs.empty()) {
    Csv contributions({"trace", "layer", "head", "query_pos", "key_pos", "dim", "g"});
    for (std::size_t t = 0; t < traces.size(); ++t) {
      for (const HeadIndex h : heads) {
        for (const TokenPair& p : config.pairs) {
          if (p.query_pos >= traces[t].seq_len) {
            throw ConfigError("pair query position " + std::to_string(p.query_pos) +
                              " is outside the sequence");
          }
          const ContributionVector c = trace_contributions(traces[t].at(h), p);
          for (Eigen::Index d = 0; d < c.g.size(); ++d) {
            contributions.row(t, h.layer, h.head, p.query_pos, p.key_pos, static_cast<long long>(d),
                              c.g(d));
          }
        }
      }
    }
    artifacts.add("contributions.csv", contributions.str());
  }
}

void run_dominant(const ExperimentConfig& config, const std::vector<ActivationTrace>& traces,
                  ArtifactSet& artifacts) {
  const std::vector<HeadIndex> heads = head_grid(traces.front());
  std::vector<std::string> files(heads.size());
  parallel_for(heads.size(), [&](std::size_t i) {
    Csv csv({"trace", "query_pos", "key_pos", "distance", "attention_score", "dominant_dim"});
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const HeadTrace& head = traces[t].at(heads[i]);
      for (const PairSample& s :
           sample_top_attention_pairs(head.probs, config.sampling.per_query_k, heads[i])) {
        csv.row(t, s.pair.query_pos, s.pair.key_pos, s.pair.distance(), s.attention_score,
                dominant_dimension(trace_contributions(head, s.pair)));
      }
    }
    files[i] = csv.str();
  });
  for (std::size_t i = 0; i < heads.size(); ++i) {
    artifacts.add("dominant_" + head_suffix(heads[i]) + ".csv", std::move(files[i]));
  }
}

void run_corr(const ExperimentConfig& config, const std::vector<ActivationTrace>& traces,
              ArtifactSet& artifacts) {
  for (const auto& [head, curve] : distance_curves(traces, config.sampling)) {
    Csv csv({"distance", "mean_dominant_dim"});
    for (const CurvePoint& p : curve) csv.row(p.distance, p.mean_dominant_dim);
    artifacts.add("distance_curve_" + head_suffix(head) + ".csv", csv.str());
  }
}

void run_heatmap(const ExperimentConfig& config, const std::vector<ActivationTrace>& traces,
                 ArtifactSet& artifacts) {
  const ActivationTrace& first = traces.front();
  const std::vector<HeadIndex> heads = head_grid(first);
  const int top_k = std::min(config.sampling.top_k, first.head_dim / 2);
  std::vector<Heatmap> partial(heads.size());
  parallel_for(heads.size(), [&](std::size_t i) {
    std::map<HeadIndex, std::vector<ContributionVector>> samples;
    std::vector<ContributionVector>& bucket = samples[heads[i]];
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const HeadTrace& head = traces[t].at(heads[i]);
      for (const TokenPair& p : random_pairs_for(traces[t], t, heads[i], config)) {
        bucket.push_back(trace_contributions(head, p));
      }
    }
    partial[i] =
        dimension_heatmap(samples, first.n_layers, first.n_heads, top_k, config.heatmap_statistic);
  });
  Csv csv({"layer", "head", "mean_top5_dim"});
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const HeadIndex h = heads[i];
    csv.row(h.layer, h.head,
            partial[i].has(h) ? partial[i].values(h.layer, h.head)
                              : std::numeric_limits<double>::quiet_NaN());
  }
  artifacts.add("heatmap.csv", csv.str());
}

void run_score_heads(const ExperimentConfig& config, const std::vector<ActivationTrace>& traces,
                     ArtifactSet& artifacts) {
  const std::vector<HeadScore> scores = score_heads(distance_curves(traces, config.sampling),
                                                    config.rank_by);
  artifacts.add("head_scores.csv", scores_csv(scores));
  if (traces.size() > 1) {
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const std::vector<ActivationTrace> one{traces[t]};
      artifacts.add("head_scores_P" + std::to_string(t) + ".csv",
                    scores_csv(score_heads(distance_curves(one, config.sampling), config.rank_by)));
    }
  }
  if (config.mask.strategy) artifacts.add("mask.csv", mask_csv(resolve_mask(config, scores)));
}

void run_mask_eval(const ExperimentConfig& config, const std::optional<LoadedModel>& model,
                   ArtifactSet& artifacts) {
  const LoadedModel& m = need_model(model, "mask-eval");
  if (!config.mask.strategy) throw ConfigError("mask-eval needs a mask (top:<f> or random:<f>)");
  if (m.prompts.empty()) throw ConfigError("mask-eval needs prompts");
  ForwardOptions masked;
  masked.mask = model_mask(config, model, artifacts);
  masked.disable_query_rotation = config.disable_query_rotation;
  ForwardOptions baseline;
  baseline.disable_query_rotation = config.disable_query_rotation;
  std::vector<double> base_ppl(m.prompts.size());
  std::vector<double> mask_ppl(m.prompts.size());
  parallel_for(m.prompts.size(), [&](std::size_t i) {
    base_ppl[i] = perplexity<float>(m.prompts[i], m.weights, m.config, baseline);
    mask_ppl[i] = perplexity<float>(m.prompts[i], m.weights, m.config, masked);
  });
  Csv csv({"prompt", "tokens", "masked_heads", "ppl_baseline", "ppl_masked", "ppl_delta"});
  for (std::size_t i = 0; i < m.prompts.size(); ++i) {
    csv.row(i, m.prompts[i].size(), masked.mask.size(), base_ppl[i], mask_ppl[i],
            mask_ppl[i] - base_ppl[i]);
  }
  artifacts.add("mask_eval.csv", csv.str());
}

void run_passkey(const ExperimentConfig& config, const std::optional<LoadedModel>& model,
                 ArtifactSet& artifacts) {
  const LoadedModel& m = need_model(model, "passkey");
  const std::uint64_t seed = require_seed(config, "passkey prompts");
  ForwardOptions options;
  options.mask = model_mask(config, model, artifacts);
  options.disable_query_rotation = config.disable_query_rotation;
  struct Job {
    std::size_t context_len;
    int trial;
  };
  std::vector<Job> jobs;
  for (const std::size_t len : config.passkey.context_lengths) {
    for (int t = 0; t < config.passkey.trials; ++t) jobs.push_back({len, t});
  }
  const ByteTokenizer tokenizer;
  struct Outcome {
    PasskeyPrompt prompt;
    int score = 0;
  };
  std::vector<Outcome> outcomes(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    PasskeyPrompt prompt;
    try {
      prompt = passkey_make(jobs[i].context_len, config.passkey.key_digits,
                            derive_seed(seed, jobs[i].context_len, static_cast<std::uint64_t>(jobs[i].trial)),
                            tokenizer);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const std::vector<int> generated =
        greedy_generate<float>(prompt.tokens, config.passkey.key_digits + 2, m.weights, m.config, options);
    outcomes[i].score = passkey_score(tokenizer.decode(generated), prompt.answer);
    outcomes[i].prompt = std::move(prompt);
  });
  Csv csv({"context_len", "trial", "prompt_tokens", "depth_slot", "slot_count", "answer", "score"});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const PasskeyPrompt& p = outcomes[i].prompt;
    csv.row(jobs[i].context_len, jobs[i].trial, p.tokens.size(), p.depth_slot, p.slot_count, p.answer,
            outcomes[i].score);
  }
  artifacts.add("passkey.csv", csv.str());
}

void run_ppl(const ExperimentConfig& config, const std::optional<LoadedModel>& model,
             ArtifactSet& artifacts) {
  const LoadedModel& m = need_model(model, "ppl");
  if (m.prompts.empty()) throw ConfigError("ppl needs prompts");
  ForwardOptions options;
  options.mask = model_mask(config, model, artifacts);
  options.disable_query_rotation = config.disable_query_rotation;
  std::vector<double> ppl(m.prompts.size());
  parallel_for(m.prompts.size(), [&](std::size_t i) {
    ppl[i] = perplexity<float>(m.prompts[i], m.weights, m.config, options);
  });
  Csv csv({"prompt", "tokens", "ppl"});
  for (std::size_t i = 0; i < m.prompts.size(); ++i) csv.row(i, m.prompts[i].size(), ppl[i]);
  artifacts.add("ppl.csv", csv.str());
}

bool known_command(std::string_view command) {
  return std::find(std::begin(kPipelineCommands), std::end(kPipelineCommands), command) !=
         std::end(kPipelineCommands);
}

}  // namespace

std::string RunReport::to_json() const {
  nlohmann::json doc = {{"command", command},
                        {"config_hash", config_hash},
                        {"wall_seconds", wall_seconds},
                        {"out_dir", out_dir.generic_string()},
                        {"files", files}};
  doc["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return doc.dump(2);
}

void ArtifactSet::add(const std::string& name, std::string content) {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos) {
    throw InvariantError("artifact name '" + name + "' is not a plain file name");
  }
  if (!files_.emplace(name, std::move(content)).second) {
    throw InvariantError("artifact " + name + " emitted twice");
  }
}

void ArtifactSet::commit(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<fs::path> staged;
  std::vector<fs::path> placed;
  try {
    for (const auto& [name, content] : files_) {
      const fs::path tmp = dir / (name + ".tmp");
      staged.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      out.close();
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    for (const auto& [name, content] : files_) {
      fs::rename(dir / (name + ".tmp"), dir / name);
      placed.push_back(dir / name);
    }
  } catch (...) {
    std::error_code ignored;
    for (const auto& p : staged) fs::remove(p, ignored);
    for (const auto& p : placed) fs::remove(p, ignored);
    throw;
  }
}

ArtifactSet build_artifacts(std::string_view command, const ExperimentConfig& config) {
  if (!known_command(command)) throw ConfigError("unknown command '" + std::string(command) + "'");
  config.validate();
  ArtifactSet artifacts;
  artifacts.add("config.json", canonical_json(config).dump(2) + "\n");
  if (command == "freqs") {
    run_freqs(config, artifacts);
    return artifacts;
  }
  if (command == "trig-curves") {
    run_trig_curves(config, artifacts);
    return artifacts;
  }

  std::optional<LoadedModel> model;
  if (const auto* source = std::get_if<ModelSource>(&config.input)) {
    try {
      model = load_model(*source, config);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (command == "mask-eval") {
    run_mask_eval(config, model, artifacts);
  } else if (command == "passkey") {
    run_passkey(config, model, artifacts);
  } else if (command == "ppl") {
    run_ppl(config, model, artifacts);
  } else {
    const std::vector<ActivationTrace> traces = collect_traces(config, model);
    if (traces.empty()) throw ConfigError("no input traces");
    if (command == "decompose") run_decompose(config, traces, artifacts);
    else if (command == "dominant") run_dominant(config, traces, artifacts);
    else if (command == "corr") run_corr(config, traces, artifacts);
    else if (command == "heatmap") run_heatmap(config, traces, artifacts);
    else run_score_heads(config, traces, artifacts);
  }
  return artifacts;
}

RunReport run_pipeline(std::string_view command, const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const ArtifactSet artifacts = build_artifacts(command, config);
  RunReport report;
  report.command = std::string(command);
  report.config_hash = config_hash(config);
  report.seed = config.seed;
  report.out_dir = config.out_dir / report.config_hash;
  for (const auto& [name, content] : artifacts.files()) report.files.push_back(name);
  artifacts.commit(report.out_dir);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string report_name = "run_report_" + report.command + ".json";
  report.files.push_back(report_name);
  ArtifactSet summary;
  summary.add(report_name, report.to_json() + "\n");
  summary.commit(report.out_dir);
  return report;
}

unsigned worker_count() {
  const unsigned hardware = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("ROPESCOPE_THREADS");
  if (!env || !*env) return hardware;
  char* end = nullptr;
  const long requested = std::strtol(env, &end, 10);
  if (*end != '\0' || requested < 1) return hardware;
  return std::min(hardware, static_cast<unsigned>(requested));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ropescope
