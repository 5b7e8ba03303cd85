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

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ropescope/errors.hpp"
#include "ropescope/toolkit.hpp"

namespace ropescope {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

double parse_number(std::string_view text, std::string_view context) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("cannot parse '" + std::string(text) + "' as a number in " +
                      std::string(context));
  }
  return value;
}

std::int64_t parse_integer(std::string_view text, std::string_view context) {
  std::int64_t value = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("cannot parse '" + std::string(text) + "' as an integer in " +
                      std::string(context));
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

void require_exists(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p)) throw ConfigError(what + " " + p.string() + " does not exist");
}

ScalingMethod scaling_from_json(const json& value, const std::string& where) {
  if (value.is_string()) return parse_scaling(value.get<std::string>());
  reject_unknown(value, {"method", "scale", "alpha", "beta", "temperature", "new_base",
                         "group_size", "neighbor_window"},
                 where);
  const auto method = get_or<std::string>(value, "method", "none", where);
  if (method == "none") return NoScaling{};
  if (method == "pi") return LinearInterpolation{get_or<double>(value, "scale", 1.0, where)};
  if (method == "yarn") {
    return Yarn{get_or<double>(value, "scale", 1.0, where), get_or<double>(value, "alpha", 1.0, where),
                get_or<double>(value, "beta", 32.0, where),
                get_or<bool>(value, "temperature", true, where)};
  }
  if (method == "base") return BaseScale{get_or<double>(value, "new_base", 10000.0, where)};
  if (method == "selfextend") {
    return SelfExtend{get_or<std::int64_t>(value, "group_size", 1, where),
                      get_or<std::int64_t>(value, "neighbor_window", 0, where)};
  }
  throw ConfigError("unknown scaling method '" + method + "' in " + where);
}

json scaling_to_json(const ScalingMethod& method) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NoScaling>) {
          return {{"method", "none"}};
        } else if constexpr (std::is_same_v<T, LinearInterpolation>) {
          return {{"method", "pi"}, {"scale", m.scale}};
        } else if constexpr (std::is_same_v<T, Yarn>) {
          return {{"method", "yarn"}, {"scale", m.scale}, {"alpha", m.low_rotations},
                  {"beta", m.high_rotations}, {"temperature", m.temperature}};
        } else if constexpr (std::is_same_v<T, BaseScale>) {
          return {{"method", "base"}, {"new_base", m.new_base}};
        } else {
          return {{"method", "selfextend"}, {"group_size", m.group_size},
                  {"neighbor_window", m.neighbor_window}};
        }
      },
      method);
}

ModelConfig model_from_json(const json& doc) {
  const std::string where = "input.model";
  reject_unknown(doc, {"n_layers", "n_heads", "d_model", "head_dim", "ffn_dim", "vocab_size",
                       "norm_eps", "rope_base", "train_len", "layer_scaling"},
                 where);
  ModelConfig m;
  m.n_layers = get_or<int>(doc, "n_layers", m.n_layers, where);
  m.n_heads = get_or<int>(doc, "n_heads", m.n_heads, where);
  m.head_dim = get_or<int>(doc, "head_dim", m.head_dim, where);
  m.d_model = get_or<int>(doc, "d_model", m.n_heads * m.head_dim, where);
  m.ffn_dim = get_or<int>(doc, "ffn_dim", m.ffn_dim, where);
  m.vocab_size = get_or<int>(doc, "vocab_size", m.vocab_size, where);
  m.norm_eps = get_or<double>(doc, "norm_eps", m.norm_eps, where);
  m.freq = FreqSpec{m.head_dim, get_or<double>(doc, "rope_base", m.freq.base, where),
                    get_or<std::int64_t>(doc, "train_len", m.freq.train_len, where)};
  if (doc.contains("layer_scaling")) {
    const json& overrides = doc["layer_scaling"];
    if (!overrides.is_object()) throw ConfigError(where + ".layer_scaling must be an object");
    for (const auto& [key, value] : overrides.items()) {
      const auto layer = static_cast<int>(parse_integer(key, where + ".layer_scaling"));
      m.layer_scaling[layer] = scaling_from_json(value, where + ".layer_scaling." + key);
    }
  }
  return m;
}

json model_to_json(const ModelConfig& m) {
  json overrides = json::object();
  for (const auto& [layer, method] : m.layer_scaling) {
    overrides[std::to_string(layer)] = scaling_to_json(method);
  }
  return {{"n_layers", m.n_layers}, {"n_heads", m.n_heads},   {"d_model", m.d_model},
          {"head_dim", m.head_dim}, {"ffn_dim", m.ffn_dim},   {"vocab_size", m.vocab_size},
          {"norm_eps", m.norm_eps}, {"rope_base", m.freq.base}, {"train_len", m.freq.train_len},
          {"layer_scaling", overrides}};
}

InputSource input_from_json(const json& doc, const std::filesystem::path& base) {
  const std::string where = "input";
  if (!doc.is_object()) throw ConfigError("input must be a JSON object");
  const auto kind = get_or<std::string>(doc, "kind", "synthetic", where);
  if (kind == "synthetic") {
    reject_unknown(doc, {"kind", "seq_len", "head_dim", "base", "planted_heads", "noise_heads",
                         "planted_strength", "planted_jitter", "seed"},
                   where);
    SyntheticSource s;
    s.spec.seq_len = get_or<std::int64_t>(doc, "seq_len", s.spec.seq_len, where);
    s.spec.head_dim = get_or<int>(doc, "head_dim", s.spec.head_dim, where);
    s.spec.base = get_or<double>(doc, "base", s.spec.base, where);
    s.spec.planted_heads = get_or<int>(doc, "planted_heads", s.spec.planted_heads, where);
    s.spec.noise_heads = get_or<int>(doc, "noise_heads", s.spec.noise_heads, where);
    s.spec.planted_strength = get_or<double>(doc, "planted_strength", s.spec.planted_strength, where);
    s.spec.planted_jitter = get_or<double>(doc, "planted_jitter", s.spec.planted_jitter, where);
    if (doc.contains("seed")) s.seed = get_or<std::uint64_t>(doc, "seed", 0, where);
    return s;
  }
  if (kind == "activations") {
    reject_unknown(doc, {"kind", "paths"}, where);
    ActivationSource a;
    for (const auto& p : get_or<std::vector<std::string>>(doc, "paths", {}, where)) {
      a.manifests.push_back(resolve(base, p));
    }
    return a;
  }
  if (kind == "model") {
    reject_unknown(doc, {"kind", "model", "weights", "weights_seed", "prompt_files", "prompts"},
                   where);
    ModelSource m;
    m.model = model_from_json(doc.value("model", json::object()));
    if (doc.contains("weights")) m.weights = resolve(base, get_or<std::string>(doc, "weights", "", where));
    m.weights_seed = get_or<std::uint64_t>(doc, "weights_seed", 0, where);
    for (const auto& p : get_or<std::vector<std::string>>(doc, "prompt_files", {}, where)) {
      m.prompt_files.push_back(resolve(base, p));
    }
    m.prompts = get_or<std::vector<std::string>>(doc, "prompts", {}, where);
    return m;
  }
  throw ConfigError("unknown input kind '" + kind + "'");
}

json input_to_json(const InputSource& input) {
  return std::visit(
      [](const auto& src) -> json {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          const SyntheticTraceSpec& s = src.spec;
          json j = {{"kind", "synthetic"}, {"seq_len", s.seq_len}, {"head_dim", s.head_dim},
                    {"base", s.base}, {"planted_heads", s.planted_heads},
                    {"noise_heads", s.noise_heads}, {"planted_strength", s.planted_strength},
                    {"planted_jitter", s.planted_jitter}};
          j["seed"] = src.seed ? json(*src.seed) : json(nullptr);
          return j;
        } else if constexpr (std::is_same_v<T, ActivationSource>) {
          json paths = json::array();
          for (const auto& p : src.manifests) paths.push_back(p.generic_string());
          return {{"kind", "activations"}, {"paths", paths}};
        } else {
          json files = json::array();
          for (const auto& p : src.prompt_files) files.push_back(p.generic_string());
          json j = {{"kind", "model"}, {"model", model_to_json(src.model)},
                    {"weights_seed", src.weights_seed}, {"prompt_files", files},
                    {"prompts", src.prompts}};
          j["weights"] = src.weights ? json(src.weights->generic_string()) : json(nullptr);
          return j;
        }
      },
      input);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string format_real(double value) {
  if (std::isnan(value)) return "NA";
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.9g", value);
  return buffer;
}

ScalingMethod parse_scaling(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view args = colon == std::string_view::npos ? "" : text.substr(colon + 1);
  const std::vector<std::string_view> parts =
      args.empty() ? std::vector<std::string_view>{} : split(args, ',');
  const auto expect = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) {
      throw ConfigError("malformed scaling '" + std::string(text) + "'");
    }
  };
  ScalingMethod method;
  if (name == "none") {
    expect(0, 0);
    method = NoScaling{};
  } else if (name == "pi") {
    expect(1, 1);
    method = LinearInterpolation{parse_number(parts[0], "pi scaling")};
  } else if (name == "yarn") {
    if (parts.size() != 1 && parts.size() != 3) {
      throw ConfigError("yarn scaling takes <s> or <s>,<alpha>,<beta>");
    }
    Yarn y{parse_number(parts[0], "yarn scaling")};
    if (parts.size() == 3) {
      y.low_rotations = parse_number(parts[1], "yarn alpha");
      y.high_rotations = parse_number(parts[2], "yarn beta");
    }
    method = y;
  } else if (name == "base") {
    expect(1, 1);
    method = BaseScale{parse_number(parts[0], "base scaling")};
  } else if (name == "selfextend") {
    expect(2, 2);
    method = SelfExtend{parse_integer(parts[0], "selfextend group"),
                        parse_integer(parts[1], "selfextend window")};
  } else {
    throw ConfigError("unknown scaling '" + std::string(text) + "'");
  }
  try {
    validate(method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return method;
}

std::string format_scaling(const ScalingMethod& method) {
  return std::visit(
      [](const auto& m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NoScaling>) {
          return "none";
        } else if constexpr (std::is_same_v<T, LinearInterpolation>) {
          return "pi:" + format_real(m.scale);
        } else if constexpr (std::is_same_v<T, Yarn>) {
          return "yarn:" + format_real(m.scale) + "," + format_real(m.low_rotations) + "," +
                 format_real(m.high_rotations);
        } else if constexpr (std::is_same_v<T, BaseScale>) {
          return "base:" + format_real(m.new_base);
        } else {
          return "selfextend:" + std::to_string(m.group_size) + "," +
                 std::to_string(m.neighbor_window);
        }
      },
      method);
}

MaskParams parse_mask(std::string_view text) {
  if (text == "none") return {};
  const std::size_t colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("malformed mask '" + std::string(text) + "'");
  const std::string_view name = text.substr(0, colon);
  MaskParams mask;
  if (name == "top") {
    mask.strategy = MaskStrategy::Top;
  } else if (name == "random") {
    mask.strategy = MaskStrategy::Random;
  } else {
    throw ConfigError("unknown mask strategy '" + std::string(name) + "'");
  }
  mask.fraction = parse_number(text.substr(colon + 1), "mask fraction");
  if (!(mask.fraction >= 0.0 && mask.fraction <= 1.0)) {
    throw ConfigError("mask fraction must lie in [0, 1]");
  }
  return mask;
}

std::string format_mask(const MaskParams& mask) {
  if (!mask.strategy) return "none";
  return std::string(*mask.strategy == MaskStrategy::Top ? "top:" : "random:") +
         format_real(mask.fraction);
}

void ExperimentConfig::validate() const {
  try {
    rope.validate();
    ropescope::validate(scaling);
    if (sampling.rate < 1) throw ConfigError("sampling.rate must be >= 1");
    if (sampling.per_query_k < 1) throw ConfigError("sampling.per_query_k must be >= 1");
    if (sampling.top_k < 1) throw ConfigError("sampling.top_k must be >= 1");
    if (!(mask.fraction >= 0.0 && mask.fraction <= 1.0)) {
      throw ConfigError("mask fraction must lie in [0, 1]");
    }
    for (const std::int64_t d : distances) {
      if (d < 0) throw ConfigError("distances must be nonnegative");
    }
    for (const TokenPair& p : pairs) {
      if (p.key_pos < 0 || p.key_pos > p.query_pos) {
        throw ConfigError("pairs must satisfy 0 <= key_pos <= query_pos");
      }
    }
    if (passkey.key_digits < 1 || passkey.key_digits > 18) {
      throw ConfigError("passkey.key_digits must lie in [1, 18]");
    }
    if (passkey.trials < 1) throw ConfigError("passkey.trials must be >= 1");
    std::visit(
        [](const auto& src) {
          using T = std::decay_t<decltype(src)>;
          if constexpr (std::is_same_v<T, SyntheticSource>) {
            src.spec.validate();
          } else if constexpr (std::is_same_v<T, ActivationSource>) {
            if (src.manifests.empty()) throw ConfigError("input.paths is empty");
            for (const auto& p : src.manifests) require_exists(p, "activation manifest");
          } else {
            src.model.validate();
            if (src.weights) require_exists(*src.weights, "weights manifest");
            for (const auto& p : src.prompt_files) require_exists(p, "prompt file");
          }
        },
        input);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  reject_unknown(doc, {"input", "rope", "scaling", "disable_query_rotation", "sampling", "mask",
                       "rank_by", "heatmap_statistic", "distances", "pairs", "passkey", "seed",
                       "out"},
                 "config");
  ExperimentConfig c;
  if (doc.contains("input")) c.input = input_from_json(doc["input"], base_dir);
  if (doc.contains("rope")) {
    const json& r = doc["rope"];
    reject_unknown(r, {"head_dim", "base", "train_len"}, "rope");
    c.rope.head_dim = get_or<int>(r, "head_dim", c.rope.head_dim, "rope");
    c.rope.base = get_or<double>(r, "base", c.rope.base, "rope");
    c.rope.train_len = get_or<std::int64_t>(r, "train_len", c.rope.train_len, "rope");
  }
  if (doc.contains("scaling")) c.scaling = scaling_from_json(doc["scaling"], "scaling");
  c.disable_query_rotation = get_or<bool>(doc, "disable_query_rotation", false, "config");
  if (doc.contains("sampling")) {
    const json& s = doc["sampling"];
    reject_unknown(s, {"rate", "per_query_k", "top_k"}, "sampling");
    c.sampling.rate = get_or<std::int64_t>(s, "rate", c.sampling.rate, "sampling");
    c.sampling.per_query_k = get_or<std::int64_t>(s, "per_query_k", c.sampling.per_query_k, "sampling");
    c.sampling.top_k = get_or<int>(s, "top_k", c.sampling.top_k, "sampling");
  }
  if (doc.contains("mask")) c.mask = parse_mask(get_or<std::string>(doc, "mask", "none", "config"));
  const auto rank_by = get_or<std::string>(doc, "rank_by", "signed", "config");
  if (rank_by == "signed") {
    c.rank_by = RankBy::SignedRho;
  } else if (rank_by == "abs") {
    c.rank_by = RankBy::AbsoluteRho;
  } else {
    throw ConfigError("rank_by must be 'signed' or 'abs'");
  }
  const auto statistic = get_or<std::string>(doc, "heatmap_statistic", "mean_top_k", "config");
  if (statistic == "mean_top_k") {
    c.heatmap_statistic = HeatmapStatistic::MeanTopK;
  } else if (statistic == "mean_dominant_dim") {
    c.heatmap_statistic = HeatmapStatistic::MeanDominantDim;
  } else {
    throw ConfigError("heatmap_statistic must be 'mean_top_k' or 'mean_dominant_dim'");
  }
  c.distances = get_or<std::vector<std::int64_t>>(doc, "distances", {}, "config");
  for (const auto& p : get_or<std::vector<std::vector<std::int64_t>>>(doc, "pairs", {}, "config")) {
    if (p.size() != 2) throw ConfigError("each entry of pairs must be [query_pos, key_pos]");
    c.pairs.push_back({p[0], p[1]});
  }
  if (doc.contains("passkey")) {
    const json& p = doc["passkey"];
    reject_unknown(p, {"context_lengths", "key_digits", "trials"}, "passkey");
    c.passkey.context_lengths =
        get_or<std::vector<std::size_t>>(p, "context_lengths", c.passkey.context_lengths, "passkey");
    c.passkey.key_digits = get_or<int>(p, "key_digits", c.passkey.key_digits, "passkey");
    c.passkey.trials = get_or<int>(p, "trials", c.passkey.trials, "passkey");
  }
  if (doc.contains("seed") && !doc["seed"].is_null()) {
    c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");
  }
  if (doc.contains("out")) c.out_dir = resolve(base_dir, get_or<std::string>(doc, "out", "", "config"));
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  json doc;
  try {
    doc = json::parse(text.str());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

json canonical_json(const ExperimentConfig& c) {
  json pairs = json::array();
  for (const TokenPair& p : c.pairs) pairs.push_back({p.query_pos, p.key_pos});
  json doc = {
      {"input", input_to_json(c.input)},
      {"rope", {{"head_dim", c.rope.head_dim}, {"base", c.rope.base}, {"train_len", c.rope.train_len}}},
      {"scaling", scaling_to_json(c.scaling)},
      {"disable_query_rotation", c.disable_query_rotation},
      {"sampling",
       {{"rate", c.sampling.rate}, {"per_query_k", c.sampling.per_query_k}, {"top_k", c.sampling.top_k}}},
      {"mask", format_mask(c.mask)},
      {"rank_by", c.rank_by == RankBy::SignedRho ? "signed" : "abs"},
      {"heatmap_statistic",
       c.heatmap_statistic == HeatmapStatistic::MeanTopK ? "mean_top_k" : "mean_dominant_dim"},
      {"distances", c.distances},
      {"pairs", pairs},
      {"passkey",
       {{"context_lengths", c.passkey.context_lengths},
        {"key_digits", c.passkey.key_digits},
        {"trials", c.passkey.trials}}},
  };
  doc["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return doc;
}

std::string config_hash(const ExperimentConfig& config) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_json(config).dump())));
  return buffer;
}

}  // namespace ropescope
