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

#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "ropescope/errors.hpp"
#include "ropescope/toolkit.hpp"

namespace ropescope {

namespace {

int report_error(std::ostream& err, const char* kind, int code, const std::string& message) {
  const nlohmann::json doc = {{"error", {{"type", kind}, {"exit_code", code}, {"message", message}}}};
  err << doc.dump() << '\n';
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ropescope: RoPE attention decomposition and positional-head analysis"};
  app.require_subcommand(0, 1);
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mask;
  std::string scaling;
  bool disable_query_rotation = false;

  std::vector<std::string> commands(std::begin(kPipelineCommands), std::end(kPipelineCommands));
  app.add_option("command", command, "pipeline to run")
      ->required()
      ->check(CLI::IsMember(commands));
  app.add_option("--config", config_path, "JSON experiment configuration");
  app.add_option("--seed", seed, "seed for every random draw");
  app.add_option("--out", out_dir, "output root; artifacts land in <out>/<config hash>/");
  app.add_option("--mask", mask, "top:<fraction> | random:<fraction> | none");
  app.add_option("--scaling", scaling,
                 "none | pi:<s> | yarn:<s>[,alpha,beta] | base:<b> | selfextend:<G>,<w>");
  app.add_flag("--disable-query-rotation", disable_query_rotation,
               "leave queries unrotated (keys keep their rotation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    std::ostringstream help;
    app.exit(e, help, help);
    out << help.str();
    return exit_code::kSuccess;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "config_error", exit_code::kConfig, e.what());
  }

  try {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (!mask.empty()) config.mask = parse_mask(mask);
    if (!scaling.empty()) config.scaling = parse_scaling(scaling);
    if (disable_query_rotation) config.disable_query_rotation = true;
    const RunReport report = run_pipeline(command, config);
    out << report.to_json() << '\n';
    return exit_code::kSuccess;
  } catch (const ConfigError& e) {
    return report_error(err, "config_error", exit_code::kConfig, e.what());
  } catch (const FormatError& e) {
    return report_error(err, "input_format_error", exit_code::kInputFormat, e.what());
  } catch (const std::invalid_argument& e) {
    return report_error(err, "config_error", exit_code::kConfig, e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal_error", exit_code::kInvariant, e.what());
  }
}

}  // namespace ropescope
