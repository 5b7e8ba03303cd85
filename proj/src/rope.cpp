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

#include "ropescope/rope.hpp"

#include <algorithm>
#include <numbers>

namespace ropescope {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_scale(double scale, const char* what) {
  if (!(scale > 1.0) || !std::isfinite(scale)) {
    throw std::invalid_argument(std::string(what) + ": scale must be a finite value > 1");
  }
}

}  // namespace

void FreqSpec::validate() const {
  if (head_dim < 2 || head_dim % 2 != 0) {
    throw std::invalid_argument("head_dim must be even and >= 2, got " + std::to_string(head_dim));
  }
  if (!(base > 1.0) || !std::isfinite(base)) {
    throw std::invalid_argument("rope base must be a finite value > 1");
  }
  if (train_len <= 0) {
    throw std::invalid_argument("train_len must be positive");
  }
}

void validate(const ScalingMethod& method) {
  std::visit(Overloaded{
                 [](const NoScaling&) {},
                 [](const LinearInterpolation& m) { require_scale(m.scale, "linear interpolation"); },
                 [](const Yarn& m) {
                   require_scale(m.scale, "yarn");
                   if (!(m.low_rotations > 0.0) || !(m.low_rotations < m.high_rotations)) {
                     throw std::invalid_argument("yarn: requires 0 < alpha < beta");
                   }
                 },
                 [](const BaseScale& m) {
                   if (!(m.new_base > 1.0) || !std::isfinite(m.new_base)) {
                     throw std::invalid_argument("base scaling: new base must be > 1");
                   }
                 },
                 [](const SelfExtend& m) {
                   if (m.group_size < 1) throw std::invalid_argument("selfextend: group size must be >= 1");
                   if (m.neighbor_window < 0) {
                     throw std::invalid_argument("selfextend: neighbor window must be >= 0");
                   }
                 },
             },
             method);
}

FrequencyVector frequencies(const FreqSpec& spec) {
  spec.validate();
  const int pairs = spec.pair_count();
  FrequencyVector theta(pairs);
  const double d = static_cast<double>(spec.head_dim);
  for (int i = 0; i < pairs; ++i) {
    theta[i] = std::pow(spec.base, -2.0 * static_cast<double>(i) / d);
  }
  return theta;
}

double yarn_ramp(double theta, std::int64_t train_len, const Yarn& yarn) {
  const double rotations = static_cast<double>(train_len) * theta / (2.0 * std::numbers::pi);
  const double gamma = (rotations - yarn.low_rotations) / (yarn.high_rotations - yarn.low_rotations);
  return std::clamp(gamma, 0.0, 1.0);
}

ScaledFrequencies transform_frequencies(const FreqSpec& spec, const ScalingMethod& method) {
  validate(method);
  const FrequencyVector theta = frequencies(spec);
  return std::visit(
      Overloaded{
          [&](const NoScaling&) { return ScaledFrequencies{theta, 1.0}; },
          [&](const LinearInterpolation& m) {
            return ScaledFrequencies{FrequencyVector(theta / m.scale), 1.0};
          },
          [&](const BaseScale& m) {
            FreqSpec rebased = spec;
            rebased.base = m.new_base;
            return ScaledFrequencies{frequencies(rebased), 1.0};
          },
          [&](const Yarn& m) {
            FrequencyVector scaled(theta.size());
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
              const double gamma = yarn_ramp(theta[i], spec.train_len, m);
              if (gamma == 0.0) {
                scaled[i] = theta[i] / m.scale;
              } else if (gamma == 1.0) {
                scaled[i] = theta[i];
              } else {
                scaled[i] = (1.0 - gamma) * (theta[i] / m.scale) + gamma * theta[i];
              }
            }
            const double scale = m.temperature ? 0.1 * std::log(m.scale) + 1.0 : 1.0;
            return ScaledFrequencies{scaled, scale};
          },
          [&](const SelfExtend&) -> ScaledFrequencies {
            throw std::invalid_argument(
                "selfextend does not rescale frequencies; use remap_distance");
          },
      },
      method);
}

std::int64_t remap_distance(std::int64_t rel, const SelfExtend& method) {
  if (rel < 0) throw std::invalid_argument("remap_distance: negative relative distance");
  validate(ScalingMethod{method});
  if (rel <= method.neighbor_window) return rel;
  return method.neighbor_window + (rel - method.neighbor_window) / method.group_size;
}

int wrap_boundary(std::int64_t distance, const FrequencyVector& theta) {
  if (distance < 0) throw std::invalid_argument("wrap_boundary: negative distance");
  const double dist = static_cast<double>(distance);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (dist * theta[i] <= std::numbers::pi) return static_cast<int>(i);
  }
  return static_cast<int>(theta.size());
}

TrigProfile trig_profile(std::int64_t distance, const FrequencyVector& theta) {
  TrigProfile profile;
  profile.wrap_boundary = wrap_boundary(distance, theta);
  const double dist = static_cast<double>(distance);
  profile.cosines = (dist * theta.array()).cos().matrix();
  return profile;
}

}  // namespace ropescope
