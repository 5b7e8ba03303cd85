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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ropescope {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const int> tokens) const = 0;
  virtual int vocab_size() const = 0;
};

// One token per byte.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<int> encode(std::string_view text) const override;
  std::string decode(std::span<const int> tokens) const override;
  int vocab_size() const override { return 256; }
};

struct PasskeyPrompt {
  std::string text;
  std::vector<int> tokens;
  std::string answer;
  std::size_t depth_slot = 0;  // filler blocks preceding the needle
  std::size_t slot_count = 0;  // number of possible needle positions
};

/// A retrieval prompt of at most `context_len` tokens: instructions, repeated
/// filler with the pass key sentence hidden at a seeded depth, then the
/// question. Throws std::invalid_argument when not even one filler block fits.
PasskeyPrompt passkey_make(std::size_t context_len, int key_digits, std::uint64_t seed,
                           const Tokenizer& tokenizer = ByteTokenizer{});

/// 1 iff the first maximal run of digits in `model_output` equals `answer`.
int passkey_score(std::string_view model_output, std::string_view answer);

}  // namespace ropescope
