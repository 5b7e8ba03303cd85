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

#include "ropescope/tasks.hpp"

#include <cctype>
#include <stdexcept>

#include "ropescope/random.hpp"

namespace ropescope {

namespace {

constexpr std::string_view kPreamble =
    "There is an important info hidden inside a lot of irrelevant text. "
    "Find it and memorize it. I will quiz you about the important information there.\n";
constexpr std::string_view kFiller =
    "The grass is green. The sky is blue. The sun is yellow. Here we go. There and back again. ";
constexpr std::string_view kQuestion = "\nWhat is the pass key? The pass key is";

std::string needle(const std::string& key) {
  return "The pass key is " + key + ". Remember it. " + key + " is the pass key. ";
}

}  // namespace

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (const char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string ByteTokenizer::decode(std::span<const int> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (const int t : tokens) {
    if (t < 0 || t > 255) throw std::invalid_argument("byte tokenizer: id out of range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

PasskeyPrompt passkey_make(std::size_t context_len, int key_digits, std::uint64_t seed,
                           const Tokenizer& tokenizer) {
  if (key_digits < 1 || key_digits > 18) {
    throw std::invalid_argument("passkey: key_digits must lie in [1, 18]");
  }
  Rng rng(seed);
  std::string key;
  key.push_back(static_cast<char>('1' + uniform_below(rng, 9)));
  for (int i = 1; i < key_digits; ++i) key.push_back(static_cast<char>('0' + uniform_below(rng, 10)));

  const std::string hidden = needle(key);
  const std::size_t fixed = tokenizer.encode(kPreamble).size() + tokenizer.encode(hidden).size() +
                            tokenizer.encode(kQuestion).size();
  const std::size_t block = tokenizer.encode(kFiller).size();
  if (context_len < fixed + block) {
    throw std::invalid_argument("passkey: context_len " + std::to_string(context_len) +
                                " cannot hold the template and one filler block (" +
                                std::to_string(fixed + block) + " tokens)");
  }
  const std::size_t blocks = (context_len - fixed) / block;

  PasskeyPrompt prompt;
  prompt.answer = key;
  prompt.slot_count = blocks + 1;
  prompt.depth_slot = static_cast<std::size_t>(uniform_below(rng, prompt.slot_count));
  prompt.text.reserve(fixed + blocks * block);
  prompt.text += kPreamble;
  for (std::size_t i = 0; i < blocks; ++i) {
    if (i == prompt.depth_slot) prompt.text += hidden;
    prompt.text += kFiller;
  }
  if (prompt.depth_slot == blocks) prompt.text += hidden;
  prompt.text += kQuestion;
  prompt.tokens = tokenizer.encode(prompt.text);
  return prompt;
}

int passkey_score(std::string_view model_output, std::string_view answer) {
  const auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::size_t begin = 0;
  while (begin < model_output.size() && !is_digit(model_output[begin])) ++begin;
  if (begin == model_output.size()) return 0;
  std::size_t end = begin;
  while (end < model_output.size() && is_digit(model_output[end])) ++end;
  return model_output.substr(begin, end - begin) == answer ? 1 : 0;
}

}  // namespace ropescope
