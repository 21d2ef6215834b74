#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "context_codec.hpp"
#include "json.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace tod {

enum class Strategy { greedy, topk, nucleus };

std::string_view strategy_name(Strategy s) noexcept;

struct DecodePolicy {
  Strategy strategy = Strategy::greedy;
  double p = 0.9;
  int k = 40;
  double temperature = 1.0;
  int max_new_tokens = 64;
  std::vector<TokenId> stop_tokens = {Vocab::kEos};
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DecodePolicy from_json(const nlohmann::json& doc);
};

// Argmax; ties go to the lowest index.
std::size_t greedy_next(std::span<const double> dist);

// Keeps the smallest prefix of the descending order (ties by index) whose
// mass reaches p, including the element that crosses p, and renormalizes.
std::vector<double> nucleus_filter(std::span<const double> dist, double p);

std::vector<double> topk_filter(std::span<const double> dist, int k);

// Inverse-CDF draw using one uniform01 value.
std::size_t sample_next(std::span<const double> dist, Rng& rng);

struct Generation {
  std::string text;
  std::vector<TokenId> tokens;  // stop token excluded
  std::vector<double> logprobs;  // of each token under the temperature-scaled model
};

// The context must leave room for max_new_tokens.
Generation generate(const Params<float>& params, const Vocab& vocab, const TokenSequence& context,
                    const DecodePolicy& policy);

// Encodes the context, dropping its oldest tokens if it does not fit.
Generation generate(const Params<float>& params, const Vocab& vocab, const ContextText& context,
                    const DecodePolicy& policy);

}  // namespace tod
