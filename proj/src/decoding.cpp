#include "decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "training.hpp"

namespace tod {

using nlohmann::json;

std::string_view strategy_name(Strategy s) noexcept {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::topk: return "topk";
    case Strategy::nucleus: return "nucleus";
  }
  return "?";
}

void DecodePolicy::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::config, "p must be in (0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::config, "temperature must be > 0");
  if (k < 1) throw Error(ErrorCode::config, "k must be >= 1");
  if (max_new_tokens < 0) throw Error(ErrorCode::config, "max_new_tokens must be >= 0");
}

json DecodePolicy::to_json() const {
  return {{"strategy", strategy_name(strategy)},
          {"p", p},
          {"k", k},
          {"temperature", temperature},
          {"max_new_tokens", max_new_tokens},
          {"stop_tokens", stop_tokens},
          {"seed", seed}};
}

DecodePolicy DecodePolicy::from_json(const json& doc) {
  DecodePolicy policy;
  if (!doc.is_object()) throw Error(ErrorCode::config, "decode policy must be an object");
  try {
    if (doc.contains("strategy")) {
      const auto s = doc["strategy"].get<std::string>();
      if (s == "greedy") policy.strategy = Strategy::greedy;
      else if (s == "topk") policy.strategy = Strategy::topk;
      else if (s == "nucleus") policy.strategy = Strategy::nucleus;
      else throw Error(ErrorCode::config, "unknown decoding strategy '" + s + "'");
    }
    policy.p = doc.value("p", policy.p);
    policy.k = doc.value("k", policy.k);
    policy.temperature = doc.value("temperature", policy.temperature);
    policy.max_new_tokens = doc.value("max_new_tokens", policy.max_new_tokens);
    policy.stop_tokens = doc.value("stop_tokens", policy.stop_tokens);
    policy.seed = doc.value("seed", policy.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad decode policy: ") + e.what());
  }
  policy.validate();
  return policy;
}

namespace {

void check_distribution(std::span<const double> dist) {
  if (dist.empty()) throw Error(ErrorCode::invalid_argument, "empty distribution");
  double sum = 0.0;
  for (double v : dist) {
    if (!(v >= 0.0)) throw Error(ErrorCode::invalid_argument, "negative or NaN probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw Error(ErrorCode::invalid_argument, "distribution sums to " + std::to_string(sum));
}

std::vector<std::size_t> descending_order(std::span<const double> dist) {
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  return order;
}

std::vector<double> keep_prefix(std::span<const double> dist, const std::vector<std::size_t>& order,
                                std::size_t keep) {
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += dist[order[i]];
  std::vector<double> out(dist.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = dist[order[i]] / mass;
  return out;
}

}  // namespace

std::size_t greedy_next(std::span<const double> dist) {
  check_distribution(dist);
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return best;
}

std::vector<double> nucleus_filter(std::span<const double> dist, double p) {
  check_distribution(dist);
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::invalid_argument, "p must be in (0, 1]");
  if (p >= 1.0) return {dist.begin(), dist.end()};
  const auto order = descending_order(dist);
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += dist[order[keep++]];
    if (cum >= p) break;
  }
  return keep_prefix(dist, order, keep);
}

std::vector<double> topk_filter(std::span<const double> dist, int k) {
  check_distribution(dist);
  if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be >= 1");
  const auto order = descending_order(dist);
  return keep_prefix(dist, order, std::min(order.size(), static_cast<std::size_t>(k)));
}

std::size_t sample_next(std::span<const double> dist, Rng& rng) {
  check_distribution(dist);
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last = i;
    cum += dist[i];
    if (u < cum) return i;
  }
  // u landed in the rounding gap above the accumulated mass
  return last;
}

Generation generate(const Params<float>& params, const Vocab& vocab, const TokenSequence& context,
                    const DecodePolicy& policy) {
  policy.validate();
  const auto limit = static_cast<std::size_t>(params.config.context_limit);
  const auto budget = static_cast<std::size_t>(policy.max_new_tokens);
  if (context.size() == 0) throw Error(ErrorCode::contract, "empty context");
  if (context.size() + budget > limit)
    throw Error(ErrorCode::contract, "context of " + std::to_string(context.size()) +
                                         " tokens leaves no room for " +
                                         std::to_string(budget) + " new tokens");

  Rng rng(policy.seed);
  Generation out;
  TokenSequence seq = context;
  std::vector<double> dist(static_cast<std::size_t>(params.config.vocab_size));
  for (std::size_t step = 0; step < budget; ++step) {
    const auto fwd = forward(params, seq, RowRange{seq.size() - 1, seq.size()});
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < dist.size(); ++i) {
      dist[i] = static_cast<double>(fwd.logits(0, static_cast<Eigen::Index>(i))) / policy.temperature;
      mx = std::max(mx, dist[i]);
    }
    double z = 0.0;
    for (double& v : dist) z += (v = std::exp(v - mx));
    for (double& v : dist) v /= z;

    std::size_t next = 0;
    switch (policy.strategy) {
      case Strategy::greedy: next = greedy_next(dist); break;
      case Strategy::topk: next = sample_next(topk_filter(dist, policy.k), rng); break;
      case Strategy::nucleus: next = sample_next(nucleus_filter(dist, policy.p), rng); break;
    }
    const auto id = static_cast<TokenId>(next);
    if (std::find(policy.stop_tokens.begin(), policy.stop_tokens.end(), id) !=
        policy.stop_tokens.end())
      break;
    out.tokens.push_back(id);
    out.logprobs.push_back(std::log(dist[next]));
    seq.push(id, Role::system);
  }
  out.text = vocab.decode(out.tokens);
  return out;
}

Generation generate(const Params<float>& params, const Vocab& vocab, const ContextText& context,
                    const DecodePolicy& policy) {
  TokenSequence seq = encode_context(vocab, context);
  const auto limit = static_cast<std::size_t>(params.config.context_limit);
  const auto budget = static_cast<std::size_t>(std::max(policy.max_new_tokens, 0));
  if (budget + 2 > limit)
    throw Error(ErrorCode::contract, "max_new_tokens does not fit the context limit");
  truncate_context(seq, limit - budget);
  return generate(params, vocab, seq, policy);
}

}  // namespace tod
