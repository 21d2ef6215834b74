#include <algorithm>
#include <cmath>
#include <numeric>

#include "decoding.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace tod;

namespace {

std::vector<double> random_dist(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> d(n);
  double s = 0;
  for (auto& v : d) s += (v = e(rng));
  for (auto& v : d) v /= s;
  return d;
}

double sum(const std::vector<double>& d) { return std::accumulate(d.begin(), d.end(), 0.0); }

std::vector<std::size_t> support(const std::vector<double>& d) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) s.push_back(i);
  return s;
}

}  // namespace

TEST_CASE("greedy_next") {
  CHECK(greedy_next(std::vector<double>{0.1, 0.7, 0.2}) == 1);
  CHECK(greedy_next(std::vector<double>{0.5, 0.5}) == 0);
  CHECK_THROWS_AS(greedy_next(std::vector<double>{}), Error);
  CHECK_THROWS_AS(greedy_next(std::vector<double>{0.5, 0.6}), Error);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_dist(rng, 1 + rng() % 50);
    std::size_t best = 0;
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d[j] > d[best]) best = j;
    CHECK(greedy_next(d) == best);
  }
}

TEST_CASE("nucleus_filter hand example") {
  const std::vector<double> d = {0.5, 0.3, 0.15, 0.05};
  const auto f = nucleus_filter(d, 0.9);
  CHECK(std::abs(f[0] - 0.5 / 0.95) < 1e-9);
  CHECK(std::abs(f[1] - 0.3 / 0.95) < 1e-9);
  CHECK(std::abs(f[2] - 0.15 / 0.95) < 1e-9);
  CHECK(f[3] == 0.0);
  CHECK(nucleus_filter(d, 1.0) == d);
  // mass exactly reaching p keeps the crossing word and nothing after it
  CHECK(support(nucleus_filter(std::vector<double>{0.25, 0.25, 0.5}, 0.75)) ==
        std::vector<std::size_t>{0, 2});
  // ties go to the lower index
  CHECK(support(nucleus_filter(std::vector<double>{0.3, 0.4, 0.3}, 0.5)) ==
        std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(nucleus_filter(d, 0.0), Error);
  CHECK_THROWS_AS(nucleus_filter(d, 1.5), Error);
}

TEST_CASE("nucleus_filter keeps the smallest descending prefix reaching p") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> up(0.01, 0.999);
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_dist(rng, 2 + rng() % 40);
    const double p = up(rng);
    const auto f = nucleus_filter(d, p);
    CHECK(std::abs(sum(f) - 1.0) < 1e-9);
    // brute force: grow the set of largest entries until its mass reaches p
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] > d[b] || (d[a] == d[b] && a < b); });
    double mass = 0;
    std::vector<std::size_t> keep;
    for (std::size_t j : order) {
      keep.push_back(j);
      mass += d[j];
      if (mass >= p) break;
    }
    std::sort(keep.begin(), keep.end());
    CHECK(support(f) == keep);
    for (std::size_t j : keep) CHECK(std::abs(f[j] - d[j] / mass) < 1e-12);

    // refiltering never grows the support
    const auto again = support(nucleus_filter(f, p));
    CHECK(std::includes(keep.begin(), keep.end(), again.begin(), again.end()));

    // p below the largest probability degenerates to greedy
    const double top = *std::max_element(d.begin(), d.end());
    const auto g = nucleus_filter(d, top * 0.999);
    CHECK(support(g) == std::vector<std::size_t>{greedy_next(d)});
    CHECK(g[greedy_next(d)] == 1.0);
  }
}

TEST_CASE("refiltering can shrink the nucleus") {
  // (0.5, 0.3, 0.2) at p=0.6 keeps {0, 1}; renormalized, 0.625 alone reaches p.
  const auto f = nucleus_filter(std::vector<double>{0.5, 0.3, 0.2}, 0.6);
  CHECK(support(f) == std::vector<std::size_t>{0, 1});
  CHECK(support(nucleus_filter(f, 0.6)) == std::vector<std::size_t>{0});
  // when the kept prefix minus its last word stays below p after
  // renormalization the support is stable
  const auto h = nucleus_filter(std::vector<double>{0.4, 0.3, 0.3}, 0.6);
  CHECK(support(nucleus_filter(h, 0.6)) == support(h));
}

TEST_CASE("topk_filter") {
  const auto f = topk_filter(std::vector<double>{0.1, 0.4, 0.2, 0.3}, 2);
  CHECK(support(f) == std::vector<std::size_t>{1, 3});
  CHECK(f[1] == doctest::Approx(4.0 / 7.0));
  CHECK(topk_filter(std::vector<double>{0.5, 0.5}, 10) == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(topk_filter(std::vector<double>{1.0}, 0), Error);
}

TEST_CASE("sample_next frequencies") {
  Rng rng(11);
  const std::vector<double> d = {0.2, 0.3, 0.5};
  const int n = 100000;
  std::vector<int> counts(3);
  for (int i = 0; i < n; ++i) ++counts[sample_next(d, rng)];
  for (int j = 0; j < 3; ++j) {
    const double sigma = std::sqrt(n * d[j] * (1 - d[j]));
    CHECK(std::abs(counts[j] - n * d[j]) < 4 * sigma);
  }
  CHECK(sample_next(std::vector<double>{0, 0, 1, 0}, rng) == 2);
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) CHECK(sample_next(d, a) == sample_next(d, b));
}

TEST_CASE("policy validation and JSON") {
  DecodePolicy p;
  p.strategy = Strategy::nucleus;
  p.p = 0.7;
  p.seed = 5;
  const auto back = DecodePolicy::from_json(p.to_json());
  CHECK(back.strategy == Strategy::nucleus);
  CHECK(back.p == 0.7);
  CHECK(back.seed == 5);
  CHECK_THROWS_AS(DecodePolicy::from_json({{"strategy", "beam"}}), Error);
  CHECK_THROWS_AS(DecodePolicy::from_json({{"p", 0.0}}), Error);
  CHECK_THROWS_AS(DecodePolicy::from_json({{"temperature", -1.0}}), Error);
}

TEST_CASE("generation") {
  const auto corpus = synthesize_corpus(6, 10);
  const Vocab vocab = testing::small_vocab(corpus, 320);
  auto cfg = testing::tiny_config(vocab.size(), 2, 16);
  const auto params = init_model<float>(cfg);
  const auto examples = build_examples(corpus, vocab, kDefaultHistoryWindow);

  DecodePolicy greedy;
  greedy.max_new_tokens = 12;
  greedy.stop_tokens = {};
  auto ctx = examples[0].context;
  truncate_context(ctx, 100);

  SUBCASE("greedy is deterministic and logprobs come from the model") {
    const auto a = generate(params, vocab, ctx, greedy);
    const auto b = generate(params, vocab, ctx, greedy);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() == 12);
    CHECK(a.text == vocab.decode(a.tokens));
    auto seq = ctx;
    for (std::size_t i = 0; i < a.tokens.size(); ++i) {
      const auto logits = forward(params, seq).logits;
      const auto row = logits.row(static_cast<Eigen::Index>(seq.size() - 1)).cast<double>();
      const double lse = row.maxCoeff() + std::log((row.array() - row.maxCoeff()).exp().sum());
      Eigen::Index arg;
      row.maxCoeff(&arg);
      CHECK(a.tokens[i] == arg);
      CHECK(a.logprobs[i] == doctest::Approx(row(arg) - lse).epsilon(1e-5));
      seq.push(a.tokens[i], Role::system);
    }
  }

  SUBCASE("stop tokens end the reply and are stripped") {
    const auto a = generate(params, vocab, ctx, greedy);
    DecodePolicy stop = greedy;
    stop.stop_tokens = {a.tokens[3]};
    const auto first = std::find(a.tokens.begin(), a.tokens.end(), a.tokens[3]) - a.tokens.begin();
    const auto s = generate(params, vocab, ctx, stop);
    CHECK(s.tokens == std::vector<TokenId>(a.tokens.begin(), a.tokens.begin() + first));
  }

  SUBCASE("tiny p reproduces greedy") {
    DecodePolicy nucleus = greedy;
    nucleus.strategy = Strategy::nucleus;
    nucleus.p = 1e-9;
    for (std::size_t e = 0; e < 20 && e < examples.size(); ++e) {
      auto c = examples[e].context;
      truncate_context(c, 100);
      nucleus.seed = e;
      CHECK(generate(params, vocab, c, nucleus).tokens == generate(params, vocab, c, greedy).tokens);
    }
  }

  SUBCASE("sampling is reproducible per seed") {
    DecodePolicy nucleus = greedy;
    nucleus.strategy = Strategy::nucleus;
    nucleus.p = 0.95;
    nucleus.seed = 4;
    CHECK(generate(params, vocab, ctx, nucleus).tokens == generate(params, vocab, ctx, nucleus).tokens);
  }

  SUBCASE("zero budget and overlong contexts") {
    DecodePolicy none = greedy;
    none.max_new_tokens = 0;
    const auto g = generate(params, vocab, ctx, none);
    CHECK(g.tokens.empty());
    CHECK(g.text.empty());
    std::mt19937_64 rng(1);
    const auto long_ctx = testing::random_sequence(rng, 120, static_cast<int>(vocab.size()));
    CHECK_THROWS_AS(generate(params, vocab, long_ctx, greedy), Error);
  }

  SUBCASE("text contexts are truncated to fit") {
    std::vector<Utterance> history;
    for (int i = 0; i < 5; ++i)
      history.push_back({i % 2 ? Speaker::system : Speaker::user,
                         "a very long utterance that repeats itself again and again and again"});
    const auto c = build_context(history, {}, {});
    CHECK(encode_context(vocab, c).size() > 116);
    CHECK(generate(params, vocab, c, greedy).tokens.size() == 12);
  }
}
