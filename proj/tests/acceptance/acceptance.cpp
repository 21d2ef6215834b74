// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// `acceptance --quick` skips the desk-scale training run and the checks
// that depend on its model.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "bleu_oracle.hpp"
#include "decoding.hpp"
#include "evaluation.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace tod;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s  %-22s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
}

void skip(const char* name, const char* why) { std::printf("SKIP  %-22s %s\n", name, why); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

template <typename Real>
void jitter(Params<Real>& p, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : p.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] += static_cast<Real>(n(rng));
}

// Shared desk-scale setup: the synthetic corpus, its split and vocabulary.
struct Desk {
  Corpus corpus = synthesize_corpus(7, 200);
  Splits parts = split(corpus, {}, 7);
  Vocab vocab = testing::small_vocab(corpus, 512);
};

BeliefState random_belief(std::mt19937_64& rng, const Database& db,
                          const std::vector<std::string>& values) {
  BeliefState b;
  for (const auto& [domain, slots] : db.schema) {
    if (rng() % 3 == 0) continue;
    for (const auto& slot : slots)
      if (rng() % 2) b[domain][slot] = values[rng() % values.size()];
  }
  return b;
}

// Frequencies of `draws` samples within 4 sigma of `expected`; zero-probability
// entries must never be drawn.
Outcome frequencies_match(const std::vector<double>& dist, const std::vector<double>& expected,
                          int draws, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> counts(dist.size());
  for (int i = 0; i < draws; ++i) ++counts[sample_next(dist, rng)];
  double worst = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (expected[j] == 0.0) {
      if (counts[j] != 0) return {false, fmt("index %zu drawn %d times with probability 0", j, counts[j])};
      continue;
    }
    const double sigma = std::sqrt(draws * expected[j] * (1 - expected[j]));
    worst = std::max(worst, std::abs(counts[j] - draws * expected[j]) / sigma);
  }
  return {worst < 4.0, fmt("max deviation %.2f sigma", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  Desk desk;

  report("tokenizer-roundtrip", [&] {
    std::mt19937_64 rng(1);
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto s = testing::random_utf8(rng);
      bad += desk.vocab.decode(desk.vocab.encode(s)) != s;
    }
    std::size_t texts = 0;
    for (const auto& d : desk.corpus.dialogues)
      for (const auto& t : d.turns)
        for (const auto* s : {&t.text, &t.delex_text}) {
          bad += desk.vocab.decode(desk.vocab.encode(*s)) != *s;
          ++texts;
        }
    return Outcome{bad == 0, fmt("%d failures over 10000 random strings and %zu corpus texts", bad, texts)};
  });

  report("codec-roundtrip", [&] {
    const Database& db = desk.corpus.db;
    std::set<std::string> schema_words;
    for (const auto& [domain, slots] : db.schema) {
      schema_words.insert(domain);
      schema_words.insert(slots.begin(), slots.end());
    }
    // entity values whose words never double as schema words
    std::vector<std::string> values;
    for (const auto& [domain, records] : db.entities)
      for (const auto& r : records)
        for (const auto& [attr, v] : r) {
          bool clash = false;
          for (const auto& w : bleu_tokens(v)) clash |= schema_words.contains(w);
          if (!clash) values.push_back(v);
        }
    std::mt19937_64 rng(2);
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto b = random_belief(rng, db, values);
      bad += parse_belief(serialize_belief(b), db) != canonicalize(b);
    }
    return Outcome{bad == 0, fmt("%d failures over 10000 belief states", bad)};
  });

  report("gradient-check", [&] {
    const double cpu0 = cpu_seconds();
    auto cfg = testing::tiny_config(desk.vocab.size(), 2, 32);
    cfg.n_heads = 4;
    cfg.d_ff = 128;
    cfg.context_limit = 64;
    auto p = init_model<double>(cfg);
    jitter(p, 0.1, 5);
    const auto examples = build_examples(desk.parts.train, desk.vocab, kDefaultHistoryWindow);
    const auto pool = ReplyPool::from_corpus(desk.parts.train, desk.vocab);
    Rng rng(3);
    const std::vector<TrainingExample> two = {examples[0], examples[5]};
    const Batch batch = make_batch(two, pool, 2, cfg.context_limit, rng);
    const auto r = testing::grad_check(p, batch, TrainConfig{}, 0.01, 4, 1e-4);
    std::size_t min_kind = SIZE_MAX;
    for (const auto& [kind, n] : r.per_kind) min_kind = std::min(min_kind, n);
    const double cpu = cpu_seconds() - cpu0;
    return Outcome{r.max_rel_error < 1e-4 && cpu < 120.0,
                   fmt("max rel error %.2e (< 1e-4) over %zu of %zu weights, %zu tensor kinds, "
                       "fewest per kind %zu, %.1fs cpu (< 120s)",
                       r.max_rel_error, r.sampled, r.total, r.per_kind.size(), min_kind, cpu)};
  });

  report("loss-composition", [&] {
    const auto p = init_model<double>(testing::tiny_config(desk.vocab.size(), 2, 32));
    const auto examples = build_examples(desk.parts.train, desk.vocab, kDefaultHistoryWindow);
    const auto pool = ReplyPool::from_corpus(desk.parts.train, desk.vocab);
    Rng rng(6);
    const std::vector<TrainingExample> some(examples.begin(), examples.begin() + 6);
    const Batch b = make_batch(some, pool, 2, 128, rng);
    const TrainConfig tc;  // lm_weight 2, cls_weight 1
    const auto loss = combined_loss(p, b, tc);
    const double diff = std::abs(loss.total - (2.0 * loss.lm + loss.cls));
    return Outcome{diff <= 1e-12 && tc.lm_weight == 2.0 && tc.cls_weight == 1.0,
                   fmt("|total - (2*L_lm + L_cls)| = %.1e (<= 1e-12), L_lm %.4f, L_cls %.4f", diff,
                       loss.lm, loss.cls)};
  });

  report("causality", [&] {
    auto p = init_model<float>(testing::tiny_config(desk.vocab.size(), 2, 32));
    jitter(p, 0.1, 7);
    std::mt19937_64 rng(8);
    int bad = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto seq = testing::random_sequence(rng, 2 + rng() % 126, static_cast<int>(desk.vocab.size()));
      auto mutated = seq;
      const std::size_t j = 1 + rng() % (seq.size() - 1);
      mutated.ids[j] = static_cast<TokenId>((mutated.ids[j] + 1 + rng() % 100) % desk.vocab.size());
      mutated.segments[j] ^= static_cast<std::uint8_t>(rng() % 2);
      const auto a = forward(p, seq).logits;
      const auto b = forward(p, mutated).logits;
      const auto rows = static_cast<Eigen::Index>(j);
      bad += !(a.topRows(rows).array() == b.topRows(rows).array()).all();
    }
    return Outcome{bad == 0, fmt("%d of 100 mutations changed an earlier position's logits", bad)};
  });

  report("nucleus-correctness", [&] {
    const std::vector<double> d = {0.5, 0.3, 0.15, 0.05};
    const auto f = nucleus_filter(d, 0.9);
    double err = 0.0;
    for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(f[i] - d[i] / 0.95));
    bool ok = err <= 1e-9 && f[3] == 0.0 && nucleus_filter(d, 1.0) == d;
    std::mt19937_64 rng(9);
    std::exponential_distribution<double> e(1.0);
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> dist(2 + rng() % 60);
      double s = 0;
      for (auto& v : dist) s += (v = e(rng));
      for (auto& v : dist) v /= s;
      const double top = *std::max_element(dist.begin(), dist.end());
      const double p = top * std::uniform_real_distribution<double>(0.001, 0.999)(rng);
      const auto g = nucleus_filter(dist, p);
      const std::size_t arg = greedy_next(dist);
      for (std::size_t j = 0; j < g.size(); ++j) bad += g[j] != (j == arg ? 1.0 : 0.0);
    }
    ok = ok && bad == 0;
    return Outcome{ok, fmt("hand example error %.1e (<= 1e-9), p=1 identity, %d greedy mismatches "
                           "over 1000 distributions",
                           err, bad)};
  });

  report("sampling-statistics", [&] {
    const auto plain = frequencies_match({0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, 100000, 10);
    const std::vector<double> d = {0.5, 0.3, 0.15, 0.05};
    const auto filtered = nucleus_filter(d, 0.9);
    const auto nuc = frequencies_match(filtered, {0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0}, 100000, 11);
    return Outcome{plain.pass && nuc.pass,
                   "categorical (0.2,0.3,0.5): " + plain.detail + "; nucleus p=0.9: " + nuc.detail +
                       " (< 4 sigma, 100000 draws each)"};
  });

  report("bleu-oracle", [&] {
    std::mt19937_64 rng(12);
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
      const std::size_t n = 1 + rng() % 8, vocab = 3 + rng() % 8;
      std::vector<Tokens> hyps(n), refs(n);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t k = 1 + rng() % 12; k > 0; --k) refs[s].push_back("w" + std::to_string(rng() % vocab));
        for (std::size_t k = rng() % 12; k > 0; --k) hyps[s].push_back("w" + std::to_string(rng() % vocab));
        if (rng() % 4 == 0) hyps[s] = refs[s];
      }
      worst = std::max(worst, std::abs(bleu(hyps, refs) - testing::bleu_oracle(hyps, refs)));
    }
    const Tokens x = bleu_tokens("the hotel is in the north of town");
    const double self = bleu({x}, {x});
    const double empty = bleu({Tokens{}}, {x});
    return Outcome{worst <= 1e-9 && self == 1.0 && empty == 0.0,
                   fmt("max |bleu - oracle| %.1e (<= 1e-9) over 50 corpora, bleu(x,x) = %.12g, "
                       "empty hypothesis %.12g",
                       worst, self, empty)};
  });

  report("success-le-inform", [&] {
    std::vector<std::string> words = schema_placeholders(desk.corpus.db);
    for (const char* w : {"the", "is", "sorry", "[hotel_nme]"}) words.push_back(w);
    std::mt19937_64 rng(13);
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::map<std::string, std::vector<std::string>> gen;
      for (const auto& d : desk.parts.test.dialogues) {
        auto& rs = gen[d.id];
        for (std::size_t k = rng() % 5; k > 0; --k) {
          std::string s;
          for (std::size_t w = rng() % 6; w > 0; --w) s += words[rng() % words.size()] + " ";
          rs.push_back(s);
        }
      }
      const auto r = inform_success(gen, desk.parts.test.goals, desk.parts.test.db);
      bad += r.success > r.inform;
      for (const auto& d : r.dialogues) bad += d.success && !d.inform;
    }
    return Outcome{bad == 0, fmt("%d violations over 1000 random response corpora", bad)};
  });

  report("overfit-one-batch", [&] {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(desk.vocab.size());
    auto p = init_model<float>(cfg);
    const auto examples = build_examples(desk.parts.train, desk.vocab, kDefaultHistoryWindow);
    const auto pool = ReplyPool::from_corpus(desk.parts.train, desk.vocab);
    Rng rng(14);
    const std::vector<TrainingExample> some(examples.begin(), examples.begin() + 8);
    const Batch b = make_batch(some, pool, 2, cfg.context_limit, rng);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    AdamState st = AdamState::zeros(cfg);
    const double initial = combined_loss(p, b, tc).total;
    for (int i = 0; i < 50; ++i) train_step(p, b, tc, st);
    const double final_loss = combined_loss(p, b, tc).total;
    return Outcome{final_loss < 0.5 * initial,
                   fmt("loss %.4f -> %.4f after 50 steps (%.1f%% of initial, < 50%%)", initial,
                       final_loss, 100.0 * final_loss / initial)};
  });

  report("gold-harness", [&] {
    const auto r = evaluate(nullptr, nullptr, desk.parts.test, DecodePolicy{});
    return Outcome{r.inform == 100.0 && r.success == 100.0 && std::abs(r.bleu - 100.0) < 1e-9,
                   fmt("Inform %.2f, Success %.2f, BLEU %.2f (all 100)", r.inform, r.success, r.bleu)};
  });

  if (quick) {
    skip("end-to-end", "--quick");
    skip("checkpoint-roundtrip", "--quick");
  } else {
    Checkpoint trained;
    report("end-to-end", [&] {
      ModelConfig mc;  // 4 layers, d_model 128, 4 heads, d_ff 512, context 256
      mc.vocab_size = static_cast<int>(desk.vocab.size());
      TrainConfig tc;
      tc.batch_size = 8;
      tc.learning_rate = 1e-3;
      tc.epochs = 20;
      const double cpu0 = cpu_seconds();
      auto result = train(desk.parts.train, desk.parts.dev, desk.vocab, tc, mc, [](const EpochStats& e) {
        std::printf("      epoch %2d  loss %.4f  dev ppl %.3f  dev acc %.3f  %.1fs\n", e.epoch,
                    e.train_loss, e.dev_perplexity, e.dev_accuracy, e.seconds);
        std::fflush(stdout);
      });
      const double train_cpu = cpu_seconds() - cpu0;
      double dev_acc = 0.0, best_ppl = INFINITY;
      for (const auto& h : result.history)
        if (h.dev_perplexity < best_ppl) best_ppl = h.dev_perplexity, dev_acc = h.dev_accuracy;
      trained = std::move(result.checkpoint);

      const auto a = evaluate(&trained.params, &desk.vocab, desk.parts.test, DecodePolicy{});
      const auto b = evaluate(&trained.params, &desk.vocab, desk.parts.test, DecodePolicy{});
      const bool same = a.to_json() == b.to_json();
      const bool ok = train_cpu <= 1800.0 && dev_acc >= 0.90 && a.inform >= 90.0 &&
                      a.success >= 80.0 && a.bleu >= 30.0 && same;
      return Outcome{ok, fmt("train %.0fs cpu (<= 1800), dev acc %.3f (>= 0.90), Inform %.2f (>= 90), "
                             "Success %.2f (>= 80), BLEU %.2f (>= 30), repeat eval %s",
                             train_cpu, dev_acc, a.inform, a.success, a.bleu,
                             same ? "identical" : "DIFFERS")};
    });

    report("checkpoint-roundtrip", [&] {
      if (trained.params.layers.empty()) return Outcome{false, "no trained model"};
      testing::TempDir dir;
      save_checkpoint(trained, dir.file("m.ckpt"));
      const auto back = load_checkpoint(dir.file("m.ckpt"), desk.vocab.hash());
      const auto examples = build_examples(desk.parts.test, desk.vocab, kDefaultHistoryWindow);
      int differ = 0;
      for (const auto& e : examples) {
        const auto x = forward(trained.params, e.context).logits;
        const auto y = forward(back.params, e.context).logits;
        differ += std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<std::size_t>(x.size())) != 0;
      }
      return Outcome{differ == 0, fmt("%d of %zu test contexts with differing logit bits", differ,
                                      examples.size())};
    });
  }

  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
