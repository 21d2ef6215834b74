#include "training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace tod {

using nlohmann::json;

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::config, m); };
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(learning_rate >= 0)) bad("learning_rate must be >= 0");
  if (num_candidates < 2) bad("num_candidates must be >= 2");
  if (lm_weight < 0 || cls_weight < 0) bad("loss weights must be >= 0");
  if (lm_weight == 0 && cls_weight == 0) bad("loss weights cannot both be zero");
  if (epochs < 0) bad("epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) bad("Adam epsilon must be > 0");
  if (!(grad_clip > 0)) bad("grad_clip must be > 0");
  if (history_window < 1) bad("history_window must be >= 1");
}

json TrainConfig::to_json() const {
  json j{{"batch_size", batch_size},   {"learning_rate", learning_rate},
         {"num_candidates", num_candidates}, {"lm_weight", lm_weight},
         {"cls_weight", cls_weight},   {"epochs", epochs},
         {"seed", seed},               {"beta1", beta1},
         {"beta2", beta2},             {"adam_eps", adam_eps},
         {"history_window", history_window}};
  // JSON has no infinity; null means "no clipping".
  j["grad_clip"] = std::isinf(grad_clip) ? json(nullptr) : json(grad_clip);
  return j;
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  try {
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.num_candidates = doc.value("num_candidates", c.num_candidates);
    c.lm_weight = doc.value("lm_weight", c.lm_weight);
    c.cls_weight = doc.value("cls_weight", c.cls_weight);
    c.epochs = doc.value("epochs", c.epochs);
    c.seed = doc.value("seed", c.seed);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.adam_eps = doc.value("adam_eps", c.adam_eps);
    c.history_window = doc.value("history_window", c.history_window);
    if (doc.contains("grad_clip"))
      c.grad_clip = doc["grad_clip"].is_null() ? std::numeric_limits<double>::infinity()
                                               : doc["grad_clip"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- examples and batches ---------------------------------------------------

std::vector<Utterance> history_before(const Dialogue& dialogue, std::size_t turn) {
  std::vector<Utterance> history;
  for (std::size_t i = 0; i < turn && i < dialogue.turns.size(); ++i) {
    const Turn& t = dialogue.turns[i];
    history.push_back({t.speaker, t.speaker == Speaker::system ? t.delex_text : t.text});
  }
  return history;
}

std::vector<std::string> tokenizer_texts(const Corpus& corpus) {
  std::vector<std::string> texts;
  for (const auto& d : corpus.dialogues)
    for (const auto& t : d.turns) texts.push_back(t.speaker == Speaker::system ? t.delex_text : t.text);
  return texts;
}

std::vector<std::string> schema_placeholders(const Database& db) {
  std::vector<std::string> out;
  for (const auto& [domain, attrs] : db.schema)
    for (const auto& a : attrs) out.push_back(placeholder(domain, a));
  return out;
}

void truncate_context(TokenSequence& seq, std::size_t max_len) {
  if (seq.size() <= max_len) return;
  if (max_len < 2) throw Error(ErrorCode::contract, "no room left for context");
  const auto drop = static_cast<long>(seq.size() - max_len);
  seq.ids.erase(seq.ids.begin() + 1, seq.ids.begin() + 1 + drop);
  seq.segments.erase(seq.segments.begin() + 1, seq.segments.begin() + 1 + drop);
}

std::vector<TrainingExample> build_examples(const Corpus& corpus, const Vocab& vocab,
                                            int history_window) {
  std::vector<TrainingExample> out;
  for (const auto& d : corpus.dialogues) {
    for (std::size_t t = 1; t < d.turns.size(); t += 2) {
      const Turn& turn = d.turns[t];
      const auto ctx = build_context(history_before(d, t), turn.belief, turn.db_state,
                                     history_window);
      out.push_back({d.id, encode_context(vocab, ctx), vocab.encode(turn.delex_text),
                     turn.delex_text});
    }
  }
  return out;
}

ReplyPool ReplyPool::from_corpus(const Corpus& corpus, const Vocab& vocab) {
  ReplyPool pool;
  for (const auto& d : corpus.dialogues)
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::system)
        pool.entries.push_back({d.id, t.delex_text, vocab.encode(t.delex_text)});
  return pool;
}

void ReplyPool::append(const ReplyPool& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

namespace {

TokenSequence assemble(const TokenSequence& context, std::span<const TokenId> reply,
                       int context_limit, std::size_t* reply_begin) {
  const auto limit = static_cast<std::size_t>(context_limit);
  if (reply.size() + 3 > limit)
    throw Error(ErrorCode::contract, "reply of " + std::to_string(reply.size()) +
                                         " tokens does not fit the context limit");
  TokenSequence seq = context;
  truncate_context(seq, limit - reply.size() - 1);
  if (reply_begin) *reply_begin = seq.size();
  append_reply(seq, reply);
  return seq;
}

}  // namespace

Batch make_batch(std::span<const TrainingExample> examples, const ReplyPool& pool,
                 int num_candidates, int context_limit, Rng& rng) {
  if (num_candidates < 2) throw Error(ErrorCode::config, "num_candidates must be >= 2");
  Batch batch;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    BatchItem item;
    item.example = e;
    std::set<std::string> taken{ex.gold_text};
    for (int k = 1; k < num_candidates; ++k) {
      std::vector<std::size_t> eligible;
      for (std::size_t i = 0; i < pool.entries.size(); ++i) {
        const auto& entry = pool.entries[i];
        if (entry.dialogue_id != ex.dialogue_id && !taken.contains(entry.text))
          eligible.push_back(i);
      }
      if (eligible.empty())
        throw Error(ErrorCode::contract,
                    "no distinct distractor available for dialogue '" + ex.dialogue_id + "'");
      const std::size_t pick = eligible[uniform_index(rng, eligible.size())];
      item.distractors.push_back(pick);
      taken.insert(pool.entries[pick].text);
    }
    item.gold_index = uniform_index(rng, static_cast<std::size_t>(num_candidates));
    std::size_t next = 0;
    for (int c = 0; c < num_candidates; ++c) {
      if (static_cast<std::size_t>(c) == item.gold_index) {
        item.candidates.push_back(assemble(ex.context, ex.gold_reply, context_limit,
                                           &item.reply_begin));
      } else {
        const auto& ids = pool.entries[item.distractors[next++]].ids;
        item.candidates.push_back(assemble(ex.context, ids, context_limit, nullptr));
      }
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

// --- loss -------------------------------------------------------------------

template <typename Real>
LossBreakdown combined_loss(const Params<Real>& p, const Batch& batch, const TrainConfig& config,
                            Params<Real>* grads) {
  LossBreakdown out;
  if (batch.items.empty()) throw Error(ErrorCode::contract, "empty batch");
  std::size_t total_tokens = 0;
  for (const auto& item : batch.items)
    total_tokens += item.candidates[item.gold_index].size() - item.reply_begin;
  const auto n_items = static_cast<double>(batch.items.size());

  double lm_sum = 0.0;
  double cls_sum = 0.0;
  std::vector<ForwardCache<Real>> caches;
  for (const auto& item : batch.items) {
    const std::size_t n_cand = item.candidates.size();
    const TokenSequence& gold = item.candidates[item.gold_index];
    const RowRange range{item.reply_begin - 1, gold.size() - 1};
    const std::span<const TokenId> targets(gold.ids.data() + item.reply_begin,
                                           gold.size() - item.reply_begin);
    const std::vector<bool> mask(targets.size(), true);

    caches.resize(n_cand);
    std::vector<RowVector<Real>> hidden(n_cand);
    std::vector<double> scores(n_cand);
    Matrix<Real> d_logits;
    for (std::size_t c = 0; c < n_cand; ++c) {
      const bool is_gold = c == item.gold_index;
      auto fwd = forward(p, item.candidates[c], is_gold ? range : RowRange{0, 0},
                         grads ? &caches[c] : nullptr);
      if (is_gold) {
        const double weight = config.lm_weight * static_cast<double>(targets.size()) /
                              static_cast<double>(total_tokens);
        const bool want_grad = grads && config.lm_weight > 0;
        const double li = lm_loss(fwd.logits, targets, mask, want_grad ? &d_logits : nullptr, weight);
        lm_sum += li * static_cast<double>(targets.size());
      }
      hidden[c] = std::move(fwd.final_hidden);
      scores[c] = candidate_score(p, hidden[c]);
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    const double lse = mx + std::log(z);
    cls_sum += lse - scores[item.gold_index];
    if (static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin()) ==
        item.gold_index)
      ++out.correct;

    if (grads) {
      for (std::size_t c = 0; c < n_cand; ++c) {
        const bool is_gold = c == item.gold_index;
        const double prob = std::exp(scores[c] - lse);
        const double coef = config.cls_weight / n_items * (prob - (is_gold ? 1.0 : 0.0));
        RowVector<Real> dh = p.cls_w * static_cast<Real>(coef);
        grads->cls_w += hidden[c] * static_cast<Real>(coef);
        backward(p, item.candidates[c], caches[c], is_gold ? range : RowRange{0, 0},
                 is_gold ? d_logits : Matrix<Real>(), dh, *grads);
      }
    }
  }
  out.lm_tokens = total_tokens;
  out.lm = lm_sum / static_cast<double>(total_tokens);
  out.cls = cls_sum / n_items;
  out.total = config.lm_weight * out.lm + config.cls_weight * out.cls;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::numeric, "non-finite combined loss");
  return out;
}

template <typename Real>
double gradient_norm(Params<Real>& grads) {
  double sq = 0.0;
  for (const auto& t : grads.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(t.data[i]);
      sq += v * v;
    }
  return std::sqrt(sq);
}

template LossBreakdown combined_loss<float>(const Params<float>&, const Batch&, const TrainConfig&,
                                            Params<float>*);
template LossBreakdown combined_loss<double>(const Params<double>&, const Batch&,
                                             const TrainConfig&, Params<double>*);
template double gradient_norm<float>(Params<float>&);
template double gradient_norm<double>(Params<double>&);

// --- optimizer --------------------------------------------------------------

AdamState AdamState::zeros(const ModelConfig& config) {
  return {Params<float>::zeros(config), Params<float>::zeros(config), 0};
}

StepStats train_step(Params<float>& p, const Batch& batch, const TrainConfig& config,
                     AdamState& state) {
  Params<float> grads = Params<float>::zeros(p.config);
  const LossBreakdown loss = combined_loss(p, batch, config, &grads);
  StepStats stats{loss.total, loss.lm, loss.cls, gradient_norm(grads)};
  if (!std::isfinite(stats.grad_norm))
    throw Error(ErrorCode::numeric, "non-finite gradient norm at step " +
                                        std::to_string(state.step + 1));

  const double clip = stats.grad_norm > config.grad_clip ? config.grad_clip / stats.grad_norm : 1.0;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);

  auto pv = p.tensors();
  auto gv = grads.tensors();
  auto mv = state.m.tensors();
  auto vv = state.v.tensors();
  for (std::size_t k = 0; k < pv.size(); ++k) {
    for (Eigen::Index i = 0; i < pv[k].size(); ++i) {
      const double g = static_cast<double>(gv[k].data[i]) * clip;
      const double m = config.beta1 * mv[k].data[i] + (1.0 - config.beta1) * g;
      const double v = config.beta2 * vv[k].data[i] + (1.0 - config.beta2) * g * g;
      mv[k].data[i] = static_cast<float>(m);
      vv[k].data[i] = static_cast<float>(v);
      const double update =
          config.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + config.adam_eps);
      pv[k].data[i] = static_cast<float>(static_cast<double>(pv[k].data[i]) - update);
    }
  }
  return stats;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'L', 'G', 'F'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  auto& params = const_cast<Params<float>&>(ckpt.params);
  json manifest = json::array();
  std::uint64_t offset = 0;
  std::string payload;
  for (const auto& t : params.tensors()) {
    manifest.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}});
    for (Eigen::Index i = 0; i < t.size(); ++i) put_le(payload, std::bit_cast<std::uint32_t>(t.data[i]));
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  json header{{"config", ckpt.config.to_json()},
              {"vocab_hash", ckpt.vocab_hash},
              {"step", ckpt.step},
              {"rng_state", ckpt.rng_state},
              {"tensors", manifest},
              {"payload_bytes", payload.size()},
              {"metadata", ckpt.metadata}};
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  out += payload;
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<std::string> expected_vocab_hash) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::format, path + ": not a checkpoint (bad magic)");
  if (bytes.size() < 16) throw Error(ErrorCode::truncated, path + ": truncated header");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::version_mismatch,
                path + ": checkpoint version " + std::to_string(version) + " is not supported");
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (bytes.size() - 16 < header_len) throw Error(ErrorCode::truncated, path + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::format, path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.vocab_hash = header.at("vocab_hash").get<std::string>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    if (header.contains("metadata")) ckpt.metadata = header.at("metadata");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, path + ": bad checkpoint header: " + e.what());
  }
  if (expected_vocab_hash && *expected_vocab_hash != ckpt.vocab_hash)
    throw Error(ErrorCode::hash_mismatch, path + ": checkpoint was trained with vocab " +
                                              ckpt.vocab_hash + ", not " + *expected_vocab_hash);

  ckpt.params = Params<float>::zeros(ckpt.config);
  const std::size_t base = 16 + header_len;
  const auto payload_bytes = header.value("payload_bytes", std::uint64_t{0});
  if (bytes.size() - base < payload_bytes)
    throw Error(ErrorCode::truncated, path + ": truncated tensor payload");
  auto views = ckpt.params.tensors();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != views.size())
    throw Error(ErrorCode::format, path + ": tensor manifest does not match the config");
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& m = manifest[k];
    if (m.at("name").get<std::string>() != views[k].name ||
        m.at("shape")[0].get<Eigen::Index>() != views[k].rows ||
        m.at("shape")[1].get<Eigen::Index>() != views[k].cols)
      throw Error(ErrorCode::format, path + ": tensor '" + views[k].name + "' has wrong shape");
    const auto off = base + m.at("offset").get<std::size_t>();
    if (off + static_cast<std::size_t>(views[k].size()) * 4 > bytes.size())
      throw Error(ErrorCode::truncated, path + ": truncated tensor '" + views[k].name + "'");
    for (Eigen::Index i = 0; i < views[k].size(); ++i)
      views[k].data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, off + 4 * static_cast<std::size_t>(i)));
  }
  return ckpt;
}

// --- training loop ----------------------------------------------------------

DevMetrics dev_metrics(const Params<float>& p, std::span<const TrainingExample> examples,
                       const ReplyPool& pool, int num_candidates, std::uint64_t seed) {
  if (examples.empty()) throw Error(ErrorCode::contract, "no dev examples");
  Rng rng(seed);
  const Batch batch = make_batch(examples, pool, num_candidates, p.config.context_limit, rng);
  const LossBreakdown loss = combined_loss(p, batch, TrainConfig{}, static_cast<Params<float>*>(nullptr));
  return {std::exp(loss.lm),
          static_cast<double>(loss.correct) / static_cast<double>(batch.items.size())};
}

TrainResult train(const Corpus& train_set, const Corpus& dev_set, const Vocab& vocab,
                  const TrainConfig& train_config, const ModelConfig& model_config,
                  const TrainLogger& log, const Params<float>* initial) {
  train_config.validate();
  model_config.validate();
  if (static_cast<std::size_t>(model_config.vocab_size) != vocab.size())
    throw Error(ErrorCode::config, "model vocab_size " + std::to_string(model_config.vocab_size) +
                                       " does not match the vocab (" +
                                       std::to_string(vocab.size()) + ")");
  if (initial && !(initial->config == model_config))
    throw Error(ErrorCode::config, "initial parameters do not match the model config");

  const auto examples = build_examples(train_set, vocab, train_config.history_window);
  if (examples.empty()) throw Error(ErrorCode::contract, "training split has no system turns");
  const ReplyPool pool = ReplyPool::from_corpus(train_set, vocab);
  const auto dev_examples = build_examples(dev_set, vocab, train_config.history_window);
  ReplyPool dev_pool = pool;
  dev_pool.append(ReplyPool::from_corpus(dev_set, vocab));
  const std::uint64_t dev_seed = train_config.seed ^ 0x9e3779b97f4a7c15ULL;

  Params<float> params = initial ? *initial : init_model<float>(model_config);
  AdamState state = AdamState::zeros(model_config);
  Rng rng(train_config.seed);

  TrainResult result;
  Params<float> best = params;
  double best_ppl = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(train_config.batch_size)) {
      std::vector<TrainingExample> chunk;
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(train_config.batch_size)); ++i)
        chunk.push_back(examples[order[i]]);
      const Batch batch = make_batch(chunk, pool, train_config.num_candidates,
                                     model_config.context_limit, rng);
      loss_sum += train_step(params, batch, train_config, state).total;
      ++steps;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1));
    bool improved = true;
    if (!dev_examples.empty()) {
      const auto dev = dev_metrics(params, dev_examples, dev_pool, train_config.num_candidates, dev_seed);
      stats.dev_perplexity = dev.perplexity;
      stats.dev_accuracy = dev.accuracy;
      improved = dev.perplexity < best_ppl;
      if (improved) best_ppl = dev.perplexity;
    }
    if (improved) best = params;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(stats);
    if (log) log(stats);
  }

  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = model_config;
  ckpt.vocab_hash = vocab.hash();
  ckpt.params = std::move(best);
  ckpt.step = state.step;
  std::ostringstream rs;
  rs << rng;
  ckpt.rng_state = rs.str();
  json history = json::array();
  for (const auto& h : result.history) {
    json e{{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"seconds", h.seconds}};
    if (!std::isnan(h.dev_perplexity)) e["dev_perplexity"] = h.dev_perplexity;
    if (!std::isnan(h.dev_accuracy)) e["dev_accuracy"] = h.dev_accuracy;
    history.push_back(std::move(e));
  }
  ckpt.metadata = {{"train_config", train_config.to_json()}, {"history", history}};
  return result;
}

}  // namespace tod
