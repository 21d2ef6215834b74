#include "service.hpp"

#include <httplib.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "training.hpp"

namespace tod {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json sources_record(const std::vector<std::string>& tags, std::size_t n_contexts) {
  return {{"kind", "sources"}, {"tags", tags}, {"contexts", n_contexts}};
}

json pair_to_json(const PairRecord& p) {
  return {{"kind", "pair"},          {"pair_id", p.pair_id}, {"judge", p.judge},
          {"source_a", p.source_a},  {"source_b", p.source_b},
          {"context", p.context},    {"swapped", p.swapped}};
}

PairRecord pair_from_json(const json& j) {
  return {j.at("pair_id").get<std::string>(), j.at("judge").get<std::string>(),
          j.at("source_a").get<std::string>(), j.at("source_b").get<std::string>(),
          j.at("context").get<std::size_t>(),  j.at("swapped").get<bool>()};
}

json judgment_to_json(const JudgmentRecord& r) {
  return {{"kind", "judgment"}, {"pair_id", r.pair_id}, {"judge", r.judge},
          {"choice", r.choice}, {"timestamp", r.timestamp}};
}

JudgmentRecord judgment_from_json(const json& j) {
  return {j.at("pair_id").get<std::string>(), j.at("judge").get<std::string>(),
          j.at("choice").get<std::string>(), j.at("timestamp").get<std::string>()};
}

std::vector<json> read_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  std::vector<json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::format, path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

Aggregate aggregate_from(const std::vector<std::string>& tags,
                         const std::map<std::string, PairRecord>& pairs,
                         const std::vector<JudgmentRecord>& judgments) {
  Aggregate agg;
  std::map<std::pair<std::string, std::string>, std::size_t> row_of;
  for (std::size_t i = 0; i < tags.size(); ++i)
    for (std::size_t j = i + 1; j < tags.size(); ++j) {
      row_of[{tags[i], tags[j]}] = agg.rows.size();
      agg.rows.push_back({tags[i], tags[j], 0, 0});
    }
  for (const auto& jd : judgments) {
    const auto it = pairs.find(jd.pair_id);
    if (it == pairs.end()) throw Error(ErrorCode::format, "judgment for unknown pair " + jd.pair_id);
    const PairRecord& p = it->second;
    const std::string& winner = jd.choice == "A" ? p.source_a : p.source_b;
    auto key = std::make_pair(p.source_a, p.source_b);
    if (!row_of.contains(key)) std::swap(key.first, key.second);
    const auto rit = row_of.find(key);
    if (rit == row_of.end()) throw Error(ErrorCode::format, "pair " + p.pair_id + " has unknown sources");
    auto& row = agg.rows[rit->second];
    ++row.count;
    if (winner == row.source_1) ++row.wins_1;
  }
  return agg;
}

}  // namespace

std::string AggregateRow::format() const {
  if (count == 0) return source_1 + " | - | - | " + source_2;
  const auto x = static_cast<long>(std::lround(100.0 * static_cast<double>(wins_1) /
                                               static_cast<double>(count)));
  return source_1 + " | " + std::to_string(x) + "% | " + std::to_string(100 - x) + "% | " + source_2;
}

json Aggregate::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    json row{{"source_1", r.source_1}, {"source_2", r.source_2}, {"count", r.count},
             {"wins_1", r.wins_1},     {"wins_2", r.count - r.wins_1}, {"row", r.format()}};
    if (r.count > 0) {
      const double x = 100.0 * static_cast<double>(r.wins_1) / static_cast<double>(r.count);
      row["percent_1"] = x;
      row["percent_2"] = 100.0 - x;
    }
    rs.push_back(std::move(row));
  }
  return {{"rows", rs}, {"table", table()}};
}

std::string Aggregate::table() const {
  std::string out;
  for (const auto& r : rows) out += r.format() + "\n";
  return out;
}

// --- JudgmentLog ------------------------------------------------------------

JudgmentLog::JudgmentLog(const std::string& path, const std::vector<std::string>& tags,
                         std::size_t n_contexts) {
  const bool existing = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (existing) {
    auto records = read_store(path);
    const json expected = sources_record(tags, n_contexts);
    if (records.empty() || records.front() != expected)
      throw Error(ErrorCode::config, path + " was written for other sources or contexts (" +
                                         (records.empty() ? std::string("empty") : records.front().dump()) + ")");
    replayed_.assign(records.begin() + 1, records.end());
  }
  file_ = std::fopen(path.c_str(), "a");
  if (!file_) throw Error(ErrorCode::io, "cannot open " + path + " for appending");
  if (!existing) append(sources_record(tags, n_contexts));
}

JudgmentLog::~JudgmentLog() {
  if (file_) std::fclose(file_);
}

void JudgmentLog::append(const json& record) {
  const std::string line = record.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0 ||
      ::fsync(::fileno(file_)) != 0)
    throw Error(ErrorCode::io, "judgment store write failed");
}

Aggregate aggregate_store(const std::string& path) {
  const auto records = read_store(path);
  if (records.empty() || records.front().value("kind", "") != "sources")
    throw Error(ErrorCode::format, path + ": missing sources record");
  std::vector<std::string> tags;
  std::map<std::string, PairRecord> pairs;
  std::vector<JudgmentRecord> judgments;
  try {
    tags = records.front().at("tags").get<std::vector<std::string>>();
    for (std::size_t i = 1; i < records.size(); ++i) {
      const auto kind = records[i].at("kind").get<std::string>();
      if (kind == "pair") {
        auto p = pair_from_json(records[i]);
        pairs[p.pair_id] = p;
      } else if (kind == "judgment") {
        judgments.push_back(judgment_from_json(records[i]));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, path + ": " + e.what());
  }
  return aggregate_from(tags, pairs, judgments);
}

// --- JudgingState -----------------------------------------------------------

namespace {

// Runs before the store is opened so a bad config never creates a file.
std::vector<std::string> checked_tags(std::vector<std::string> tags, std::size_t n_contexts) {
  if (tags.size() < 2) throw Error(ErrorCode::config, "judging needs at least two sources");
  if (std::set<std::string>(tags.begin(), tags.end()).size() != tags.size())
    throw Error(ErrorCode::config, "source tags must be distinct");
  if (n_contexts == 0) throw Error(ErrorCode::config, "judging needs at least one context");
  return tags;
}

}  // namespace

JudgingState::JudgingState(std::vector<std::string> tags, std::size_t n_contexts,
                           const std::string& store_path, std::uint64_t seed)
    : tags_(checked_tags(std::move(tags), n_contexts)),
      n_contexts_(n_contexts),
      log_(store_path, tags_, n_contexts) {
  try {
    for (const auto& r : log_.replayed()) {
      const auto kind = r.at("kind").get<std::string>();
      if (kind == "pair") apply_pair(pair_from_json(r));
      else if (kind == "judgment") apply_judgment(judgment_from_json(r));
      else throw Error(ErrorCode::format, "unknown record kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, std::string("bad judgment store record: ") + e.what());
  }
  rng_.seed(seed + pairs_.size());
}

namespace {

std::pair<std::size_t, std::size_t> source_pair(const std::vector<std::string>& tags,
                                                const std::string& a, const std::string& b) {
  const auto ia = static_cast<std::size_t>(std::find(tags.begin(), tags.end(), a) - tags.begin());
  const auto ib = static_cast<std::size_t>(std::find(tags.begin(), tags.end(), b) - tags.begin());
  if (ia == tags.size() || ib == tags.size() || ia == ib)
    throw Error(ErrorCode::format, "pair refers to unknown sources " + a + ", " + b);
  return {std::min(ia, ib), std::max(ia, ib)};
}

}  // namespace

void JudgingState::apply_pair(const PairRecord& pair) {
  const auto sp = source_pair(tags_, pair.source_a, pair.source_b);
  pair_index_[pair.pair_id] = pairs_.size();
  pairs_.push_back(pair);
  outstanding_[pair.judge] = pair.pair_id;
  seen_[pair.judge].insert({sp.first * tags_.size() + sp.second, pair.context});
}

void JudgingState::apply_judgment(const JudgmentRecord& j) {
  const auto it = pair_index_.find(j.pair_id);
  if (it == pair_index_.end()) throw Error(ErrorCode::format, "judgment for unknown pair " + j.pair_id);
  const PairRecord& p = pairs_[it->second];
  judgments_[j.pair_id] = j;
  if (outstanding_.contains(j.judge) && outstanding_[j.judge] == j.pair_id) outstanding_.erase(j.judge);
  ++pair_counts_[source_pair(tags_, p.source_a, p.source_b)];
}

std::optional<PairRecord> JudgingState::next_pair(const std::string& judge) {
  if (judge.empty()) throw Error(ErrorCode::invalid_argument, "judge id is required");
  std::lock_guard lock(mutex_);
  if (const auto it = outstanding_.find(judge); it != outstanding_.end())
    return pairs_[pair_index_.at(it->second)];

  const auto& seen = seen_[judge];
  std::optional<std::pair<std::size_t, std::size_t>> best;
  std::size_t best_count = 0;
  std::vector<std::size_t> best_unseen;
  for (std::size_t i = 0; i < tags_.size(); ++i)
    for (std::size_t j = i + 1; j < tags_.size(); ++j) {
      std::vector<std::size_t> unseen;
      for (std::size_t c = 0; c < n_contexts_; ++c)
        if (!seen.contains({i * tags_.size() + j, c})) unseen.push_back(c);
      if (unseen.empty()) continue;
      const auto cit = pair_counts_.find({i, j});
      const std::size_t count = cit == pair_counts_.end() ? 0 : cit->second;
      if (!best || count < best_count) {
        best = std::make_pair(i, j);
        best_count = count;
        best_unseen = std::move(unseen);
      }
    }
  if (!best) return std::nullopt;

  PairRecord pair;
  char id[32];
  std::snprintf(id, sizeof id, "p%06zu", pairs_.size() + 1);
  pair.pair_id = id;
  pair.judge = judge;
  pair.context = best_unseen[uniform_index(rng_, best_unseen.size())];
  pair.swapped = uniform01(rng_) < 0.5;
  pair.source_a = tags_[pair.swapped ? best->second : best->first];
  pair.source_b = tags_[pair.swapped ? best->first : best->second];
  log_.append(pair_to_json(pair));
  apply_pair(pair);
  return pair;
}

JudgmentRecord JudgingState::record(const std::string& pair_id, const std::string& judge,
                                    const std::string& choice) {
  if (choice != "A" && choice != "B")
    throw Error(ErrorCode::invalid_argument, "choice must be \"A\" or \"B\"");
  std::lock_guard lock(mutex_);
  const auto it = pair_index_.find(pair_id);
  if (it == pair_index_.end() || pairs_[it->second].judge != judge)
    throw Error(ErrorCode::not_found, "no pair '" + pair_id + "' served to judge '" + judge + "'");
  if (const auto jt = judgments_.find(pair_id); jt != judgments_.end()) {
    if (jt->second.choice == choice) return jt->second;
    throw Error(ErrorCode::conflict, "pair '" + pair_id + "' was already judged " + jt->second.choice);
  }
  JudgmentRecord rec{pair_id, judge, choice, utc_timestamp()};
  log_.append(judgment_to_json(rec));
  apply_judgment(rec);
  return rec;
}

Aggregate JudgingState::aggregate() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, PairRecord> pairs;
  for (const auto& p : pairs_) pairs[p.pair_id] = p;
  std::vector<JudgmentRecord> js;
  for (const auto& [id, j] : judgments_) js.push_back(j);
  return aggregate_from(tags_, pairs, js);
}

std::size_t JudgingState::judgment_count() const {
  std::lock_guard lock(mutex_);
  return judgments_.size();
}

// --- service ----------------------------------------------------------------

ServiceConfig ServiceConfig::from_json(const json& doc) {
  ServiceConfig c;
  try {
    c.host = doc.value("host", c.host);
    c.port = doc.value("port", c.port);
    c.store = doc.value("store", c.store);
    c.corpus = doc.value("corpus", c.corpus);
    c.max_contexts = doc.value("max_contexts", c.max_contexts);
    c.seed = doc.value("seed", c.seed);
    c.history_window = doc.value("history_window", c.history_window);
    c.generator_checkpoint = doc.value("generator_checkpoint", c.generator_checkpoint);
    c.generator_vocab = doc.value("generator_vocab", c.generator_vocab);
    for (const auto& s : doc.value("sources", json::array())) {
      SourceConfig src;
      src.tag = s.at("tag").get<std::string>();
      src.kind = s.value("kind", src.kind);
      src.checkpoint = s.value("checkpoint", src.checkpoint);
      src.vocab = s.value("vocab", src.vocab);
      if (s.contains("policy")) src.policy = DecodePolicy::from_json(s["policy"]);
      if (src.kind != "gold" && src.kind != "checkpoint")
        throw Error(ErrorCode::config, "source '" + src.tag + "' has unknown kind '" + src.kind + "'");
      if (src.kind == "checkpoint" && (src.checkpoint.empty() || src.vocab.empty()))
        throw Error(ErrorCode::config, "source '" + src.tag + "' needs checkpoint and vocab");
      c.sources.push_back(std::move(src));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad service config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(ErrorCode::config, "port out of range");
  return c;
}

std::string relexicalize_lenient(const std::string& delex_text, const SlotMap& slot_map,
                                 const BeliefState& belief) {
  SlotMap values;
  for (const auto& [domain, slots] : belief)
    for (const auto& [slot, value] : slots) values[placeholder(domain, slot)] = value;
  for (const auto& [ph, value] : slot_map) values[ph] = value;
  std::string out;
  std::size_t i = 0;
  while (i < delex_text.size()) {
    if (delex_text[i] == '[') {
      const auto close = delex_text.find(']', i);
      if (close != std::string::npos) {
        const auto it = values.find(delex_text.substr(i, close - i + 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += delex_text[i++];
  }
  return out;
}

GenerateRequest parse_generate_request(const json& body) {
  if (!body.is_object() || !body.contains("context") || !body["context"].is_array())
    throw Error(ErrorCode::validation, "request needs a context array");
  GenerateRequest r;
  try {
    for (const auto& u : body["context"]) {
      const auto speaker = u.at("speaker").get<std::string>();
      if (speaker != "user" && speaker != "system")
        throw Error(ErrorCode::validation, "speaker must be \"user\" or \"system\", got '" + speaker + "'");
      r.history.push_back({speaker == "user" ? Speaker::user : Speaker::system,
                           normalize_text(u.at("text").get<std::string>())});
    }
    const json belief = body.value("belief", json::object());
    const json db = body.value("db", json::object());
    for (const auto& [domain, slots] : belief.items())
      for (const auto& [slot, value] : slots.items())
        r.belief[normalize_text(domain)][normalize_text(slot)] = normalize_text(value.get<std::string>());
    for (const auto& [domain, count] : db.items())
      r.db[normalize_text(domain)] = count.get<std::int64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, std::string("bad generation request: ") + e.what());
  }
  r.policy = DecodePolicy::from_json(body.value("policy", json::object()));
  return r;
}

json generation_to_json(const Generation& gen) {
  return {{"text", gen.text}, {"tokens", gen.tokens}, {"logprobs", gen.logprobs}};
}

namespace {

struct Model {
  Vocab vocab;
  Checkpoint checkpoint;
};

std::shared_ptr<Model> load_model(const std::string& checkpoint, const std::string& vocab_path) {
  auto m = std::make_shared<Model>();
  m->vocab = Vocab::load(vocab_path);
  m->checkpoint = load_checkpoint(checkpoint, m->vocab.hash());
  return m;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::parse:
    case ErrorCode::validation:
    case ErrorCode::config:
    case ErrorCode::contract: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  // generated text may end inside a multi-byte character
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& msg) {
  send_json(res, status, {{"error", {{"code", code}, {"message", msg}}}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("request body is not JSON: ") + e.what());
  }
}

std::string speaker_name(Speaker s) { return s == Speaker::user ? "user" : "system"; }

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  Corpus corpus;
  std::vector<std::pair<std::size_t, std::size_t>> contexts;  // (dialogue, system turn)
  std::vector<std::vector<std::string>> responses;            // [source][context]
  std::shared_ptr<Model> generator;
  std::unique_ptr<JudgingState> judging;
  bool bound = false;

  explicit Impl(const ServiceConfig& cfg) : config(cfg) {
    std::map<std::string, std::shared_ptr<Model>> models;
    auto model_for = [&](const std::string& ckpt, const std::string& vocab) {
      auto& slot = models[ckpt + "\n" + vocab];
      if (!slot) slot = load_model(ckpt, vocab);
      return slot;
    };
    if (!config.generator_checkpoint.empty())
      generator = model_for(config.generator_checkpoint, config.generator_vocab);
    for (const auto& s : config.sources)
      if (s.kind == "checkpoint" && !generator) generator = model_for(s.checkpoint, s.vocab);

    if (config.sources.empty()) return;
    if (config.sources.size() < 2) throw Error(ErrorCode::config, "judging needs at least two sources");
    if (config.corpus.empty() || config.store.empty())
      throw Error(ErrorCode::config, "judging needs a corpus and a store path");
    corpus = load_corpus(config.corpus);
    for (std::size_t d = 0; d < corpus.dialogues.size(); ++d)
      for (std::size_t t = 0; t < corpus.dialogues[d].turns.size(); ++t)
        if (corpus.dialogues[d].turns[t].speaker == Speaker::system) contexts.emplace_back(d, t);
    if (config.max_contexts > 0 && contexts.size() > config.max_contexts)
      contexts.resize(config.max_contexts);

    std::vector<std::string> tags;
    for (const auto& s : config.sources) {
      tags.push_back(s.tag);
      std::vector<std::string> out;
      std::shared_ptr<Model> model;
      if (s.kind == "checkpoint") model = model_for(s.checkpoint, s.vocab);
      for (const auto& [d, t] : contexts) {
        const Dialogue& dlg = corpus.dialogues[d];
        const Turn& turn = dlg.turns[t];
        if (!model) {
          out.push_back(turn.text);
          continue;
        }
        const auto ctx = build_context(history_before(dlg, t), turn.belief, turn.db_state,
                                       config.history_window);
        const auto gen = generate(model->checkpoint.params, model->vocab, ctx, s.policy);
        out.push_back(relexicalize_lenient(gen.text, turn.slot_map, turn.belief));
      }
      responses.push_back(std::move(out));
    }
    judging = std::make_unique<JudgingState>(tags, contexts.size(), config.store, config.seed);
  }

  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), error_code_name(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, error_code_name(ErrorCode::validation), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  JudgingState& require_judging() {
    if (!judging) throw Error(ErrorCode::not_found, "judging is not configured");
    return *judging;
  }

  void routes() {
    server.Get("/v1/health", wrap([this](const httplib::Request&, httplib::Response& res) {
      json tags = json::array();
      for (const auto& s : config.sources) tags.push_back(s.tag);
      send_json(res, 200, {{"status", "ok"},
                           {"version", std::string(library_version())},
                           {"generator", generator != nullptr},
                           {"sources", tags},
                           {"contexts", contexts.size()}});
    }));

    server.Post("/v1/generate", wrap([this](const httplib::Request& req, httplib::Response& res) {
      if (!generator) throw Error(ErrorCode::not_found, "no model configured for generation");
      const auto request = parse_generate_request(parse_body(req));
      const auto ctx = build_context(request.history, request.belief, request.db, config.history_window);
      send_json(res, 200, generation_to_json(generate(generator->checkpoint.params, generator->vocab,
                                                      ctx, request.policy)));
    }));

    server.Get("/v1/judge/next", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto& state = require_judging();
      const std::string judge = req.get_param_value("judge");
      const auto pair = state.next_pair(judge);
      if (!pair) {
        res.status = 204;
        return;
      }
      const auto [d, t] = contexts[pair->context];
      const Dialogue& dlg = corpus.dialogues[d];
      json ctx = json::array();
      for (std::size_t i = 0; i < t; ++i)
        ctx.push_back({{"speaker", speaker_name(dlg.turns[i].speaker)}, {"text", dlg.turns[i].text}});
      auto response_of = [&](const std::string& tag) {
        const auto& tags = state.tags();
        const auto s = static_cast<std::size_t>(std::find(tags.begin(), tags.end(), tag) - tags.begin());
        return responses[s][pair->context];
      };
      send_json(res, 200, {{"pair_id", pair->pair_id},
                           {"judge", pair->judge},
                           {"context", ctx},
                           {"response_a", {{"text", response_of(pair->source_a)}}},
                           {"response_b", {{"text", response_of(pair->source_b)}}}});
    }));

    server.Post("/v1/judge", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto& state = require_judging();
      const json body = parse_body(req);
      const auto rec = state.record(body.at("pair_id").get<std::string>(),
                                    body.at("judge").get<std::string>(),
                                    body.at("choice").get<std::string>());
      send_json(res, 200, {{"pair_id", rec.pair_id},
                           {"judge", rec.judge},
                           {"choice", rec.choice},
                           {"timestamp", rec.timestamp}});
    }));

    server.Get("/v1/judge/results", wrap([this](const httplib::Request&, httplib::Response& res) {
      auto& state = require_judging();
      json body = state.aggregate().to_json();
      body["judgments"] = state.judgment_count();
      send_json(res, 200, body);
    }));
  }
};

Service::Service(const ServiceConfig& config) : impl_(std::make_unique<Impl>(config)) {
  impl_->routes();
}

Service::~Service() { stop(); }

int Service::bind() {
  auto& s = impl_->server;
  int port = impl_->config.port;
  if (port == 0) {
    port = s.bind_to_any_port(impl_->config.host);
    if (port < 0) throw Error(ErrorCode::io, "cannot bind " + impl_->config.host);
  } else if (!s.bind_to_port(impl_->config.host, port)) {
    throw Error(ErrorCode::io, "cannot bind " + impl_->config.host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return port;
}

void Service::run() {
  if (!impl_->bound) throw Error(ErrorCode::contract, "run() before bind()");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_) impl_->server.stop();
}

void serve(const ServiceConfig& config) {
  Service service(config);
  service.bind();
  service.run();
}

}  // namespace tod
