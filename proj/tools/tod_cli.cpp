// Command-line front end. Talks to the library only through the C API.
#include <tod/tod.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int exit_code(tod_status s) {
  switch (s) {
    case TOD_OK: return kExitOk;
    case TOD_ERR_INVALID_ARGUMENT:
    case TOD_ERR_PARSE:
    case TOD_ERR_VALIDATION:
    case TOD_ERR_CONFIG:
    case TOD_ERR_CONTRACT: return kExitValidation;
    default: return kExitRuntime;
  }
}

struct Failure {
  int code;
};

void check(tod_status s) {
  if (s == TOD_OK) return;
  std::cerr << "error (" << tod_status_name(s) << "): " << tod_last_error() << "\n";
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  throw Failure{kExitValidation};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (ptr) Free(ptr);
  }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};
using Corpus = Handle<tod_corpus, tod_corpus_free>;
using Vocab = Handle<tod_vocab, tod_vocab_free>;
using Model = Handle<tod_model, tod_model_free>;

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { tod_string_free(ptr); }
  char** out() { return &ptr; }
  std::string str() const { return ptr ? ptr : ""; }
};

std::string read_text(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error (io): cannot read " << path << "\n";
    throw Failure{kExitRuntime};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!(out << text)) {
    std::cerr << "error (io): cannot write " << path << "\n";
    throw Failure{kExitRuntime};
  }
}

json parse_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    usage_error(path + ": " + e.what());
  }
}

// `--config` reader: a JSON object whose keys are option names (dashes or
// underscores). Keys may sit at the top level or under the subcommand name.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string subcommand) : subcommand_(std::move(subcommand)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) j[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      else if (default_also && !opt->get_default_str().empty()) j[name] = opt->get_default_str();
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConfigError(std::string("--config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("--config must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    auto add = [&](const std::string& key, const json& value) {
      CLI::ConfigItem item;
      if (!subcommand_.empty()) item.parents = {subcommand_};
      item.name = key;
      for (auto& c : item.name)
        if (c == '_') c = '-';
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else {
        item.inputs.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
      items.push_back(std::move(item));
    };
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        if (key != subcommand_) continue;  // section for another subcommand
        for (const auto& [k, v] : value.items()) add(k, v);
      } else {
        add(key, value);
      }
    }
    return items;
  }

 private:
  std::string subcommand_;
};

struct PolicyFlags {
  std::string strategy = "greedy";
  double p = 0.9;
  int k = 40;
  double temperature = 1.0;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "Decoding strategy")
        ->check(CLI::IsMember({"greedy", "topk", "nucleus"}))
        ->capture_default_str();
    cmd->add_option("--p", p, "Nucleus mass")->capture_default_str();
    cmd->add_option("--k", k, "Top-k size")->capture_default_str();
    cmd->add_option("--temperature", temperature, "Softmax temperature")->capture_default_str();
    cmd->add_option("--max-new-tokens", max_new_tokens, "Generation budget")->capture_default_str();
    cmd->add_option("--decode-seed", seed, "Sampling seed")->capture_default_str();
  }

  json to_json() const {
    return {{"strategy", strategy}, {"p", p}, {"k", k}, {"temperature", temperature},
            {"max_new_tokens", max_new_tokens}, {"seed", seed}};
  }
};

void write_splits(const tod_corpus* corpus, const std::string& prefix, std::uint64_t seed,
                  const std::vector<double>& ratios) {
  if (ratios.size() != 3) usage_error("--ratios takes three fractions");
  Corpus train, dev, test;
  check(tod_corpus_split(corpus, ratios[0], ratios[1], ratios[2], seed, train.out(), dev.out(), test.out()));
  check(tod_corpus_save(train.get(), (prefix + ".train.json").c_str()));
  check(tod_corpus_save(dev.get(), (prefix + ".dev.json").c_str()));
  check(tod_corpus_save(test.get(), (prefix + ".test.json").c_str()));
  std::cerr << "splits: " << tod_corpus_size(train.get()) << " train, " << tod_corpus_size(dev.get())
            << " dev, " << tod_corpus_size(test.get()) << " test\n";
}

void log_epoch(const char* line, void*) {
  const json j = json::parse(line);
  char buf[200];
  std::snprintf(buf, sizeof buf, "epoch %d  loss %.4f  dev ppl %.4f  dev acc %.3f  (%.1fs)",
                j.value("epoch", 0), j.value("train_loss", 0.0), j.value("dev_perplexity", 0.0),
                j.value("dev_accuracy", 0.0), j.value("seconds", 0.0));
  std::cerr << buf << std::endl;
}

std::string first_subcommand(int argc, char** argv, const std::vector<std::string>& names) {
  for (int i = 1; i < argc; ++i)
    for (const auto& n : names)
      if (n == argv[i]) return n;
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented dialogue toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --config follow the subcommand
  app.set_version_flag("--version", std::string(tod_version()));
  const std::vector<std::string> names = {"synth", "ingest", "train-bpe", "train", "generate",
                                          "eval", "serve", "judge-export"};
  app.config_formatter(std::make_shared<JsonConfig>(first_subcommand(argc, argv, names)));
  app.set_config("--config", "", "JSON file supplying option values");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-domain corpus");
  std::uint64_t synth_seed = 0;
  int synth_n = 200;
  std::string synth_out, synth_cfg, split_prefix;
  std::optional<std::uint64_t> split_seed;
  std::vector<double> ratios = {0.8, 0.1, 0.1};
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--n", synth_n, "Number of dialogues")->capture_default_str();
  synth->add_option("--out", synth_out, "Output corpus file")->required();
  synth->add_option("--synth-config", synth_cfg, "JSON grammar/domain overrides");
  synth->add_option("--splits", split_prefix, "Also write PREFIX.{train,dev,test}.json");
  synth->add_option("--split-seed", split_seed, "Split seed (default: --seed)");
  synth->add_option("--ratios", ratios, "Train/dev/test fractions")->expected(3);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and normalize an annotated corpus");
  std::string ingest_in, ingest_out;
  ingest->add_option("--in", ingest_in, "Input corpus JSON")->required();
  ingest->add_option("--out", ingest_out, "Normalized corpus output")->required();
  ingest->add_option("--splits", split_prefix, "Also write PREFIX.{train,dev,test}.json");
  ingest->add_option("--split-seed", split_seed, "Split seed")->default_val(0);
  ingest->add_option("--ratios", ratios, "Train/dev/test fractions")->expected(3);

  // train-bpe
  auto* bpe = app.add_subcommand("train-bpe", "Learn a byte-level BPE vocabulary");
  std::string bpe_corpus, bpe_out;
  std::size_t vocab_size = 512;
  bpe->add_option("--corpus", bpe_corpus, "Training corpus")->required();
  bpe->add_option("--vocab-size", vocab_size, "Target vocabulary size")->capture_default_str();
  bpe->add_option("--out", bpe_out, "Vocabulary output")->required();

  // train
  auto* train = app.add_subcommand("train", "Train the dialogue model");
  std::string train_path, dev_path, vocab_path, ckpt_out, init_ckpt;
  bool from_scratch = false, no_clip = false;
  std::optional<double> lr;
  int epochs = 1, batch_size = 24, candidates = 2, history_window = 5;
  double lm_weight = 2.0, cls_weight = 1.0, grad_clip = 1.0;
  std::uint64_t train_seed = 0;
  int layers = 4, heads = 4, d_model = 128, d_ff = 512, context = 256;
  train->add_option("--train", train_path, "Training corpus")->required();
  train->add_option("--dev", dev_path, "Development corpus")->required();
  train->add_option("--vocab", vocab_path, "Vocabulary")->required();
  train->add_option("--out", ckpt_out, "Checkpoint output (best dev perplexity)")->required();
  train->add_option("--init-checkpoint", init_ckpt, "Start from these weights");
  train->add_flag("--from-scratch", from_scratch, "Random initialization (the default without --init-checkpoint)");
  train->add_option("--epochs", epochs)->capture_default_str();
  train->add_option("--batch-size", batch_size)->capture_default_str();
  train->add_option("--lr", lr, "Learning rate (default 3e-4 from scratch, 1e-5 with --init-checkpoint)");
  train->add_option("--candidates", candidates, "Candidates per example, gold included")->capture_default_str();
  train->add_option("--lm-weight", lm_weight)->capture_default_str();
  train->add_option("--cls-weight", cls_weight)->capture_default_str();
  train->add_option("--grad-clip", grad_clip, "Global gradient norm limit")->capture_default_str();
  train->add_flag("--no-clip", no_clip, "Disable gradient clipping");
  train->add_option("--seed", train_seed)->capture_default_str();
  train->add_option("--history-window", history_window)->capture_default_str();
  train->add_option("--layers", layers)->capture_default_str();
  train->add_option("--heads", heads)->capture_default_str();
  train->add_option("--d-model", d_model)->capture_default_str();
  train->add_option("--d-ff", d_ff)->capture_default_str();
  train->add_option("--context", context, "Context limit in tokens")->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "Generate one system response");
  std::string gen_ckpt, gen_vocab, gen_request;
  PolicyFlags gen_policy;
  gen->add_option("--checkpoint", gen_ckpt)->required();
  gen->add_option("--vocab", gen_vocab)->required();
  gen->add_option("--request", gen_request, "Request JSON file, - for stdin")->required();
  gen_policy.add(gen);

  // eval
  auto* eval = app.add_subcommand("eval", "Inform / Success / BLEU on a test corpus");
  std::string eval_corpus, eval_ckpt, eval_vocab, eval_out;
  bool gold_as_model = false;
  PolicyFlags eval_policy;
  eval->add_option("--corpus", eval_corpus, "Test corpus")->required();
  eval->add_option("--checkpoint", eval_ckpt);
  eval->add_option("--vocab", eval_vocab);
  eval->add_flag("--gold-as-model", gold_as_model, "Score the gold responses instead of a model");
  eval->add_option("--out", eval_out, "Write the JSON report here");
  eval_policy.add(eval);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP generation and judging service");
  std::string service_config, srv_host = "127.0.0.1", srv_store, srv_corpus, srv_ckpt, srv_vocab;
  int srv_port = 8080;
  std::size_t max_contexts = 0;
  std::uint64_t srv_seed = 0;
  std::vector<std::string> sources;
  srv->add_option("--service-config", service_config, "JSON service configuration");
  srv->add_option("--host", srv_host)->capture_default_str();
  srv->add_option("--port", srv_port)->capture_default_str();
  srv->add_option("--store", srv_store, "Judgment store (JSON lines)");
  srv->add_option("--corpus", srv_corpus, "Corpus supplying judging contexts");
  srv->add_option("--max-contexts", max_contexts, "Limit on judging contexts (0 = all)");
  srv->add_option("--seed", srv_seed)->capture_default_str();
  srv->add_option("--source", sources, "TAG=gold or TAG=CHECKPOINT,VOCAB (repeatable)");
  srv->add_option("--checkpoint", srv_ckpt, "Model for /v1/generate");
  srv->add_option("--vocab", srv_vocab, "Vocabulary of --checkpoint");

  // judge-export
  auto* jexp = app.add_subcommand("judge-export", "Aggregate a judgment store");
  std::string store_path, export_out;
  jexp->add_option("--store", store_path)->required();
  jexp->add_option("--out", export_out, "Write the JSON aggregate here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) {
      Corpus corpus;
      std::string cfg;
      if (!synth_cfg.empty()) cfg = read_text(synth_cfg);
      check(tod_corpus_synthesize(synth_seed, synth_n, synth_cfg.empty() ? nullptr : cfg.c_str(),
                                  corpus.out()));
      check(tod_corpus_save(corpus.get(), synth_out.c_str()));
      std::cerr << "wrote " << tod_corpus_size(corpus.get()) << " dialogues to " << synth_out << "\n";
      if (!split_prefix.empty()) write_splits(corpus.get(), split_prefix, split_seed.value_or(synth_seed), ratios);
    } else if (ingest->parsed()) {
      Corpus corpus;
      check(tod_corpus_load(ingest_in.c_str(), corpus.out()));
      check(tod_corpus_save(corpus.get(), ingest_out.c_str()));
      std::cerr << "ingested " << tod_corpus_size(corpus.get()) << " dialogues\n";
      if (!split_prefix.empty()) write_splits(corpus.get(), split_prefix, split_seed.value_or(0), ratios);
    } else if (bpe->parsed()) {
      Corpus corpus;
      Vocab vocab;
      check(tod_corpus_load(bpe_corpus.c_str(), corpus.out()));
      check(tod_vocab_train(corpus.get(), vocab_size, vocab.out()));
      check(tod_vocab_save(vocab.get(), bpe_out.c_str()));
      std::cerr << "vocabulary of " << tod_vocab_size(vocab.get()) << " tokens\n";
    } else if (train->parsed()) {
      if (from_scratch && !init_ckpt.empty()) usage_error("--from-scratch conflicts with --init-checkpoint");
      Corpus tr, dv;
      Vocab vocab;
      Model init, model;
      check(tod_corpus_load(train_path.c_str(), tr.out()));
      check(tod_corpus_load(dev_path.c_str(), dv.out()));
      check(tod_vocab_load(vocab_path.c_str(), vocab.out()));
      if (!init_ckpt.empty()) check(tod_model_load(init_ckpt.c_str(), vocab.get(), init.out()));
      json tcfg{{"batch_size", batch_size},
                {"learning_rate", lr.value_or(init_ckpt.empty() ? 3e-4 : 1e-5)},
                {"num_candidates", candidates},
                {"lm_weight", lm_weight},
                {"cls_weight", cls_weight},
                {"epochs", epochs},
                {"seed", train_seed},
                {"history_window", history_window},
                {"grad_clip", no_clip ? json(nullptr) : json(grad_clip)}};
      json mcfg{{"n_layers", layers}, {"n_heads", heads}, {"d_model", d_model},
                {"d_ff", d_ff},       {"context_limit", context}, {"seed", train_seed}};
      check(tod_train(tr.get(), dv.get(), vocab.get(), tcfg.dump().c_str(), mcfg.dump().c_str(),
                      init.get(), log_epoch, nullptr, model.out()));
      check(tod_model_save(model.get(), ckpt_out.c_str()));
      std::cerr << "saved " << ckpt_out << "\n";
    } else if (gen->parsed()) {
      Vocab vocab;
      Model model;
      check(tod_vocab_load(gen_vocab.c_str(), vocab.out()));
      check(tod_model_load(gen_ckpt.c_str(), vocab.get(), model.out()));
      json request = parse_file(gen_request);
      if (!request.is_object()) usage_error("request must be a JSON object");
      json policy = gen_policy.to_json();
      if (request.contains("policy")) policy.update(request["policy"]);
      request["policy"] = policy;
      OwnedString response;
      check(tod_generate(model.get(), vocab.get(), request.dump().c_str(), response.out()));
      std::cout << response.str() << "\n";
    } else if (eval->parsed()) {
      if (!gold_as_model && (eval_ckpt.empty() || eval_vocab.empty()))
        usage_error("eval needs --checkpoint and --vocab, or --gold-as-model");
      Corpus corpus;
      Vocab vocab;
      Model model;
      check(tod_corpus_load(eval_corpus.c_str(), corpus.out()));
      if (!gold_as_model) {
        check(tod_vocab_load(eval_vocab.c_str(), vocab.out()));
        check(tod_model_load(eval_ckpt.c_str(), vocab.get(), model.out()));
      }
      OwnedString report, table;
      check(tod_evaluate(model.get(), vocab.get(), corpus.get(), eval_policy.to_json().dump().c_str(),
                         report.out(), table.out()));
      std::cout << table.str();
      if (!eval_out.empty()) write_text(eval_out, json::parse(report.str()).dump(2) + "\n");
    } else if (srv->parsed()) {
      json cfg = service_config.empty() ? json::object() : parse_file(service_config);
      if (!cfg.is_object()) usage_error("service config must be a JSON object");
      auto set = [&](const char* opt, const char* key, const json& value) {
        if (srv->count(opt) > 0 || !cfg.contains(key)) cfg[key] = value;
      };
      set("--host", "host", srv_host);
      set("--port", "port", srv_port);
      set("--seed", "seed", srv_seed);
      if (srv->count("--max-contexts") > 0) cfg["max_contexts"] = max_contexts;
      if (!srv_store.empty()) cfg["store"] = srv_store;
      if (!srv_corpus.empty()) cfg["corpus"] = srv_corpus;
      if (!srv_ckpt.empty()) cfg["generator_checkpoint"] = srv_ckpt;
      if (!srv_vocab.empty()) cfg["generator_vocab"] = srv_vocab;
      if (!sources.empty()) {
        json list = json::array();
        for (const auto& s : sources) {
          const auto eq = s.find('=');
          if (eq == std::string::npos || eq == 0) usage_error("--source expects TAG=gold or TAG=CHECKPOINT,VOCAB");
          const std::string tag = s.substr(0, eq), rest = s.substr(eq + 1);
          if (rest == "gold") {
            list.push_back({{"tag", tag}, {"kind", "gold"}});
          } else {
            const auto comma = rest.find(',');
            if (comma == std::string::npos) usage_error("--source expects TAG=CHECKPOINT,VOCAB");
            list.push_back({{"tag", tag},
                            {"kind", "checkpoint"},
                            {"checkpoint", rest.substr(0, comma)},
                            {"vocab", rest.substr(comma + 1)}});
          }
        }
        cfg["sources"] = list;
      }
      std::cerr << "serving on " << cfg["host"].get<std::string>() << ":" << cfg["port"] << std::endl;
      check(tod_serve(cfg.dump().c_str()));
    } else if (jexp->parsed()) {
      OwnedString agg;
      check(tod_judge_export(store_path.c_str(), agg.out()));
      const json j = json::parse(agg.str());
      std::cout << j.value("table", "");
      if (!export_out.empty()) write_text(export_out, j.dump(2) + "\n");
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitOk;
}
