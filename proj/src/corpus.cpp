#include "corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include "common.hpp"

namespace tod {

using nlohmann::json;

std::string placeholder(const std::string& domain, const std::string& attribute) {
  return "[" + domain + "_" + attribute + "]";
}

std::int64_t Database::count_matches(
    const std::string& domain,
    const std::map<std::string, std::string>& constraints) const {
  auto it = entities.find(domain);
  if (it == entities.end()) return 0;
  return std::count_if(it->second.begin(), it->second.end(), [&](const Record& r) {
    return std::all_of(constraints.begin(), constraints.end(), [&](const auto& kv) {
      auto f = r.find(kv.first);
      return f != r.end() && f->second == kv.second;
    });
  });
}

DbState Database::db_state(const BeliefState& belief) const {
  DbState out;
  for (const auto& [domain, slots] : belief) {
    if (!slots.empty()) out[domain] = count_matches(domain, slots);
  }
  return out;
}

// --- delexicalization -------------------------------------------------------

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 ||
         static_cast<unsigned char>(c) >= 0x80;
}

struct Candidate {
  std::string value;
  std::string domain;
  std::string attribute;
  int source;  // 0 = belief, 1 = database
};

// Length of a placeholder token starting at text[pos], or 0 when none.
std::size_t placeholder_length(const std::string& text, std::size_t pos) {
  if (text[pos] != '[') return 0;
  std::size_t i = pos + 1;
  bool underscore = false;
  std::size_t body = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == ']') break;
    if (c == '_') {
      if (body == 0) return 0;
      underscore = true;
    } else if (!(std::islower(static_cast<unsigned char>(c)) ||
                 std::isdigit(static_cast<unsigned char>(c)))) {
      return 0;
    }
    ++body;
    ++i;
  }
  if (i >= text.size() || !underscore || text[i - 1] == '_') return 0;
  return i - pos + 1;
}

}  // namespace

Delexicalized delexicalize(const std::string& text, const Database& db,
                           const BeliefState& belief) {
  std::vector<Candidate> cands;
  for (const auto& [domain, slots] : belief)
    for (const auto& [slot, value] : slots)
      if (!value.empty()) cands.push_back({value, domain, slot, 0});
  for (const auto& [domain, records] : db.entities)
    for (const auto& rec : records)
      for (const auto& [attr, value] : rec)
        if (!value.empty()) cands.push_back({value, domain, attr, 1});

  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.value.size() != b.value.size()) return a.value.size() > b.value.size();
    return std::tie(a.source, a.domain, a.attribute, a.value) <
           std::tie(b.source, b.domain, b.attribute, b.value);
  });
  cands.erase(std::unique(cands.begin(), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                            return a.value == b.value && a.domain == b.domain &&
                                   a.attribute == b.attribute;
                          }),
              cands.end());

  struct Match {
    std::size_t begin;
    std::size_t end;
    std::string token;
  };
  std::vector<Match> matches;
  std::vector<bool> claimed(text.size(), false);
  Delexicalized out;

  for (const auto& c : cands) {
    const std::string token = placeholder(c.domain, c.attribute);
    auto existing = out.slot_map.find(token);
    if (existing != out.slot_map.end() && existing->second != c.value) continue;
    std::size_t pos = 0;
    while ((pos = text.find(c.value, pos)) != std::string::npos) {
      const std::size_t end = pos + c.value.size();
      const bool bounded = (pos == 0 || !is_word_char(text[pos - 1]) ||
                            !is_word_char(c.value.front())) &&
                           (end == text.size() || !is_word_char(text[end]) ||
                            !is_word_char(c.value.back()));
      const bool free = std::none_of(claimed.begin() + static_cast<long>(pos),
                                     claimed.begin() + static_cast<long>(end),
                                     [](bool b) { return b; });
      if (bounded && free) {
        std::fill(claimed.begin() + static_cast<long>(pos),
                  claimed.begin() + static_cast<long>(end), true);
        matches.push_back({pos, end, token});
        out.slot_map[token] = c.value;
        pos = end;
      } else {
        ++pos;
      }
    }
  }

  std::sort(matches.begin(), matches.end(),
            [](const Match& a, const Match& b) { return a.begin < b.begin; });
  std::size_t cursor = 0;
  for (const auto& m : matches) {
    out.text.append(text, cursor, m.begin - cursor);
    out.text += m.token;
    cursor = m.end;
  }
  out.text.append(text, cursor, std::string::npos);
  return out;
}

std::string relexicalize(const std::string& delex_text, const SlotMap& slot_map) {
  std::string out;
  out.reserve(delex_text.size());
  std::size_t i = 0;
  while (i < delex_text.size()) {
    const std::size_t len = placeholder_length(delex_text, i);
    if (len == 0) {
      out.push_back(delex_text[i++]);
      continue;
    }
    const std::string token = delex_text.substr(i, len);
    auto it = slot_map.find(token);
    if (it == slot_map.end())
      throw Error(ErrorCode::not_found, "unknown placeholder " + token);
    out += it->second;
    i += len;
  }
  return out;
}

std::vector<std::string> find_placeholders(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t len = placeholder_length(text, i);
    if (len == 0) {
      ++i;
      continue;
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// --- validation and JSON ----------------------------------------------------

namespace {

[[noreturn]] void invalid(const std::string& msg) {
  throw Error(ErrorCode::validation, msg);
}

std::string where(const Dialogue& d, std::size_t turn) {
  return "dialogue '" + d.id + "' turn " + std::to_string(turn);
}

}  // namespace

void validate(const Corpus& corpus) {
  const auto& db = corpus.db;
  for (const auto& [domain, records] : db.entities) {
    auto s = db.schema.find(domain);
    if (s == db.schema.end()) invalid("entities for unknown domain '" + domain + "'");
    for (std::size_t e = 0; e < records.size(); ++e)
      for (const auto& attr : s->second)
        if (!records[e].contains(attr))
          invalid("entity " + std::to_string(e) + " of '" + domain +
                  "' lacks attribute '" + attr + "'");
  }

  std::set<std::string> ids;
  for (const auto& d : corpus.dialogues) {
    if (!ids.insert(d.id).second) invalid("duplicate dialogue id '" + d.id + "'");
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const Turn& turn = d.turns[t];
      const Speaker expected = t % 2 == 0 ? Speaker::user : Speaker::system;
      if (turn.speaker != expected)
        invalid(where(d, t) + ": speakers must alternate starting with user");
      if (turn.speaker != Speaker::system) continue;
      for (const auto& [domain, slots] : turn.belief) {
        if (slots.empty()) invalid(where(d, t) + ": empty belief block '" + domain + "'");
        for (const auto& [slot, value] : slots)
          if (value.empty())
            invalid(where(d, t) + ": empty belief value for '" + domain + " " + slot + "'");
      }
      for (const auto& [domain, count] : turn.db_state)
        if (count < 0) invalid(where(d, t) + ": negative db count for '" + domain + "'");
      for (const auto& ph : find_placeholders(turn.delex_text))
        if (!turn.slot_map.contains(ph))
          invalid(where(d, t) + ": placeholder " + ph + " missing from slot_map");
      if (relexicalize(turn.delex_text, turn.slot_map) != turn.text)
        invalid(where(d, t) + ": relexicalized delex_text does not reproduce text");
    }
  }

  for (const auto& [id, goal] : corpus.goals) {
    for (const auto& [domain, c] : goal.constraints)
      if (!db.schema.contains(domain))
        invalid("goal of '" + id + "' references unknown domain '" + domain + "'");
    for (const auto& [domain, attrs] : goal.requested) {
      auto s = db.schema.find(domain);
      if (s == db.schema.end())
        invalid("goal of '" + id + "' references unknown domain '" + domain + "'");
      for (const auto& a : attrs)
        if (std::find(s->second.begin(), s->second.end(), a) == s->second.end())
          invalid("goal of '" + id + "' requests unknown attribute '" + a + "'");
    }
  }
}

namespace {

BeliefState belief_from_json(const json& j) {
  BeliefState b;
  for (const auto& [domain, slots] : j.items())
    for (const auto& [slot, value] : slots.items())
      b[normalize_text(domain)][normalize_text(slot)] =
          normalize_text(value.get<std::string>());
  return b;
}

json belief_to_json(const BeliefState& b) {
  json j = json::object();
  for (const auto& [domain, slots] : b) j[domain] = slots;
  return j;
}

Turn turn_from_json(const json& j, const Database& db, const Dialogue& d, std::size_t t) {
  Turn turn;
  const auto speaker = j.at("speaker").get<std::string>();
  if (speaker == "user") {
    turn.speaker = Speaker::user;
  } else if (speaker == "system") {
    turn.speaker = Speaker::system;
  } else {
    invalid(where(d, t) + ": unknown speaker '" + speaker + "'");
  }
  turn.text = normalize_text(j.at("text").get<std::string>());
  if (turn.speaker == Speaker::user) return turn;

  if (!j.contains("belief")) invalid(where(d, t) + ": system turn lacks 'belief'");
  if (!j.contains("db_counts")) invalid(where(d, t) + ": system turn lacks 'db_counts'");
  turn.belief = belief_from_json(j.at("belief"));
  for (const auto& [domain, count] : j.at("db_counts").items())
    turn.db_state[normalize_text(domain)] = count.get<std::int64_t>();
  if (j.contains("delex_text")) {
    turn.delex_text = normalize_text(j.at("delex_text").get<std::string>());
    if (j.contains("slot_map"))
      for (const auto& [k, v] : j.at("slot_map").items())
        turn.slot_map[normalize_text(k)] = normalize_text(v.get<std::string>());
  } else {
    auto delex = delexicalize(turn.text, db, turn.belief);
    turn.delex_text = std::move(delex.text);
    turn.slot_map = std::move(delex.slot_map);
  }
  return turn;
}

}  // namespace

Corpus corpus_from_json(const json& doc) {
  Corpus corpus;
  try {
    if (doc.contains("database")) {
      const auto& jdb = doc.at("database");
      if (jdb.contains("schema"))
        for (const auto& [domain, attrs] : jdb.at("schema").items()) {
          auto& list = corpus.db.schema[normalize_text(domain)];
          for (const auto& a : attrs) list.push_back(normalize_text(a.get<std::string>()));
        }
      if (jdb.contains("entities"))
        for (const auto& [domain, records] : jdb.at("entities").items()) {
          auto& list = corpus.db.entities[normalize_text(domain)];
          for (const auto& r : records) {
            Record rec;
            for (const auto& [k, v] : r.items())
              rec[normalize_text(k)] = normalize_text(v.get<std::string>());
            list.push_back(std::move(rec));
          }
        }
    }
    if (doc.contains("dialogues")) {
      for (const auto& jd : doc.at("dialogues")) {
        Dialogue d;
        d.id = jd.at("id").get<std::string>();
        const auto& turns = jd.at("turns");
        for (std::size_t t = 0; t < turns.size(); ++t)
          d.turns.push_back(turn_from_json(turns[t], corpus.db, d, t));
        corpus.dialogues.push_back(std::move(d));
      }
    }
    if (doc.contains("goals")) {
      for (const auto& [id, jg] : doc.at("goals").items()) {
        Goal g;
        if (jg.contains("constraints"))
          for (const auto& [domain, slots] : jg.at("constraints").items())
            for (const auto& [slot, value] : slots.items())
              g.constraints[normalize_text(domain)][normalize_text(slot)] =
                  normalize_text(value.get<std::string>());
        if (jg.contains("requested"))
          for (const auto& [domain, attrs] : jg.at("requested").items())
            for (const auto& a : attrs)
              g.requested[normalize_text(domain)].insert(normalize_text(a.get<std::string>()));
        corpus.goals.emplace(id, std::move(g));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, std::string("malformed corpus document: ") + e.what());
  }
  validate(corpus);
  return corpus;
}

json corpus_to_json(const Corpus& corpus) {
  json doc;
  json jdb;
  jdb["schema"] = corpus.db.schema;
  jdb["entities"] = corpus.db.entities;
  doc["database"] = std::move(jdb);
  json dialogues = json::array();
  for (const auto& d : corpus.dialogues) {
    json jd;
    jd["id"] = d.id;
    json turns = json::array();
    for (const auto& t : d.turns) {
      json jt;
      jt["speaker"] = t.speaker == Speaker::user ? "user" : "system";
      jt["text"] = t.text;
      if (t.speaker == Speaker::system) {
        jt["belief"] = belief_to_json(t.belief);
        jt["db_counts"] = t.db_state;
        jt["delex_text"] = t.delex_text;
        jt["slot_map"] = t.slot_map;
      }
      turns.push_back(std::move(jt));
    }
    jd["turns"] = std::move(turns);
    dialogues.push_back(std::move(jd));
  }
  doc["dialogues"] = std::move(dialogues);
  json goals = json::object();
  for (const auto& [id, g] : corpus.goals) {
    json jg;
    jg["constraints"] = belief_to_json(g.constraints);
    jg["requested"] = g.requested;
    goals[id] = std::move(jg);
  }
  doc["goals"] = std::move(goals);
  return doc;
}

Corpus load_corpus(const std::string& path) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(ErrorCode::parse, path + ":" + std::to_string(line) + ":" +
                                      std::to_string(col) + ": " + e.what());
  }
  return corpus_from_json(doc);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  write_file(path, corpus_to_json(corpus).dump(1) + "\n");
}

// --- synthesis --------------------------------------------------------------

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  SynthDomain restaurant;
  restaurant.name = "restaurant";
  restaurant.informable = {
      {"food", {"italian", "chinese", "indian", "thai", "british", "french"}},
      {"area", {"centre", "north", "south", "east", "west"}},
      {"pricerange", {"cheap", "moderate", "expensive"}},
  };
  restaurant.requestable = {"phone", "address", "postcode"};
  restaurant.entity_names = {"the golden curry", "pizza hut", "curry garden", "bedouin",
                             "meze bar",         "the nirala", "royal spice", "yippee noodle bar",
                             "cote",             "midsummer house", "la margherita",
                             "da vinci pizzeria"};
  SynthDomain hotel;
  hotel.name = "hotel";
  hotel.informable = {
      {"area", {"centre", "north", "south", "east", "west"}},
      {"pricerange", {"cheap", "moderate", "expensive"}},
      {"stars", {"2", "3", "4", "5"}},
  };
  hotel.requestable = {"phone", "address", "postcode"};
  hotel.entity_names = {"acorn guest house", "alexander bed and breakfast", "allenbell",
                        "arbury lodge",      "ashley hotel",   "autumn house",
                        "bridge guest house", "el shaddai",    "gonville hotel",
                        "hamilton lodge",    "the lensfield hotel", "worth house"};
  c.domains = {restaurant, hotel};
  return c;
}

SynthConfig SynthConfig::from_json(const json& doc) {
  SynthConfig c;
  try {
    c.two_domain_rate = doc.value("two_domain_rate", 0.5);
    for (const auto& jd : doc.at("domains")) {
      SynthDomain d;
      d.name = jd.at("name").get<std::string>();
      d.informable =
          jd.at("informable").get<std::map<std::string, std::vector<std::string>>>();
      d.requestable = jd.at("requestable").get<std::vector<std::string>>();
      d.entity_names = jd.at("entity_names").get<std::vector<std::string>>();
      d.n_entities = jd.value("n_entities", 10);
      c.domains.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad synth config: ") + e.what());
  }
  return c;
}

namespace {

void check_config(const SynthConfig& config) {
  if (config.domains.empty()) throw Error(ErrorCode::config, "synth config has no domains");
  for (const auto& d : config.domains) {
    if (d.n_entities < 5)
      throw Error(ErrorCode::config, "domain '" + d.name + "' needs at least 5 entities");
    if (d.informable.size() < 2)
      throw Error(ErrorCode::config, "domain '" + d.name + "' needs at least 2 slots");
    if (d.requestable.empty())
      throw Error(ErrorCode::config, "domain '" + d.name + "' has no requestable attributes");
    if (static_cast<int>(d.entity_names.size()) < d.n_entities)
      throw Error(ErrorCode::config, "domain '" + d.name + "' has fewer names than entities");
    for (const auto& [slot, pool] : d.informable)
      if (pool.empty())
        throw Error(ErrorCode::config, "slot '" + slot + "' of '" + d.name + "' has no values");
  }
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, v.size())];
}

std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + uniform_index(rng, 10)));
  return s;
}

std::string requestable_value(const std::string& attr, Rng& rng) {
  static const std::vector<std::string> streets = {
      "regent", "hills", "mill", "king", "trumpington", "newmarket", "station", "bridge"};
  static const std::vector<std::string> kinds = {"street", "road", "lane"};
  if (attr == "phone") return "01223 " + digits(rng, 6);
  if (attr == "address")
    return std::to_string(10 + uniform_index(rng, 90)) + " " + pick(streets, rng) + " " +
           pick(kinds, rng);
  if (attr == "postcode") {
    std::string pc = "cb" + std::to_string(1 + uniform_index(rng, 5)) + " " + digits(rng, 1);
    pc.push_back(static_cast<char>('a' + uniform_index(rng, 26)));
    pc.push_back(static_cast<char>('a' + uniform_index(rng, 26)));
    return pc;
  }
  return attr + " " + digits(rng, 5);
}

std::string attribute_phrase(const std::string& attr) {
  if (attr == "phone") return "phone number";
  return attr;
}

// Surface phrase for a constraint, with `value` either raw or a placeholder.
std::string slot_phrase(const std::string& slot, const std::string& value) {
  if (slot == "food") return "serving " + value + " food";
  if (slot == "area") return "in the " + value;
  if (slot == "pricerange") return "in the " + value + " price range";
  if (slot == "stars") return "with " + value + " stars";
  return "with " + slot + " " + value;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " and " : " , ";
    out += items[i];
  }
  return out;
}

struct DomainPlan {
  const SynthDomain* domain;
  std::size_t target;
  std::map<std::string, std::string> constraints;
  std::vector<std::string> requested;
};

class DialogueBuilder {
 public:
  explicit DialogueBuilder(const Database& db) : db_(db) {}

  void user(std::string text) {
    Turn t;
    t.speaker = Speaker::user;
    t.text = normalize_text(text);
    dialogue_.turns.push_back(std::move(t));
  }

  void system(const std::string& delex_template, const SlotMap& values) {
    Turn t;
    t.speaker = Speaker::system;
    t.text = normalize_text(relexicalize(delex_template, values));
    t.belief = belief_;
    t.db_state = db_.db_state(belief_);
    auto delex = delexicalize(t.text, db_, belief_);
    t.delex_text = std::move(delex.text);
    t.slot_map = std::move(delex.slot_map);
    dialogue_.turns.push_back(std::move(t));
  }

  BeliefState& belief() { return belief_; }
  Dialogue take(std::string id) {
    dialogue_.id = std::move(id);
    return std::move(dialogue_);
  }

 private:
  const Database& db_;
  BeliefState belief_;
  Dialogue dialogue_;
};

}  // namespace

Corpus synthesize_corpus(std::uint64_t seed, int n_dialogues, const SynthConfig& config) {
  check_config(config);
  if (n_dialogues < 0) throw Error(ErrorCode::config, "negative dialogue count");
  Rng rng(seed);
  Corpus corpus;

  std::set<std::string> used_values;
  for (const auto& d : config.domains) {
    auto& attrs = corpus.db.schema[d.name];
    attrs.push_back("name");
    for (const auto& [slot, pool] : d.informable) attrs.push_back(slot);
    for (const auto& r : d.requestable) attrs.push_back(r);
    auto& records = corpus.db.entities[d.name];
    for (int e = 0; e < d.n_entities; ++e) {
      Record rec;
      rec["name"] = d.entity_names[static_cast<std::size_t>(e)];
      for (const auto& [slot, pool] : d.informable) rec[slot] = pick(pool, rng);
      for (const auto& r : d.requestable) {
        std::string v;
        do {
          v = requestable_value(r, rng);
        } while (!used_values.insert(v).second);
        rec[r] = v;
      }
      records.push_back(std::move(rec));
    }
  }

  for (int n = 0; n < n_dialogues; ++n) {
    std::vector<const SynthDomain*> order;
    order.push_back(&config.domains[uniform_index(rng, config.domains.size())]);
    if (config.domains.size() > 1 && uniform01(rng) < config.two_domain_rate) {
      const SynthDomain* second;
      do {
        second = &config.domains[uniform_index(rng, config.domains.size())];
      } while (second == order.front());
      order.push_back(second);
    }

    DialogueBuilder b(corpus.db);
    Goal goal;
    std::set<std::string> belief_values;
    bool first = true;
    for (const SynthDomain* dom : order) {
      const auto& records = corpus.db.entities.at(dom->name);
      DomainPlan plan{dom, 0, {}, {}};
      // Constraint values must not repeat a value already in the belief so
      // that every value maps to exactly one placeholder.
      for (int attempt = 0; plan.constraints.empty(); ++attempt) {
        plan.target = uniform_index(rng, records.size());
        std::vector<std::string> slots;
        for (const auto& [slot, pool] : dom->informable)
          if (!belief_values.contains(records[plan.target].at(slot))) slots.push_back(slot);
        if (slots.empty()) {
          if (attempt > 100) throw Error(ErrorCode::config, "cannot build unambiguous goal");
          continue;
        }
        std::shuffle(slots.begin(), slots.end(), rng);
        slots.resize(1 + uniform_index(rng, slots.size()));
        for (const auto& s : slots) plan.constraints[s] = records[plan.target].at(s);
      }
      std::vector<std::string> req = dom->requestable;
      std::shuffle(req.begin(), req.end(), rng);
      req.resize(1 + uniform_index(rng, req.size()));
      for (const auto& r : dom->requestable)
        if (std::find(req.begin(), req.end(), r) != req.end()) plan.requested.push_back(r);

      const Record& target = records[plan.target];
      for (const auto& [slot, value] : plan.constraints) belief_values.insert(value);

      // user: constrain
      std::vector<std::string> raw_phrases;
      std::vector<std::string> delex_phrases;
      for (const auto& [slot, value] : plan.constraints) {
        raw_phrases.push_back(slot_phrase(slot, value));
        delex_phrases.push_back(slot_phrase(slot, placeholder(dom->name, slot)));
      }
      std::string ask;
      switch (uniform_index(rng, 3)) {
        case 0: ask = "i am looking for a "; break;
        case 1: ask = "i need a "; break;
        default: ask = "can you help me find a "; break;
      }
      std::string greet = first && uniform01(rng) < 0.5 ? "hello , " : "";
      b.user(greet + ask + dom->name + " " +
             [&] {
               std::string s;
               for (const auto& p : raw_phrases) s += (s.empty() ? "" : " ") + p;
               return s;
             }() +
             " .");

      // system: offer
      b.belief()[dom->name] = plan.constraints;
      const auto count = corpus.db.count_matches(dom->name, plan.constraints);
      SlotMap values;
      values[placeholder(dom->name, "name")] = target.at("name");
      for (const auto& [slot, value] : plan.constraints)
        values[placeholder(dom->name, slot)] = value;
      std::string phrases;
      for (const auto& p : delex_phrases) phrases += " " + p;
      std::string prefix = count > 1 ? "i found several matches . " : "i found one match . ";
      const std::string offer =
          uniform01(rng) < 0.5
              ? prefix + placeholder(dom->name, "name") + " is a " + dom->name + phrases + " ."
              : prefix + "i recommend " + placeholder(dom->name, "name") + " , it is a " +
                    dom->name + phrases + " .";
      b.system(offer, values);

      // user: request
      std::vector<std::string> names;
      for (const auto& r : plan.requested) names.push_back(attribute_phrase(r));
      switch (uniform_index(rng, 3)) {
        case 0: b.user("what is the " + join_list(names) + " ?"); break;
        case 1: b.user("can you give me the " + join_list(names) + " ?"); break;
        default: b.user("please tell me the " + join_list(names) + " ."); break;
      }

      // system: answer
      std::vector<std::string> parts;
      SlotMap answer_values;
      for (const auto& r : plan.requested) {
        parts.push_back("the " + attribute_phrase(r) + " is " + placeholder(dom->name, r));
        answer_values[placeholder(dom->name, r)] = target.at(r);
      }
      b.system((uniform01(rng) < 0.5 ? "sure . " : "") + join_list(parts) + " .",
               answer_values);

      goal.constraints[dom->name] = plan.constraints;
      goal.requested[dom->name] =
          std::set<std::string>(plan.requested.begin(), plan.requested.end());
      first = false;
    }

    switch (uniform_index(rng, 3)) {
      case 0: b.user("thank you , goodbye ."); break;
      case 1: b.user("thanks , that is all i need ."); break;
      default: b.user("great , thank you ."); break;
    }
    b.system(uniform01(rng) < 0.5 ? "you are welcome . goodbye ."
                                  : "thank you for using our service . have a nice day .",
             {});

    char id[32];
    std::snprintf(id, sizeof id, "synth-%05d", n);
    corpus.goals.emplace(id, std::move(goal));
    corpus.dialogues.push_back(b.take(id));
  }
  return corpus;
}

// --- split ------------------------------------------------------------------

Splits split(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorCode::invalid_argument,
                "split ratios must be non-negative and sum to 1");
  const std::size_t n = corpus.dialogues.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  auto n_dev = static_cast<std::size_t>(std::llround(ratios.dev * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_dev = std::min(n_dev, n - n_train);
  if (ratios.test == 0.0) n_dev = n - n_train;

  Splits out;
  for (Corpus* c : {&out.train, &out.dev, &out.test}) c->db = corpus.db;
  for (std::size_t i = 0; i < n; ++i) {
    Corpus& dst = i < n_train ? out.train : i < n_train + n_dev ? out.dev : out.test;
    const Dialogue& d = corpus.dialogues[order[i]];
    dst.dialogues.push_back(d);
    if (auto g = corpus.goals.find(d.id); g != corpus.goals.end()) dst.goals.insert(*g);
  }
  return out;
}

}  // namespace tod
