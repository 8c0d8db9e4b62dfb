#include "hdlm/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hdlm/errors.hpp"
#include "hdlm/io.hpp"

namespace hdlm::tasks {

using nlohmann::json;

std::vector<int> LabelHierarchy::path(int leaf) const {
  const int depth = this->depth();
  if (leaf < 0 || static_cast<std::size_t>(leaf) >= count(depth - 1)) {
    throw IndexError("leaf " + std::to_string(leaf) + " out of range");
  }
  std::vector<int> out(static_cast<std::size_t>(depth));
  int cur = leaf;
  for (int d = depth - 1; d >= 0; --d) {
    out[static_cast<std::size_t>(d)] = cur;
    if (d > 0) cur = parent[static_cast<std::size_t>(d)][static_cast<std::size_t>(cur)];
  }
  return out;
}

std::vector<int> LabelHierarchy::children(int level, int index) const {
  std::vector<int> out;
  if (level + 1 >= depth()) return out;
  const auto& p = parent[static_cast<std::size_t>(level + 1)];
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == index) out.push_back(static_cast<int>(i));
  }
  return out;
}

void LabelHierarchy::validate() const {
  if (names.empty() || parent.size() != names.size()) throw ConfigError("hierarchy levels mismatch");
  if (!parent[0].empty()) throw ConfigError("top-level labels have no parent");
  for (std::size_t d = 1; d < names.size(); ++d) {
    if (parent[d].size() != names[d].size()) throw ConfigError("parent map is not total at level " + std::to_string(d));
    std::vector<int> kids(names[d - 1].size(), 0);
    for (int p : parent[d]) {
      if (p < 0 || static_cast<std::size_t>(p) >= names[d - 1].size()) throw ConfigError("dangling parent index");
      ++kids[static_cast<std::size_t>(p)];
    }
    if (std::find(kids.begin(), kids.end(), 0) != kids.end()) throw ConfigError("childless non-leaf label");
  }
}

void SyntheticSpec::validate() const {
  if (depth < 1) throw ConfigError("synthetic depth must be >= 1");
  if (branching.size() != static_cast<std::size_t>(depth)) throw ConfigError("branching needs one entry per level");
  for (int b : branching) {
    if (b < 2) throw ConfigError("branching factor must be >= 2");
  }
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("noise rate must be in [0, 1)");
  if (samples < 0) throw ConfigError("samples must be >= 0");
  if (content_vocab < 1 || signature_per_level < 1) throw ConfigError("content vocabulary and signature must be positive");
  if (facts < 1 || objects < 1 || locations < 1) throw ConfigError("story sizes must be positive");
}

std::string content_word(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%02d", i);
  return buf;
}

LabelHierarchy gen_hierarchy(int depth, const std::vector<int>& branching, std::uint64_t seed) {
  if (depth < 2) throw ConfigError("hierarchy depth must be >= 2");
  if (branching.size() != static_cast<std::size_t>(depth)) throw ConfigError("branching needs one entry per level");
  for (int b : branching) {
    if (b < 2) throw ConfigError("branching factor must be >= 2");
  }
  std::size_t total = 0, width = 1;
  for (int b : branching) {
    width *= static_cast<std::size_t>(b);
    total += width;
  }

  // Pronounceable names from consonant-vowel syllables, shuffled by seed.
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::vector<std::string> pool;
  for (std::size_t syllables = 2; pool.size() < total; ++syllables) {
    pool.clear();
    std::size_t combos = 1;
    for (std::size_t s = 0; s < syllables; ++s) combos *= consonants.size() * vowels.size();
    for (std::size_t c = 0; c < combos && pool.size() < std::max<std::size_t>(total * 4, 256); ++c) {
      std::string name;
      std::size_t x = c;
      for (std::size_t s = 0; s < syllables; ++s) {
        name += consonants[x % consonants.size()];
        x /= consonants.size();
        name += vowels[x % vowels.size()];
        x /= vowels.size();
      }
      pool.push_back(name);
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);

  LabelHierarchy h;
  std::size_t next = 0, count = 1;
  for (int d = 0; d < depth; ++d) {
    const std::size_t b = static_cast<std::size_t>(branching[static_cast<std::size_t>(d)]);
    std::vector<std::string> level;
    std::vector<int> parents;
    for (std::size_t i = 0; i < count * b; ++i) {
      level.push_back(pool[next++]);
      if (d > 0) parents.push_back(static_cast<int>(i / b));
    }
    h.names.push_back(std::move(level));
    h.parent.push_back(std::move(parents));
    count *= b;
  }
  return h;
}

std::vector<std::vector<std::string>> htc_signatures(const LabelHierarchy& h, const SyntheticSpec& spec) {
  const int depth = h.depth();
  const auto spl = static_cast<std::size_t>(spec.signature_per_level);
  std::size_t needed = 0;
  for (int d = 0; d < depth; ++d) {
    needed += spl * (spec.shared_child_words && d > 0 ? h.count(d) / h.count(d - 1) : h.count(d));
  }
  if (needed > static_cast<std::size_t>(spec.content_vocab)) {
    throw ConfigError("content vocabulary of " + std::to_string(spec.content_vocab) + " cannot hold " +
                      std::to_string(needed) + " signature words");
  }
  std::vector<int> order(static_cast<std::size_t>(spec.content_vocab));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(spec.seed ^ 0x5157a7u);
  std::shuffle(order.begin(), order.end(), rng);

  // words[d][i]: signature words of label i at level d.
  std::vector<std::vector<std::vector<std::string>>> words(static_cast<std::size_t>(depth));
  std::size_t next = 0;
  for (int d = 0; d < depth; ++d) {
    const std::size_t n = h.count(d);
    const std::size_t fan = d > 0 ? n / h.count(d - 1) : n;
    const std::size_t distinct = spec.shared_child_words && d > 0 ? fan : n;
    std::vector<std::vector<std::string>> groups(distinct);
    for (auto& g : groups) {
      for (std::size_t k = 0; k < spl; ++k) g.push_back(content_word(order[next++]));
    }
    for (std::size_t i = 0; i < n; ++i) words[static_cast<std::size_t>(d)].push_back(groups[i % distinct]);
  }

  std::vector<std::vector<std::string>> out;
  for (std::size_t leaf = 0; leaf < h.count(depth - 1); ++leaf) {
    std::vector<std::string> sig;
    const auto p = h.path(static_cast<int>(leaf));
    for (int d = 0; d < depth; ++d) {
      const auto& w = words[static_cast<std::size_t>(d)][static_cast<std::size_t>(p[static_cast<std::size_t>(d)])];
      sig.insert(sig.end(), w.begin(), w.end());
    }
    out.push_back(std::move(sig));
  }
  return out;
}

std::vector<TextSample> gen_htc_samples(const LabelHierarchy& h, const SyntheticSpec& spec) {
  spec.validate();
  h.validate();
  if (h.depth() != spec.depth) throw ConfigError("hierarchy depth does not match the synthetic spec");
  const auto signatures = htc_signatures(h, spec);
  const int leaves = static_cast<int>(h.count(h.depth() - 1));

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> pick_leaf(0, leaves - 1);
  std::uniform_int_distribution<int> pick_word(0, spec.content_vocab - 1);
  std::bernoulli_distribution corrupt(spec.noise);

  std::vector<TextSample> out;
  out.reserve(static_cast<std::size_t>(spec.samples));
  for (int n = 0; n < spec.samples; ++n) {
    const int leaf = pick_leaf(rng);
    std::vector<std::string> words = signatures[static_cast<std::size_t>(leaf)];
    if (!spec.ordered) std::shuffle(words.begin(), words.end(), rng);
    for (auto& w : words) {
      if (corrupt(rng)) w = content_word(pick_word(rng));
    }
    TextSample s;
    s.query = join_words(words);
    const auto p = h.path(leaf);
    for (int d = 0; d < h.depth(); ++d) {
      s.responses.push_back(h.names[static_cast<std::size_t>(d)][static_cast<std::size_t>(p[static_cast<std::size_t>(d)])]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TextSample> gen_htg_samples(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> pick_obj(0, spec.objects - 1);
  std::uniform_int_distribution<int> pick_loc(0, spec.locations - 1);
  std::uniform_int_distribution<int> pick_fact(0, spec.facts - 1);
  std::bernoulli_distribution hidden(spec.noise);

  struct Fact {
    int obj, loc;
    bool seen;
  };
  std::vector<TextSample> out;
  out.reserve(static_cast<std::size_t>(spec.samples));
  for (int n = 0; n < spec.samples; ++n) {
    std::vector<Fact> facts;
    bool any_seen = false;
    for (int i = 0; i < spec.facts; ++i) {
      facts.push_back({pick_obj(rng), pick_loc(rng), !hidden(rng)});
      any_seen = any_seen || facts.back().seen;
    }
    if (!any_seen) facts[static_cast<std::size_t>(pick_fact(rng))].seen = true;

    std::vector<std::string> query, thought;
    int target = -1;
    for (const auto& f : facts) {
      const std::string obj = "o" + std::to_string(f.obj);
      const std::string loc = "l" + std::to_string(f.loc);
      query.insert(query.end(), {obj, loc, f.seen ? "seen" : "unseen"});
      if (f.seen) {
        thought.insert(thought.end(), {obj, loc});
        if (target < 0) target = f.obj;
      }
    }
    query.insert(query.end(), {"where", "o" + std::to_string(target)});
    TextSample s;
    s.query = join_words(query);
    s.responses.push_back(join_words(thought));
    s.responses.push_back(htg_answer(s.responses[0]));
    out.push_back(std::move(s));
  }
  return out;
}

std::string htg_answer(const std::string& thought) {
  const auto words = split_words(thought);
  if (words.size() < 2 || words.size() % 2 != 0) throw DataError("malformed thought '" + thought + "'");
  const std::string& target = words[0];
  std::string answer;
  for (std::size_t i = 0; i < words.size(); i += 2) {
    if (words[i] == target) answer = words[i + 1];
  }
  return answer;
}

namespace {

std::vector<TextSample> parse_lines(const std::string& text, const std::string& source) {
  std::vector<TextSample> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TextSample s;
      s.query = j.at("query").get<std::string>();
      s.responses = j.at("responses").get<std::vector<std::string>>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(source + "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<TextSample> parse_jsonl(const std::string& text) { return parse_lines(text, ""); }

std::string to_jsonl(const std::vector<TextSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += json{{"query", s.query}, {"responses", s.responses}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<TextSample> read_jsonl(const std::filesystem::path& path) {
  return parse_lines(io::read_file(path), path.string() + ", ");
}

void write_jsonl(const std::filesystem::path& path, const std::vector<TextSample>& samples) {
  io::write_file_atomic(path, to_jsonl(samples));
}

Tokenizer build_tokenizer(int depth, const std::vector<TextSample>& samples) {
  std::vector<std::string> words;
  for (const auto& s : samples) {
    for (auto& w : split_words(s.query)) words.push_back(std::move(w));
  }
  for (const auto& s : samples) {
    for (const auto& r : s.responses) {
      for (auto& w : split_words(r)) words.push_back(std::move(w));
    }
  }
  return Tokenizer::from_words(depth, words);
}

train::HierSample encode_sample(const Tokenizer& tok, const TextSample& s) {
  if (s.responses.size() != static_cast<std::size_t>(tok.depth())) {
    throw DataError("sample has " + std::to_string(s.responses.size()) + " responses, expected " +
                    std::to_string(tok.depth()));
  }
  train::HierSample out;
  out.query = tok.encode_query(s.query);
  for (int d = 1; d <= tok.depth(); ++d) {
    out.responses.push_back(tok.encode_response(s.responses[static_cast<std::size_t>(d - 1)], d));
  }
  return out;
}

std::vector<train::HierSample> encode_samples(const Tokenizer& tok, const std::vector<TextSample>& samples) {
  std::vector<train::HierSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_sample(tok, s));
  return out;
}

}  // namespace hdlm::tasks
