#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "hdlm/errors.hpp"
#include "hdlm/tasks.hpp"

namespace {

using namespace hdlm;
using namespace hdlm::tasks;

TEST(Hierarchy, Counts) {
  const auto h = gen_hierarchy(2, {3, 4}, 1);
  EXPECT_EQ(h.count(0), 3u);
  EXPECT_EQ(h.count(1), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_GE(h.parent[1][i], 0);
    EXPECT_LT(h.parent[1][i], 3);
  }
  for (int p = 0; p < 3; ++p) EXPECT_EQ(h.children(0, p).size(), 4u);

  const auto h3 = gen_hierarchy(3, {2, 2, 2}, 1);
  EXPECT_EQ(h3.count(0), 2u);
  EXPECT_EQ(h3.count(1), 4u);
  EXPECT_EQ(h3.count(2), 8u);
  h3.validate();

  std::set<std::string> names;
  for (const auto& level : h3.names) names.insert(level.begin(), level.end());
  EXPECT_EQ(names.size(), 14u);
}

TEST(Hierarchy, Determinism) {
  EXPECT_EQ(gen_hierarchy(2, {3, 4}, 9), gen_hierarchy(2, {3, 4}, 9));
  EXPECT_NE(gen_hierarchy(2, {3, 4}, 9), gen_hierarchy(2, {3, 4}, 10));
}

TEST(Hierarchy, Errors) {
  EXPECT_THROW(gen_hierarchy(1, {3}, 0), ConfigError);
  EXPECT_THROW(gen_hierarchy(2, {1, 3}, 0), ConfigError);
  EXPECT_THROW(gen_hierarchy(2, {3}, 0), ConfigError);
  auto h = gen_hierarchy(2, {2, 2}, 0);
  h.parent[1] = {0, 0, 0, 0};
  EXPECT_THROW(h.validate(), ConfigError);
  h.parent[1] = {0, 1, 5, 1};
  EXPECT_THROW(h.validate(), ConfigError);
}

SyntheticSpec htc_spec(int samples, double noise, std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.samples = samples;
  s.noise = noise;
  s.seed = seed;
  s.content_vocab = 40;
  return s;
}

TEST(Htc, ParentConsistency) {
  const auto h = gen_hierarchy(2, {3, 4}, 2);
  std::map<std::string, std::string> parent_of;
  for (std::size_t i = 0; i < h.count(1); ++i) parent_of[h.names[1][i]] = h.names[0][static_cast<std::size_t>(h.parent[1][i])];
  for (const auto& s : gen_htc_samples(h, htc_spec(2000, 0.3))) {
    ASSERT_EQ(s.responses.size(), 2u);
    ASSERT_EQ(parent_of.at(s.responses[1]), s.responses[0]);
  }

  const auto h3 = gen_hierarchy(3, {2, 2, 3}, 4);
  auto spec = htc_spec(500, 0.2);
  spec.depth = 3;
  spec.branching = {2, 2, 3};
  for (const auto& s : gen_htc_samples(h3, spec)) {
    ASSERT_EQ(s.responses.size(), 3u);
    bool found = false;
    for (std::size_t leaf = 0; leaf < h3.count(2); ++leaf) {
      const auto p = h3.path(static_cast<int>(leaf));
      if (h3.names[2][leaf] != s.responses[2]) continue;
      found = true;
      EXPECT_EQ(h3.names[1][static_cast<std::size_t>(p[1])], s.responses[1]);
      EXPECT_EQ(h3.names[0][static_cast<std::size_t>(p[0])], s.responses[0]);
    }
    EXPECT_TRUE(found);
  }
}

TEST(Htc, LeafDistributionUniform) {
  const auto h = gen_hierarchy(2, {3, 4}, 5);
  const auto samples = gen_htc_samples(h, htc_spec(10000, 0.1, 11));
  std::map<std::string, int> counts;
  for (const auto& s : samples) ++counts[s.responses[1]];
  ASSERT_EQ(counts.size(), 12u);
  const double expected = 10000.0 / 12.0;
  double chi2 = 0;
  for (const auto& [leaf, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // mean 11, sd sqrt(22)
  EXPECT_LT(chi2, 11.0 + 3.0 * std::sqrt(22.0));
}

TEST(Htc, NoiselessQueriesIdentifyLeaf) {
  for (bool shared : {false, true}) {
    const auto h = gen_hierarchy(2, {3, 4}, 6);
    auto spec = htc_spec(3000, 0.0);
    spec.shared_child_words = shared;
    // A lookup from the sorted query words to the leaf is a Bayes-optimal
    // classifier here; it never sees two leaves for one key.
    std::map<std::multiset<std::string>, std::string> table;
    for (const auto& s : gen_htc_samples(h, spec)) {
      const auto w = split_words(s.query);
      std::multiset<std::string> key(w.begin(), w.end());
      auto [it, inserted] = table.emplace(key, s.responses[1]);
      ASSERT_EQ(it->second, s.responses[1]);
    }
    EXPECT_EQ(table.size(), 12u);
  }
}

TEST(Htc, Determinism) {
  const auto h = gen_hierarchy(2, {3, 4}, 7);
  EXPECT_EQ(gen_htc_samples(h, htc_spec(100, 0.2)), gen_htc_samples(h, htc_spec(100, 0.2)));
  EXPECT_NE(gen_htc_samples(h, htc_spec(100, 0.2, 1)), gen_htc_samples(h, htc_spec(100, 0.2, 2)));
}

TEST(Htc, SpecErrors) {
  const auto h = gen_hierarchy(2, {3, 4}, 7);
  auto spec = htc_spec(10, 1.0);
  EXPECT_THROW(gen_htc_samples(h, spec), ConfigError);
  spec = htc_spec(10, 0.1);
  spec.content_vocab = 10;
  EXPECT_THROW(gen_htc_samples(h, spec), ConfigError);
  spec = htc_spec(10, 0.1);
  spec.depth = 3;
  spec.branching = {3, 4, 2};
  EXPECT_THROW(gen_htc_samples(h, spec), ConfigError);
}

// Reads the answer straight off the story: the location of the last seen fact
// about the object in the trailing "where <obj>".
std::string story_answer(const std::string& query) {
  const auto w = split_words(query);
  const std::string target = w.back();
  std::string loc;
  for (std::size_t i = 0; w[i] != "where"; i += 3) {
    if (w[i] == target && w[i + 2] == "seen") loc = w[i + 1];
  }
  return loc;
}

TEST(Htg, AnswerFollowsThought) {
  SyntheticSpec spec;
  spec.samples = 2000;
  spec.noise = 0.4;
  spec.facts = 5;
  spec.seed = 8;
  for (const auto& s : gen_htg_samples(spec)) {
    ASSERT_EQ(s.responses.size(), 2u);
    EXPECT_EQ(s.responses[1], htg_answer(s.responses[0]));
    EXPECT_EQ(s.responses[1], story_answer(s.query));
    // the thought is exactly the seen facts, in story order
    const auto w = split_words(s.query);
    std::vector<std::string> seen;
    for (std::size_t i = 0; w[i] != "where"; i += 3) {
      if (w[i + 2] == "seen") seen.insert(seen.end(), {w[i], w[i + 1]});
    }
    EXPECT_EQ(s.responses[0], join_words(seen));
  }
}

TEST(Htg, NoDistractorsKeepsAllFacts) {
  SyntheticSpec spec;
  spec.samples = 200;
  spec.noise = 0.0;
  spec.facts = 4;
  for (const auto& s : gen_htg_samples(spec)) {
    EXPECT_EQ(s.query.find("unseen"), std::string::npos);
    EXPECT_EQ(split_words(s.responses[0]).size(), 8u);
  }
}

TEST(Htg, Determinism) {
  SyntheticSpec spec;
  spec.samples = 50;
  spec.seed = 4;
  EXPECT_EQ(gen_htg_samples(spec), gen_htg_samples(spec));
}

TEST(HtgAnswer, RuleOracle) {
  EXPECT_EQ(htg_answer("o1 l2 o3 l0 o1 l3"), "l3");
  EXPECT_EQ(htg_answer("o2 l1"), "l1");
  EXPECT_THROW(htg_answer("o2"), DataError);
  EXPECT_THROW(htg_answer(""), DataError);
}

TEST(Tokenizer, RoundTripsGeneratorOutput) {
  const auto h = gen_hierarchy(2, {3, 4}, 1);
  auto samples = gen_htc_samples(h, htc_spec(300, 0.3));
  SyntheticSpec g;
  g.samples = 300;
  const auto htg = gen_htg_samples(g);
  samples.insert(samples.end(), htg.begin(), htg.end());
  const auto tok = build_tokenizer(2, samples);
  for (const auto& s : samples) {
    const auto enc = encode_sample(tok, s);
    ASSERT_EQ(enc.query.front(), Tokenizer::kBos);
    EXPECT_EQ(tok.decode(enc.query), s.query);
    for (int d = 1; d <= 2; ++d) {
      const auto& r = enc.responses[static_cast<std::size_t>(d - 1)];
      EXPECT_EQ(r.back(), tok.end_token(d));
      EXPECT_EQ(tok.decode(r), s.responses[static_cast<std::size_t>(d - 1)]);
    }
  }
  // ids are dense
  for (int id = 0; id < tok.size(); ++id) EXPECT_EQ(tok.find(tok.token(id)), id);
}

TEST(Tokenizer, ReservedAndUnknown) {
  Tokenizer tok(3);
  EXPECT_EQ(tok.size(), 6);
  EXPECT_EQ(tok.end_token(1), 3);
  EXPECT_EQ(tok.end_token(3), 5);
  EXPECT_TRUE(tok.is_reserved(5));
  EXPECT_THROW(tok.end_token(4), IndexError);
  const std::vector<std::string> words{"a", "b", "a"};
  const auto t = Tokenizer::from_words(2, words);
  EXPECT_EQ(t.size(), 7);
  EXPECT_THROW(t.encode("a zz b yy"), VocabularyError);
  EXPECT_EQ(t.encode("a zz", true), (std::vector<int>{t.find("a"), Tokenizer::kUnk}));
  EXPECT_EQ(t.unknown_words("zz a yy"), (std::vector<std::string>{"zz", "yy"}));
}

TEST(Jsonl, RoundTrip) {
  const std::vector<TextSample> samples{{"q one", {"r1", "r two"}}, {"é \"quoted\"", {"", "x"}}};
  EXPECT_EQ(parse_jsonl(to_jsonl(samples)), samples);
  const auto path = std::filesystem::temp_directory_path() / "hdlm_tasks_roundtrip.jsonl";
  write_jsonl(path, samples);
  EXPECT_EQ(read_jsonl(path), samples);
  std::filesystem::remove(path);
}

TEST(Jsonl, Errors) {
  try {
    parse_jsonl("{\"query\": \"a\", \"responses\": [\"b\"]}\n\n{\"query\": 3}\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_jsonl("not json\n"), DataError);
  EXPECT_THROW(read_jsonl("/nonexistent/file.jsonl"), DataError);
  EXPECT_TRUE(parse_jsonl("").empty());
}

}  // namespace
