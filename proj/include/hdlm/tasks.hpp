#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdlm/tokenizer.hpp"
#include "hdlm/training.hpp"

namespace hdlm::tasks {

// Text-level record, as stored in JSONL. Responses carry no level-end token.
struct TextSample {
  std::string query;
  std::vector<std::string> responses;

  friend bool operator==(const TextSample&, const TextSample&) = default;
};

// Balanced label tree. Level indices are 0-based here: names[0] holds the
// top-level labels, parent[d][i] is the index of label i's parent at level d-1.
struct LabelHierarchy {
  std::vector<std::vector<std::string>> names;
  std::vector<std::vector<int>> parent;

  int depth() const { return static_cast<int>(names.size()); }
  std::size_t count(int level) const { return names.at(static_cast<std::size_t>(level)).size(); }
  // Label indices from the top level down to `leaf`.
  std::vector<int> path(int leaf) const;
  std::vector<int> children(int level, int index) const;
  // Throws ConfigError unless the parent map is total and every non-leaf
  // label has a child.
  void validate() const;

  friend bool operator==(const LabelHierarchy&, const LabelHierarchy&) = default;
};

struct SyntheticSpec {
  int depth = 2;
  std::vector<int> branching{3, 4};
  // Content words w00, w01, ...
  int content_vocab = 32;
  int samples = 1000;
  // HTC: chance each signature slot is replaced by a random content word.
  // HTG: chance each fact is hidden (a distractor).
  double noise = 0.1;
  std::uint64_t seed = 0;

  // HTC: signature words contributed by each level of the label path.
  int signature_per_level = 2;
  // HTC: children of different parents draw their signature words from the
  // same pool, so a leaf is only identified jointly with its ancestors.
  bool shared_child_words = false;
  // HTC: keep the signature in path order instead of shuffling it.
  bool ordered = false;

  // HTG story shape.
  int facts = 4;
  int objects = 4;
  int locations = 4;

  void validate() const;
};

LabelHierarchy gen_hierarchy(int depth, const std::vector<int>& branching, std::uint64_t seed);

// Per-leaf signature words (the concatenation over the leaf's path).
std::vector<std::vector<std::string>> htc_signatures(const LabelHierarchy& h, const SyntheticSpec& spec);

// Leaves drawn uniformly; the query is the leaf's signature with per-slot
// noise; responses are the label names along the path.
std::vector<TextSample> gen_htc_samples(const LabelHierarchy& h, const SyntheticSpec& spec);

// Story of "<obj> <loc> seen|unseen" facts followed by "where <obj>".
// r_1 lists the seen facts as "<obj> <loc>" pairs; r_2 is the location of the
// last seen fact about r_1's first object, which is the one asked about.
std::vector<TextSample> gen_htg_samples(const SyntheticSpec& spec);

// Rule oracle for the HTG grammar: the answer implied by a thought.
std::string htg_answer(const std::string& thought);

std::string content_word(int i);

// JSONL {"query": ..., "responses": [...]}. Errors carry the line number.
std::vector<TextSample> parse_jsonl(const std::string& text);
std::string to_jsonl(const std::vector<TextSample>& samples);
std::vector<TextSample> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<TextSample>& samples);

// Vocabulary in first-appearance order over queries then responses.
Tokenizer build_tokenizer(int depth, const std::vector<TextSample>& samples);
train::HierSample encode_sample(const Tokenizer& tok, const TextSample& s);
std::vector<train::HierSample> encode_samples(const Tokenizer& tok, const std::vector<TextSample>& samples);

}  // namespace hdlm::tasks
