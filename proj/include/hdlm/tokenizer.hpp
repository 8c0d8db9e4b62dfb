#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hdlm::tasks {

// Closed word-level vocabulary. Ids 0..2 are <pad>, <bos>, <unk>; the next
// `depth` ids are the level-end tokens <end1>..<endD>; words follow.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kUnk = 2;

  explicit Tokenizer(int depth = 2);

  // Words are added in the order given, skipping duplicates and reserved names.
  static Tokenizer from_words(int depth, std::span<const std::string> words);

  int depth() const { return depth_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int end_token(int level) const;
  bool is_reserved(int id) const { return id < 3 + depth_; }
  // -1 when absent.
  int find(const std::string& word) const;
  int add(const std::string& word);
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Whitespace split. Unknown words throw VocabularyError listing all of
  // them unless allow_unknown, in which case they map to <unk>.
  std::vector<int> encode(const std::string& text, bool allow_unknown = false) const;
  // Query: <bos> then the words.
  std::vector<int> encode_query(const std::string& text) const;
  // Response of `level`: the words then <end_level>.
  std::vector<int> encode_response(const std::string& text, int level) const;
  // Space-joined words; pad, bos and level-end tokens are dropped.
  std::string decode(std::span<const int> ids) const;

  std::vector<std::string> unknown_words(const std::string& text) const;

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.depth_ == b.depth_ && a.tokens_ == b.tokens_;
  }

 private:
  int depth_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_words(const std::string& text);
std::string join_words(std::span<const std::string> words);

}  // namespace hdlm::tasks
