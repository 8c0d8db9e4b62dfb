#include "hdlm/tokenizer.hpp"

#include <sstream>

#include "hdlm/errors.hpp"

namespace hdlm::tasks {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

Tokenizer::Tokenizer(int depth) : depth_(depth) {
  if (depth < 1) throw ConfigError("tokenizer depth must be >= 1");
  for (const char* name : {"<pad>", "<bos>", "<unk>"}) add(name);
  for (int d = 1; d <= depth; ++d) add("<end" + std::to_string(d) + ">");
}

Tokenizer Tokenizer::from_words(int depth, std::span<const std::string> words) {
  Tokenizer t(depth);
  for (const auto& w : words) {
    if (t.find(w) < 0) t.add(w);
  }
  return t;
}

int Tokenizer::end_token(int level) const {
  if (level < 1 || level > depth_) throw IndexError("no level-end token for level " + std::to_string(level));
  return 2 + level;
}

int Tokenizer::find(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? -1 : it->second;
}

int Tokenizer::add(const std::string& word) {
  if (word.empty() || word.find_first_of(" \t\n\r") != std::string::npos) {
    throw VocabularyError("token '" + word + "' is empty or contains whitespace");
  }
  auto [it, inserted] = index_.emplace(word, size());
  if (inserted) tokens_.push_back(word);
  return it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Tokenizer::unknown_words(const std::string& text) const {
  std::vector<std::string> out;
  for (const auto& w : split_words(text)) {
    if (find(w) < 0) out.push_back(w);
  }
  return out;
}

std::vector<int> Tokenizer::encode(const std::string& text, bool allow_unknown) const {
  std::vector<int> ids;
  std::vector<std::string> missing;
  for (const auto& w : split_words(text)) {
    const int id = find(w);
    if (id < 0) {
      missing.push_back(w);
      ids.push_back(kUnk);
    } else {
      ids.push_back(id);
    }
  }
  if (!missing.empty() && !allow_unknown) {
    throw VocabularyError("out-of-vocabulary tokens: " + join_words(missing));
  }
  return ids;
}

std::vector<int> Tokenizer::encode_query(const std::string& text) const {
  std::vector<int> ids{kBos};
  const auto words = encode(text);
  ids.insert(ids.end(), words.begin(), words.end());
  return ids;
}

std::vector<int> Tokenizer::encode_response(const std::string& text, int level) const {
  auto ids = encode(text);
  ids.push_back(end_token(level));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kPad || id == kBos || (id > kUnk && id <= 2 + depth_)) continue;
    words.push_back(token(id));
  }
  return join_words(words);
}

}  // namespace hdlm::tasks
