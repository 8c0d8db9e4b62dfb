#include "hdlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "hdlm/errors.hpp"
#include "hdlm/tokenizer.hpp"

namespace hdlm::metrics {

using tasks::split_words;

namespace {

using Ngram = std::vector<std::string>;
using Counts = std::map<Ngram, double>;

Counts ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= words.size(); ++i) c[Ngram(words.begin() + i, words.begin() + i + n)] += 1.0;
  return c;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionError("predictions and references differ in length");
  if (a == 0) throw DataError("metric over an empty set");
}

}  // namespace

F1 micro_macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                  const std::vector<std::string>& labels) {
  check_lengths(preds.size(), golds.size());
  std::set<std::string> classes(labels.begin(), labels.end());
  if (classes.empty()) {
    classes.insert(preds.begin(), preds.end());
    classes.insert(golds.begin(), golds.end());
  }
  std::map<std::string, double> tp, fp, fn;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == golds[i]) {
      tp[golds[i]] += 1;
    } else {
      fp[preds[i]] += 1;
      fn[golds[i]] += 1;
    }
  }
  double TP = 0, FP = 0, FN = 0, macro = 0;
  int present = 0;
  for (const auto& c : classes) {
    const double t = tp[c], p = fp[c], n = fn[c];
    TP += t;
    FP += p;
    FN += n;
    if (t + p + n == 0) continue;
    macro += 2 * t / (2 * t + p + n);
    ++present;
  }
  F1 out;
  out.micro = TP + FP + FN == 0 ? 0.0 : 2 * TP / (2 * TP + FP + FN);
  out.macro = present == 0 ? 0.0 : macro / present;
  return out;
}

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  check_lengths(preds.size(), golds.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double bleu2(const std::string& pred, const std::vector<std::string>& refs) {
  const auto cand = split_words(pred);
  if (cand.empty()) {
    std::cerr << "warning: bleu2 on an empty prediction scores 0\n";
    return 0.0;
  }
  if (refs.empty()) throw DataError("bleu2 needs at least one reference");
  std::vector<std::vector<std::string>> ref_words;
  for (const auto& r : refs) ref_words.push_back(split_words(r));

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 2; ++n) {
    const Counts c = ngram_counts(cand, n);
    Counts max_ref;
    for (const auto& rw : ref_words) {
      for (const auto& [g, k] : ngram_counts(rw, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    double clipped = 0, total = 0;
    for (const auto& [g, k] : c) {
      total += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    const double p = total > 0 && clipped > 0 ? clipped / total : kBleuEpsilon;
    log_sum += 0.5 * std::log(p);
  }

  // Closest reference length, shorter on ties.
  const double c = static_cast<double>(cand.size());
  double r = static_cast<double>(ref_words[0].size());
  for (const auto& rw : ref_words) {
    const double len = static_cast<double>(rw.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

double rouge_l(const std::string& pred, const std::string& ref, RougeOptions opt) {
  const auto x = split_words(ref);
  const auto y = split_words(pred);
  if (x.empty() || y.empty()) throw DataError("rouge_l needs nonempty inputs");
  std::vector<std::vector<std::size_t>> dp(x.size() + 1, std::vector<std::size_t>(y.size() + 1, 0));
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j) {
      dp[i][j] = x[i - 1] == y[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  const double lcs = static_cast<double>(dp[x.size()][y.size()]);
  if (lcs == 0) return 0.0;
  const double recall = lcs / static_cast<double>(x.size());
  const double precision = lcs / static_cast<double>(y.size());
  if (opt.duc) return recall;
  const double b2 = opt.beta * opt.beta;
  return (1 + b2) * recall * precision / (recall + b2 * precision);
}

CiderResult cider(const std::vector<std::string>& preds, const std::vector<std::vector<std::string>>& refs) {
  check_lengths(preds.size(), refs.size());
  if (preds.size() < 2) throw DataError("cider needs at least two items; IDF is degenerate for a single one");
  constexpr std::size_t kMaxN = 4;
  const double num_items = static_cast<double>(preds.size());

  std::vector<std::vector<std::vector<std::string>>> ref_words(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) throw DataError("cider item without references");
    for (const auto& r : refs[i]) ref_words[i].push_back(split_words(r));
  }

  std::vector<std::map<Ngram, double>> df(kMaxN + 1);
  for (const auto& item : ref_words) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<Ngram> seen;
      for (const auto& rw : item) {
        for (const auto& [g, k] : ngram_counts(rw, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[n][g] += 1;
    }
  }

  auto tfidf = [&](const std::vector<std::string>& words, std::size_t n) {
    Counts v = ngram_counts(words, n);
    double total = 0;
    for (const auto& [g, k] : v) total += k;
    for (auto& [g, k] : v) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 0.0 : it->second;
      k = (k / total) * std::log(num_items / std::max(1.0, d));
    }
    return v;
  };
  auto cosine = [](const Counts& a, const Counts& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, v] : a) {
      na += v * v;
      auto it = b.find(g);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [g, v] : b) nb += v * v;
    return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
  };

  CiderResult out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto cand = split_words(preds[i]);
    double item = 0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const Counts cv = tfidf(cand, n);
      double s = 0;
      for (const auto& rw : ref_words[i]) s += cosine(cv, tfidf(rw, n));
      item += s / static_cast<double>(ref_words[i].size());
    }
    out.per_item.push_back(item / kMaxN);
    out.score += out.per_item.back();
  }
  out.score /= num_items;
  out.score_x10 = 10.0 * out.score;
  return out;
}

LevelMetrics score_level(int level, const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                         RougeOptions rouge) {
  check_lengths(preds.size(), golds.size());
  LevelMetrics m;
  m.level = level;
  m.accuracy = accuracy(preds, golds);
  const F1 f1 = micro_macro_f1(preds, golds);
  m.micro_f1 = f1.micro;
  m.macro_f1 = f1.macro;
  double bleu = 0, rl = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (split_words(preds[i]).empty() || split_words(golds[i]).empty()) continue;
    bleu += bleu2(preds[i], {golds[i]});
    rl += rouge_l(preds[i], golds[i], rouge);
  }
  m.bleu2 = bleu / static_cast<double>(preds.size());
  m.rouge_l = rl / static_cast<double>(preds.size());
  if (preds.size() >= 2) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& g : golds) refs.push_back({g});
    const auto c = cider(preds, refs);
    m.cider = c.score;
    m.cider_x10 = c.score_x10;
  }
  return m;
}

}  // namespace hdlm::metrics
