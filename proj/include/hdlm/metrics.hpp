#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hdlm::metrics {

struct F1 {
  double micro = 0.0;
  double macro = 0.0;
};

// Single-label multiclass. Classes that occur in neither list do not enter
// the macro average. `labels` optionally restricts the candidate set.
F1 micro_macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                  const std::vector<std::string>& labels = {});

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

inline constexpr double kBleuEpsilon = 1e-9;

// Modified 1- and 2-gram precision, geometric mean, brevity penalty against
// the closest reference length. Zero precisions are floored at kBleuEpsilon.
// An empty prediction scores 0.
double bleu2(const std::string& pred, const std::vector<std::string>& refs);

struct RougeOptions {
  double beta = 1.0;
  // beta -> infinity, i.e. F = recall.
  bool duc = false;
};

double rouge_l(const std::string& pred, const std::string& ref, RougeOptions opt = {});

struct CiderResult {
  double score = 0.0;  // mean over items of the mean over n of TF-IDF cosines
  double score_x10 = 0.0;
  std::vector<double> per_item;
};

// TF-IDF n-gram vectors for n = 1..4 with IDF log(N / max(1, df)) over the
// reference sets. Needs at least two items.
CiderResult cider(const std::vector<std::string>& preds, const std::vector<std::vector<std::string>>& refs);

// Per-level scores, in [0, 1].
struct LevelMetrics {
  int level = 0;
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::optional<double> cider_x10;
};

struct MetricReport {
  std::size_t samples = 0;
  std::vector<LevelMetrics> levels;
};

// Scores one level's predictions. CIDEr is skipped (0, no x10 column) for
// fewer than two items.
LevelMetrics score_level(int level, const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                         RougeOptions rouge = {});

}  // namespace hdlm::metrics
