#include <cmath>
#include <string>

#include "hdlm/model.hpp"

namespace hdlm::model {

LayerScheduleReport validate_schedule(const ModelConfig& config) {
  LayerScheduleReport report;
  const int depth = config.depth;
  const int layers = config.num_layers;
  if (depth < 1) {
    report.violations.push_back("depth must be >= 1, got " + std::to_string(depth));
    report.feasible = false;
    return report;
  }
  report.min_layers_bound = std::log(2.0 * depth) / std::log(3.0);

  if (config.schedule.size() != static_cast<std::size_t>(depth - 1)) {
    report.violations.push_back("schedule lists " + std::to_string(config.schedule.size()) +
                                " decoding layers, depth " + std::to_string(depth) + " needs " +
                                std::to_string(depth - 1));
  }
  // k_1 < ... < k_{D-1} < K, all positive.
  int prev = 0;
  for (std::size_t i = 0; i < config.schedule.size(); ++i) {
    const int k = config.schedule[i];
    if (k <= prev) {
      report.violations.push_back("schedule not strictly increasing at k_" + std::to_string(i + 1) + " = " +
                                  std::to_string(k) + " (previous " + std::to_string(prev) + ")");
    }
    prev = std::max(prev, k);
  }
  if (!config.schedule.empty() && config.schedule.back() >= layers) {
    report.violations.push_back("k_" + std::to_string(config.schedule.size()) + " = " +
                                std::to_string(config.schedule.back()) + " must be below K = " +
                                std::to_string(layers));
  }
  // Level d needs at least d layers below its head.
  for (std::size_t i = 0; i < config.schedule.size(); ++i) {
    const int d = static_cast<int>(i) + 1;
    if (config.schedule[i] < d) {
      report.violations.push_back("k_" + std::to_string(d) + " = " + std::to_string(config.schedule[i]) +
                                  " is below its level " + std::to_string(d));
    }
  }
  if (static_cast<double>(layers) < report.min_layers_bound) {
    report.violations.push_back("K = " + std::to_string(layers) + " is below the minimum-layer bound log3(2D) = " +
                                std::to_string(report.min_layers_bound));
  }
  report.feasible = report.violations.empty();
  return report;
}

}  // namespace hdlm::model
