#include "hdlm/stream.hpp"

#include <string>

#include "hdlm/errors.hpp"

namespace hdlm::model {

std::size_t SegmentStream::carried_count() const {
  std::size_t n = 0;
  while (n < entries.size() && entries[n].source == EntrySource::kCarried) ++n;
  return n;
}

std::vector<int> SegmentStream::injected_tokens() const {
  std::vector<int> out;
  for (const auto& e : entries) {
    if (e.source == EntrySource::kInjected) out.push_back(e.token);
  }
  return out;
}

std::vector<std::size_t> SegmentStream::positions() const {
  std::vector<std::size_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.position);
  return out;
}

std::vector<int> SegmentStream::roles() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.role);
  return out;
}

std::vector<int> SegmentStream::dense_targets() const {
  std::vector<int> t(entries.size(), 0);
  for (std::size_t i = 0; i < loss_positions.size(); ++i) t[loss_positions[i]] = loss_targets[i];
  return t;
}

std::vector<std::uint8_t> SegmentStream::active_mask() const {
  std::vector<std::uint8_t> a(entries.size(), 0);
  for (auto p : loss_positions) a[p] = 1;
  return a;
}

void SegmentStream::validate() const {
  const std::size_t n = entries.size();
  if (n == 0) throw UsageError("empty segment stream");
  const std::size_t carried = carried_count();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = entries[i];
    if (i > 0 && e.position != entries[i - 1].position + 1) {
      throw UsageError("stream positions not contiguous at entry " + std::to_string(i));
    }
    if (i >= carried && e.source == EntrySource::kCarried) {
      throw UsageError("carried entry after an injected entry at " + std::to_string(i));
    }
  }
  if (mask.rows != n || mask.cols != n) throw UsageError("stream mask does not match stream length");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (mask(i, j) != (j <= i)) throw UsageError("stream mask is not causal");
    }
  }
  if (loss_positions.size() != loss_targets.size()) {
    throw UsageError("loss positions and targets differ in length");
  }
  for (auto p : loss_positions) {
    if (p >= n) throw UsageError("loss position outside the stream");
  }
}

}  // namespace hdlm::model
