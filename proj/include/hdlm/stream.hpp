#pragma once

#include <cstddef>
#include <vector>

#include "hdlm/autodiff.hpp"

namespace hdlm::model {

enum class EntrySource { kCarried, kInjected };

// One row of a segment's input. Role 0 is the query, role d the level-d response.
struct StreamEntry {
  std::size_t position = 0;
  EntrySource source = EntrySource::kInjected;
  int token = -1;  // valid for injected entries only
  int role = 0;

  friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

// Mixed stream of carried latents and injected tokens for one segment.
// Carried entries form a prefix; positions are contiguous from the first
// entry's position.
struct SegmentStream {
  int level = 1;
  std::vector<StreamEntry> entries;
  num::Mask mask;
  // Row indices whose next-token prediction is scored, and the tokens they
  // must predict.
  std::vector<std::size_t> loss_positions;
  std::vector<int> loss_targets;

  std::size_t size() const { return entries.size(); }
  std::size_t carried_count() const;
  std::vector<int> injected_tokens() const;
  std::vector<std::size_t> positions() const;
  std::vector<int> roles() const;

  // Dense per-row target and activity arrays for cross_entropy.
  std::vector<int> dense_targets() const;
  std::vector<std::uint8_t> active_mask() const;

  // Throws UsageError when an invariant is broken.
  void validate() const;
};

}  // namespace hdlm::model
