#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdlm/model.hpp"
#include "hdlm/training.hpp"

namespace hdlm::persist {

inline constexpr char kCheckpointMagic[8] = {'H', 'D', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u64 header length, JSON header, u32 array
// count, arrays (u32 name length, name, u8 dtype, u32 rank, u64 dims, raw
// little-endian float64 data), u64 FNV-1a of all preceding bytes.
struct Checkpoint {
  model::Parameters params;
  std::optional<train::OptimizerState> optimizer;
  std::int64_t step = 0;
  // std::mt19937_64 in its stream form.
  std::string rng_state;
  // Tokenizer entries, id order; empty when the run had none.
  std::vector<std::string> vocab;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws IntegrityError (with the byte offset) on truncation, corruption or
// a version mismatch. Nothing partial is returned.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace hdlm::persist
