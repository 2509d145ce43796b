#ifndef ANSEL_CHECKPOINT_H_
#define ANSEL_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "ansel/autograd.h"
#include "ansel/tensor.h"

namespace ansel {

// Flat mapping from hierarchical parameter path ("layer.0.head.1.W_Q") to
// its value.
using Checkpoint = std::map<std::string, Tensor>;

// On-disk layout, all integers little-endian:
//   magic "ANSELCKP" | u32 version | u64 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 extents[rank]
//              | f64 payload (row-major)
// Entries are written in key order, so equal checkpoints give equal bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

Checkpoint snapshot(const NamedParameters& params);
// Copies values for every named parameter; missing keys or shape changes
// raise DataError.
void restore(const Checkpoint& checkpoint, const NamedParameters& params);

}  // namespace ansel

#endif  // ANSEL_CHECKPOINT_H_
