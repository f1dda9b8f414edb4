#pragma once

#include <string>
#include <vector>

#include "model.hpp"

namespace plab {

// Checkpoint container format, version 1:
//   bytes 0..7   magic "PLABCKPT"
//   u32          format version
//   u64          header length in bytes
//   header       u32 kind, u32 config[7], u32 tensor count, then per tensor
//                (lexicographic name order): u32 name_len, name bytes,
//                u32 dtype (0 = f32), u32 ndim, u32 dims[ndim],
//                u64 payload offset, u64 payload byte length
//   payload      raw little-endian f32 data, tensors in header order
// All integers little-endian. Loading validates structure, shape/byte
// agreement, name ordering, finiteness, and the canonical slot set.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// canonical container bytes without touching disk (save writes exactly these)
std::string serialize_checkpoint(const Checkpoint& ckpt);

// digest of the canonical bytes, identical to hashing the saved file
std::string checkpoint_digest(const Checkpoint& ckpt);

struct TensorDelta {
    std::string name;
    float max_abs_diff = 0.0f;
    int64_t n_differing = 0;
};

struct CkptDiff {
    bool configs_match = false;
    bool kinds_match = false;
    std::vector<TensorDelta> deltas;      // names present in both
    std::vector<std::string> only_first;  // names missing from the second
    std::vector<std::string> only_second;

    bool identical() const;
    // same tensors and config, ignoring the kind tag (merge outputs are
    // kind=merged even when every weight matches the vlm input)
    bool tensors_identical() const;
};

CkptDiff diff_checkpoints(const Checkpoint& a, const Checkpoint& b);

// digest of the serialized file, for embedding in downstream artifacts
std::string checkpoint_file_digest(const std::string& path);

}  // namespace plab
