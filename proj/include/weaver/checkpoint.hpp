#pragma once

// .wvr checkpoint container:
//
//   8 bytes   magic "WVRCKPT\0"
//   8 bytes   header length H, little-endian uint64
//   H bytes   UTF-8 JSON header: format_version, model_config, history,
//             cumulative_examples, payload_bytes and a tensor directory
//             (name, layer, shape, dtype, offset, nbytes)
//   payload   tensor data in directory order, little-endian IEEE-754
//
// Tensors are written as f64 so a round trip is bit-exact; f32 payloads are
// accepted on load and widened.

#include <iosfwd>
#include <string>

#include "weaver/cl.hpp"

namespace weaver {

inline constexpr char kCheckpointExtension[] = ".wvr";

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out);

// Throws FormatError (corrupt/truncated), UnsupportedVersionError, or
// ValidationError (history inconsistent with cumulative_examples).
Checkpoint load_checkpoint(std::istream& in);

// Writes to "<path>.tmp" and renames over `path`.
void save_checkpoint_file(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace weaver
