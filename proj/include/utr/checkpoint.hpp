#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "utr/tensor.hpp"

namespace utr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Contents of a checkpoint archive. On disk: a text manifest (one line per
/// entry with dtype, shape, byte offset, length and CRC-32) terminated by an
/// `end` line, followed by the raw little-endian float32 payload.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::map<std::string, std::string> meta;  // single-line values
  std::string config_text;
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace utr
