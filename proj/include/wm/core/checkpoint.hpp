#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wm/core/array.hpp"
#include "wm/core/tape.hpp"

namespace wm::core {

/// Named tensors plus free-form metadata.
///
/// On disk: a text manifest of `key: value` lines
///
///     format: wm-checkpoint
///     version: 1
///     meta.<key>: <value>
///     tensor.<name>: shape=<d0>x<d1>... offset=<byte offset> count=<elements>
///     data_bytes: <total>
///     ---
///
/// followed by the raw little-endian float32 payload. Offsets are relative
/// to the first payload byte.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Array>> tensors;

  void add(std::string name, Array value);
  const Array& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every element to the nearest float32 (the checkpoint storage precision).
void round_to_f32(Array& a);
void round_to_f32(const std::vector<Parameter*>& params);

/// Copies parameter values into / out of a checkpoint by name.
void store_parameters(Checkpoint& ckpt, const std::vector<Parameter*>& params);
void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params);

}  // namespace wm::core
