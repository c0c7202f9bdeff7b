#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clinrisk/model.hpp"
#include "clinrisk/tokenizer.hpp"

namespace clinrisk {

/// Serialized model state. On disk this is a versioned container with a
/// UTF-8 text header (format line, step counter, config as `key value`
/// lines, the vocabulary one token per line in id order) followed by the
/// parameter section: per parameter one text line `name rank d0 d1 ...`
/// and then the row-major values as little-endian 32-bit floats.
/// Parameter order is fixed, so save -> load -> save is byte-identical.
struct Checkpoint {
  static constexpr int kVersion = 1;

  ModelConfig config;
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::uint64_t step = 0;

  static Checkpoint from_model(const Model& model, const Vocabulary& vocab);
  Model to_model() const;

  /// Serialized byte image (exactly what save() writes).
  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  /// Atomic write: temp file in the same directory, then rename.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// FNV-1a over the serialized image, for run manifests.
  std::uint64_t content_hash() const;
};

/// Turns a dense base-length checkpoint into a windowed+global one: all
/// weights carry over unchanged, the positional table is tiled `factor`
/// times, and the attention mode switches. On inputs that fit the base
/// length (with a window covering them) the converted model scores
/// exactly like the dense one up to roundoff.
Checkpoint init_longformer_from_dense(const Checkpoint& ckpt, std::int64_t window,
                                      std::int64_t factor);

/// The reverse restriction used by the chunked scoring variants: keeps
/// only the first base-length rows of the positional table and switches
/// back to dense attention, leaving every other weight untouched.
Checkpoint restrict_to_base_dense(const Checkpoint& ckpt);

}  // namespace clinrisk
