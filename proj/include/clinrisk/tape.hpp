#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "clinrisk/rng.hpp"
#include "clinrisk/tensor.hpp"

namespace clinrisk {

/// Records one forward pass for reverse-mode differentiation.
///
/// Ops append themselves in execution order, which makes the list
/// topologically sorted by construction: an entry's inputs always appear
/// earlier. backward() walks the list once, in reverse, accumulating
/// gradients additively so fan-out sums up correctly.
///
/// A tape is single-threaded. Concurrent forward passes each get their
/// own tape (and, during training, their own parameter copies).
class Tape {
 public:
  explicit Tape(bool recording = true, std::uint64_t dropout_seed = 0)
      : recording_(recording), rng_(dropout_seed) {}

  /// A tape constructed for scoring only: nothing is recorded and
  /// backward() is unavailable.
  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  /// Called by ops. The closure reads the output gradient and adds into
  /// the input gradients.
  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded operation's
  /// backward rule exactly once, newest first.
  void backward(Tensor& loss);

  /// Dropout noise source; deterministic per tape seed.
  SeededRng& rng() { return rng_; }

 private:
  bool recording_;
  std::vector<std::function<void()>> entries_;
  SeededRng rng_;
};

}  // namespace clinrisk
