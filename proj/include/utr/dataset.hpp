#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "utr/geometry.hpp"

namespace utr {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<std::string> names;  // file names, sorted
  std::vector<MaskedSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Loads every decodable PNG/JPEG in `dir` (sorted by file name), resizes to
/// the full canvas, normalizes to [-1, 1] and masks the ring. Undecodable
/// files are skipped with a warning on stderr; no usable image is an error.
Dataset load_dataset(const std::string& dir, const OutpaintGeometry& geom, double fill = 0.0);

std::int64_t full_batches(std::int64_t dataset_size, std::int64_t batch_size);

/// Permutation of [0, n) for one epoch, a pure function of (seed, epoch).
std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, std::int64_t epoch);

struct Batch {
  Tensor masked;        // (B, h', w', 3)
  Tensor ground_truth;  // (B, h', w', 3)
  std::vector<std::int64_t> indices;
};

Batch make_batch(const Dataset& data, const std::vector<std::int64_t>& indices);

/// Batch for a global step: epochs are consecutive runs of full batches over
/// epoch_order. Depends only on (step, seed), so resumed runs see the same
/// sequence.
Batch batch_for_step(const Dataset& data, std::int64_t step, std::int64_t batch_size, std::uint64_t seed);

/// Writes `count` procedural size x size PNGs (two-color gradient, sinusoidal
/// texture, up to three rectangles) named synthetic_00000.png, ...
std::vector<std::string> gen_synthetic(std::int64_t count, std::int64_t size, std::uint64_t seed,
                                       const std::string& out_dir);

}  // namespace utr
