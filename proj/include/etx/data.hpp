#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etx/tensor.hpp"

namespace etx {

enum class Split { train, test };

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;
inline constexpr const char* kDataDirEnv = "EARLY_TRANSFER_DATA_DIR";

// airplane=0 automobile=1 bird=2 cat=3 deer=4 dog=5 frog=6 horse=7 ship=8 truck=9.
// Also accepts the numeric id. Throws InputError for anything else.
int cifar_class_id(std::string_view name);
std::string_view cifar_class_name(int id);

/// Binary-labelled samples stored contiguously, pixel values in [0, 1].
struct Dataset {
  Shape sample_shape;
  std::vector<double> pixels;
  std::vector<int> labels;
  // Original CIFAR ids behind labels 0 and 1; -1 for synthetic data.
  std::array<int, 2> class_ids{-1, -1};
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }
  std::span<const double> sample(std::size_t i) const;

  // Gathers the given samples into a [B x input_shape...] tensor. input_shape must hold
  // exactly sample_numel() values (a flat 3072 sample feeds a 3x32x32 input).
  Tensor batch(std::span<const std::size_t> indices, const Shape& input_shape) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct CifarPair {
  Dataset train;
  Dataset test;
};

// Parses CIFAR-10 binary records (1 label byte + 3072 CHW pixel bytes) from `in`,
// keeping only class_a (label 0) and class_b (label 1). max_per_class = 0 keeps all.
// Throws FormatError on a truncated record or a label byte above 9; `source` names
// the stream in messages.
Dataset parse_cifar10_records(std::istream& in, int class_a, int class_b, Split split, std::size_t max_per_class = 0,
                              std::string_view source = "<stream>");

// Loads data_batch_1..5.bin and test_batch.bin from `dir` (or its
// cifar-10-batches-bin subdirectory).
CifarPair load_cifar10_binary(const std::filesystem::path& dir, int class_a, int class_b,
                              std::size_t max_train_per_class = 0, std::size_t max_test_per_class = 0);

// Explicit directory first, then $EARLY_TRANSFER_DATA_DIR. Returns nullopt when
// neither names a directory holding the CIFAR-10 binary files.
std::optional<std::filesystem::path> resolve_cifar_dir(const std::optional<std::filesystem::path>& explicit_dir);

// Uniform [0,1] noise with labels split half/half by a seeded shuffle, independent
// of the pixels. count must be even.
Dataset synthetic_noise_dataset(std::size_t count, std::size_t dim, std::uint64_t seed, Split split = Split::train);

/// Seeded per-epoch shuffling into fixed-size batches; the last batch of an epoch
/// may be short. Each epoch's order is derived from (seed, epoch) alone.
class BatchPlan {
 public:
  BatchPlan(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t dataset_size() const { return dataset_size_; }
  std::size_t batch_size() const { return batch_size_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t batches_per_epoch() const { return (dataset_size_ + batch_size_ - 1) / batch_size_; }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  // Next batch of the stream, rolling into the next epoch when the current one is exhausted.
  std::span<const std::size_t> next();
  // Epoch of the batch most recently returned by next().
  std::size_t epoch() const { return epoch_; }
  bool at_epoch_boundary() const { return cursor_ >= order_.size(); }

 private:
  std::size_t dataset_size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  bool started_ = false;
  std::vector<std::size_t> order_;
};

BatchPlan shuffled_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

}  // namespace etx
