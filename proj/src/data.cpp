#include "etx/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>

#include "etx/error.hpp"
#include "etx/seeding.hpp"

namespace etx {

namespace {

constexpr std::array<std::string_view, 10> kCifarNames = {"airplane", "automobile", "bird",  "cat",  "deer",
                                                          "dog",      "frog",       "horse", "ship", "truck"};

void check_pair(int class_a, int class_b) {
  if (class_a < 0 || class_a > 9 || class_b < 0 || class_b > 9) throw InputError("CIFAR-10 class ids must be in 0..9");
  if (class_a == class_b) throw InputError("the two CIFAR-10 classes must differ");
}

bool has_cifar_files(const std::filesystem::path& dir) {
  std::error_code ec;
  return std::filesystem::is_regular_file(dir / "data_batch_1.bin", ec) &&
         std::filesystem::is_regular_file(dir / "test_batch.bin", ec);
}

}  // namespace

int cifar_class_id(std::string_view name) {
  for (std::size_t i = 0; i < kCifarNames.size(); ++i) {
    if (kCifarNames[i] == name) return static_cast<int>(i);
  }
  if (name.size() == 1 && name[0] >= '0' && name[0] <= '9') return name[0] - '0';
  throw InputError("unknown CIFAR-10 class '" + std::string(name) + "'");
}

std::string_view cifar_class_name(int id) {
  if (id < 0 || id > 9) return "synthetic";
  return kCifarNames[static_cast<std::size_t>(id)];
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t n = sample_numel();
  return std::span<const double>(pixels).subspan(i * n, n);
}

Tensor Dataset::batch(std::span<const std::size_t> indices, const Shape& input_shape) const {
  const std::size_t n = sample_numel();
  if (shape_numel(input_shape) != n) {
    throw DimensionError("input shape " + shape_to_string(input_shape) + " does not hold a " + std::to_string(n) +
                         "-value sample");
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  std::vector<double> values(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw InputError("sample index out of range");
    const auto s = sample(indices[r]);
    std::copy(s.begin(), s.end(), values.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return Tensor(std::move(shape), std::move(values));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset parse_cifar10_records(std::istream& in, int class_a, int class_b, Split split, std::size_t max_per_class,
                              std::string_view source) {
  check_pair(class_a, class_b);
  Dataset out;
  out.sample_shape = Shape{3, 32, 32};
  out.class_ids = {class_a, class_b};
  out.split = split;

  std::array<std::size_t, 2> kept{0, 0};
  std::array<unsigned char, kCifarRecordBytes> record{};
  std::uint64_t offset = 0;
  while (true) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) break;
    if (got != record.size()) {
      throw FormatError(std::string(source) + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                        std::to_string(got) + " of " + std::to_string(kCifarRecordBytes) + " bytes)");
    }
    const int label = record[0];
    if (label > 9) {
      throw FormatError(std::string(source) + ": unknown class id " + std::to_string(label) + " at byte offset " +
                        std::to_string(offset));
    }
    offset += kCifarRecordBytes;
    const int binary = label == class_a ? 0 : label == class_b ? 1 : -1;
    if (binary < 0) continue;
    auto& count = kept[static_cast<std::size_t>(binary)];
    if (max_per_class != 0 && count >= max_per_class) continue;
    ++count;
    out.labels.push_back(binary);
    for (std::size_t i = 1; i < record.size(); ++i) out.pixels.push_back(static_cast<double>(record[i]) / 255.0);
  }
  return out;
}

CifarPair load_cifar10_binary(const std::filesystem::path& dir, int class_a, int class_b,
                              std::size_t max_train_per_class, std::size_t max_test_per_class) {
  check_pair(class_a, class_b);
  std::filesystem::path root = dir;
  if (!has_cifar_files(root) && has_cifar_files(dir / "cifar-10-batches-bin")) root = dir / "cifar-10-batches-bin";

  auto open = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw InputError("cannot open " + p.string());
    return f;
  };

  CifarPair out;
  out.train.sample_shape = Shape{3, 32, 32};
  out.train.class_ids = {class_a, class_b};
  out.train.split = Split::train;
  for (int b = 1; b <= 5; ++b) {
    const auto path = root / ("data_batch_" + std::to_string(b) + ".bin");
    auto f = open(path);
    Dataset part = parse_cifar10_records(f, class_a, class_b, Split::train, 0, path.string());
    out.train.labels.insert(out.train.labels.end(), part.labels.begin(), part.labels.end());
    out.train.pixels.insert(out.train.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  if (max_train_per_class != 0) {
    // Keep the first max_train_per_class of each class in file order.
    Dataset trimmed;
    trimmed.sample_shape = out.train.sample_shape;
    trimmed.class_ids = out.train.class_ids;
    trimmed.split = Split::train;
    std::array<std::size_t, 2> kept{0, 0};
    for (std::size_t i = 0; i < out.train.size(); ++i) {
      auto& count = kept[static_cast<std::size_t>(out.train.labels[i])];
      if (count >= max_train_per_class) continue;
      ++count;
      trimmed.labels.push_back(out.train.labels[i]);
      const auto s = out.train.sample(i);
      trimmed.pixels.insert(trimmed.pixels.end(), s.begin(), s.end());
    }
    out.train = std::move(trimmed);
  }

  const auto test_path = root / "test_batch.bin";
  auto f = open(test_path);
  out.test = parse_cifar10_records(f, class_a, class_b, Split::test, max_test_per_class, test_path.string());
  return out;
}

std::optional<std::filesystem::path> resolve_cifar_dir(const std::optional<std::filesystem::path>& explicit_dir) {
  std::vector<std::filesystem::path> candidates;
  if (explicit_dir) candidates.push_back(*explicit_dir);
  if (const char* env = std::getenv(kDataDirEnv); env && *env) candidates.emplace_back(env);
  for (const auto& c : candidates) {
    if (has_cifar_files(c) || has_cifar_files(c / "cifar-10-batches-bin")) return c;
  }
  return std::nullopt;
}

Dataset synthetic_noise_dataset(std::size_t count, std::size_t dim, std::uint64_t seed, Split split) {
  if (count == 0 || count % 2 != 0) throw InputError("synthetic dataset size must be positive and even");
  if (dim == 0) throw InputError("synthetic sample dimension must be positive");
  Rng rng(seed);
  Dataset out;
  out.sample_shape = Shape{dim};
  out.split = split;
  out.pixels.resize(count * dim);
  for (double& v : out.pixels) v = uniform01(rng);
  out.labels.assign(count, 0);
  const auto order = permutation(count, rng);
  for (std::size_t i = 0; i < count / 2; ++i) out.labels[order[i]] = 1;
  return out;
}

BatchPlan::BatchPlan(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : dataset_size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (dataset_size == 0) throw ConfigError("cannot batch an empty dataset");
  if (batch_size > dataset_size) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  }
}

std::vector<std::size_t> BatchPlan::epoch_order(std::size_t epoch) const {
  Rng rng(derive_seed(seed_, epoch));
  return permutation(dataset_size_, rng);
}

std::span<const std::size_t> BatchPlan::next() {
  if (!started_) {
    order_ = epoch_order(0);
    started_ = true;
  } else if (cursor_ >= order_.size()) {
    ++epoch_;
    order_ = epoch_order(epoch_);
    cursor_ = 0;
  }
  const std::size_t len = std::min(batch_size_, order_.size() - cursor_);
  std::span<const std::size_t> out(order_.data() + cursor_, len);
  cursor_ += len;
  return out;
}

BatchPlan shuffled_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  return BatchPlan(dataset.size(), batch_size, seed);
}

}  // namespace etx
