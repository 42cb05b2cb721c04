// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rdpb/tensor.hpp"

namespace rdpb::dataset {

inline constexpr std::uint32_t kImageMagic = 2051;  // 0x00000803
inline constexpr std::uint32_t kLabelMagic = 2049;  // 0x00000801
inline constexpr std::size_t kPixels = 784;
inline constexpr int kClasses = 10;

struct IdxImages {
  Tensor images;  // (n, rows*cols), pixel/255
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

using IdxData = std::variant<IdxImages, IdxLabels>;

/// Decodes an unsigned-byte IDX image (magic 2051) or label (magic 2049)
/// file. Throws FormatError on a wrong magic or type code, TruncationError
/// when the payload is shorter than the header promises.
IdxData parse_idx(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_idx_images(std::span<const std::uint8_t> pixels,
                                               std::uint32_t count,
                                               std::uint32_t rows,
                                               std::uint32_t cols);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

enum class Split { kTrain, kValidation, kTest };
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct LabeledImageSet {
  Tensor images;  // (n, 784), values in [0, 1]
  std::vector<int> labels;
  Split split = Split::kTrain;
  /// Record index of each row in its source file.
  std::vector<std::size_t> source_index;

  std::size_t size() const { return labels.size(); }
  std::array<std::size_t, kClasses> label_histogram() const;
  /// Rows [begin, begin+count) as a new set.
  LabeledImageSet slice(std::size_t begin, std::size_t count) const;
};

struct MnistSplits {
  LabeledImageSet train;
  LabeledImageSet validation;
  LabeledImageSet test;
};

inline constexpr const char* kTrainImagesFile = "train-images-idx3-ubyte";
inline constexpr const char* kTrainLabelsFile = "train-labels-idx1-ubyte";
inline constexpr const char* kTestImagesFile = "t10k-images-idx3-ubyte";
inline constexpr const char* kTestLabelsFile = "t10k-labels-idx1-ubyte";

/// Loads the four standard files. The first `train_count` records of the
/// train file form the training split and the rest the validation split.
MnistSplits load_mnist(const std::filesystem::path& dir,
                       std::size_t train_count = 50000);

struct Batch {
  Tensor x;  // (M, 784)
  std::vector<int> y;
  std::vector<std::size_t> indices;  // rows of the source set
};

/// One epoch of minibatches over a seeded permutation; the trailing partial
/// batch is dropped. Batches are materialized on access.
class BatchSequence {
 public:
  BatchSequence(const LabeledImageSet& set, std::size_t batch_size,
                std::uint64_t seed);

  std::size_t size() const { return count_; }
  std::size_t batch_size() const { return batch_size_; }
  std::span<const std::size_t> indices(std::size_t b) const;
  Batch operator[](std::size_t b) const;

 private:
  const LabeledImageSet* set_;
  std::size_t batch_size_;
  std::size_t count_;
  std::vector<std::size_t> order_;
};

BatchSequence batches(const LabeledImageSet& set, std::int64_t batch_size,
                      std::uint64_t seed);

/// Gathers the given rows into a batch.
Batch gather(const LabeledImageSet& set, std::span<const std::size_t> rows);

}  // namespace rdpb::dataset
