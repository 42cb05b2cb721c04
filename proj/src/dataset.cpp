// SPDX-License-Identifier: Apache-2.0
#include "rdpb/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "rdpb/errors.hpp"

namespace rdpb::dataset {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void require_bytes(std::size_t have, std::size_t need, const char* what) {
  if (have < need) {
    throw TruncationError(std::string("idx: truncated ") + what + ": expected " +
                          std::to_string(need) + " bytes, got " +
                          std::to_string(have));
  }
}

}  // namespace

IdxData parse_idx(std::span<const std::uint8_t> bytes) {
  require_bytes(bytes.size(), 4, "header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kImageMagic && magic != kLabelMagic) {
    throw FormatError("idx: unexpected magic " + std::to_string(magic) +
                      " (expected 2051 for images or 2049 for labels)");
  }
  const std::size_t ndims = bytes[3];
  const std::size_t header = 4 + 4 * ndims;
  require_bytes(bytes.size(), header, "header");
  std::vector<std::size_t> dims(ndims);
  std::size_t payload = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    dims[d] = read_be32(bytes, 4 + 4 * d);
    payload *= dims[d];
  }
  require_bytes(bytes.size(), header + payload, "payload");
  const auto data = bytes.subspan(header, payload);

  if (magic == kLabelMagic) {
    if (ndims != 1) throw FormatError("idx: label file must have 1 dimension");
    return IdxLabels{{data.begin(), data.end()}};
  }
  if (ndims < 2) throw FormatError("idx: image file needs at least 2 dimensions");
  const std::size_t n = dims[0];
  const std::size_t per = n == 0 ? 0 : payload / n;
  std::vector<double> values(payload);
  for (std::size_t i = 0; i < payload; ++i) values[i] = data[i] / 255.0;
  IdxImages out;
  out.images = Tensor({n, per}, std::move(values));
  out.rows = ndims >= 3 ? dims[1] : 1;
  out.cols = dims[ndims - 1];
  return out;
}

std::vector<std::uint8_t> serialize_idx_images(std::span<const std::uint8_t> pixels,
                                               std::uint32_t count,
                                               std::uint32_t rows,
                                               std::uint32_t cols) {
  if (pixels.size() != std::size_t{count} * rows * cols) {
    throw DimensionError("serialize_idx_images: pixel count does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  write_be32(out, kImageMagic);
  write_be32(out, count);
  write_be32(out, rows);
  write_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation" || name == "val") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw ContractError("unknown split '" + name + "'");
}

std::array<std::size_t, kClasses> LabeledImageSet::label_histogram() const {
  std::array<std::size_t, kClasses> h{};
  for (int y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

LabeledImageSet LabeledImageSet::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw ContractError("slice: range exceeds set size");
  const std::size_t w = images.cols();
  const auto v = images.values();
  LabeledImageSet out;
  out.images = Tensor({count, w}, std::vector<double>(v.begin() + begin * w,
                                                      v.begin() + (begin + count) * w));
  out.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  out.source_index.assign(source_index.begin() + begin,
                          source_index.begin() + begin + count);
  out.split = split;
  return out;
}

namespace {

LabeledImageSet load_pair(const std::filesystem::path& images_path,
                          const std::filesystem::path& labels_path, Split split) {
  IdxData img = parse_idx(read_file(images_path));
  IdxData lab = parse_idx(read_file(labels_path));
  auto* im = std::get_if<IdxImages>(&img);
  auto* lb = std::get_if<IdxLabels>(&lab);
  if (!im) throw FormatError(images_path.string() + ": not an IDX image file");
  if (!lb) throw FormatError(labels_path.string() + ": not an IDX label file");
  const std::size_t n = im->images.rows();
  if (n != lb->labels.size()) {
    throw ConsistencyError("mnist: " + std::to_string(n) + " images but " +
                           std::to_string(lb->labels.size()) + " labels in " +
                           images_path.parent_path().string());
  }
  if (im->images.cols() != kPixels) {
    throw FormatError(images_path.string() + ": expected 784 pixels per image, got " +
                      std::to_string(im->images.cols()));
  }
  LabeledImageSet set;
  set.images = std::move(im->images);
  set.split = split;
  set.labels.resize(n);
  set.source_index.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = lb->labels[i];
    if (y >= kClasses) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(y) +
                        " out of range at record " + std::to_string(i));
    }
    set.labels[i] = y;
    set.source_index[i] = i;
  }
  return set;
}

}  // namespace

MnistSplits load_mnist(const std::filesystem::path& dir, std::size_t train_count) {
  const char* names[] = {kTrainImagesFile, kTrainLabelsFile, kTestImagesFile,
                         kTestLabelsFile};
  std::string missing;
  for (const char* name : names) {
    if (!std::filesystem::is_regular_file(dir / name)) {
      missing += missing.empty() ? "" : ", ";
      missing += name;
    }
  }
  if (!missing.empty()) {
    throw PathError("mnist: missing in " + dir.string() + ": " + missing);
  }

  MnistSplits out;
  {
    LabeledImageSet full =
        load_pair(dir / kTrainImagesFile, dir / kTrainLabelsFile, Split::kTrain);
    if (full.size() < train_count) {
      throw ConsistencyError("mnist: train file has " + std::to_string(full.size()) +
                             " records, fewer than the " +
                             std::to_string(train_count) + " training examples");
    }
    out.train = full.slice(0, train_count);
    out.validation = full.slice(train_count, full.size() - train_count);
    out.validation.split = Split::kValidation;
  }
  out.test = load_pair(dir / kTestImagesFile, dir / kTestLabelsFile, Split::kTest);
  return out;
}

BatchSequence::BatchSequence(const LabeledImageSet& set, std::size_t batch_size,
                             std::uint64_t seed)
    : set_(&set), batch_size_(batch_size), count_(0), order_(set.size()) {
  if (batch_size == 0) throw ContractError("batches: batch size must be positive");
  if (batch_size > set.size()) {
    throw ContractError("batches: batch size " + std::to_string(batch_size) +
                        " exceeds set size " + std::to_string(set.size()));
  }
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 engine(seed);
  std::shuffle(order_.begin(), order_.end(), engine);
  count_ = set.size() / batch_size;
}

std::span<const std::size_t> BatchSequence::indices(std::size_t b) const {
  return std::span<const std::size_t>(order_).subspan(b * batch_size_, batch_size_);
}

Batch BatchSequence::operator[](std::size_t b) const {
  return gather(*set_, indices(b));
}

BatchSequence batches(const LabeledImageSet& set, std::int64_t batch_size,
                      std::uint64_t seed) {
  if (batch_size <= 0) throw ContractError("batches: batch size must be positive");
  return BatchSequence(set, static_cast<std::size_t>(batch_size), seed);
}

Batch gather(const LabeledImageSet& set, std::span<const std::size_t> rows) {
  const std::size_t w = set.images.cols();
  const auto v = set.images.values();
  std::vector<double> x(rows.size() * w);
  Batch b;
  b.y.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(v.begin() + rows[r] * w, w, x.begin() + r * w);
    b.y.push_back(set.labels[rows[r]]);
  }
  b.x = Tensor({rows.size(), w}, std::move(x));
  b.indices.assign(rows.begin(), rows.end());
  return b;
}

}  // namespace rdpb::dataset
