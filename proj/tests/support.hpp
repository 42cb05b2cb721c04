#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>

#include "rdpb/config.hpp"
#include "rdpb/dataset.hpp"

namespace rdpb::test {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("rdpb-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// The MNIST directory from $RDPB_DATA_DIR when all four files are there.
inline std::optional<std::filesystem::path> mnist_dir() {
  const char* env = std::getenv(kDataDirEnv);
  if (!env || !*env) return std::nullopt;
  const std::filesystem::path dir(env);
  for (const char* f : {dataset::kTrainImagesFile, dataset::kTrainLabelsFile,
                        dataset::kTestImagesFile, dataset::kTestLabelsFile}) {
    if (!std::filesystem::exists(dir / f)) return std::nullopt;
  }
  return dir;
}

// Small IDX directory whose images carry a bright 4x4 block at a
// label-dependent position over uniform noise, so labels are learnable.
inline std::filesystem::path write_synthetic_mnist(const std::filesystem::path& dir,
                                                   std::uint32_t train_n, std::uint32_t test_n,
                                                   std::uint64_t seed = 1) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 gen(seed);
  auto make = [&](std::uint32_t n, const char* img_file, const char* lab_file) {
    std::vector<std::uint8_t> px(std::size_t{n} * dataset::kPixels);
    std::vector<std::uint8_t> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const int y = static_cast<int>(gen() % 10);
      labels[i] = static_cast<std::uint8_t>(y);
      std::uint8_t* row = px.data() + std::size_t{i} * dataset::kPixels;
      for (std::size_t k = 0; k < dataset::kPixels; ++k) row[k] = static_cast<std::uint8_t>(gen() % 64);
      const int r0 = 4 + 5 * (y / 5), c0 = 2 + 5 * (y % 5);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) row[(r0 + r) * 28 + c0 + c] = 255;
    }
    auto write = [&](const char* name, const std::vector<std::uint8_t>& b) {
      std::ofstream(dir / name, std::ios::binary)
          .write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    };
    write(img_file, dataset::serialize_idx_images(px, n, 28, 28));
    write(lab_file, dataset::serialize_idx_labels(labels));
  };
  make(train_n, dataset::kTrainImagesFile, dataset::kTrainLabelsFile);
  make(test_n, dataset::kTestImagesFile, dataset::kTestLabelsFile);
  return dir;
}

}  // namespace rdpb::test
