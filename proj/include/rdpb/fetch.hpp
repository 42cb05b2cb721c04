// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rdpb::dataset {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

struct FetchOptions {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{60};
};

/// Downloads `url` to `dest` if `dest` is missing or its digest differs.
/// A URL ending in ".gz" is gunzipped before the digest check, so
/// `expected_sha256` always refers to the stored file. The file is written
/// to a temporary sibling and renamed into place only on a digest match.
/// Throws IntegrityError on mismatch, NetworkError after the last failed
/// attempt (exponential backoff between attempts).
std::filesystem::path fetch(const std::string& url, const std::string& expected_sha256,
                            const std::filesystem::path& dest,
                            const FetchOptions& options = {});

struct MnistFile {
  const char* name;
  const char* sha256;  // of the uncompressed IDX file
};

/// The four standard files with the digests of their uncompressed form.
std::span<const MnistFile> mnist_manifest();

inline constexpr const char* kDefaultMnistMirror =
    "https://storage.googleapis.com/cvdf-datasets/mnist/";

/// Fetches `<mirror><name>.gz` for every manifest entry into `dir`.
std::vector<std::filesystem::path> fetch_mnist(const std::filesystem::path& dir,
                                               const std::string& mirror,
                                               const FetchOptions& options = {});

}  // namespace rdpb::dataset
