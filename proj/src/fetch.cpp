// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "rdpb/fetch.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <httplib.h>
#include <random>
#include <thread>

#include "rdpb/dataset.hpp"
#include "rdpb/errors.hpp"

namespace rdpb::dataset {
namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ContractError("fetch: url must start with http:// or https://: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> gunzip(const std::string& compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw FormatError("fetch: zlib initialization failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  int rc = Z_OK;
  while (rc == Z_OK) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("fetch: gzip payload is corrupt");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::string download(const std::string& url, const FetchOptions& options) {
  const UrlParts parts = split_url(url);
  std::string last_error;
  auto backoff = options.initial_backoff;
  for (int attempt = 1; attempt <= options.attempts; ++attempt) {
    httplib::Client client(parts.origin);
    client.set_follow_location(true);
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    auto res = client.Get(parts.path);
    if (res && res->status == 200) return res->body;
    last_error = res ? "HTTP status " + std::to_string(res->status)
                     : httplib::to_string(res.error());
    if (attempt < options.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw NetworkError("fetch: " + url + " failed after " +
                     std::to_string(options.attempts) + " attempts: " + last_error);
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

std::filesystem::path fetch(const std::string& url, const std::string& expected_sha256,
                            const std::filesystem::path& dest,
                            const FetchOptions& options) {
  if (std::filesystem::is_regular_file(dest) && sha256_file(dest) == expected_sha256) {
    return dest;
  }
  const std::string body = download(url, options);
  std::vector<std::uint8_t> payload =
      ends_with(url, ".gz") ? gunzip(body)
                            : std::vector<std::uint8_t>(body.begin(), body.end());
  const std::string actual = sha256_hex(payload);
  if (actual != expected_sha256) {
    throw IntegrityError("fetch: " + url + " has sha256 " + actual + ", expected " +
                         expected_sha256);
  }

  if (dest.has_parent_path()) std::filesystem::create_directories(dest.parent_path());
  std::filesystem::path tmp = dest;
  tmp += ".part" + std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw PathError("fetch: cannot write " + tmp.string());
    }
  }
  // Re-check what landed on disk before publishing it.
  if (sha256_file(tmp) != expected_sha256) {
    std::filesystem::remove(tmp);
    throw IntegrityError("fetch: digest changed while writing " + tmp.string());
  }
  std::filesystem::rename(tmp, dest);
  return dest;
}

std::span<const MnistFile> mnist_manifest() {
  static constexpr MnistFile kFiles[] = {
      {kTrainImagesFile, "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
      {kTrainLabelsFile, "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
      {kTestImagesFile, "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
      {kTestLabelsFile, "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
  };
  return kFiles;
}

std::vector<std::filesystem::path> fetch_mnist(const std::filesystem::path& dir,
                                               const std::string& mirror,
                                               const FetchOptions& options) {
  std::string base = mirror;
  if (!base.empty() && base.back() != '/') base.push_back('/');
  std::vector<std::filesystem::path> out;
  for (const MnistFile& f : mnist_manifest()) {
    out.push_back(fetch(base + f.name + ".gz", f.sha256, dir / f.name, options));
  }
  return out;
}

}  // namespace rdpb::dataset
