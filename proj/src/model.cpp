// SPDX-License-Identifier: Apache-2.0
#include "rdpb/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "rdpb/autodiff.hpp"
#include "rdpb/dataset.hpp"
#include "rdpb/errors.hpp"

namespace rdpb::model {
namespace {

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& engine) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (double& v : w) v = dist(engine);
  return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor apply_linear(const Tensor& x, const Linear& layer) {
  return add_bias(matmul(x, layer.weight), layer.bias);
}

Tensor mlp_trunk(Tensor h, const std::vector<Linear>& layers, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) h = relu(apply_linear(h, layers[i]));
  return h;
}

void push_tensors(std::vector<Tensor>& out, const Linear& l) {
  out.push_back(l.weight);
  out.push_back(l.bias);
}

Linear clone_linear(const Linear& l) { return {l.weight.clone(), l.bias.clone()}; }

void expect_rows(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() != 2 || t.cols() != width) {
    throw ContractError(std::string(what) + ": expected (M, " + std::to_string(width) +
                        ") input, got " + shape_string(t.shape()));
  }
}

// Little-endian byte writer/reader.
struct Writer {
  std::vector<std::uint8_t> out;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }
};

struct Reader {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > in.size()) {
      throw TruncationError("checkpoint: truncated at byte " + std::to_string(pos) +
                            ", need " + std::to_string(n) + " more");
    }
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{in[pos + i]} << (8 * i);
    pos += static_cast<std::size_t>(width);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(in.begin() + pos, in.begin() + pos + n);
    pos += n;
    return s;
  }
};

}  // namespace

std::size_t ModelParams::encoder_output_width() const {
  return encoder_mu.weight.cols() + encoder_logvar.weight.cols();
}

std::vector<ModelParams::Named> ModelParams::named_tensors() const {
  std::vector<Named> out;
  auto add_layer = [&](const std::string& prefix, const Linear& l) {
    out.push_back({prefix + ".weight", l.weight});
    out.push_back({prefix + ".bias", l.bias});
  };
  for (std::size_t i = 0; i < encoder.size(); ++i)
    add_layer("encoder." + std::to_string(i), encoder[i]);
  add_layer("encoder_mu", encoder_mu);
  add_layer("encoder_logvar", encoder_logvar);
  for (std::size_t i = 0; i < inference.size(); ++i)
    add_layer("inference." + std::to_string(i), inference[i]);
  for (std::size_t i = 0; i < reconstruction.size(); ++i)
    add_layer("reconstruction." + std::to_string(i), reconstruction[i]);
  return out;
}

std::vector<Tensor> ModelParams::encoder_tensors() const {
  std::vector<Tensor> out;
  for (const Linear& l : encoder) push_tensors(out, l);
  push_tensors(out, encoder_mu);
  push_tensors(out, encoder_logvar);
  return out;
}

std::vector<Tensor> ModelParams::inference_tensors() const {
  std::vector<Tensor> out;
  for (const Linear& l : inference) push_tensors(out, l);
  return out;
}

std::vector<Tensor> ModelParams::reconstruction_tensors() const {
  std::vector<Tensor> out;
  for (const Linear& l : reconstruction) push_tensors(out, l);
  return out;
}

std::vector<Tensor> ModelParams::all_tensors() const {
  std::vector<Tensor> out = encoder_tensors();
  for (const Tensor& t : inference_tensors()) out.push_back(t);
  for (const Tensor& t : reconstruction_tensors()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : all_tensors()) n += t.size();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.arch = arch;
  p.dim = dim;
  for (const Linear& l : encoder) p.encoder.push_back(clone_linear(l));
  p.encoder_mu = clone_linear(encoder_mu);
  p.encoder_logvar = clone_linear(encoder_logvar);
  for (const Linear& l : inference) p.inference.push_back(clone_linear(l));
  for (const Linear& l : reconstruction) p.reconstruction.push_back(clone_linear(l));
  return p;
}

ModelParams init_params(std::uint64_t seed, const Arch& arch, std::size_t dim) {
  if (dim == 0 || arch.input == 0 || arch.classes == 0) {
    throw ContractError("init_params: widths must be positive");
  }
  std::mt19937_64 engine(seed);
  ModelParams p;
  p.arch = arch;
  p.dim = dim;
  std::size_t width = arch.input;
  for (std::size_t h : arch.encoder_hidden) {
    if (h == 0) throw ContractError("init_params: widths must be positive");
    p.encoder.push_back(make_linear(width, h, engine));
    width = h;
  }
  p.encoder_mu = make_linear(width, dim, engine);
  p.encoder_logvar = make_linear(width, dim, engine);

  width = dim;
  for (std::size_t h : arch.inference_hidden) {
    if (h == 0) throw ContractError("init_params: widths must be positive");
    p.inference.push_back(make_linear(width, h, engine));
    width = h;
  }
  p.inference.push_back(make_linear(width, arch.classes, engine));

  width = dim;
  for (std::size_t h : arch.reconstruction_hidden) {
    if (h == 0) throw ContractError("init_params: widths must be positive");
    p.reconstruction.push_back(make_linear(width, h, engine));
    width = h;
  }
  p.reconstruction.push_back(make_linear(width, arch.input, engine));
  return p;
}

Encoded encode(const Tensor& x, const ModelParams& params) {
  expect_rows(x, params.arch.input, "encode");
  const Tensor h = mlp_trunk(x, params.encoder, params.encoder.size());
  return {apply_linear(h, params.encoder_mu),
          clamp(apply_linear(h, params.encoder_logvar), kLogvarMin, kLogvarMax)};
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& u) {
  if (mu.shape() != logvar.shape() || mu.shape() != u.shape()) {
    throw ContractError("reparameterize: shapes " + shape_string(mu.shape()) + ", " +
                        shape_string(logvar.shape()) + ", " + shape_string(u.shape()) +
                        " differ");
  }
  return add(mu, mul(exp(scale(logvar, 0.5)), u));
}

Tensor infer(const Tensor& zhat, const ModelParams& params) {
  expect_rows(zhat, params.dim, "infer");
  const std::size_t hidden = params.inference.size() - 1;
  const Tensor h = mlp_trunk(zhat, params.inference, hidden);
  return log_softmax(apply_linear(h, params.inference.back()));
}

Tensor reconstruct(const Tensor& zhat, const ModelParams& params) {
  expect_rows(zhat, params.dim, "reconstruct");
  const std::size_t hidden = params.reconstruction.size() - 1;
  const Tensor h = mlp_trunk(zhat, params.reconstruction, hidden);
  return sigmoid(clamp(apply_linear(h, params.reconstruction.back()), -30.0, 30.0));
}

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  Writer w;
  w.bytes("RDPB");
  w.u32(kCheckpointVersion);
  const auto named = params.named_tensors();
  w.u64(named.size());
  for (const auto& [name, t] : named) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
  }
  return std::move(w.out);
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  if (r.str(4) != "RDPB") throw FormatError("checkpoint: bad magic");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.uint(8);
  std::map<std::string, Tensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.uint(4));
    const auto rank = r.uint(4);
    Shape shape(rank);
    for (auto& e : shape) e = r.uint(8);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.f64();
    tensors.emplace(name, Tensor(std::move(shape), std::move(values), true));
  }
  if (r.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");

  auto take = [&](const std::string& prefix) {
    auto w = tensors.find(prefix + ".weight");
    auto b = tensors.find(prefix + ".bias");
    if (w == tensors.end() || b == tensors.end()) {
      throw FormatError("checkpoint: missing layer " + prefix);
    }
    if (w->second.rank() != 2 || b->second.size() != w->second.cols()) {
      throw FormatError("checkpoint: inconsistent shapes in layer " + prefix);
    }
    return Linear{w->second, b->second};
  };
  auto take_seq = [&](const std::string& prefix) {
    std::vector<Linear> out;
    while (tensors.count(prefix + "." + std::to_string(out.size()) + ".weight")) {
      out.push_back(take(prefix + "." + std::to_string(out.size())));
    }
    return out;
  };

  ModelParams p;
  p.encoder = take_seq("encoder");
  p.encoder_mu = take("encoder_mu");
  p.encoder_logvar = take("encoder_logvar");
  p.inference = take_seq("inference");
  p.reconstruction = take_seq("reconstruction");
  if (p.inference.empty() || p.reconstruction.empty()) {
    throw FormatError("checkpoint: missing decoder heads");
  }
  p.dim = p.encoder_mu.weight.cols();
  p.arch.input = p.encoder.empty() ? p.encoder_mu.weight.rows() : p.encoder[0].weight.rows();
  p.arch.classes = p.inference.back().weight.cols();
  p.arch.encoder_hidden.clear();
  for (const Linear& l : p.encoder) p.arch.encoder_hidden.push_back(l.weight.cols());
  p.arch.inference_hidden.clear();
  for (std::size_t i = 0; i + 1 < p.inference.size(); ++i)
    p.arch.inference_hidden.push_back(p.inference[i].weight.cols());
  p.arch.reconstruction_hidden.clear();
  for (std::size_t i = 0; i + 1 < p.reconstruction.size(); ++i)
    p.arch.reconstruction_hidden.push_back(p.reconstruction[i].weight.cols());
  if (p.named_tensors().size() != tensors.size()) {
    throw FormatError("checkpoint: unexpected extra tensors");
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PathError("cannot write checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(dataset::read_file(path));
}

}  // namespace rdpb::model
