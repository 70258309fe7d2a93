#include "ci4gi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace {

constexpr char kMagic[8] = {'C', 'I', '4', 'G', 'I', 'C', 'K', 'P'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError(path.string() + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.put(static_cast<char>(kVersion));
  put_u64(out, ckpt.config_hash);
  put_u64(out, ckpt.epoch);
  const auto& d = ckpt.params.dims;
  for (auto v : {d.n_users, d.n_items, d.n_groups, d.dim, d.layers}) put_u64(out, v);
  const auto tensors = ckpt.params.named_tensors();
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t->rank());
    for (auto s : t->shape()) put_u64(out, s);
    for (double v : t->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open checkpoint");
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  const int version = in.get();
  if (version != kVersion) throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_hash = get_u64(in, path);
  ckpt.epoch = get_u64(in, path);
  ModelDims dims;
  dims.n_users = get_u64(in, path);
  dims.n_items = get_u64(in, path);
  dims.n_groups = get_u64(in, path);
  dims.dim = get_u64(in, path);
  dims.layers = get_u64(in, path);
  // Allocates every tensor with its expected shape; values are overwritten below.
  std::mt19937_64 unused(0);
  ckpt.params = ModelParams::initialize(dims, unused);

  auto tensors = ckpt.params.named_tensors();
  if (get_u64(in, path) != tensors.size()) throw ParseError(path.string() + ": tensor count mismatch");
  for (auto& [name, t] : tensors) {
    const auto len = get_u64(in, path);
    if (len > 4096) throw ParseError(path.string() + ": corrupt tensor name");
    std::string stored(len, '\0');
    if (!in.read(stored.data(), static_cast<std::streamsize>(len))) throw ParseError(path.string() + ": truncated checkpoint");
    if (stored != name) throw ParseError(path.string() + ": expected tensor '" + name + "', found '" + stored + "'");
    Shape shape(get_u64(in, path));
    if (shape.size() > 2) throw ParseError(path.string() + ": tensor '" + name + "' has unsupported rank");
    for (auto& s : shape) s = get_u64(in, path);
    if (shape != t->shape()) {
      throw ParseError(path.string() + ": tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                       shape_string(t->shape()));
    }
    for (auto& v : t->data()) v = std::bit_cast<double>(get_u64(in, path));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after checkpoint");
  return ckpt;
}

}  // namespace ci4gi
