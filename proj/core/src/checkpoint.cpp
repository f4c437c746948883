#include "evmamba/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace evm {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw Error(std::string("checkpoint truncated while reading ") + what);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    if (nt.value.rank() > 255) throw Error("checkpoint: rank too large for " + nt.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(nt.value.rank()));
    for (auto e : nt.value.shape()) put<std::uint64_t>(out, e);
    for (double v : nt.value.data()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof kCheckpointMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
    throw Error("checkpoint: bad magic bytes (not an EVSSCKPT file)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    auto name_bytes = r.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e == 0) throw Error("checkpoint: zero extent in tensor " + name);
      if (numel > r.remaining() / e) throw Error("checkpoint: tensor " + name + " larger than file");
      numel *= e;
      shape.push_back(static_cast<std::size_t>(e));
    }
    if (numel > r.remaining() / sizeof(float)) throw Error("checkpoint truncated in data of " + name);
    auto raw = r.take(numel * sizeof(float), "tensor data");
    std::vector<double> data(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      float f;
      std::memcpy(&f, raw.data() + k * sizeof(float), sizeof(float));
      data[k] = f;
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) {
    throw Error("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after declared contents");
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_checkpoint(const std::filesystem::path& path, Model& model) {
  std::vector<NamedTensor> tensors;
  for (auto& [name, t] : model.named_parameters()) tensors.push_back({name, t});
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void read_checkpoint(const std::filesystem::path& path, Model& model) {
  const auto loaded = decode_checkpoint(read_file_bytes(path));
  auto params = model.named_parameters();
  if (loaded.size() != params.size()) {
    throw Error("checkpoint holds " + std::to_string(loaded.size()) + " tensors, model expects " +
                std::to_string(params.size()));
  }
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& nt : loaded) {
    if (!by_name.emplace(nt.name, &nt.value).second) throw Error("checkpoint: duplicate tensor " + nt.name);
  }
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: missing tensor " + name);
    if (it->second->shape() != t.shape()) {
      throw Error("checkpoint: tensor " + name + " has shape " + shape_str(it->second->shape()) + ", model expects " +
                  shape_str(t.shape()));
    }
  }
  for (auto& [name, t] : params) {
    const Tensor& src = *by_name.at(name);
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

}  // namespace evm
