#include "ansel/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ansel/errors.h"

namespace ansel {
namespace {

constexpr char kMagic[8] = {'A', 'N', 'S', 'E', 'L', 'C', 'K', 'P'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, checkpoint.size());
  for (const auto& [name, tensor] : checkpoint) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto extent : tensor.shape()) put_le<std::uint64_t>(out, extent);
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const auto version = in.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint64_t>();
  Checkpoint checkpoint;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = in.get_le<std::uint32_t>();
    std::string name = in.get_bytes(name_len);
    const auto rank = in.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& extent : shape) extent = in.get_le<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    if (!checkpoint.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw DataError("duplicate checkpoint entry " + name);
    }
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint");
  return checkpoint;
}

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint snapshot(const NamedParameters& params) {
  Checkpoint checkpoint;
  for (const auto& [name, p] : params) checkpoint.emplace(name, p->value);
  return checkpoint;
}

void restore(const Checkpoint& checkpoint, const NamedParameters& params) {
  for (const auto& [name, p] : params) {
    auto it = checkpoint.find(name);
    if (it == checkpoint.end()) throw DataError("checkpoint lacks " + name);
    if (it->second.shape() != p->value.shape()) {
      throw DataError("checkpoint entry " + name + " has shape " +
                      shape_to_string(it->second.shape()) + ", expected " +
                      shape_to_string(p->value.shape()));
    }
    *p = Parameter(it->second);
  }
}

}  // namespace ansel
