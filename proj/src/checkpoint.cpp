#include "hexfleet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::ad {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    double v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(fmt::format("truncated checkpoint while reading {} at byte {}", what, pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxNameLength = 4096;

}  // namespace

std::string serialize_checkpoint(const TensorMap& tensors) {
  std::string out(kCheckpointMagic);
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_f64(out, v);
  }
  return out;
}

TensorMap deserialize_checkpoint(std::string_view bytes) {
  if (!bytes.starts_with(kCheckpointMagic)) {
    if (bytes.starts_with("HEXFLEET")) {
      throw CheckpointError(fmt::format("unsupported checkpoint version '{}'", bytes.substr(0, 9)));
    }
    throw CheckpointError("not a HEXFLEET checkpoint (bad magic)");
  }
  Reader r(bytes.substr(kCheckpointMagic.size()));
  TensorMap out;
  while (!r.done()) {
    auto len = r.u64("name length");
    if (len == 0 || len > kMaxNameLength) throw CheckpointError(fmt::format("bad tensor name length {}", len));
    std::string name = r.text(len, "name");
    auto rank = r.u64("rank");
    if (rank > kMaxRank) throw CheckpointError(fmt::format("tensor '{}' has rank {}", name, rank));
    std::vector<std::size_t> shape;
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      auto d = r.u64("dimension");
      shape.push_back(d);
      count *= d;
    }
    if (count > bytes.size() / 8) throw CheckpointError(fmt::format("tensor '{}' larger than the file", name));
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64("values");
    if (!out.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw CheckpointError(fmt::format("duplicate tensor '{}'", name));
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(fmt::format("cannot open {} for writing", path.string()));
  auto bytes = serialize_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(fmt::format("failed writing {}", path.string()));
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace hexfleet::ad
