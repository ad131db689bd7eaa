// SPDX-License-Identifier: Apache-2.0
#include "hacm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <vector>

#include "hacm/error.hpp"

namespace hacm::checkpoint {
namespace {

constexpr char kMagic[8] = {'H', 'A', 'C', 'M', 'C', 'K', 'P', '1'};

template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open " + path_);
    bytes_.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void header() {
    if (bytes_.size() < 8 || std::memcmp(bytes_.data(), kMagic, 8) != 0) {
      throw HeaderError("checkpoint: " + path_ + " is not a checkpoint (bad magic)");
    }
    pos_ = 8;
    const auto version = get<std::uint32_t>();
    if (version != kVersion) {
      throw VersionError("checkpoint: unsupported version " + std::to_string(version) + " in " + path_);
    }
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw TruncatedError("checkpoint: " + path_ + " is truncated");
  }
  std::string path_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save(const std::filesystem::path& path, std::uint64_t digest, std::span<const Parameter* const> params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, digest);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) put<std::uint64_t>(out, d);
    for (double v : p->value.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw Error("checkpoint: cannot write " + path.string());
}

std::uint64_t read_digest(const std::filesystem::path& path) {
  Reader r(path);
  r.header();
  return r.get<std::uint64_t>();
}

void load(const std::filesystem::path& path, std::uint64_t expected_digest, std::span<Parameter* const> params) {
  Reader r(path);
  r.header();
  const auto digest = r.get<std::uint64_t>();
  if (digest != expected_digest) {
    std::ostringstream msg;
    msg << "checkpoint: config digest " << std::hex << digest << " of " << path.string()
        << " does not match the run configuration (" << expected_digest << ")";
    throw ConfigError(msg.str());
  }
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t(shape);
    for (double& v : t.values()) v = std::bit_cast<double>(r.get<std::uint64_t>());
    blobs.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw HeaderError("checkpoint: trailing bytes in " + path.string());
  for (Parameter* p : params) {
    auto it = blobs.find(p->name);
    if (it == blobs.end()) throw FormatError("checkpoint: parameter '" + p->name + "' missing from " + path.string());
    if (it->second.shape() != p->value.shape()) {
      throw FormatError("checkpoint: parameter '" + p->name + "' has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    }
    p->value = it->second;
  }
}

}  // namespace hacm::checkpoint
