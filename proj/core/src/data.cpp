// SPDX-License-Identifier: Apache-2.0
#include "hacm/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hacm/error.hpp"

namespace hacm::data {
namespace {

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 rotation(const Vec3& axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

Mat3 compose(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

Vec3 transform(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

// Parents before children.
std::vector<std::size_t> topological_order(const std::vector<int>& parents) {
  std::vector<std::vector<std::size_t>> children(parents.size());
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] < 0)
      order.push_back(j);
    else
      children[static_cast<std::size_t>(parents[j])].push_back(j);
  }
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t c : children[order[i]]) order.push_back(c);
  if (order.size() != parents.size()) throw ConfigError("skeleton: joint tree is not connected");
  return order;
}

void validate_spec(const SyntheticSpec& spec, const std::vector<MotionFamily>& families) {
  if (spec.n_classes == 0) throw ConfigError("synthetic data: zero classes");
  if (spec.frames < 2) throw ConfigError("synthetic data: need at least 2 frames");
  if (spec.noise_sigma < 0.0) throw ConfigError("synthetic data: negative noise_sigma");
  if (spec.skeleton.offsets.size() != spec.skeleton.joints()) throw ConfigError("skeleton: offsets/parents mismatch");
  if (families.size() != spec.n_classes) throw ConfigError("synthetic data: one motion family per class required");
  for (const MotionFamily& f : families) {
    for (std::size_t i = 0; i < f.moving.size(); ++i) {
      if (f.moving[i].joint >= spec.skeleton.joints()) throw ConfigError("synthetic data: moving joint out of range");
      if (f.moving[i].follow >= static_cast<int>(i)) throw ConfigError("synthetic data: follow must name an earlier entry");
    }
  }
}

refine::SkeletonSequence sample(const SyntheticSpec& spec, const MotionFamily& family, Rng& rng) {
  const Skeleton& sk = spec.skeleton;
  const std::size_t J = sk.joints(), T = spec.frames;
  const std::vector<std::size_t> order = topological_order(sk.parents);

  struct Osc {
    std::size_t joint;
    Vec3 axis;
    double amp, freq, phase;
  };
  std::vector<Osc> osc;
  for (const JointMotion& m : family.moving) {
    Osc o{m.joint, m.axis, rng.uniform(m.amp_lo, m.amp_hi), rng.uniform(m.freq_lo, m.freq_hi),
          rng.uniform(0.0, 2.0 * std::numbers::pi)};
    if (m.follow >= 0) {
      const Osc& lead = osc[static_cast<std::size_t>(m.follow)];
      o.freq = lead.freq;
      o.phase = lead.phase + m.phase_offset;
    }
    osc.push_back(o);
  }
  const Mat3 view = rotation({0.0, 1.0, 0.0}, rng.uniform(-spec.max_yaw, spec.max_yaw));

  refine::SkeletonSequence out;
  out.parents = sk.parents;
  out.torso = sk.torso;
  out.coords = Tensor({T, J, 3});
  std::vector<Mat3> rot(J);
  std::vector<Vec3> pos(J);
  const Mat3 identity{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<Mat3> local(J, identity);
    for (const Osc& o : osc) {
      const double angle =
          o.amp * std::sin(2.0 * std::numbers::pi * o.freq * static_cast<double>(t) / static_cast<double>(T) + o.phase);
      local[o.joint] = compose(local[o.joint], rotation(o.axis, angle));
    }
    for (std::size_t j : order) {
      const int p = sk.parents[j];
      if (p < 0) {
        pos[j] = {0.0, 1.0, 0.0};
        rot[j] = compose(view, local[j]);
        continue;
      }
      const auto pj = static_cast<std::size_t>(p);
      const Vec3 d = transform(rot[pj], sk.offsets[j]);
      pos[j] = {pos[pj][0] + d[0], pos[pj][1] + d[1], pos[pj][2] + d[2]};
      rot[j] = compose(rot[pj], local[j]);
    }
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t a = 0; a < 3; ++a) {
        const double noisy = pos[j][a] + (spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0);
        out.coords.at(t, j, a) = static_cast<double>(static_cast<float>(noisy));
      }
    }
  }
  return out;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kMagic[8] = {'H', 'A', 'C', 'M', 'S', 'E', 'Q', '1'};
constexpr std::size_t kHeaderBytes = 8 + 4 * 4;

std::filesystem::path sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

}  // namespace

Skeleton default_skeleton() {
  Skeleton s;
  s.parents = {-1, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11};
  s.offsets = {
      {0.0, 0.0, 0.0},     {0.0, 0.25, 0.0},    {0.0, 0.08, 0.0},    {0.0, 0.12, 0.0},    {-0.18, 0.0, 0.0},
      {0.0, -0.28, 0.0},   {0.0, -0.25, 0.0},   {0.0, -0.08, 0.0},   {0.18, 0.0, 0.0},    {0.0, -0.28, 0.0},
      {0.0, -0.25, 0.0},   {0.0, -0.08, 0.0},   {-0.1, -0.05, 0.0},  {0.0, -0.4, 0.0},    {0.0, -0.4, 0.0},
      {0.0, -0.05, 0.1},   {0.1, -0.05, 0.0},   {0.0, -0.4, 0.0},    {0.0, -0.4, 0.0},    {0.0, -0.05, 0.1},
      {0.0, 0.25, 0.0},    {0.0, -0.06, 0.0},   {0.03, -0.04, 0.0},  {0.0, -0.06, 0.0},   {-0.03, -0.04, 0.0},
  };
  s.torso = {0, 1, 20, 4, 8, 12, 16};
  return s;
}

std::vector<MotionFamily> default_families(std::size_t n_classes) {
  // (shoulder, elbow) and (hip, knee) of the left and right side.
  static const std::array<std::array<std::size_t, 4>, 2> pairs{{{4, 5, 8, 9}, {12, 13, 16, 17}}};
  std::vector<MotionFamily> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto& limbs = pairs[(c / 2) % 2];
    const double offset = c % 2 == 0 ? 0.0 : std::numbers::pi;
    const std::size_t round = c / 4;
    const Vec3 axis = round % 2 == 0 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 0.0, 1.0};
    const double f0 = 1.0 + 2.0 * static_cast<double>(round);
    MotionFamily fam;
    fam.moving.push_back({limbs[0], axis, 0.3, 0.8, f0, f0 + 2.0});
    fam.moving.push_back({limbs[1], axis, 0.2, 0.6, f0, f0 + 2.0, 0, 0.0});
    fam.moving.push_back({limbs[2], axis, 0.3, 0.8, f0, f0 + 2.0, 0, offset});
    fam.moving.push_back({limbs[3], axis, 0.2, 0.6, f0, f0 + 2.0, 0, offset});
    out.push_back(std::move(fam));
  }
  return out;
}

std::vector<LabeledSequence> generate(const SyntheticSpec& spec) {
  const std::vector<MotionFamily> families = spec.families.empty() ? default_families(spec.n_classes) : spec.families;
  validate_spec(spec, families);
  std::vector<LabeledSequence> out;
  for (Split split : {Split::train, Split::test}) {
    const std::size_t per = split == Split::train ? spec.samples_per_class : spec.test_per_class;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      for (std::size_t i = 0; i < per; ++i) {
        Rng rng = Rng::split(spec.seed, {static_cast<std::uint64_t>(split), c, i});
        out.push_back({sample(spec, families[c], rng), c, split});
      }
    }
  }
  return out;
}

refine::SkeletonSequence crop_resample_at(const refine::SkeletonSequence& x, double p, std::size_t frames_out,
                                          std::size_t offset) {
  if (x.coords.rank() != 3) throw ShapeError("crop_resample: expected [frames x joints x 3]");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("crop_resample: p must lie in (0, 1], got " + std::to_string(p));
  const std::size_t L = x.frames(), J = x.joints(), C = x.coords.dim(2);
  const auto n = static_cast<std::size_t>(std::lround(p * static_cast<double>(L)));
  if (n < 2) throw DomainError("crop_resample: crop of " + std::to_string(n) + " frames is shorter than 2");
  if (offset + n > L) throw DomainError("crop_resample: crop window exceeds the sequence");
  if (frames_out == 0) throw ConfigError("crop_resample: zero output frames");

  refine::SkeletonSequence out;
  out.parents = x.parents;
  out.torso = x.torso;
  out.coords = Tensor({frames_out, J, C});
  const std::size_t stride = J * C;
  for (std::size_t i = 0; i < frames_out; ++i) {
    const double s = frames_out == 1 ? 0.0
                                     : static_cast<double>(i) * static_cast<double>(n - 1) /
                                           static_cast<double>(frames_out - 1);
    const auto lo = std::min(static_cast<std::size_t>(s), n - 1);
    const double frac = s - static_cast<double>(lo);
    const double* a = x.coords.data() + (offset + lo) * stride;
    double* dst = out.coords.data() + i * stride;
    if (frac == 0.0) {
      std::copy_n(a, stride, dst);
      continue;
    }
    const double* b = a + stride;
    for (std::size_t k = 0; k < stride; ++k) dst[k] = a[k] + frac * (b[k] - a[k]);
  }
  return out;
}

refine::SkeletonSequence crop_resample(const refine::SkeletonSequence& x, double p, std::size_t frames_out, Rng& rng) {
  const std::size_t L = x.frames();
  const auto n = static_cast<std::size_t>(std::lround(p * static_cast<double>(L)));
  const std::size_t offset = n >= 2 && n <= L ? rng.below(L - n + 1) : 0;
  return crop_resample_at(x, p, frames_out, offset);
}

refine::SkeletonSequence crop_resample_center(const refine::SkeletonSequence& x, double p, std::size_t frames_out) {
  const std::size_t L = x.frames();
  const auto n = static_cast<std::size_t>(std::lround(p * static_cast<double>(L)));
  return crop_resample_at(x, p, frames_out, n <= L ? (L - n) / 2 : 0);
}

void save(const std::filesystem::path& path, const std::vector<LabeledSequence>& seqs) {
  std::uint32_t L = 0, J = 0;
  if (!seqs.empty()) {
    L = static_cast<std::uint32_t>(seqs.front().sequence.frames());
    J = static_cast<std::uint32_t>(seqs.front().sequence.joints());
  }
  nlohmann::json meta;
  meta["version"] = kSequenceFormatVersion;
  meta["labels"] = nlohmann::json::array();
  meta["splits"] = nlohmann::json::array();
  for (const LabeledSequence& s : seqs) {
    if (s.sequence.frames() != L || s.sequence.joints() != J || s.sequence.coords.dim(2) != 3) {
      throw ShapeError("save: every sequence must share one [frames x joints x 3] shape");
    }
    meta["labels"].push_back(s.label);
    meta["splits"].push_back(s.split == Split::train ? "train" : "test");
  }
  meta["parents"] = seqs.empty() ? std::vector<int>{} : seqs.front().sequence.parents;
  meta["torso"] = seqs.empty() ? std::vector<std::size_t>{} : seqs.front().sequence.torso;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save: cannot open " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kSequenceFormatVersion);
  put_u32(os, L);
  put_u32(os, J);
  put_u32(os, static_cast<std::uint32_t>(seqs.size()));
  for (const LabeledSequence& s : seqs) {
    for (double v : s.sequence.coords.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(os, bits);
    }
  }
  if (!os) throw Error("save: write failed for " + path.string());
  std::ofstream js(sidecar(path));
  js << meta.dump(1) << '\n';
  if (!js) throw Error("save: write failed for " + sidecar(path).string());
}

std::vector<LabeledSequence> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw HeaderError("load: " + path.string() + " is not a sequence file (bad magic)");
  }
  if (bytes.size() < kHeaderBytes) throw TruncatedError("load: header of " + path.string() + " is truncated");
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kSequenceFormatVersion) {
    throw VersionError("load: unsupported format version " + std::to_string(version) + " (expected " +
                       std::to_string(kSequenceFormatVersion) + ")");
  }
  const std::size_t L = get_u32(bytes.data() + 12), J = get_u32(bytes.data() + 16), count = get_u32(bytes.data() + 20);
  const std::size_t per = L * J * 3;
  if (bytes.size() < kHeaderBytes + count * per * 4) {
    throw TruncatedError("load: payload of " + path.string() + " holds " + std::to_string(bytes.size() - kHeaderBytes) +
                         " bytes, expected " + std::to_string(count * per * 4));
  }
  if (bytes.size() > kHeaderBytes + count * per * 4) throw HeaderError("load: trailing bytes after payload");

  std::ifstream js(sidecar(path));
  if (!js) throw Error("load: missing label file " + sidecar(path).string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("load: malformed label file: ") + e.what());
  }
  if (meta.value("version", 0u) != kSequenceFormatVersion) throw VersionError("load: label file version mismatch");
  const auto labels = meta.at("labels").get<std::vector<std::size_t>>();
  const auto splits = meta.at("splits").get<std::vector<std::string>>();
  if (labels.size() != count || splits.size() != count) {
    throw TruncatedError("load: label file lists " + std::to_string(labels.size()) + " records, payload has " +
                         std::to_string(count));
  }
  const auto parents = meta.at("parents").get<std::vector<int>>();
  const auto torso = meta.at("torso").get<std::vector<std::size_t>>();

  std::vector<LabeledSequence> out;
  out.reserve(count);
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSequence s;
    s.label = labels[i];
    if (splits[i] != "train" && splits[i] != "test") throw HeaderError("load: unknown split '" + splits[i] + "'");
    s.split = splits[i] == "train" ? Split::train : Split::test;
    s.sequence.parents = parents;
    s.sequence.torso = torso;
    s.sequence.coords = Tensor({L, J, 3});
    for (double& v : s.sequence.coords.values()) {
      v = static_cast<double>(std::bit_cast<float>(get_u32(p)));
      p += 4;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hacm::data
