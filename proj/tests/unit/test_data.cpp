// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "hacm/data.hpp"
#include "hacm/error.hpp"
#include "hacm/rng.hpp"

using namespace hacm;
using namespace hacm::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hacm_unit_data";
  fs::create_directories(dir);
  return dir / name;
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_classes = 4;
  s.samples_per_class = 3;
  s.test_per_class = 2;
  s.frames = 24;
  s.seed = 9;
  return s;
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("default skeleton") {
  const Skeleton s = default_skeleton();
  CHECK(s.joints() == 25);
  CHECK(s.parents[0] == -1);
  for (std::size_t j = 1; j < 25; ++j) CHECK(s.parents[j] >= 0);
  CHECK(s.torso == std::vector<std::size_t>{0, 1, 20, 4, 8, 12, 16});
}

TEST_CASE("default families") {
  const auto f = default_families(6);
  CHECK(f.size() == 6);
  for (const MotionFamily& m : f) {
    CHECK_FALSE(m.moving.empty());
    for (std::size_t i = 0; i < m.moving.size(); ++i) CHECK(m.moving[i].follow < static_cast<int>(i));
  }
  // Classes 0 and 1 move the same joints and differ only in phase.
  CHECK(f[0].moving[2].joint == f[1].moving[2].joint);
  CHECK(f[0].moving[2].phase_offset != f[1].moving[2].phase_offset);
}

TEST_CASE("generation") {
  const SyntheticSpec spec = tiny_spec();
  const auto seqs = generate(spec);
  CHECK(seqs.size() == 4 * (3 + 2));
  std::size_t train = 0;
  std::set<std::size_t> labels;
  for (const LabeledSequence& s : seqs) {
    CHECK(s.sequence.coords.shape() == Shape{24, 25, 3});
    CHECK(s.sequence.coords.all_finite());
    train += s.split == Split::train;
    labels.insert(s.label);
    // Single-precision values.
    for (double v : s.sequence.coords.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
  CHECK(train == 12);
  CHECK(labels.size() == 4);
  CHECK(seqs.front().split == Split::train);
  CHECK(seqs.back().split == Split::test);

  const auto again = generate(spec);
  for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(again[i].sequence.coords == seqs[i].sequence.coords);
  SyntheticSpec other = spec;
  other.seed = 10;
  CHECK_FALSE(generate(other)[0].sequence.coords == seqs[0].sequence.coords);

  SyntheticSpec bad = spec;
  bad.n_classes = 0;
  CHECK_THROWS_AS(generate(bad), ConfigError);
  bad = spec;
  bad.families = default_families(3);
  CHECK_THROWS_AS(generate(bad), ConfigError);
  bad = spec;
  bad.families = default_families(4);
  bad.families[0].moving[0].follow = 0;
  CHECK_THROWS_AS(generate(bad), ConfigError);
}

TEST_CASE("static family keeps bone lengths") {
  SyntheticSpec spec = tiny_spec();
  spec.n_classes = 1;
  spec.noise_sigma = 0.0;
  spec.families = {MotionFamily{}};
  const auto seqs = generate(spec);
  const Tensor& x = seqs[0].sequence.coords;
  for (std::size_t t = 1; t < 24; ++t)
    for (std::size_t i = 0; i < 25 * 3; ++i) CHECK(x[t * 75 + i] == x[i]);
}

TEST_CASE("crop and resample") {
  refine::SkeletonSequence x;
  x.coords = Tensor({10, 1, 3});
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t a = 0; a < 3; ++a) x.coords.at(t, 0, a) = 2.0 * static_cast<double>(t) + static_cast<double>(a);
  x.parents = {-1};
  x.torso = {0};
  // Linear in time in, linear out: endpoints kept, uniform spacing.
  const auto y = crop_resample_at(x, 0.5, 9, 2);
  CHECK(y.frames() == 9);
  CHECK(y.coords.at(0, 0, 0) == 4.0);
  CHECK(y.coords.at(8, 0, 0) == doctest::Approx(12.0).epsilon(1e-14));
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.coords.at(i, 0, 1) == doctest::Approx(5.0 + i).epsilon(1e-14));
  const auto same = crop_resample_at(x, 1.0, 10, 0);
  CHECK(same.coords == x.coords);
  const auto centre = crop_resample_center(x, 0.6, 6);
  CHECK(centre.coords.at(0, 0, 0) == 4.0);

  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto r = crop_resample(x, 0.5, 5, rng);
    const double start = r.coords.at(0, 0, 0);
    CHECK(start >= 0.0);
    CHECK(start <= 10.0);
    CHECK(r.coords.at(4, 0, 0) - start == doctest::Approx(8.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(crop_resample_at(x, 0.0, 5, 0), ConfigError);
  CHECK_THROWS_AS(crop_resample_at(x, 0.1, 5, 0), DomainError);
  CHECK_THROWS_AS(crop_resample_at(x, 0.5, 5, 6), DomainError);
  CHECK_THROWS_AS(crop_resample_at(x, 0.5, 0, 0), ConfigError);
}

TEST_CASE("sequence file round trip and errors") {
  const auto seqs = generate(tiny_spec());
  const fs::path p = temp_file("seqs.bin");
  save(p, seqs);
  const auto back = load(p);
  REQUIRE(back.size() == seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CHECK(back[i].sequence.coords == seqs[i].sequence.coords);
    CHECK(back[i].label == seqs[i].label);
    CHECK(back[i].split == seqs[i].split);
    CHECK(back[i].sequence.parents == seqs[i].sequence.parents);
    CHECK(back[i].sequence.torso == seqs[i].sequence.torso);
  }

  const std::vector<char> good = read_bytes(p);
  CHECK(good.size() == 24 + seqs.size() * 24 * 25 * 3 * 4);
  CHECK(std::string(good.data(), 8) == "HACMSEQ1");

  const fs::path q = temp_file("broken.bin");
  fs::copy_file(fs::path(p.string() + ".json"), fs::path(q.string() + ".json"), fs::copy_options::overwrite_existing);
  auto bytes = good;
  bytes[0] = 'X';
  write_bytes(q, bytes);
  CHECK_THROWS_AS(load(q), HeaderError);
  bytes = good;
  bytes[8] = 7;
  write_bytes(q, bytes);
  CHECK_THROWS_AS(load(q), VersionError);
  bytes = good;
  bytes.resize(bytes.size() - 5);
  write_bytes(q, bytes);
  CHECK_THROWS_AS(load(q), TruncatedError);
  bytes.resize(12);
  write_bytes(q, bytes);
  CHECK_THROWS_AS(load(q), TruncatedError);
  CHECK_THROWS_AS(load(temp_file("missing.bin")), Error);
}
