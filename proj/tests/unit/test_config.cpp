// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hacm/checkpoint.hpp"
#include "hacm/config.hpp"
#include "hacm/error.hpp"

using namespace hacm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hacm_unit_config";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("defaults are valid") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  const auto s = c.model_shape();
  CHECK(s.refine.joints == 18);
  CHECK(s.embed_dim() == 256);
  const auto m = c.masking();
  CHECK(m.odd == masking::Criterion::temporal1);
  CHECK(m.even == masking::Criterion::spatial);
  CHECK(c.recon_normalisation() == losses::ReconNorm::masked);
  CHECK(c.contrast() == losses::ContrastMode::as_written);
}

TEST_CASE("set, get and text round trip") {
  RunConfig c;
  c.set("embed_dim", "64");
  c.set("torso_joints", "0, 1,2");
  c.set("tau", "0.01");
  c.set("use_gumbel", "off");
  c.set("odd_criterion", "motion");
  CHECK(c.embed_dim == 64);
  CHECK(c.torso_joints == std::vector<std::size_t>{0, 1, 2});
  CHECK(c.get("tau") == "0.01");
  CHECK(c.get("use_gumbel") == "false");
  CHECK(c.masking().odd == masking::Criterion::motion);

  RunConfig d;
  d.parse(c.to_string());
  for (const std::string& k : RunConfig::keys()) CHECK(d.get(k) == c.get(k));
  CHECK(d.digest() == c.digest());

  const fs::path p = temp_file("run.cfg");
  c.save(p);
  RunConfig e;
  e.load(p);
  CHECK(e.to_string() == c.to_string());

  RunConfig f;
  f.parse("# comment\n  epochs = 3  # trailing\n\nmu=0.5\n");
  CHECK(f.epochs == 3);
  CHECK(f.mu == 0.5);
}

TEST_CASE("bad input") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("epochs", "3x"), ConfigError);
  CHECK_THROWS_AS(c.set("mu", "inf"), ConfigError);
  CHECK_THROWS_AS(c.set("use_gumbel", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.parse("epochs 3\n"), ConfigError);
  CHECK_THROWS_AS(c.load(temp_file("absent.cfg")), ConfigError);

  auto invalid = [](const char* key, const char* value) {
    RunConfig r;
    r.set(key, value);
    CHECK_THROWS_AS(r.validate(), ConfigError);
  };
  invalid("curvature_c", "1");
  invalid("mask_ratio", "1");
  invalid("batch_size", "1");
  invalid("heads", "7");
  invalid("odd_criterion", "Q");
  invalid("gcm_strategy", "3");
  invalid("contrast_mode", "other");
  invalid("torso_joints", "30");
}

TEST_CASE("digest tracks shape keys only") {
  RunConfig a, b;
  b.epochs = 5;
  b.mu = 0.0;
  b.seed = 77;
  CHECK(a.digest() == b.digest());
  b.hidden = 512;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("checkpoint round trip and errors") {
  Parameter w("w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6})), b("b", Tensor({3}, {-1, 0.5, 1e-300}));
  const std::vector<const Parameter*> out{&w, &b};
  const fs::path p = temp_file("ckpt.bin");
  checkpoint::save(p, 42, out);
  CHECK(checkpoint::read_digest(p) == 42);
  const std::vector<char> good = read_bytes(p);
  CHECK(std::string(good.data(), 8) == "HACMCKP1");

  Parameter w2("w", Tensor({2, 3})), b2("b", Tensor({3}));
  std::vector<Parameter*> in{&b2, &w2};
  checkpoint::load(p, 42, in);
  CHECK(w2.value == w.value);
  CHECK(b2.value == b.value);

  CHECK_THROWS_AS(checkpoint::load(p, 43, in), ConfigError);
  Parameter wrong("w", Tensor({3, 2}));
  std::vector<Parameter*> bad_shape{&wrong};
  CHECK_THROWS_AS(checkpoint::load(p, 42, bad_shape), FormatError);
  Parameter extra("z", Tensor({1}));
  std::vector<Parameter*> missing{&extra};
  CHECK_THROWS_AS(checkpoint::load(p, 42, missing), FormatError);

  const fs::path q = temp_file("broken.bin");
  auto bytes = good;
  bytes[3] = 'x';
  write_bytes(q, bytes);
  CHECK_THROWS_AS(checkpoint::load(q, 42, in), HeaderError);
  bytes = good;
  bytes[8] = 9;
  write_bytes(q, bytes);
  CHECK_THROWS_AS(checkpoint::load(q, 42, in), VersionError);
  bytes = good;
  bytes.resize(bytes.size() - 3);
  write_bytes(q, bytes);
  CHECK_THROWS_AS(checkpoint::load(q, 42, in), TruncatedError);
  bytes = good;
  bytes.push_back(0);
  write_bytes(q, bytes);
  CHECK_THROWS_AS(checkpoint::load(q, 42, in), HeaderError);
}
