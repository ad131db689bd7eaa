// SPDX-License-Identifier: Apache-2.0
#include "hacm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "hacm/error.hpp"

namespace hacm {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* what) {
  throw ConfigError("config: key '" + std::string(key) + "' expects " + what + ", got '" + std::string(value) + "'");
}

template <class T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

void parse_into(std::string_view key, std::string_view v, std::size_t& out) { out = parse_int<std::size_t>(key, v); }
static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed parsing assumes a 64-bit size_t");
void parse_into(std::string_view key, std::string_view v, int& out) { out = parse_int<int>(key, v); }
void parse_into(std::string_view key, std::string_view v, double& out) {
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
}
void parse_into(std::string_view key, std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") {
    out = true;
  } else if (v == "false" || v == "0" || v == "off" || v == "no") {
    out = false;
  } else {
    bad_value(key, v, "true or false");
  }
}
void parse_into(std::string_view, std::string_view v, std::string& out) { out = std::string(v); }
void parse_into(std::string_view key, std::string_view v, std::vector<std::size_t>& out) {
  out.clear();
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    if (item.empty()) bad_value(key, v, "a comma-separated list of integers");
    out.push_back(parse_int<std::size_t>(key, item));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
}

std::string format(std::size_t v) { return std::to_string(v); }
std::string format(int v) { return std::to_string(v); }
std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string name;
  bool shapes;  // part of the digest
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(const char* name, T RunConfig::*m, bool shapes = false) {
  return {name, shapes, [m, name](RunConfig& c, std::string_view v) { parse_into(name, v, c.*m); },
          [m](const RunConfig& c) { return format(c.*m); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      field("frames", &RunConfig::frames, true),
      field("pool_r", &RunConfig::pool_r, true),
      field("embed_dim", &RunConfig::embed_dim, true),
      field("skeleton_joints", &RunConfig::skeleton_joints, true),
      field("torso_joints", &RunConfig::torso_joints, true),
      field("curvature_c", &RunConfig::curvature_c, true),
      field("mask_ratio", &RunConfig::mask_ratio),
      field("tau", &RunConfig::tau),
      field("odd_criterion", &RunConfig::odd_criterion),
      field("even_criterion", &RunConfig::even_criterion),
      field("gcm_strategy", &RunConfig::gcm_strategy),
      field("gcm_sum_axis", &RunConfig::gcm_sum_axis),
      field("use_gumbel", &RunConfig::use_gumbel),
      field("invert_criterion", &RunConfig::invert_criterion),
      field("heads", &RunConfig::heads, true),
      field("hidden", &RunConfig::hidden, true),
      field("encoder_layers", &RunConfig::encoder_layers, true),
      field("decoder_layers", &RunConfig::decoder_layers, true),
      field("decoder_positions", &RunConfig::decoder_positions),
      field("mu", &RunConfig::mu),
      field("recon_norm", &RunConfig::recon_norm),
      field("contrast_mode", &RunConfig::contrast_mode),
      field("target_ball_map", &RunConfig::target_ball_map),
      field("lr_peak", &RunConfig::lr_peak),
      field("lr_final", &RunConfig::lr_final),
      field("warmup_epochs", &RunConfig::warmup_epochs),
      field("weight_decay", &RunConfig::weight_decay),
      field("beta1", &RunConfig::beta1),
      field("beta2", &RunConfig::beta2),
      field("adam_eps", &RunConfig::adam_eps),
      field("epochs", &RunConfig::epochs),
      field("batch_size", &RunConfig::batch_size),
      field("seed", &RunConfig::seed),
      field("crop_min", &RunConfig::crop_min),
      field("crop_max", &RunConfig::crop_max),
      field("eval_crop", &RunConfig::eval_crop, true),
      field("checkpoint_every", &RunConfig::checkpoint_every),
      field("overfit_steps", &RunConfig::overfit_steps),
      field("overfit_batch", &RunConfig::overfit_batch),
      field("log_wall_time", &RunConfig::log_wall_time),
      field("probe_epochs", &RunConfig::probe_epochs),
      field("probe_lr", &RunConfig::probe_lr),
      field("probe_batch", &RunConfig::probe_batch),
  };
  return f;
}

const Field& find(std::string_view key) {
  for (const Field& f : fields())
    if (f.name == key) return f;
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

masking::Criterion resolve(const std::string& name, int strategy) {
  if (name == "T" || name == "temporal") {
    if (strategy != 1 && strategy != 2) throw ConfigError("config: gcm_strategy must be 1 or 2");
    return strategy == 1 ? masking::Criterion::temporal1 : masking::Criterion::temporal2;
  }
  return masking::parse_criterion(name);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { find(key).set(*this, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return find(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.name);
    return out;
  }();
  return k;
}

void RunConfig::parse(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value': " + std::string(line));
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  parse(ss.str());
}

std::string RunConfig::to_string() const {
  std::string out;
  for (const Field& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  os << to_string();
  if (!os) throw Error("config: cannot write " + path.string());
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(curvature_c < 0.0, "curvature_c must be negative");
  require(tau > 0.0, "tau must be positive");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask_ratio must lie in [0, 1)");
  require(mu >= 0.0, "mu must be non-negative");
  require(torso_joints.size() < skeleton_joints && !torso_joints.empty(),
          "torso_joints must be a non-empty proper subset of the skeleton");
  for (std::size_t t : torso_joints) require(t < skeleton_joints, "torso joint out of range");
  require(gcm_sum_axis == "last" || gcm_sum_axis == "first", "gcm_sum_axis must be last or first");
  require(decoder_positions == "original" || decoder_positions == "within_half",
          "decoder_positions must be original or within_half");
  require(recon_norm == "masked" || recon_norm == "as_written", "recon_norm must be masked or as_written");
  require(contrast_mode == "as_written" || contrast_mode == "corrected", "contrast_mode must be as_written or corrected");
  require(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0, "need 0 < crop_min <= crop_max <= 1");
  require(eval_crop > 0.0 && eval_crop <= 1.0, "eval_crop must lie in (0, 1]");
  require(batch_size >= 2, "batch_size must be at least 2 for the cross-contrast loss");
  require(overfit_batch >= 2, "overfit_batch must be at least 2");
  require(lr_peak >= 0.0 && lr_final >= 0.0, "learning rates must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(probe_batch >= 1, "probe_batch must be positive");
  (void)masking();
  model_shape().validate();
}

std::uint64_t RunConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Field& f : fields()) {
    if (!f.shapes) continue;
    for (char ch : f.name + "=" + f.get(*this) + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

network::ModelShape RunConfig::model_shape() const {
  network::ModelShape s;
  s.refine.frames = frames;
  s.refine.pool_r = pool_r;
  s.refine.embed_dim = embed_dim;
  s.refine.joints = skeleton_joints > torso_joints.size() ? skeleton_joints - torso_joints.size() : 0;
  s.heads = heads;
  s.hidden = hidden;
  s.encoder_layers = encoder_layers;
  s.decoder_layers = decoder_layers;
  return s;
}

masking::MaskingConfig RunConfig::masking() const {
  masking::MaskingConfig m;
  m.mask_ratio = mask_ratio;
  m.tau = tau;
  m.odd = resolve(odd_criterion, gcm_strategy);
  m.even = resolve(even_criterion, gcm_strategy);
  m.use_gumbel = use_gumbel;
  m.invert_criterion = invert_criterion;
  m.gcm_axis = gcm_sum_axis == "first" ? masking::SumAxis::first : masking::SumAxis::last;
  return m;
}

losses::ReconNorm RunConfig::recon_normalisation() const {
  return recon_norm == "as_written" ? losses::ReconNorm::as_written : losses::ReconNorm::masked;
}

losses::ContrastMode RunConfig::contrast() const {
  return contrast_mode == "corrected" ? losses::ContrastMode::corrected : losses::ContrastMode::as_written;
}

}  // namespace hacm
