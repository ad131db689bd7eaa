// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hacm/geometry.hpp"
#include "hacm/losses.hpp"
#include "hacm/masking.hpp"
#include "hacm/network.hpp"

namespace hacm {

/// Every tunable of a run. Serialised as flat `key = value` text; see
/// RunConfig::keys() for the list and README.md for documentation.
struct RunConfig {
  // Refinement
  std::size_t frames = 72;
  std::size_t pool_r = 3;
  std::size_t embed_dim = 256;
  std::size_t skeleton_joints = 25;
  std::vector<std::size_t> torso_joints{0, 1, 20, 4, 8, 12, 16};
  double curvature_c = -1.0;

  // Masking
  double mask_ratio = 0.9;
  double tau = 0.9;
  std::string odd_criterion = "T";
  std::string even_criterion = "S";
  int gcm_strategy = 1;  // what a bare "T" criterion means
  std::string gcm_sum_axis = "last";
  bool use_gumbel = true;
  bool invert_criterion = false;

  // Network
  std::size_t heads = 8;
  std::size_t hidden = 1024;
  std::size_t encoder_layers = 8;
  std::size_t decoder_layers = 3;
  std::string decoder_positions = "original";  // or "within_half"

  // Losses
  double mu = 1.0;
  std::string recon_norm = "masked";        // or "as_written"
  std::string contrast_mode = "as_written";  // or "corrected"
  bool target_ball_map = true;

  // Optimiser
  double lr_peak = 1e-3;
  double lr_final = 5e-4;
  std::size_t warmup_epochs = 2;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;

  // Training
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double crop_min = 0.5;
  double crop_max = 1.0;
  double eval_crop = 0.9;
  std::size_t checkpoint_every = 0;  // epochs between extra checkpoints; 0 = final only
  std::size_t overfit_steps = 0;     // > 0: repeat one fixed batch for this many steps
  std::size_t overfit_batch = 4;
  bool log_wall_time = false;  // otherwise the CSV seconds column is 0

  // Linear probe
  std::size_t probe_epochs = 100;
  double probe_lr = 0.1;
  std::size_t probe_batch = 32;

  /// Sets one key from text. Throws ConfigError for unknown keys or values
  /// that do not parse.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Reads `key = value` lines; `#` starts a comment.
  void load(const std::filesystem::path& path);
  void parse(std::string_view text);
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  /// Throws ConfigError when values are out of range or inconsistent.
  void validate() const;

  /// FNV-1a over the keys that fix parameter shapes and preprocessing.
  std::uint64_t digest() const;

  // Typed views for the library modules.
  geometry::Curvature curvature() const { return geometry::Curvature(curvature_c); }
  network::ModelShape model_shape() const;
  masking::MaskingConfig masking() const;
  losses::ReconNorm recon_normalisation() const;
  losses::ContrastMode contrast() const;
  bool within_half_positions() const { return decoder_positions == "within_half"; }
};

}  // namespace hacm
