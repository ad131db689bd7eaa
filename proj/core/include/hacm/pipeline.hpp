// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hacm/config.hpp"
#include "hacm/data.hpp"
#include "hacm/losses.hpp"
#include "hacm/masking.hpp"
#include "hacm/network.hpp"

// End-to-end wiring: per-sample forward pass, batched gradient computation,
// the pre-training loop, the linear probe and mask inspection.
namespace hacm::pipeline {

struct Model {
  RunConfig config;
  network::ModelParams params;
};

/// Validates `cfg` and initialises parameters from its seed.
Model make_model(const RunConfig& cfg);

/// Copies `x` with the configured torso set.
refine::SkeletonSequence with_torso(const refine::SkeletonSequence& x, const RunConfig& cfg);

struct SampleForward {
  masking::MaskPlan plan;
  Var encoded;  // [2M x C]
  losses::Pooled pooled;
  Var recon;  // scalar; invalid when decoding was skipped
};

/// Refine, ball-map, cross-mask and encode one cropped sequence; with
/// `decode` also run the decoder and the reconstruction loss. The plan is
/// sampled from `mask_seed` unless `fixed_plan` is given.
SampleForward forward_sample(Graph& g, Model& m, const refine::SkeletonSequence& x, std::uint64_t mask_seed,
                             bool decode, const masking::MaskPlan* fixed_plan = nullptr);

/// Loss of a batch with gradients accumulated into every trainable
/// parameter (zeroed first). Each sample gets its own graph: a gradient-free
/// pass yields the pooled embeddings, the small cross-contrast graph gives
/// their gradients, then each sample is replayed with seeds
/// (L_r, 1/N) and (pooled, mu * dL_c2/dpooled).
struct BatchResult {
  losses::LossReport report;
  std::vector<masking::MaskPlan> plans;
};
BatchResult compute_gradients(Model& m, std::span<const refine::SkeletonSequence> batch,
                              std::span<const std::uint64_t> mask_seeds,
                              std::span<const masking::MaskPlan> fixed_plans = {});

/// Total loss of a batch evaluated on a single graph with fixed plans.
double batch_loss(Model& m, std::span<const refine::SkeletonSequence> batch, std::span<const masking::MaskPlan> plans);

struct LogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  losses::LossReport loss;
  double seconds = 0.0;
};

std::string csv_header();
std::string csv_row(const LogRow& row);

struct PretrainOptions {
  std::filesystem::path out_dir;  // empty: write nothing
  std::function<void(const LogRow&)> on_step;
};

struct PretrainResult {
  Model model;
  std::vector<LogRow> log;
};

/// The full loop over the train split (or one fixed batch in overfit mode).
/// With an output directory, writes config.txt, train_log.csv and
/// checkpoint.bin, plus checkpoint_epochN.bin every `checkpoint_every`
/// epochs. Refuses to overwrite a checkpoint with a different digest.
PretrainResult pretrain(const RunConfig& cfg, const std::vector<data::LabeledSequence>& dataset,
                        const PretrainOptions& opts = {});

/// Frozen encoder over the full token sequence of the centred evaluation
/// crop, mean-pooled over tokens: [C].
std::vector<double> encode_features(Model& m, const refine::SkeletonSequence& x);

struct ProbeReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double chance = 0.0;
  std::size_t classes = 0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
};

/// Standardised features, softmax regression trained with AdamW (cosine
/// from probe_lr to 0). Encoder parameters are only read.
ProbeReport probe(Model& m, const std::vector<data::LabeledSequence>& dataset);

/// FNV-1a over the bit patterns of every parameter value.
std::uint64_t parameter_checksum(const network::ModelParams& p);

/// CSV (sample, half, frame, joint, score, unmasked) of the criteria and
/// unmask flags of one sample under the evaluation crop.
std::string inspect_mask(Model& m, const std::vector<data::LabeledSequence>& dataset, std::size_t sample);

/// Loads run_dir/checkpoint.bin into a model built from `cfg`; the digests
/// must agree.
Model load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint_path);

}  // namespace hacm::pipeline
