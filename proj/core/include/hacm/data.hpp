// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hacm/refine.hpp"
#include "hacm/rng.hpp"

// Synthetic kinematic-tree actions, the sequence file format and temporal
// crop augmentation.
namespace hacm::data {

/// Rest pose of a joint tree: each joint sits at its parent plus `offset`
/// rotated by the parent's accumulated rotation.
struct Skeleton {
  std::vector<int> parents;
  std::vector<std::array<double, 3>> offsets;
  std::vector<std::size_t> torso;

  std::size_t joints() const { return parents.size(); }
};

/// 25-joint, Kinect-style layout (root at the spine base) with a 7-joint
/// trunk as the default torso set.
Skeleton default_skeleton();

/// Oscillation applied to one joint's local rotation:
/// angle(t) = A sin(2 pi f t / T + phase), A and f drawn per sample.
struct JointMotion {
  std::size_t joint = 0;
  std::array<double, 3> axis{0.0, 0.0, 1.0};
  double amp_lo = 0.3, amp_hi = 0.8;    // radians
  double freq_lo = 1.0, freq_hi = 3.0;  // cycles over the raw sequence
  // Index of an earlier entry of the family to lock to: its frequency and
  // phase are reused, shifted by `phase_offset`. -1 draws both freely.
  int follow = -1;
  double phase_offset = 0.0;
};

struct MotionFamily {
  std::vector<JointMotion> moving;  // empty = static skeleton
};

/// The default class families for `n_classes` classes: both arms or both
/// legs swinging in phase or in anti-phase, with faster sideways swings for
/// classes beyond the first four.
std::vector<MotionFamily> default_families(std::size_t n_classes);

struct SyntheticSpec {
  std::size_t n_classes = 4;
  std::size_t samples_per_class = 64;
  std::size_t test_per_class = 16;
  std::size_t frames = 96;
  double noise_sigma = 0.01;
  double max_yaw = 0.5;  // per-sample view rotation about the vertical axis, radians
  std::uint64_t seed = 0;
  Skeleton skeleton = default_skeleton();
  std::vector<MotionFamily> families;  // empty = default_families(n_classes)
};

enum class Split { train, test };

struct LabeledSequence {
  refine::SkeletonSequence sequence;
  std::size_t label = 0;
  Split split = Split::train;
};

/// Train samples of every class, then test samples. Coordinates are rounded
/// to single precision so the result round-trips through the file format.
std::vector<LabeledSequence> generate(const SyntheticSpec& spec);

/// Contiguous crop of round(p * L) frames starting at `offset`, linearly
/// resampled in time to `frames_out` frames.
refine::SkeletonSequence crop_resample_at(const refine::SkeletonSequence& x, double p, std::size_t frames_out,
                                          std::size_t offset);
/// Random offset.
refine::SkeletonSequence crop_resample(const refine::SkeletonSequence& x, double p, std::size_t frames_out, Rng& rng);
/// Centred crop, used for evaluation.
refine::SkeletonSequence crop_resample_center(const refine::SkeletonSequence& x, double p, std::size_t frames_out);

/// Writes `<path>` (header + f32 payload) and `<path>.json` (labels, splits,
/// joint tree, torso set).
void save(const std::filesystem::path& path, const std::vector<LabeledSequence>& seqs);
/// Throws HeaderError, VersionError or TruncatedError on malformed input.
std::vector<LabeledSequence> load(const std::filesystem::path& path);

inline constexpr std::uint32_t kSequenceFormatVersion = 1;

}  // namespace hacm::data
