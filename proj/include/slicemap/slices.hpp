#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slicemap/random.hpp"
#include "slicemap/volume.hpp"

namespace slicemap {

// One axial slice and its position k among the K extracted slices. The pose
// is the one-hot vector of length K with a 1 at k.
struct SlicePose {
  Image image;
  std::size_t index = 0;
  std::size_t num_poses = 0;

  std::vector<float> pose() const;
};

// The K extracted slices of one volume, in pose order.
struct SubjectSlices {
  std::string subject;
  std::vector<SlicePose> slices;

  std::size_t num_poses() const { return slices.size(); }
  Volume as_volume() const;
};

// M slice/pose pairs from one subject. The first M-1 entries act as
// contexts and the last one as the query/target.
struct SequenceSample {
  std::string subject;
  std::vector<SlicePose> entries;

  std::size_t length() const { return entries.size(); }
  std::span<const SlicePose> contexts() const { return std::span(entries).first(entries.size() - 1); }
  const SlicePose& query() const { return entries.back(); }
};

// K evenly spaced axial slices from the centred slab covering
// `middle_fraction` of the volume's depth.
SubjectSlices extract_slices(const Volume& volume, double middle_fraction, std::size_t num_poses);

// Area averaging for integer ratios, bilinear resampling otherwise.
Image downsample(const Image& image, std::size_t target_height, std::size_t target_width);

// M distinct slices drawn uniformly without replacement, in draw order.
SequenceSample sample_training_sequence(const SubjectSlices& subject, std::size_t length, Rng& rng);

// Evenly spread, strictly increasing context indices in [0, K).
std::vector<std::size_t> select_context_schedule(std::size_t num_contexts, std::size_t num_poses);

}  // namespace slicemap
