#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mvcell/volume.hpp"

namespace mvcell {

// Substack-local intensity thresholds in 0-255 units, theta1 <= theta2.
struct ThresholdPair {
    int theta1 = 0;
    int theta2 = 0;
};

using Histogram256 = std::array<std::int64_t, 256>;

Histogram256 histogram256(const Volume& volume);

// Max-entropy split of the histogram into [0,t1], (t1,t2], (t2,255]: maximizes
// the Shannon entropy of the three class masses (-sum w log w, empty classes
// contribute 0). Candidate thresholds range over the occupied bins; ties break
// to the lexicographically smallest pair.
ThresholdPair kapur_thresholds(const Histogram256& hist);
ThresholdPair max_entropy_thresholds(const Volume& substack);

// L = {p : I(p) >= theta1/255}, as linear voxel indices in volume order.
std::vector<std::int64_t> foreground(const Volume& substack, int theta1);

struct SeedConfig {
    enum class Criterion { Hard, Soft };
    double radius = 1.9;
    Criterion criterion = Criterion::Soft;
};

// 26-neighborhood local maxima of the foreground (plateaus keep their lowest
// linear index) whose r-neighborhood average intensity exceeds theta1. The
// hard criterion averages over the open ball of radius r; the soft criterion
// weights by exp(-d/r), truncated at 4r.
MarkerList find_seeds(const Volume& substack, const std::vector<std::int64_t>& fg,
                      const SeedConfig& cfg, int theta1);

struct MeanShiftConfig {
    double bandwidth = 2.5;
    double epsilon = 1e-3;
    int max_iterations = 100;
    double collapse_distance = 1.0;
};

// Flat-kernel mean shift: each seed moves to the intensity-weighted centroid
// of foreground voxels within the bandwidth ball until displacement < epsilon.
// Converged modes closer than collapse_distance merge (mass-weighted mean,
// masses summed). A seed whose ball holds no foreground is returned unmoved
// with name "orphan" and zero mass.
MarkerList mean_shift(const MarkerList& seeds, const std::vector<std::int64_t>& fg,
                      const Volume& intensities, const MeanShiftConfig& cfg);

// Thresholding -> foreground -> seeding -> mean shift.
MarkerList detect_substack(const Volume& deconvolved, const SeedConfig& seed_cfg,
                           const MeanShiftConfig& ms_cfg);

} // namespace mvcell
