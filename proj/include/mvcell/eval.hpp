#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvcell/detect.hpp"
#include "mvcell/merge.hpp"
#include "mvcell/volume.hpp"

namespace mvcell {

struct Score {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
};

// Degenerate conventions: an undefined ratio (zero denominator) counts as 1,
// F1 as 0 when P+R = 0; both sets empty scores 1 across the board.
Score make_score(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct DetectionScore {
    Score score;
    MatchSet matches;
};

// Max-weight bipartite matching of predictions to truth (w = 1/d) with
// matches at d >= cutoff discarded.
DetectionScore score_detection(const MarkerList& predicted, const MarkerList& truth,
                               double cutoff = 3.5);

// F1 of the voxel classification: prediction binarized at theta1 (0-255
// units), target binarized at > 0. Both all-dark scores 1.
double voxel_f1(const Volume& deconvolved, const Volume& target, int theta1);

// 95% interval of the F1 posterior: precision ~ Beta(TP+1, FP+1) and recall ~
// Beta(TP+1, FN+1) sampled independently, 2.5th/97.5th percentiles.
std::pair<double, double> f1_confidence_interval(const Score& score, int n_mc = 10000,
                                                 std::uint64_t seed = 99);

// One evaluation unit for the parameter sweep: the volume(s) a detection runs
// on (two entries = detect per volume then ICP-merge the lists) plus truth.
struct SweepCase {
    std::vector<Volume> volumes;
    MarkerList truth;
};

struct SweepRow {
    double r = 0.0;
    double b = 0.0;
    Score pooled;
    double mean_f1 = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;       // one per (r, b) grid point
    double best_r = 0.0;              // argmax of mean F1 across cases
    double best_b = 0.0;
    double f1_glob = 0.0;             // mean per-case F1 at the global optimum
    double f1_loc = 0.0;              // mean of per-case maxima
    Score pooled_glob;
    Score pooled_loc;
};

// Grid sweep over seed radius and mean-shift bandwidth. Both summary numbers
// average per-case F1, so f1_loc >= f1_glob holds identically.
SweepResult sweep(const std::vector<SweepCase>& cases, const std::vector<double>& r_values,
                  const std::vector<double>& b_values, const SeedConfig& seed_base,
                  const MeanShiftConfig& ms_base, double cutoff = 3.5,
                  double icp_corr_dist = 3.5, int workers = 1);

void save_sweep_csv(const SweepResult& result, const std::string& path);

} // namespace mvcell
