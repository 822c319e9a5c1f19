#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "mvcell/registration.hpp"
#include "mvcell/volume.hpp"

namespace mvcell {

struct MatchSet {
    struct Pair {
        int index_a = -1;
        int index_b = -1;
        double distance = 0.0;
    };
    std::vector<Pair> pairs;
    std::vector<int> unmatched_a;
    std::vector<int> unmatched_b;
};

// Maximum-weight bipartite matching with edge weights 1/d, restricted to
// candidate pairs with d < max_dist. Coincident points use a distance floor of
// 1e-9, so their weight dominates any realistic finite edge.
MatchSet match_bipartite(const MarkerList& a, const MarkerList& b, double max_dist);

// Unmatched points kept; matched pairs at d <= d_star replaced by their
// midpoint, farther matches kept as two points.
MarkerList merge_ground_truth(const MarkerList& a, const MarkerList& b, double d_star = 3.0);

// Weighted least-squares rigid fit src -> dst via the quaternion eigenvalue
// method. Throws std::invalid_argument on <3 pairs or degenerate geometry.
RigidTransform3D horn_absolute_orientation(const std::vector<Eigen::Vector3d>& src,
                                           const std::vector<Eigen::Vector3d>& dst,
                                           const std::vector<double>& weights);

struct IcpMergeResult {
    MarkerList merged;
    RigidTransform3D transform; // maps b's frame onto a's
    bool degenerate = false;    // no correspondences: concatenation returned
    int n_pairs = 0;
    double final_residual = 0.0;
};

// ICP with 1/d-weighted Horn fits; after alignment, matched pairs collapse to
// midpoints and singletons are preserved.
IcpMergeResult icp_merge(const MarkerList& a, const MarkerList& b, double max_corr_dist = 3.5,
                         int max_iter = 50);

// The four per-substack detection lists, keyed by (reference view, moving view).
enum PairKey : int {
    kRef0View90 = 0,
    kRef0View270 = 1,
    kRef180View90 = 2,
    kRef180View270 = 3,
};

using TransformProvider = std::function<std::optional<RigidTransform3D>()>;

struct FusedLists {
    MarkerList merged;
    bool used_fallback = false; // cross-reference transform unavailable
};

// Case analysis on the number of non-empty lists: same-reference pairs merge
// directly; 180-reference results pass through the (lazily computed) fine
// 180->0 transform before the cross-reference merge. When the provider fails,
// the cross-reference lists are concatenated and flagged.
FusedLists fuse_substack_lists(const std::array<MarkerList, 4>& lists,
                               const TransformProvider& t180_to_0, double max_corr_dist = 3.5,
                               int max_iter = 50);

// Local -> world assembly with core-region ownership: along each axis the
// boundary between neighboring tiles sits mid-overlap, so the cores partition
// the volume and every detection is emitted exactly once. Output sorted by
// (z,y,x).
MarkerList assemble_world(const std::map<std::size_t, MarkerList>& per_substack,
                          const SubstackGrid& grid);

} // namespace mvcell
