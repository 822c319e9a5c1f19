#include "mvcell/merge.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mvcell {

namespace {

constexpr double kDistanceFloor = 1e-9;

double marker_dist(const Marker& a, const Marker& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Classic O(n^3) Hungarian algorithm on a square cost matrix (minimization),
// 1-indexed potentials. Returns col -> row assignment.
std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    return p;
}

} // namespace

MatchSet match_bipartite(const MarkerList& a, const MarkerList& b, double max_dist) {
    const int na = static_cast<int>(a.size());
    const int nb = static_cast<int>(b.size());
    MatchSet out;
    if (na == 0 || nb == 0) {
        for (int i = 0; i < na; ++i) out.unmatched_a.push_back(i);
        for (int j = 0; j < nb; ++j) out.unmatched_b.push_back(j);
        return out;
    }

    // Padded square: rows = A + dummies, cols = B + dummies. Dummy and absent
    // edges cost 0, real edges -1/d; a perfect matching then encodes a
    // maximum-weight (not necessarily maximum-cardinality) matching.
    const int n = na + nb;
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
    std::vector<std::vector<double>> dist(na, std::vector<double>(nb, 0.0));
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) {
            const double d = marker_dist(a.points[i], b.points[j]);
            dist[i][j] = d;
            if (d < max_dist) cost[i][j] = -1.0 / std::max(d, kDistanceFloor);
        }

    const std::vector<int> col_to_row = hungarian_min(cost);
    std::vector<char> matched_a(na, 0), matched_b(nb, 0);
    for (int j = 1; j <= n; ++j) {
        const int i = col_to_row[j] - 1;
        const int col = j - 1;
        if (i < 0 || i >= na || col >= nb) continue;
        if (cost[i][col] >= 0.0) continue; // absent edge: equivalent to unmatched
        out.pairs.push_back({i, col, dist[i][col]});
        matched_a[i] = 1;
        matched_b[col] = 1;
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const MatchSet::Pair& p, const MatchSet::Pair& q) {
                  return p.index_a < q.index_a;
              });
    for (int i = 0; i < na; ++i)
        if (!matched_a[i]) out.unmatched_a.push_back(i);
    for (int j = 0; j < nb; ++j)
        if (!matched_b[j]) out.unmatched_b.push_back(j);
    return out;
}

namespace {

Marker midpoint(const Marker& a, const Marker& b) {
    Marker m;
    m.x = 0.5 * (a.x + b.x);
    m.y = 0.5 * (a.y + b.y);
    m.z = 0.5 * (a.z + b.z);
    if (a.has_mass() && b.has_mass())
        m.mass = 0.5 * (a.mass + b.mass);
    else if (a.has_mass())
        m.mass = a.mass;
    else if (b.has_mass())
        m.mass = b.mass;
    m.name = a.name;
    return m;
}

} // namespace

MarkerList merge_ground_truth(const MarkerList& a, const MarkerList& b, double d_star) {
    const MatchSet match = match_bipartite(a, b, std::numeric_limits<double>::infinity());
    MarkerList out;
    out.frame = a.frame;
    std::vector<char> drop_a(a.size(), 0), drop_b(b.size(), 0);
    for (const auto& pair : match.pairs) {
        if (pair.distance <= d_star) {
            out.points.push_back(midpoint(a.points[pair.index_a], b.points[pair.index_b]));
            drop_a[pair.index_a] = 1;
            drop_b[pair.index_b] = 1;
        }
    }
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!drop_a[i]) out.points.push_back(a.points[i]);
    for (std::size_t j = 0; j < b.size(); ++j)
        if (!drop_b[j]) out.points.push_back(b.points[j]);
    return out;
}

RigidTransform3D horn_absolute_orientation(const std::vector<Eigen::Vector3d>& src,
                                           const std::vector<Eigen::Vector3d>& dst,
                                           const std::vector<double>& weights) {
    if (src.size() != dst.size() || src.size() != weights.size())
        throw std::invalid_argument("horn_absolute_orientation: size mismatch");
    if (src.size() < 3) throw std::invalid_argument("horn_absolute_orientation: need >= 3 pairs");

    double wsum = 0.0;
    Eigen::Vector3d c_src = Eigen::Vector3d::Zero(), c_dst = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        wsum += weights[i];
        c_src += weights[i] * src[i];
        c_dst += weights[i] * dst[i];
    }
    if (wsum <= 0.0) throw std::invalid_argument("horn_absolute_orientation: non-positive weights");
    c_src /= wsum;
    c_dst /= wsum;

    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    double spread = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Eigen::Vector3d p = src[i] - c_src;
        const Eigen::Vector3d q = dst[i] - c_dst;
        S += weights[i] * p * q.transpose();
        spread += weights[i] * p.squaredNorm();
    }
    if (spread <= 1e-30)
        throw std::invalid_argument("horn_absolute_orientation: degenerate points");

    Eigen::Matrix4d N;
    const double sxx = S(0, 0), sxy = S(0, 1), sxz = S(0, 2);
    const double syx = S(1, 0), syy = S(1, 1), syz = S(1, 2);
    const double szx = S(2, 0), szy = S(2, 1), szz = S(2, 2);
    N << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
         syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
         szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
         sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(N);
    const Eigen::Vector4d q = solver.eigenvectors().col(3); // largest eigenvalue
    const double w = q(0), x = q(1), y = q(2), z = q(3);

    Eigen::Matrix3d R;
    R << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;

    RigidTransform3D T;
    T.rotation = R;
    if (T.rigidity_error() > 1e-9) T.reorthonormalize();
    T.translation = c_dst - T.rotation * c_src;
    return T;
}

IcpMergeResult icp_merge(const MarkerList& a, const MarkerList& b, double max_corr_dist,
                         int max_iter) {
    IcpMergeResult result;
    result.transform = RigidTransform3D::identity();

    if (a.empty() || b.empty()) {
        result.merged = a;
        result.merged.points.insert(result.merged.points.end(), b.points.begin(),
                                    b.points.end());
        result.merged.frame = a.empty() ? b.frame : a.frame;
        result.degenerate = a.empty() || b.empty();
        return result;
    }

    std::vector<Eigen::Vector3d> pa(a.size()), pb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        pa[i] = {a.points[i].x, a.points[i].y, a.points[i].z};
    for (std::size_t j = 0; j < b.size(); ++j)
        pb[j] = {b.points[j].x, b.points[j].y, b.points[j].z};

    RigidTransform3D T = RigidTransform3D::identity();
    RigidTransform3D accepted_T = T;
    double prev_mean = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        // Correspondences: each transformed b point to its nearest a point.
        std::vector<Eigen::Vector3d> cs, cd;
        std::vector<double> w;
        double dist_sum = 0.0;
        for (std::size_t j = 0; j < pb.size(); ++j) {
            const Eigen::Vector3d q = T.apply(pb[j]);
            double best = max_corr_dist;
            int best_i = -1;
            for (std::size_t i = 0; i < pa.size(); ++i) {
                const double d = (pa[i] - q).norm();
                if (d < best) {
                    best = d;
                    best_i = static_cast<int>(i);
                }
            }
            if (best_i >= 0) {
                cs.push_back(pb[j]);
                cd.push_back(pa[static_cast<std::size_t>(best_i)]);
                w.push_back(1.0 / std::max(best, kDistanceFloor));
                dist_sum += best;
            }
        }
        if (cs.empty()) {
            if (it == 0) {
                result.merged = a;
                result.merged.points.reserve(a.size() + b.size());
                result.merged.points.insert(result.merged.points.end(), b.points.begin(),
                                            b.points.end());
                result.degenerate = true;
                return result;
            }
            T = accepted_T;
            break;
        }
        const double mean = dist_sum / static_cast<double>(cs.size());
        if (mean > prev_mean) {
            T = accepted_T; // revert: keep the residual non-increasing
            break;
        }
        accepted_T = T;
        const double improvement = prev_mean - mean;
        prev_mean = mean;
        result.final_residual = mean;
        if (improvement < 1e-4) break;
        try {
            T = horn_absolute_orientation(cs, cd, w);
        } catch (const std::invalid_argument&) {
            break; // too few / degenerate correspondences: keep current T
        }
    }
    result.transform = T;

    // Final one-to-one pairing on the aligned clouds; midpoints for matches.
    MarkerList b_aligned = b;
    for (auto& m : b_aligned.points) m = T.apply(m);
    const MatchSet match = match_bipartite(a, b_aligned, max_corr_dist);
    result.n_pairs = static_cast<int>(match.pairs.size());
    result.merged.frame = a.frame;
    for (const auto& pair : match.pairs)
        result.merged.points.push_back(
            midpoint(a.points[pair.index_a], b_aligned.points[pair.index_b]));
    for (int i : match.unmatched_a) result.merged.points.push_back(a.points[i]);
    for (int j : match.unmatched_b) result.merged.points.push_back(b_aligned.points[j]);
    return result;
}

namespace {

MarkerList concatenate(const MarkerList& a, const MarkerList& b) {
    MarkerList out = a;
    out.points.insert(out.points.end(), b.points.begin(), b.points.end());
    return out;
}

MarkerList apply_transform(const MarkerList& list, const RigidTransform3D& T) {
    MarkerList out = list;
    for (auto& m : out.points) m = T.apply(m);
    return out;
}

} // namespace

FusedLists fuse_substack_lists(const std::array<MarkerList, 4>& lists,
                               const TransformProvider& t180_to_0, double max_corr_dist,
                               int max_iter) {
    FusedLists out;

    const bool has_ref0 = !lists[kRef0View90].empty() || !lists[kRef0View270].empty();
    const bool has_ref180 = !lists[kRef180View90].empty() || !lists[kRef180View270].empty();

    auto merge_same_ref = [&](const MarkerList& u, const MarkerList& v) -> MarkerList {
        if (u.empty()) return v;
        if (v.empty()) return u;
        return icp_merge(u, v, max_corr_dist, max_iter).merged;
    };

    const MarkerList merged0 = merge_same_ref(lists[kRef0View90], lists[kRef0View270]);
    const MarkerList merged180 = merge_same_ref(lists[kRef180View90], lists[kRef180View270]);

    if (!has_ref0 && !has_ref180) return out; // all four empty
    if (!has_ref180) {
        out.merged = merged0;
        return out;
    }
    if (!has_ref0) {
        out.merged = merged180;
        return out;
    }

    // Cross-reference: bring the 180-reference list into the 0 frame first.
    std::optional<RigidTransform3D> T = t180_to_0 ? t180_to_0() : std::nullopt;
    if (!T.has_value()) {
        out.merged = concatenate(merged0, merged180);
        out.used_fallback = true;
        return out;
    }
    const MarkerList mapped180 = apply_transform(merged180, *T);
    out.merged = icp_merge(merged0, mapped180, max_corr_dist, max_iter).merged;
    return out;
}

namespace {

// Half-open ownership interval of tile `i` along one axis: boundaries sit at
// the midpoint of each overlap region, so the cores partition [0, parent).
std::pair<double, double> core_interval(const std::vector<int>& origins, int size,
                                        std::size_t i) {
    const double lo = i == 0 ? -std::numeric_limits<double>::infinity()
                             : 0.5 * (origins[i] + origins[i - 1] + size);
    const double hi = i + 1 == origins.size()
                          ? std::numeric_limits<double>::infinity()
                          : 0.5 * (origins[i + 1] + origins[i] + size);
    return {lo, hi};
}

} // namespace

MarkerList assemble_world(const std::map<std::size_t, MarkerList>& per_substack,
                          const SubstackGrid& grid) {
    MarkerList out;
    out.frame = Frame::World;
    const std::size_t nx = grid.x_origins.size();
    const std::size_t ny = grid.y_origins.size();
    for (const auto& [index, list] : per_substack) {
        if (index >= grid.count()) throw std::out_of_range("assemble_world: bad substack index");
        const std::size_t ix = index % nx;
        const std::size_t iy = (index / nx) % ny;
        const std::size_t iz = index / (nx * ny);
        const auto [x_lo, x_hi] = core_interval(grid.x_origins, grid.substack_dims.x, ix);
        const auto [y_lo, y_hi] = core_interval(grid.y_origins, grid.substack_dims.y, iy);
        const auto [z_lo, z_hi] = core_interval(grid.z_origins, grid.substack_dims.z, iz);
        for (const auto& local : list.points) {
            const Marker world = local_to_world(grid, index, local);
            if (world.x >= x_lo && world.x < x_hi && world.y >= y_lo && world.y < y_hi &&
                world.z >= z_lo && world.z < z_hi)
                out.points.push_back(world);
        }
    }
    std::sort(out.points.begin(), out.points.end(), [](const Marker& a, const Marker& b) {
        if (a.z != b.z) return a.z < b.z;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    return out;
}

} // namespace mvcell
