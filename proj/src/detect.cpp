#include "mvcell/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mvcell {

Histogram256 histogram256(const Volume& volume) {
    Histogram256 h{};
    for (double v : volume.data) ++h[to_u8(v)];
    return h;
}

ThresholdPair kapur_thresholds(const Histogram256& hist) {
    std::int64_t total = 0;
    int lo = -1, hi = -1;
    for (int i = 0; i < 256; ++i) {
        if (hist[i] > 0) {
            if (lo < 0) lo = i;
            hi = i;
            total += hist[i];
        }
    }
    if (total == 0) throw std::invalid_argument("kapur_thresholds: empty histogram");

    // Prefix masses make each candidate pair O(1).
    std::array<double, 257> prefix{};
    for (int i = 0; i < 256; ++i) prefix[i + 1] = prefix[i] + static_cast<double>(hist[i]);

    const double inv_total = 1.0 / static_cast<double>(total);
    auto class_term = [&](double mass) {
        const double w = mass * inv_total;
        return w > 0.0 ? -w * std::log(w) : 0.0;
    };

    ThresholdPair best{lo, lo};
    double best_score = -1.0;
    for (int t1 = lo; t1 <= hi; ++t1) {
        const double m1 = prefix[t1 + 1];
        for (int t2 = t1; t2 <= hi; ++t2) {
            const double m2 = prefix[t2 + 1] - m1;
            const double m3 = static_cast<double>(total) - m1 - m2;
            const double score = class_term(m1) + class_term(m2) + class_term(m3);
            if (score > best_score + 1e-12) {
                best_score = score;
                best = {t1, t2};
            }
        }
    }
    return best;
}

ThresholdPair max_entropy_thresholds(const Volume& substack) {
    if (substack.dims.voxels() <= 0)
        throw std::invalid_argument("max_entropy_thresholds: empty substack");
    return kapur_thresholds(histogram256(substack));
}

std::vector<std::int64_t> foreground(const Volume& substack, int theta1) {
    const double cut = theta1 / 255.0;
    std::vector<std::int64_t> fg;
    const std::int64_t n = substack.dims.voxels();
    for (std::int64_t i = 0; i < n; ++i)
        if (substack.data[static_cast<std::size_t>(i)] >= cut) fg.push_back(i);
    return fg;
}

namespace {

struct Offset {
    int dx, dy, dz;
    double w; // criterion weight
};

std::vector<Offset> ball_offsets(double radius, bool soft, double soft_scale) {
    std::vector<Offset> offsets;
    const int r = static_cast<int>(std::ceil(radius));
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const double d = std::sqrt(double(dx) * dx + double(dy) * dy + double(dz) * dz);
                if (soft) {
                    if (d > radius) continue;
                    offsets.push_back({dx, dy, dz, std::exp(-d / soft_scale)});
                } else {
                    if (d >= radius) continue; // strict: ||p-q|| < r
                    offsets.push_back({dx, dy, dz, 1.0});
                }
            }
    return offsets;
}

struct PlateauUnionFind {
    std::vector<std::int64_t> parent;
    std::int64_t find(std::int64_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(std::int64_t a, std::int64_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // Keep the smallest linear index as the representative.
        if (a < b)
            parent[b] = a;
        else
            parent[a] = b;
    }
};

} // namespace

MarkerList find_seeds(const Volume& substack, const std::vector<std::int64_t>& fg,
                      const SeedConfig& cfg, int theta1) {
    if (cfg.radius <= 0.0) throw std::invalid_argument("find_seeds: radius must be positive");
    const Dim3 dims = substack.dims;
    const int W = dims.x, H = dims.y;
    const double cut = theta1 / 255.0;

    std::vector<char> in_fg(static_cast<std::size_t>(dims.voxels()), 0);
    for (std::int64_t i : fg) in_fg[static_cast<std::size_t>(i)] = 1;

    // Pass 1: foreground voxels with no strictly greater 26-neighbor.
    std::vector<std::int64_t> candidates;
    std::vector<char> is_candidate(static_cast<std::size_t>(dims.voxels()), 0);
    for (std::int64_t i : fg) {
        const int x = static_cast<int>(i % W);
        const int y = static_cast<int>((i / W) % H);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(W) * H));
        const double v = substack.data[static_cast<std::size_t>(i)];
        bool is_max = true;
        for (int dz = -1; dz <= 1 && is_max; ++dz)
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const int nx = x + dx, ny = y + dy, nz = z + dz;
                    if (!dims.contains(nx, ny, nz)) continue;
                    if (substack.at(nx, ny, nz) > v) {
                        is_max = false;
                        break;
                    }
                }
        if (is_max) {
            candidates.push_back(i);
            is_candidate[static_cast<std::size_t>(i)] = 1;
        }
    }

    // Pass 2: collapse equal-valued candidate plateaus to their lowest index.
    PlateauUnionFind uf;
    uf.parent.resize(substack.data.size());
    for (std::int64_t i : candidates) uf.parent[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i : candidates) {
        const int x = static_cast<int>(i % W);
        const int y = static_cast<int>((i / W) % H);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(W) * H));
        const double v = substack.data[static_cast<std::size_t>(i)];
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const int nx = x + dx, ny = y + dy, nz = z + dz;
                    if (!dims.contains(nx, ny, nz)) continue;
                    const std::int64_t j = static_cast<std::int64_t>(substack.index(nx, ny, nz));
                    if (is_candidate[static_cast<std::size_t>(j)] &&
                        substack.data[static_cast<std::size_t>(j)] == v)
                        uf.unite(i, j);
                }
    }

    const bool soft = cfg.criterion == SeedConfig::Criterion::Soft;
    // exp(-d/r) < 2% beyond 4r, so the soft sum is truncated there.
    const auto offsets =
        ball_offsets(soft ? 4.0 * cfg.radius : cfg.radius, soft, cfg.radius);

    MarkerList seeds;
    seeds.frame = Frame::Local;
    for (std::int64_t i : candidates) {
        if (uf.find(i) != i) continue; // plateau representative only
        const int x = static_cast<int>(i % W);
        const int y = static_cast<int>((i / W) % H);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(W) * H));
        double num = 0.0, den = 0.0;
        for (const auto& o : offsets) {
            const int nx = x + o.dx, ny = y + o.dy, nz = z + o.dz;
            if (!dims.contains(nx, ny, nz)) continue;
            num += o.w * substack.at(nx, ny, nz);
            den += o.w;
        }
        if (den <= 0.0) continue;
        if (num / den > cut) {
            Marker m;
            m.x = x;
            m.y = y;
            m.z = z;
            seeds.points.push_back(std::move(m));
        }
    }
    return seeds;
}

MarkerList mean_shift(const MarkerList& seeds, const std::vector<std::int64_t>& fg,
                      const Volume& intensities, const MeanShiftConfig& cfg) {
    if (cfg.bandwidth <= 0.0 || cfg.epsilon <= 0.0)
        throw std::invalid_argument("mean_shift: bandwidth and epsilon must be positive");
    const Dim3 dims = intensities.dims;
    const int W = dims.x, H = dims.y;
    const double b2 = cfg.bandwidth * cfg.bandwidth;

    // Foreground coordinates and intensities, bucketed at bandwidth pitch.
    const std::size_t nfg = fg.size();
    std::vector<float> px(nfg), py(nfg), pz(nfg), pi(nfg);
    const double cell = std::max(cfg.bandwidth, 1.0);
    const int bx_n = static_cast<int>(dims.x / cell) + 2;
    const int by_n = static_cast<int>(dims.y / cell) + 2;
    const int bz_n = static_cast<int>(dims.z / cell) + 2;
    std::vector<std::vector<std::int32_t>> buckets(
        static_cast<std::size_t>(bx_n) * by_n * bz_n);
    auto bucket_of = [&](double x, double y, double z) {
        const int bx = std::clamp(static_cast<int>(x / cell), 0, bx_n - 1);
        const int by = std::clamp(static_cast<int>(y / cell), 0, by_n - 1);
        const int bz = std::clamp(static_cast<int>(z / cell), 0, bz_n - 1);
        return static_cast<std::size_t>(bx) +
               static_cast<std::size_t>(bx_n) *
                   (static_cast<std::size_t>(by) + static_cast<std::size_t>(by_n) * bz);
    };
    for (std::size_t k = 0; k < nfg; ++k) {
        const std::int64_t i = fg[k];
        const int x = static_cast<int>(i % W);
        const int y = static_cast<int>((i / W) % H);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(W) * H));
        px[k] = static_cast<float>(x);
        py[k] = static_cast<float>(y);
        pz[k] = static_cast<float>(z);
        pi[k] = static_cast<float>(intensities.data[static_cast<std::size_t>(i)]);
        buckets[bucket_of(x, y, z)].push_back(static_cast<std::int32_t>(k));
    }

    // Weighted centroid of the bandwidth ball at (cx,cy,cz); returns the mass
    // (sum of intensities) of the window.
    auto window_mean = [&](double cx, double cy, double cz, double& mx, double& my, double& mz) {
        double wsum = 0.0, sx = 0.0, sy = 0.0, sz = 0.0;
        const int bx0 = std::max(0, static_cast<int>((cx - cfg.bandwidth) / cell));
        const int bx1 = std::min(bx_n - 1, static_cast<int>((cx + cfg.bandwidth) / cell));
        const int by0 = std::max(0, static_cast<int>((cy - cfg.bandwidth) / cell));
        const int by1 = std::min(by_n - 1, static_cast<int>((cy + cfg.bandwidth) / cell));
        const int bz0 = std::max(0, static_cast<int>((cz - cfg.bandwidth) / cell));
        const int bz1 = std::min(bz_n - 1, static_cast<int>((cz + cfg.bandwidth) / cell));
        for (int bz = bz0; bz <= bz1; ++bz)
            for (int by = by0; by <= by1; ++by)
                for (int bx = bx0; bx <= bx1; ++bx) {
                    const auto& bucket =
                        buckets[static_cast<std::size_t>(bx) +
                                static_cast<std::size_t>(bx_n) *
                                    (static_cast<std::size_t>(by) +
                                     static_cast<std::size_t>(by_n) * bz)];
                    for (std::int32_t k : bucket) {
                        const double dx = px[k] - cx, dy = py[k] - cy, dz = pz[k] - cz;
                        if (dx * dx + dy * dy + dz * dz > b2) continue;
                        const double w = pi[k];
                        wsum += w;
                        sx += w * px[k];
                        sy += w * py[k];
                        sz += w * pz[k];
                    }
                }
        if (wsum > 0.0) {
            mx = sx / wsum;
            my = sy / wsum;
            mz = sz / wsum;
        }
        return wsum;
    };

    struct Mode {
        double x, y, z, mass;
        bool orphan;
    };
    std::vector<Mode> modes;
    modes.reserve(seeds.points.size());
    for (const auto& seed : seeds.points) {
        double cx = seed.x, cy = seed.y, cz = seed.z;
        bool orphan = false;
        double mass = 0.0;
        // Stop only once the centroid of the window at the current position
        // moves less than epsilon, so returned modes are stationary.
        for (int it = 0; it < cfg.max_iterations; ++it) {
            double mx = cx, my = cy, mz = cz;
            mass = window_mean(cx, cy, cz, mx, my, mz);
            if (mass <= 0.0) {
                orphan = true;
                break;
            }
            const double dx = mx - cx, dy = my - cy, dz = mz - cz;
            if (std::sqrt(dx * dx + dy * dy + dz * dz) < cfg.epsilon) break;
            cx = mx;
            cy = my;
            cz = mz;
        }
        modes.push_back({cx, cy, cz, mass, orphan});
    }

    // Transitive duplicate collapse (union-find over close mode pairs).
    const std::size_t nm = modes.size();
    std::vector<std::size_t> parent(nm);
    for (std::size_t i = 0; i < nm; ++i) parent[i] = i;
    auto find_root = [&](std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };
    const double c2 = cfg.collapse_distance * cfg.collapse_distance;
    for (std::size_t i = 0; i < nm; ++i)
        for (std::size_t j = i + 1; j < nm; ++j) {
            if (modes[i].orphan != modes[j].orphan) continue;
            const double dx = modes[i].x - modes[j].x;
            const double dy = modes[i].y - modes[j].y;
            const double dz = modes[i].z - modes[j].z;
            if (dx * dx + dy * dy + dz * dz <= c2) {
                const std::size_t a = find_root(i), b = find_root(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
        }

    MarkerList out;
    out.frame = seeds.frame;
    int det = 0;
    for (std::size_t i = 0; i < nm; ++i) {
        if (find_root(i) != i) continue;
        double wsum = 0.0, sx = 0.0, sy = 0.0, sz = 0.0, mass = 0.0;
        bool orphan = modes[i].orphan;
        for (std::size_t j = 0; j < nm; ++j) {
            if (find_root(j) != i) continue;
            const double w = std::max(modes[j].mass, 1e-12);
            wsum += w;
            sx += w * modes[j].x;
            sy += w * modes[j].y;
            sz += w * modes[j].z;
            mass += modes[j].mass;
        }
        Marker m;
        m.x = sx / wsum;
        m.y = sy / wsum;
        m.z = sz / wsum;
        m.mass = mass;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "det_%d", det++);
        m.name = orphan ? "orphan" : buf;
        out.points.push_back(std::move(m));
    }
    return out;
}

MarkerList detect_substack(const Volume& deconvolved, const SeedConfig& seed_cfg,
                           const MeanShiftConfig& ms_cfg) {
    const ThresholdPair thresholds = max_entropy_thresholds(deconvolved);
    const auto fg = foreground(deconvolved, thresholds.theta1);
    if (fg.empty()) return MarkerList{};
    const MarkerList seeds = find_seeds(deconvolved, fg, seed_cfg, thresholds.theta1);
    if (seeds.empty()) return MarkerList{};
    return mean_shift(seeds, fg, deconvolved, ms_cfg);
}

} // namespace mvcell
