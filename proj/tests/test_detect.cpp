#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "mvcell/detect.hpp"
#include "mvcell/rng.hpp"

using namespace mvcell;

namespace {

// Independent scoring route for the threshold search: naive per-class loops.
double kapur_score_oracle(const Histogram256& hist, int t1, int t2) {
    std::int64_t total = 0;
    for (auto h : hist) total += h;
    auto class_entropy = [&](int lo, int hi) {
        std::int64_t mass = 0;
        for (int i = lo; i <= hi; ++i) mass += hist[i];
        if (mass == 0) return 0.0;
        const double w = static_cast<double>(mass) / static_cast<double>(total);
        return -w * std::log(w);
    };
    return class_entropy(0, t1) + class_entropy(t1 + 1, t2) + class_entropy(t2 + 1, 255);
}

ThresholdPair kapur_oracle(const Histogram256& hist) {
    int lo = -1, hi = -1;
    for (int i = 0; i < 256; ++i)
        if (hist[i] > 0) {
            if (lo < 0) lo = i;
            hi = i;
        }
    ThresholdPair best{lo, lo};
    double best_score = -1.0;
    for (int t1 = lo; t1 <= hi; ++t1)
        for (int t2 = t1; t2 <= hi; ++t2) {
            const double s = kapur_score_oracle(hist, t1, t2);
            if (s > best_score + 1e-12) {
                best_score = s;
                best = {t1, t2};
            }
        }
    return best;
}

Volume blob_volume(Dim3 dims, const std::vector<std::array<double, 3>>& centers, double sigma,
                   double peak = 1.0) {
    Volume v(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                double val = 0.0;
                for (const auto& c : centers) {
                    const double dx = x - c[0], dy = y - c[1], dz = z - c[2];
                    val += peak * std::exp(-(dx * dx + dy * dy + dz * dz) /
                                           (2.0 * sigma * sigma));
                }
                v.at(x, y, z) = std::min(1.0, val);
            }
    return v;
}

} // namespace

TEST_CASE("kapur separates three spikes") {
    Histogram256 h{};
    h[10] = 1000;
    h[100] = 1000;
    h[200] = 1000;
    const ThresholdPair t = kapur_thresholds(h);
    CHECK(t.theta1 >= 10);
    CHECK(t.theta1 < 100);
    CHECK(t.theta2 >= 100);
    CHECK(t.theta2 < 200);
    const ThresholdPair o = kapur_oracle(h);
    CHECK(t.theta1 == o.theta1);
    CHECK(t.theta2 == o.theta2);
}

TEST_CASE("kapur constant volume degenerates to (v,v)") {
    Volume v({6, 6, 6}, 40.0 / 255.0);
    const ThresholdPair t = max_entropy_thresholds(v);
    CHECK(t.theta1 == 40);
    CHECK(t.theta2 == 40);
}

TEST_CASE("kapur matches the brute-force oracle on random histograms") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        Histogram256 h{};
        // Random sparse 64-bin histograms.
        for (int k = 0; k < 64; ++k)
            h[rng.uniform_int(256)] += static_cast<std::int64_t>(rng.uniform_int(1000)) + 1;
        const ThresholdPair fast = kapur_thresholds(h);
        const ThresholdPair slow = kapur_oracle(h);
        REQUIRE(fast.theta1 == slow.theta1);
        REQUIRE(fast.theta2 == slow.theta2);
    }
}

TEST_CASE("kapur depends only on the histogram (permutation invariance)") {
    Rng rng(11);
    Volume v({8, 8, 8});
    for (auto& x : v.data) x = from_u8(static_cast<std::uint8_t>(rng.uniform_int(200)));
    const ThresholdPair t1 = max_entropy_thresholds(v);
    // Reverse the voxel order: same histogram, different layout.
    Volume w = v;
    std::reverse(w.data.begin(), w.data.end());
    const ThresholdPair t2 = max_entropy_thresholds(w);
    CHECK(t1.theta1 == t2.theta1);
    CHECK(t1.theta2 == t2.theta2);
}

TEST_CASE("foreground thresholding") {
    Rng rng(4);
    Volume v({10, 10, 10});
    for (auto& x : v.data) x = from_u8(static_cast<std::uint8_t>(rng.uniform_int(256)));

    CHECK(foreground(v, 0).size() == 1000);
    CHECK(foreground(v, 256).empty());

    const int theta = 97;
    const Histogram256 h = histogram256(v);
    std::int64_t tail = 0;
    for (int i = theta; i < 256; ++i) tail += h[i];
    CHECK(static_cast<std::int64_t>(foreground(v, theta).size()) == tail);
}

TEST_CASE("find_seeds keeps bright plateau representatives") {
    SUBCASE("constant substack yields at most one seed") {
        Volume v({7, 7, 7}, 0.8);
        const auto fg = foreground(v, 0);
        SeedConfig cfg;
        const MarkerList seeds = find_seeds(v, fg, cfg, 0);
        REQUIRE(seeds.size() == 1);
        CHECK(seeds.points[0].x == 0.0);
        CHECK(seeds.points[0].y == 0.0);
        CHECK(seeds.points[0].z == 0.0);
    }
    SUBCASE("all-255 cube passes any theta1 < 255") {
        Volume v({5, 5, 5}, 1.0);
        const auto fg = foreground(v, 0);
        SeedConfig cfg;
        cfg.radius = 1.9;
        const MarkerList seeds = find_seeds(v, fg, cfg, 254);
        CHECK(seeds.size() == 1); // plateau representative survives the filter
        const MarkerList none = find_seeds(v, fg, cfg, 255);
        CHECK(none.empty());
    }
    SUBCASE("single bright voxel: soft average dragged below theta1 by background") {
        Volume v({15, 15, 15}, 0.0);
        v.at(7, 7, 7) = 1.0;
        const auto fg = foreground(v, 1);
        SeedConfig cfg;
        cfg.radius = 1.9;
        // Soft average at the bright voxel: sum exp(-d/r) I over the 4r ball.
        double num = 0.0, den = 0.0;
        const int R = static_cast<int>(std::ceil(4.0 * cfg.radius));
        for (int dz = -R; dz <= R; ++dz)
            for (int dy = -R; dy <= R; ++dy)
                for (int dx = -R; dx <= R; ++dx) {
                    const double d = std::sqrt(double(dx * dx + dy * dy + dz * dz));
                    if (d > 4.0 * cfg.radius) continue;
                    const double w = std::exp(-d / cfg.radius);
                    den += w;
                    num += w * v.at(7 + dx, 7 + dy, 7 + dz);
                }
        const double avg255 = 255.0 * num / den;
        const int below = static_cast<int>(std::floor(avg255)) - 1;
        const int above = static_cast<int>(std::ceil(avg255)) + 1;
        CHECK(find_seeds(v, fg, cfg, below).size() == 1);
        CHECK(find_seeds(v, fg, cfg, above).empty());
    }
}

TEST_CASE("hard criterion averages the open ball") {
    Volume v({9, 9, 9}, 0.0);
    v.at(4, 4, 4) = 1.0;
    const auto fg = foreground(v, 1);
    SeedConfig cfg;
    cfg.criterion = SeedConfig::Criterion::Hard;
    cfg.radius = 1.5; // ball: center + 6 face neighbors
    // average = 255/7 = 36.43
    CHECK(find_seeds(v, fg, cfg, 36).size() == 1);
    CHECK(find_seeds(v, fg, cfg, 37).empty());
}

TEST_CASE("mean shift converges to blob centroids") {
    SUBCASE("uniform cube: centroid by symmetry") {
        Volume v({21, 21, 21}, 0.0);
        for (int z = 6; z <= 14; ++z)
            for (int y = 6; y <= 14; ++y)
                for (int x = 6; x <= 14; ++x) v.at(x, y, z) = 0.5;
        const auto fg = foreground(v, 1);
        MarkerList seeds;
        Marker s;
        s.x = 9;
        s.y = 11;
        s.z = 10;
        seeds.points = {s};
        MeanShiftConfig cfg;
        cfg.bandwidth = 3.0;
        const MarkerList modes = mean_shift(seeds, fg, v, cfg);
        REQUIRE(modes.size() == 1);
        CHECK(modes.points[0].x == doctest::Approx(10.0).epsilon(0.01));
        CHECK(modes.points[0].y == doctest::Approx(10.0).epsilon(0.01));
        CHECK(modes.points[0].z == doctest::Approx(10.0).epsilon(0.01));
    }
    SUBCASE("two blobs 10 voxels apart give exactly two modes") {
        const Volume v = blob_volume({24, 16, 16}, {{6, 8, 8}, {16, 8, 8}}, 1.6);
        const auto fg = foreground(v, 10);
        MarkerList seeds;
        Marker s1;
        s1.x = 5;
        s1.y = 8;
        s1.z = 9;
        Marker s2;
        s2.x = 17;
        s2.y = 7;
        s2.z = 8;
        seeds.points = {s1, s2};
        MeanShiftConfig cfg;
        cfg.bandwidth = 2.5;
        const MarkerList modes = mean_shift(seeds, fg, v, cfg);
        REQUIRE(modes.size() == 2);
        // Oracle: intensity-weighted centroid of each blob's foreground within
        // the bandwidth of the true center.
        for (const auto& c : {std::array<double, 3>{6, 8, 8}, std::array<double, 3>{16, 8, 8}}) {
            double best = 1e9;
            for (const auto& m : modes.points) {
                const double d = std::hypot(m.x - c[0], std::hypot(m.y - c[1], m.z - c[2]));
                best = std::min(best, d);
            }
            CHECK(best < 0.5);
        }
    }
    SUBCASE("seed with empty window is returned unmoved and flagged") {
        Volume v({10, 10, 10}, 0.0);
        v.at(1, 1, 1) = 1.0;
        std::vector<std::int64_t> fg = {static_cast<std::int64_t>(v.index(1, 1, 1))};
        MarkerList seeds;
        Marker far;
        far.x = 8;
        far.y = 8;
        far.z = 8;
        seeds.points = {far};
        MeanShiftConfig cfg;
        cfg.bandwidth = 2.0;
        const MarkerList modes = mean_shift(seeds, fg, v, cfg);
        REQUIRE(modes.size() == 1);
        CHECK(modes.points[0].name == "orphan");
        CHECK(modes.points[0].x == 8.0);
    }
}

TEST_CASE("mean shift modes are stationary") {
    Rng rng(23);
    std::vector<std::array<double, 3>> centers;
    for (int i = 0; i < 5; ++i)
        centers.push_back({rng.uniform(5, 25), rng.uniform(5, 25), rng.uniform(5, 25)});
    const Volume v = blob_volume({30, 30, 30}, centers, 1.5);
    const auto thresholds = max_entropy_thresholds(v);
    const auto fg = foreground(v, thresholds.theta1);
    SeedConfig scfg;
    MeanShiftConfig mcfg;
    const MarkerList seeds = find_seeds(v, fg, scfg, thresholds.theta1);
    const MarkerList modes = mean_shift(seeds, fg, v, mcfg);
    // Recompute the window centroid at each mode: it must move < epsilon.
    for (const auto& m : modes.points) {
        if (m.name == "orphan") continue;
        double wsum = 0.0, sx = 0.0, sy = 0.0, sz = 0.0;
        for (std::int64_t i : fg) {
            const int x = static_cast<int>(i % v.dims.x);
            const int y = static_cast<int>((i / v.dims.x) % v.dims.y);
            const int z = static_cast<int>(i / (static_cast<std::int64_t>(v.dims.x) * v.dims.y));
            const double d =
                std::sqrt((x - m.x) * (x - m.x) + (y - m.y) * (y - m.y) + (z - m.z) * (z - m.z));
            if (d > mcfg.bandwidth) continue;
            const double w = v.data[static_cast<std::size_t>(i)];
            wsum += w;
            sx += w * x;
            sy += w * y;
            sz += w * z;
        }
        REQUIRE(wsum > 0.0);
        const double dx = sx / wsum - m.x, dy = sy / wsum - m.y, dz = sz / wsum - m.z;
        CHECK(std::sqrt(dx * dx + dy * dy + dz * dz) < mcfg.epsilon);
    }
}

TEST_CASE("detect_substack composition") {
    SUBCASE("all-dark substack yields an empty list") {
        Volume v({20, 20, 20}, 0.0);
        const MarkerList out = detect_substack(v, SeedConfig{}, MeanShiftConfig{});
        CHECK(out.empty());
    }
    SUBCASE("clean blobs are each detected once, seeds within foreground") {
        std::vector<std::array<double, 3>> centers = {{8, 8, 8}, {22, 10, 12}, {12, 22, 20}};
        const Volume v = blob_volume({30, 30, 30}, centers, 1.5);
        const MarkerList out = detect_substack(v, SeedConfig{}, MeanShiftConfig{});
        REQUIRE(out.size() == 3);
        for (const auto& c : centers) {
            double best = 1e9;
            for (const auto& m : out.points)
                best = std::min(best, std::sqrt((m.x - c[0]) * (m.x - c[0]) +
                                                (m.y - c[1]) * (m.y - c[1]) +
                                                (m.z - c[2]) * (m.z - c[2])));
            CHECK(best < 0.5);
        }
        for (const auto& m : out.points) CHECK(m.mass > 0.0);
    }
    SUBCASE("determinism: identical inputs give identical outputs") {
        const Volume v = blob_volume({25, 25, 25}, {{10, 10, 10}, {18, 14, 9}}, 1.4);
        const MarkerList a = detect_substack(v, SeedConfig{}, MeanShiftConfig{});
        const MarkerList b = detect_substack(v, SeedConfig{}, MeanShiftConfig{});
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.points[i].x == b.points[i].x);
            CHECK(a.points[i].y == b.points[i].y);
            CHECK(a.points[i].z == b.points[i].z);
            CHECK(a.points[i].mass == b.points[i].mass);
        }
    }
}
