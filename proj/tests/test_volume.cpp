#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mvcell/rng.hpp"
#include "mvcell/volume.hpp"

using namespace mvcell;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "mvcell_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("volume save/load round-trip is identity") {
    const fs::path dir = temp_dir("roundtrip");
    Volume v({4, 4, 4}, 7.0 / 255.0);
    save_volume(v, dir.string());
    const Volume r = load_volume(dir.string());
    CHECK(r.dims == v.dims);
    CHECK(r.voxel_size == v.voxel_size);
    CHECK(r.data == v.data);
}

TEST_CASE("volume load rejects missing slices") {
    const fs::path dir = temp_dir("badslices");
    Volume v({5, 5, 10}, 0.3);
    save_volume(v, dir.string());
    fs::remove(dir / "z_0009.pgm");
    CHECK_THROWS_AS(load_volume(dir.string()), std::runtime_error);
}

TEST_CASE("volume load rejects corrupt sidecar and dim mismatch") {
    const fs::path dir = temp_dir("badsidecar");
    Volume v({5, 5, 3}, 0.3);
    save_volume(v, dir.string());
    SUBCASE("corrupt json") {
        std::ofstream out(dir / "volume.json");
        out << "{not json";
        out.close();
        CHECK_THROWS_AS(load_volume(dir.string()), std::runtime_error);
    }
    SUBCASE("slice dims mismatch") {
        std::ofstream out(dir / "volume.json");
        out << R"({"width":6,"height":5,"depth":3,"voxel_size":4.0,"dtype":"uint8"})";
        out.close();
        CHECK_THROWS_AS(load_volume(dir.string()), std::runtime_error);
    }
}

TEST_CASE("volume round-trip property over random volumes") {
    // 8-bit content must survive save/load bit-exactly for any seed.
    const fs::path dir = temp_dir("rand_roundtrip");
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        Volume v({16, 16, 16});
        for (auto& x : v.data) x = from_u8(static_cast<std::uint8_t>(rng.uniform_int(256)));
        save_volume(v, dir.string());
        const Volume r = load_volume(dir.string());
        REQUIRE(r.data == v.data);
    }
}

TEST_CASE("split_substacks exact fit yields one tile") {
    const SubstackGrid g = split_substacks({91, 90, 90}, {91, 90, 90}, 16);
    CHECK(g.count() == 1);
    CHECK(g.origin(0) == Dim3{0, 0, 0});
    CHECK(g.substack_dims == Dim3{91, 90, 90});
}

TEST_CASE("split_substacks strides by size minus overlap") {
    const SubstackGrid g = split_substacks({166, 90, 90}, {91, 90, 90}, 16);
    CHECK(g.x_origins == std::vector<int>{0, 75});
    CHECK(g.y_origins == std::vector<int>{0});
    CHECK(g.count() == 2);
}

TEST_CASE("split_substacks clamps tiles to small parents") {
    const SubstackGrid g = split_substacks({50, 50, 50}, {91, 90, 90}, 16);
    CHECK(g.count() == 1);
    CHECK(g.substack_dims == Dim3{50, 50, 50});
}

TEST_CASE("split_substacks rejects overlap >= tile") {
    CHECK_THROWS_AS(split_substacks({100, 100, 100}, {20, 20, 20}, 20), std::invalid_argument);
}

TEST_CASE("substack cover and overlap properties") {
    // Brute-force cover check plus exact shared-slab thickness for interior
    // neighbors, over a few irregular parents.
    const Dim3 tile{20, 18, 16};
    const int overlap = 5;
    for (const Dim3 parent : {Dim3{20, 18, 16}, Dim3{47, 40, 33}, Dim3{61, 18, 50}}) {
        const SubstackGrid g = split_substacks(parent, tile, overlap);
        std::vector<int> cover(static_cast<std::size_t>(parent.voxels()), 0);
        for (std::size_t i = 0; i < g.count(); ++i) {
            const Dim3 o = g.origin(i);
            CHECK(o.x + g.substack_dims.x <= parent.x);
            CHECK(o.y + g.substack_dims.y <= parent.y);
            CHECK(o.z + g.substack_dims.z <= parent.z);
            for (int z = o.z; z < o.z + g.substack_dims.z; ++z)
                for (int y = o.y; y < o.y + g.substack_dims.y; ++y)
                    for (int x = o.x; x < o.x + g.substack_dims.x; ++x)
                        ++cover[static_cast<std::size_t>(x) +
                                static_cast<std::size_t>(parent.x) *
                                    (static_cast<std::size_t>(y) +
                                     static_cast<std::size_t>(parent.y) * z)];
        }
        for (int c : cover) CHECK(c >= 1);
        // Interior neighbors along x share exactly `overlap` voxels.
        for (std::size_t i = 0; i + 2 < g.x_origins.size(); ++i) {
            const int shared = g.x_origins[i] + g.substack_dims.x - g.x_origins[i + 1];
            CHECK(shared == overlap);
        }
    }
}

TEST_CASE("extract_substack copies the right voxels") {
    Volume v({166, 90, 90});
    Rng rng(3);
    for (auto& x : v.data) x = from_u8(static_cast<std::uint8_t>(rng.uniform_int(256)));
    const SubstackGrid g = split_substacks(v.dims, {91, 90, 90}, 16);

    SUBCASE("identity grid returns a copy") {
        const SubstackGrid whole = split_substacks(v.dims, v.dims, 16);
        const Volume s = extract_substack(v, whole, 0);
        CHECK(s.data == v.data);
    }
    SUBCASE("second tile is offset by its origin") {
        const Volume s = extract_substack(v, g, 1);
        CHECK(s.at(0, 0, 0) == v.at(75, 0, 0));
        CHECK(s.at(13, 7, 2) == v.at(88, 7, 2));
    }
    SUBCASE("out-of-range index throws") {
        CHECK_THROWS_AS(extract_substack(v, g, 2), std::out_of_range);
    }
}

TEST_CASE("local_to_world adds the substack origin") {
    const SubstackGrid g = split_substacks({166, 90, 90}, {91, 90, 90}, 16);
    Marker p;
    p.x = 3;
    p.y = 4;
    p.z = 5;
    const Marker w = local_to_world(g, 1, p);
    CHECK(w.x == 78.0);
    CHECK(w.y == 4.0);
    CHECK(w.z == 5.0);

    const Marker same = local_to_world(g, 0, p);
    CHECK(same.x == 3.0);

    // Round trip over random points.
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        Marker q;
        q.x = rng.uniform(0, 91);
        q.y = rng.uniform(0, 90);
        q.z = rng.uniform(0, 90);
        const std::size_t idx = rng.uniform_int(g.count());
        const Marker back = world_to_local(g, idx, local_to_world(g, idx, q));
        CHECK(back.x == doctest::Approx(q.x).epsilon(1e-12));
        CHECK(back.y == doctest::Approx(q.y).epsilon(1e-12));
        CHECK(back.z == doctest::Approx(q.z).epsilon(1e-12));
    }
}

TEST_CASE("markers csv round-trip with blank masses") {
    const fs::path dir = temp_dir("markers");
    MarkerList list;
    Marker a;
    a.name = "soma_0";
    a.x = 1.25;
    a.y = 2.5;
    a.z = 3.75;
    a.mass = 12.5;
    Marker b;
    b.name = "soma_1";
    b.x = -0.5;
    b.y = 10;
    b.z = 20;
    list.points = {a, b};
    const std::string path = (dir / "m.csv").string();
    save_markers_csv(list, path);
    const MarkerList r = load_markers_csv(path);
    REQUIRE(r.size() == 2);
    CHECK(r.points[0].name == "soma_0");
    CHECK(r.points[0].mass == doctest::Approx(12.5));
    CHECK(!r.points[1].has_mass());
    CHECK(r.points[1].x == doctest::Approx(-0.5));
}

TEST_CASE("ply export writes a parseable header") {
    const fs::path dir = temp_dir("ply");
    MarkerList list;
    Marker m;
    m.x = 1;
    m.y = 2;
    m.z = 3;
    list.points = {m};
    const std::string path = (dir / "p.ply").string();
    save_markers_ply(list, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "ply");
    std::getline(in, line);
    CHECK(line == "format ascii 1.0");
    std::getline(in, line);
    CHECK(line == "element vertex 1");
}

TEST_CASE("determinism: identical volumes serialize byte-identically") {
    const fs::path d1 = temp_dir("det1");
    const fs::path d2 = temp_dir("det2");
    Volume v({9, 7, 5});
    Rng rng(5);
    for (auto& x : v.data) x = rng.uniform();
    save_volume(v, d1.string());
    save_volume(v, d2.string());
    for (int z = 0; z < v.dims.z; ++z) {
        char name[32];
        std::snprintf(name, sizeof(name), "z_%04d.pgm", z);
        std::ifstream a(d1 / name, std::ios::binary), b(d2 / name, std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(a)), {});
        const std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
}
