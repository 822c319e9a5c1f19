#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace mvcell {

struct Dim3 {
    int x = 0;
    int y = 0;
    int z = 0;

    bool operator==(const Dim3&) const = default;
    std::int64_t voxels() const {
        return static_cast<std::int64_t>(x) * y * z;
    }
    bool contains(int px, int py, int pz) const {
        return px >= 0 && px < x && py >= 0 && py < y && pz >= 0 && pz < z;
    }
};

// Dense 3D scalar grid. Serialized as 8-bit grayscale slices; held in memory
// as doubles normalized to [0,1]. Index order: x fastest, then y, then z.
struct Volume {
    Dim3 dims;
    double voxel_size = 4.0; // micrometers per voxel, isotropic
    std::vector<double> data;

    Volume() = default;
    Volume(Dim3 d, double fill = 0.0, double vsize = 4.0)
        : dims(d), voxel_size(vsize), data(static_cast<std::size_t>(d.voxels()), fill) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * z);
    }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }

    // Trilinear interpolation; zero outside bounds.
    double sample_linear(double x, double y, double z) const;
    // Nearest-neighbor lookup; zero outside bounds.
    double sample_nearest(double x, double y, double z) const;
};

// 0-255 quantization used at every disk/threshold boundary.
inline std::uint8_t to_u8(double v) {
    const double s = std::lround(v * 255.0);
    return static_cast<std::uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}
inline double from_u8(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

// Directory-of-slices format: z_####.pgm (binary P5, 8-bit) plus volume.json
// sidecar carrying dims, voxel_size and dtype.
void save_volume(const Volume& volume, const std::string& dir);
Volume load_volume(const std::string& dir);

enum class Frame { Local, World };

struct Marker {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double mass = std::numeric_limits<double>::quiet_NaN(); // NaN = absent
    std::string name;

    bool has_mass() const { return !std::isnan(mass); }
};

struct MarkerList {
    std::vector<Marker> points;
    Frame frame = Frame::Local;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// CSV with header "name,x,y,z,mass"; mass column may be blank.
void save_markers_csv(const MarkerList& markers, const std::string& path);
MarkerList load_markers_csv(const std::string& path);
// ASCII PLY point cloud (world-frame exports).
void save_markers_ply(const MarkerList& markers, const std::string& path);

// Overlapping tile decomposition of a parent volume. Tiles are full-size
// (clamped only when the parent is smaller than the requested tile); the last
// tile along each axis is shifted back so it ends exactly at the boundary.
struct SubstackGrid {
    Dim3 parent_dims;
    Dim3 substack_dims; // effective (clamped) tile size
    int overlap = 0;
    std::vector<int> x_origins;
    std::vector<int> y_origins;
    std::vector<int> z_origins;

    std::size_t count() const { return x_origins.size() * y_origins.size() * z_origins.size(); }
    // Linear index: x fastest, then y, then z.
    Dim3 origin(std::size_t index) const;
    Dim3 grid_shape() const {
        return {static_cast<int>(x_origins.size()), static_cast<int>(y_origins.size()),
                static_cast<int>(z_origins.size())};
    }
};

SubstackGrid split_substacks(Dim3 dims, Dim3 substack_dims, int overlap);
Volume extract_substack(const Volume& volume, const SubstackGrid& grid, std::size_t index);

Marker local_to_world(const SubstackGrid& grid, std::size_t index, const Marker& point);
Marker world_to_local(const SubstackGrid& grid, std::size_t index, const Marker& point);

} // namespace mvcell
