#include "mvcell/volume.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvcell {

double Volume::sample_linear(double x, double y, double z) const {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int z0 = static_cast<int>(std::floor(z));
    const double fx = x - x0, fy = y - y0, fz = z - z0;
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz) {
        for (int dy = 0; dy <= 1; ++dy) {
            for (int dx = 0; dx <= 1; ++dx) {
                const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
                if (!dims.contains(xi, yi, zi)) continue;
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                acc += w * at(xi, yi, zi);
            }
        }
    }
    return acc;
}

double Volume::sample_nearest(double x, double y, double z) const {
    const int xi = static_cast<int>(std::lround(x));
    const int yi = static_cast<int>(std::lround(y));
    const int zi = static_cast<int>(std::lround(z));
    if (!dims.contains(xi, yi, zi)) return 0.0;
    return at(xi, yi, zi);
}

namespace {

std::string slice_name(int z) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "z_%04d.pgm", z);
    return buf;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int width,
               int height) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open slice for writing: " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("short write on slice: " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int expect_w, int expect_h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open slice: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5") throw std::runtime_error("slice is not a binary PGM: " + path);
    if (maxval != 255) throw std::runtime_error("slice maxval != 255: " + path);
    if (w != expect_w || h != expect_h)
        throw std::runtime_error("slice dims mismatch in " + path);
    in.get(); // single whitespace after header
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw std::runtime_error("truncated slice: " + path);
    return pixels;
}

} // namespace

void save_volume(const Volume& volume, const std::string& dir) {
    if (volume.dims.voxels() <= 0) throw std::invalid_argument("save_volume: empty volume");
    fs::create_directories(dir);
    json meta;
    meta["width"] = volume.dims.x;
    meta["height"] = volume.dims.y;
    meta["depth"] = volume.dims.z;
    meta["voxel_size"] = volume.voxel_size;
    meta["dtype"] = "uint8";
    meta["slice_format"] = "pgm";
    {
        std::ofstream out(fs::path(dir) / "volume.json");
        if (!out) throw std::runtime_error("cannot write sidecar in " + dir);
        out << meta.dump(2) << "\n";
    }
    const std::size_t plane = static_cast<std::size_t>(volume.dims.x) * volume.dims.y;
    std::vector<std::uint8_t> pixels(plane);
    for (int z = 0; z < volume.dims.z; ++z) {
        const double* src = volume.data.data() + plane * z;
        for (std::size_t i = 0; i < plane; ++i) pixels[i] = to_u8(src[i]);
        write_pgm((fs::path(dir) / slice_name(z)).string(), pixels, volume.dims.x, volume.dims.y);
    }
}

Volume load_volume(const std::string& dir) {
    const fs::path sidecar = fs::path(dir) / "volume.json";
    std::ifstream in(sidecar);
    if (!in) throw std::runtime_error("missing sidecar: " + sidecar.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt sidecar " + sidecar.string() + ": " + e.what());
    }
    Volume volume;
    try {
        volume.dims = {meta.at("width").get<int>(), meta.at("height").get<int>(),
                       meta.at("depth").get<int>()};
        volume.voxel_size = meta.at("voxel_size").get<double>();
        if (meta.at("dtype").get<std::string>() != "uint8")
            throw std::runtime_error("unsupported dtype");
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt sidecar " + sidecar.string() + ": " + e.what());
    }
    if (volume.dims.x <= 0 || volume.dims.y <= 0 || volume.dims.z <= 0)
        throw std::runtime_error("corrupt sidecar: non-positive dims in " + sidecar.string());
    volume.data.resize(static_cast<std::size_t>(volume.dims.voxels()));
    const std::size_t plane = static_cast<std::size_t>(volume.dims.x) * volume.dims.y;
    for (int z = 0; z < volume.dims.z; ++z) {
        const fs::path slice = fs::path(dir) / slice_name(z);
        if (!fs::exists(slice))
            throw std::runtime_error("slice count does not match depth: missing " + slice.string());
        const auto pixels = read_pgm(slice.string(), volume.dims.x, volume.dims.y);
        double* dst = volume.data.data() + plane * z;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = from_u8(pixels[i]);
    }
    return volume;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace

void save_markers_csv(const MarkerList& markers, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write markers: " + path);
    out << "name,x,y,z,mass\n";
    for (const auto& m : markers.points) {
        out << m.name << ',' << format_double(m.x) << ',' << format_double(m.y) << ','
            << format_double(m.z) << ',';
        if (m.has_mass()) out << format_double(m.mass);
        out << '\n';
    }
}

MarkerList load_markers_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read markers: " + path);
    MarkerList markers;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty marker file: " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < 5) fields.emplace_back();
        Marker m;
        m.name = fields[0];
        m.x = std::stod(fields[1]);
        m.y = std::stod(fields[2]);
        m.z = std::stod(fields[3]);
        if (!fields[4].empty()) m.mass = std::stod(fields[4]);
        markers.points.push_back(std::move(m));
    }
    return markers;
}

void save_markers_ply(const MarkerList& markers, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ply: " + path);
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << markers.points.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "end_header\n";
    for (const auto& m : markers.points)
        out << format_double(m.x) << ' ' << format_double(m.y) << ' ' << format_double(m.z) << '\n';
}

namespace {

// Origins along one axis: stride = size - overlap, last tile clamped to end
// exactly at the boundary.
std::vector<int> axis_origins(int parent, int size, int overlap) {
    std::vector<int> origins;
    const int stride = size - overlap;
    int o = 0;
    for (;;) {
        if (o + size >= parent) {
            origins.push_back(parent - size);
            break;
        }
        origins.push_back(o);
        o += stride;
    }
    return origins;
}

} // namespace

Dim3 SubstackGrid::origin(std::size_t index) const {
    const std::size_t nx = x_origins.size();
    const std::size_t ny = y_origins.size();
    const std::size_t ix = index % nx;
    const std::size_t iy = (index / nx) % ny;
    const std::size_t iz = index / (nx * ny);
    return {x_origins[ix], y_origins[iy], z_origins[iz]};
}

SubstackGrid split_substacks(Dim3 dims, Dim3 substack_dims, int overlap) {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0)
        throw std::invalid_argument("split_substacks: non-positive dims");
    Dim3 tile{std::min(substack_dims.x, dims.x), std::min(substack_dims.y, dims.y),
              std::min(substack_dims.z, dims.z)};
    if (overlap >= tile.x || overlap >= tile.y || overlap >= tile.z)
        throw std::invalid_argument("split_substacks: overlap must be smaller than the tile");
    SubstackGrid grid;
    grid.parent_dims = dims;
    grid.substack_dims = tile;
    grid.overlap = overlap;
    grid.x_origins = axis_origins(dims.x, tile.x, overlap);
    grid.y_origins = axis_origins(dims.y, tile.y, overlap);
    grid.z_origins = axis_origins(dims.z, tile.z, overlap);
    return grid;
}

Volume extract_substack(const Volume& volume, const SubstackGrid& grid, std::size_t index) {
    if (index >= grid.count()) throw std::out_of_range("extract_substack: index out of range");
    if (!(volume.dims == grid.parent_dims))
        throw std::invalid_argument("extract_substack: volume does not match grid parent dims");
    const Dim3 o = grid.origin(index);
    Volume out(grid.substack_dims, 0.0, volume.voxel_size);
    for (int z = 0; z < out.dims.z; ++z)
        for (int y = 0; y < out.dims.y; ++y) {
            const double* src = volume.data.data() + volume.index(o.x, o.y + y, o.z + z);
            double* dst = out.data.data() + out.index(0, y, z);
            std::copy(src, src + out.dims.x, dst);
        }
    return out;
}

Marker local_to_world(const SubstackGrid& grid, std::size_t index, const Marker& point) {
    if (index >= grid.count()) throw std::out_of_range("local_to_world: index out of range");
    const Dim3 o = grid.origin(index);
    Marker m = point;
    m.x += o.x;
    m.y += o.y;
    m.z += o.z;
    return m;
}

Marker world_to_local(const SubstackGrid& grid, std::size_t index, const Marker& point) {
    if (index >= grid.count()) throw std::out_of_range("world_to_local: index out of range");
    const Dim3 o = grid.origin(index);
    Marker m = point;
    m.x -= o.x;
    m.y -= o.y;
    m.z -= o.z;
    return m;
}

} // namespace mvcell
