#include "mvcell/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mvcell {

namespace {

// lut[k] = k * log2(k); entropy of a window with counts c_i and total n is
// log2(n) - sum(lut[c_i]) / n, which lets the x-sweep update the histogram and
// the running sum incrementally.
std::vector<double> count_log_table(int max_count) {
    std::vector<double> lut(static_cast<std::size_t>(max_count) + 1, 0.0);
    for (int k = 2; k <= max_count; ++k) lut[k] = k * std::log2(static_cast<double>(k));
    return lut;
}

} // namespace

EntropyMap local_entropy(const Volume& volume, int window) {
    if (window < 3 || window % 2 == 0)
        throw std::invalid_argument("local_entropy: window must be odd and >= 3");
    const int r = window / 2;
    const Dim3 dims = volume.dims;
    EntropyMap out(dims, 0.0, volume.voxel_size);

    const auto lut = count_log_table(window * window * window);
    std::vector<std::uint8_t> quantized(volume.data.size());
    for (std::size_t i = 0; i < volume.data.size(); ++i) quantized[i] = to_u8(volume.data[i]);

    std::array<int, 256> hist{};
    for (int z = 0; z < dims.z; ++z) {
        const int z0 = std::max(0, z - r), z1 = std::min(dims.z - 1, z + r);
        for (int y = 0; y < dims.y; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(dims.y - 1, y + r);

            // Build the histogram for x = 0, then slide along x.
            hist.fill(0);
            int n = 0;
            double s = 0.0; // sum of c*log2(c)
            auto add_plane = [&](int x) {
                for (int zz = z0; zz <= z1; ++zz)
                    for (int yy = y0; yy <= y1; ++yy) {
                        const std::uint8_t q = quantized[volume.index(x, yy, zz)];
                        s += lut[static_cast<std::size_t>(hist[q]) + 1] - lut[hist[q]];
                        ++hist[q];
                        ++n;
                    }
            };
            auto remove_plane = [&](int x) {
                for (int zz = z0; zz <= z1; ++zz)
                    for (int yy = y0; yy <= y1; ++yy) {
                        const std::uint8_t q = quantized[volume.index(x, yy, zz)];
                        s += lut[static_cast<std::size_t>(hist[q]) - 1] - lut[hist[q]];
                        --hist[q];
                        --n;
                    }
            };
            for (int x = 0; x <= std::min(r, dims.x - 1); ++x) add_plane(x);
            for (int x = 0; x < dims.x; ++x) {
                if (x > 0) {
                    const int incoming = x + r;
                    if (incoming < dims.x) add_plane(incoming);
                    const int outgoing = x - r - 1;
                    if (outgoing >= 0) remove_plane(outgoing);
                }
                const double bits = n > 0 ? std::log2(static_cast<double>(n)) - s / n : 0.0;
                out.at(x, y, z) = std::clamp(bits / 8.0, 0.0, 1.0);
            }
        }
    }
    return out;
}

Volume fuse_content_based(const Volume& vi, const Volume& vj, const EntropyMap& hi,
                          const EntropyMap& hj) {
    if (!(vi.dims == vj.dims) || !(vi.dims == hi.dims) || !(vi.dims == hj.dims))
        throw std::invalid_argument("fuse_content_based: dim mismatch");
    Volume out(vi.dims, 0.0, vi.voxel_size);
    const double ln100 = std::log(100.0);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double wi = std::exp(hi.data[i] * ln100);
        const double wj = std::exp(hj.data[i] * ln100);
        out.data[i] = (wi * vi.data[i] + wj * vj.data[i]) / (wi + wj);
    }
    return out;
}

} // namespace mvcell
