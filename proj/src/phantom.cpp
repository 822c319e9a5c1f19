#include "mvcell/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "mvcell/rng.hpp"

namespace fs = std::filesystem;

namespace mvcell {

void PhantomSpec::validate() const {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0)
        throw std::invalid_argument("PhantomSpec: non-positive dims");
    if (n_somata < 0) throw std::invalid_argument("PhantomSpec: negative soma count");
    if (soma_radius_voxels <= 0.0 || min_separation <= 0.0 || psf_anisotropy <= 0.0 ||
        attenuation_length <= 0.0)
        throw std::invalid_argument("PhantomSpec: lengths must be positive");
    const double cell = min_separation * min_separation * min_separation;
    if (n_somata > 0 && static_cast<double>(dims.voxels()) < 2.0 * n_somata * cell)
        throw std::invalid_argument("PhantomSpec: somata too dense for min_separation");
}

namespace {

constexpr int kAngles[4] = {0, 90, 180, 270};
constexpr double kClutterIntensity = 0.3;
constexpr double kClutterRadius = 0.8;
constexpr double kPlacementMargin = 4.0;

Eigen::Vector3d volume_center(Dim3 dims) {
    return {(dims.x - 1) / 2.0, (dims.y - 1) / 2.0, (dims.z - 1) / 2.0};
}

RigidTransform3D exact_view_rotation(int angle, Dim3 dims) {
    const double rad = angle * M_PI / 180.0;
    const Eigen::Matrix3d R = Eigen::AngleAxisd(rad, Eigen::Vector3d::UnitY()).toRotationMatrix();
    const Eigen::Vector3d c = volume_center(dims);
    RigidTransform3D T;
    T.rotation = R;
    T.translation = c - R * c;
    return T;
}

RigidTransform3D small_perturbation(Rng& rng, Dim3 dims) {
    // <= 2 voxels translation, <= 1 degree rotation.
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitX();
    axis.normalize();
    const double angle = rng.uniform(0.0, 1.0) * M_PI / 180.0;
    const Eigen::Matrix3d R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    Eigen::Vector3d t(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    t *= 2.0 / std::sqrt(3.0); // ||t|| <= 2
    const Eigen::Vector3d c = volume_center(dims);
    RigidTransform3D T;
    T.rotation = R;
    T.translation = c - R * c + t;
    return T;
}

// Additive anisotropic Gaussian blob, truncated at 3 sigma.
void stamp_soma(Volume& v, const Eigen::Vector3d& center, double peak, double sigma_xy,
                double sigma_z) {
    const double rx = 3.0 * sigma_xy, rz = 3.0 * sigma_z;
    const int x0 = std::max(0, static_cast<int>(std::floor(center.x() - rx)));
    const int x1 = std::min(v.dims.x - 1, static_cast<int>(std::ceil(center.x() + rx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(center.y() - rx)));
    const int y1 = std::min(v.dims.y - 1, static_cast<int>(std::ceil(center.y() + rx)));
    const int z0 = std::max(0, static_cast<int>(std::floor(center.z() - rz)));
    const int z1 = std::min(v.dims.z - 1, static_cast<int>(std::ceil(center.z() + rz)));
    const double inv_xy = 1.0 / (2.0 * sigma_xy * sigma_xy);
    const double inv_z = 1.0 / (2.0 * sigma_z * sigma_z);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - center.x(), dy = y - center.y(), dz = z - center.z();
                const double q = (dx * dx + dy * dy) * inv_xy + dz * dz * inv_z;
                if (q > 4.5) continue; // 3 sigma: q = d^2 / (2 sigma^2) = 9/2
                v.at(x, y, z) += peak * std::exp(-q);
            }
}

// Clutter tube sample: small isotropic bump, combined with max so overlapping
// walk samples keep the tube at a constant brightness.
void stamp_max(Volume& v, const Eigen::Vector3d& center, double peak, double sigma) {
    const double r = 3.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor(center.x() - r)));
    const int x1 = std::min(v.dims.x - 1, static_cast<int>(std::ceil(center.x() + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(center.y() - r)));
    const int y1 = std::min(v.dims.y - 1, static_cast<int>(std::ceil(center.y() + r)));
    const int z0 = std::max(0, static_cast<int>(std::floor(center.z() - r)));
    const int z1 = std::min(v.dims.z - 1, static_cast<int>(std::ceil(center.z() + r)));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - center.x(), dy = y - center.y(), dz = z - center.z();
                const double q = (dx * dx + dy * dy + dz * dz) * inv;
                if (q > 4.5) continue;
                double& cell = v.at(x, y, z);
                cell = std::max(cell, peak * std::exp(-q));
            }
}

} // namespace

PhantomResult generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    PhantomResult out;
    Rng rng(spec.rng_seed);

    // Soma placement by rejection sampling.
    const double lo_margin = kPlacementMargin;
    out.truth.frame = Frame::World;
    std::vector<Eigen::Vector3d> centers;
    const int max_attempts = 1000 * std::max(1, spec.n_somata);
    int attempts = 0;
    while (static_cast<int>(centers.size()) < spec.n_somata) {
        if (++attempts > max_attempts)
            throw std::runtime_error("generate_phantom: infeasible soma placement");
        Eigen::Vector3d p(rng.uniform(lo_margin, spec.dims.x - 1 - lo_margin),
                          rng.uniform(lo_margin, spec.dims.y - 1 - lo_margin),
                          rng.uniform(lo_margin, spec.dims.z - 1 - lo_margin));
        bool ok = true;
        for (const auto& q : centers)
            if ((p - q).norm() < spec.min_separation) {
                ok = false;
                break;
            }
        if (ok) centers.push_back(p);
    }
    for (std::size_t i = 0; i < centers.size(); ++i) {
        Marker m;
        m.x = centers[i].x();
        m.y = centers[i].y();
        m.z = centers[i].z();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "soma_%03zu", i);
        m.name = buf;
        out.truth.points.push_back(std::move(m));
    }

    // View transforms: exact 90-degree steps, perturbed except the reference.
    for (int angle : kAngles) {
        RigidTransform3D T = exact_view_rotation(angle, spec.dims);
        if (angle != 0) T = compose(T, small_perturbation(rng, spec.dims));
        out.transforms[angle] = T;
    }

    // Clutter polylines in world coordinates, shared by all views.
    const std::int64_t n_clutter =
        static_cast<std::int64_t>(spec.clutter_density * spec.dims.voxels() / 1e6);
    std::vector<std::vector<Eigen::Vector3d>> walks;
    for (std::int64_t k = 0; k < n_clutter; ++k) {
        std::vector<Eigen::Vector3d> walk;
        Eigen::Vector3d p(rng.uniform(lo_margin, spec.dims.x - 1 - lo_margin),
                          rng.uniform(lo_margin, spec.dims.y - 1 - lo_margin),
                          rng.uniform(lo_margin, spec.dims.z - 1 - lo_margin));
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        if (dir.norm() < 1e-9) dir = Eigen::Vector3d::UnitZ();
        dir.normalize();
        const int steps = 20 + static_cast<int>(rng.uniform_int(21));
        for (int s = 0; s < steps; ++s) {
            walk.push_back(p);
            dir += 0.3 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            p += 0.5 * dir;
        }
        walks.push_back(std::move(walk));
    }

    const double sigma_xy = spec.soma_radius_voxels;
    const double sigma_z = spec.soma_radius_voxels * spec.psf_anisotropy;

    for (int angle : kAngles) {
        const RigidTransform3D& T = out.transforms[angle];
        Volume v(spec.dims, 0.0);

        auto attenuation = [&](double depth) {
            if (!std::isfinite(spec.attenuation_length)) return 1.0;
            return std::exp(-std::max(0.0, depth) / spec.attenuation_length);
        };

        for (const auto& c : centers) {
            const Eigen::Vector3d p = T.apply(c);
            stamp_soma(v, p, attenuation(p.x()), sigma_xy, sigma_z);
        }
        for (const auto& walk : walks)
            for (const auto& w : walk) {
                const Eigen::Vector3d p = T.apply(w);
                stamp_max(v, p, kClutterIntensity * attenuation(p.x()), kClutterRadius);
            }

        Rng noise = rng.fork(1000 + angle);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            double val = v.data[i] + spec.background_level;
            if (spec.noise_sigma > 0.0) val += spec.noise_sigma * noise.normal();
            v.data[i] = val;
        }
        if (spec.saturation_band_width > 0.0) {
            const int band = std::min(v.dims.x, static_cast<int>(spec.saturation_band_width));
            for (int z = 0; z < v.dims.z; ++z)
                for (int y = 0; y < v.dims.y; ++y)
                    for (int x = 0; x < band; ++x) v.at(x, y, z) *= 1.5;
        }
        for (double& val : v.data) val = std::clamp(val, 0.0, 1.0);
        out.views.emplace(angle, std::move(v));
    }
    return out;
}

std::map<int, MarkerList> occlusion_split(const PhantomResult& phantom,
                                          double visibility_threshold) {
    std::map<int, MarkerList> out;
    for (const auto& [angle, view] : phantom.views) {
        const RigidTransform3D& T = phantom.transforms.at(angle);
        MarkerList visible;
        visible.frame = Frame::World;
        for (const auto& m : phantom.truth.points) {
            const Marker p = T.apply(m);
            if (view.sample_nearest(p.x, p.y, p.z) > visibility_threshold)
                visible.points.push_back(p);
        }
        out.emplace(angle, std::move(visible));
    }
    return out;
}

void save_phantom(const PhantomResult& phantom, const std::string& dir, int n_landmarks,
                  double landmark_jitter) {
    fs::create_directories(dir);
    Rng rng(0xfeedULL);
    std::vector<LabeledTransform> transforms;
    for (const auto& [angle, view] : phantom.views) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03d", angle);
        save_volume(view, (fs::path(dir) / name).string());

        const RigidTransform3D& T = phantom.transforms.at(angle);
        MarkerList landmarks;
        landmarks.frame = Frame::Local;
        const int n = std::min<int>(n_landmarks, static_cast<int>(phantom.truth.size()));
        for (int i = 0; i < n; ++i) {
            Marker m = T.apply(phantom.truth.points[static_cast<std::size_t>(i)]);
            m.x += landmark_jitter * rng.normal();
            m.y += landmark_jitter * rng.normal();
            m.z += landmark_jitter * rng.normal();
            landmarks.points.push_back(std::move(m));
        }
        char lm[48];
        std::snprintf(lm, sizeof(lm), "landmarks_%03d.csv", angle);
        save_markers_csv(landmarks, (fs::path(dir) / lm).string());

        char label[32];
        std::snprintf(label, sizeof(label), "world->%d", angle);
        transforms.push_back({label, T});
    }
    save_markers_csv(phantom.truth, (fs::path(dir) / "truth.csv").string());
    save_transforms(transforms, (fs::path(dir) / "true_transforms.txt").string());
}

} // namespace mvcell
