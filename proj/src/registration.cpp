#include "mvcell/registration.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mvcell/detect.hpp"
#include "mvcell/rng.hpp"

namespace mvcell {

double RigidTransform3D::rigidity_error() const {
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    const double ortho = (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return std::max(ortho, std::abs(rotation.determinant() - 1.0));
}

void RigidTransform3D::reorthonormalize() {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0.0) {
        Eigen::Matrix3d U = svd.matrixU();
        U.col(2) *= -1.0;
        R = U * svd.matrixV().transpose();
    }
    rotation = R;
}

double RigidTransform3D::rotation_angle_deg() const {
    const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

RigidTransform3D compose(const RigidTransform3D& first, const RigidTransform3D& second) {
    RigidTransform3D out;
    out.rotation = second.rotation * first.rotation;
    out.translation = second.rotation * first.translation + second.translation;
    if (out.rigidity_error() > 1e-9) out.reorthonormalize();
    return out;
}

RigidTransform3D invert(const RigidTransform3D& T) {
    RigidTransform3D out;
    out.rotation = T.rotation.transpose();
    out.translation = -(out.rotation * T.translation);
    if (out.rigidity_error() > 1e-9) out.reorthonormalize();
    return out;
}

RigidTransform3D arun_absolute_orientation(const std::vector<Eigen::Vector3d>& src,
                                           const std::vector<Eigen::Vector3d>& dst) {
    if (src.size() != dst.size())
        throw std::invalid_argument("arun_absolute_orientation: size mismatch");
    const std::size_t n = src.size();
    if (n < 3) throw std::invalid_argument("arun_absolute_orientation: need at least 3 pairs");

    Eigen::Vector3d c_src = Eigen::Vector3d::Zero();
    Eigen::Vector3d c_dst = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        c_src += src[i];
        c_dst += dst[i];
    }
    c_src /= static_cast<double>(n);
    c_dst /= static_cast<double>(n);

    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    double spread = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d a = src[i] - c_src;
        const Eigen::Vector3d b = dst[i] - c_dst;
        H += a * b.transpose();
        spread += a.squaredNorm();
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d s = svd.singularValues();
    // rank(H) < 2 means the points are collinear (or coincident): the in-plane
    // rotation about the common axis is unconstrained.
    if (s(1) <= 1e-12 * std::max(s(0), spread) || s(0) <= 1e-30)
        throw std::invalid_argument("arun_absolute_orientation: degenerate (collinear) points");

    Eigen::Matrix3d V = svd.matrixV();
    Eigen::Matrix3d R = V * svd.matrixU().transpose();
    if (R.determinant() < 0.0) {
        V.col(2) *= -1.0;
        R = V * svd.matrixU().transpose();
    }

    RigidTransform3D T;
    T.rotation = R;
    T.translation = c_dst - R * c_src;
    return T;
}

namespace {

Eigen::Vector3d marker_vec(const Marker& m) { return {m.x, m.y, m.z}; }

} // namespace

RansacResult estimate_rigid_ransac(const MarkerList& src, const MarkerList& dst,
                                   double inlier_tol, int n_iter, std::uint64_t seed) {
    if (src.size() != dst.size())
        throw std::invalid_argument("estimate_rigid_ransac: lists must be index-aligned");
    const int n = static_cast<int>(src.size());
    if (n < 3) throw std::invalid_argument("estimate_rigid_ransac: need at least 3 correspondences");

    std::vector<Eigen::Vector3d> s(n), d(n);
    for (int i = 0; i < n; ++i) {
        s[i] = marker_vec(src.points[i]);
        d[i] = marker_vec(dst.points[i]);
    }

    Rng rng(seed);
    std::vector<int> best_inliers;
    double best_residual_sum = 0.0;

    auto collect_inliers = [&](const RigidTransform3D& T, std::vector<int>& out, double& rsum) {
        out.clear();
        rsum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double r = (T.apply(s[i]) - d[i]).norm();
            if (r < inlier_tol) {
                out.push_back(i);
                rsum += r;
            }
        }
    };

    std::vector<int> trial;
    for (int it = 0; it < n_iter; ++it) {
        int a = static_cast<int>(rng.uniform_int(n));
        int b = static_cast<int>(rng.uniform_int(n));
        int c = static_cast<int>(rng.uniform_int(n));
        if (a == b || b == c || a == c) continue;
        RigidTransform3D T;
        try {
            T = arun_absolute_orientation({s[a], s[b], s[c]}, {d[a], d[b], d[c]});
        } catch (const std::invalid_argument&) {
            continue; // collinear sample
        }
        double rsum = 0.0;
        collect_inliers(T, trial, rsum);
        if (trial.size() > best_inliers.size() ||
            (trial.size() == best_inliers.size() && !trial.empty() && rsum < best_residual_sum)) {
            best_inliers = trial;
            best_residual_sum = rsum;
        }
    }

    if (best_inliers.size() < 3)
        throw std::runtime_error("estimate_rigid_ransac: no consensus set of size >= 3");

    std::vector<Eigen::Vector3d> cs, cd;
    cs.reserve(best_inliers.size());
    cd.reserve(best_inliers.size());
    for (int i : best_inliers) {
        cs.push_back(s[i]);
        cd.push_back(d[i]);
    }
    RansacResult result;
    result.transform = arun_absolute_orientation(cs, cd);

    double rsum = 0.0;
    collect_inliers(result.transform, result.inliers, rsum);
    result.max_residual = 0.0;
    for (int i : result.inliers)
        result.max_residual =
            std::max(result.max_residual, (result.transform.apply(s[i]) - d[i]).norm());
    result.mean_residual = result.inliers.empty() ? 0.0 : rsum / result.inliers.size();
    return result;
}

Volume resample(const Volume& volume, const RigidTransform3D& T, Dim3 out_dims) {
    if (out_dims.x <= 0 || out_dims.y <= 0 || out_dims.z <= 0)
        throw std::invalid_argument("resample: non-positive output dims");
    const RigidTransform3D inv = invert(T);
    Volume out(out_dims, 0.0, volume.voxel_size);
    for (int z = 0; z < out_dims.z; ++z)
        for (int y = 0; y < out_dims.y; ++y)
            for (int x = 0; x < out_dims.x; ++x) {
                const Eigen::Vector3d p = inv.apply(Eigen::Vector3d(x, y, z));
                out.at(x, y, z) = volume.sample_nearest(p.x(), p.y(), p.z());
            }
    return out;
}

void MIConfig::validate() const {
    if (n_bins < 8) throw std::invalid_argument("MIConfig: need at least 8 bins");
    if (n_samples < n_bins * n_bins)
        throw std::invalid_argument("MIConfig: n_samples must be >= n_bins^2");
}

namespace {

// Cubic B-spline kernel, support (-2, 2).
double bspline3(double t) {
    const double a = std::abs(t);
    if (a >= 2.0) return 0.0;
    if (a <= 1.0) return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0;
    const double b = 2.0 - a;
    return b * b * b / 6.0;
}

struct MiSamples {
    std::vector<Eigen::Vector3d> points;
    std::vector<double> ref_values;
    double ref_min = 0.0, ref_max = 0.0;
};

MiSamples draw_mi_samples(const Volume& ref, const MIConfig& cfg) {
    MiSamples s;
    Rng rng(cfg.seed);
    s.points.reserve(cfg.n_samples);
    s.ref_values.reserve(cfg.n_samples);
    s.ref_min = 1.0;
    s.ref_max = 0.0;
    for (int i = 0; i < cfg.n_samples; ++i) {
        const int x = static_cast<int>(rng.uniform_int(ref.dims.x));
        const int y = static_cast<int>(rng.uniform_int(ref.dims.y));
        const int z = static_cast<int>(rng.uniform_int(ref.dims.z));
        s.points.emplace_back(x, y, z);
        const double v = ref.at(x, y, z);
        s.ref_values.push_back(v);
        s.ref_min = std::min(s.ref_min, v);
        s.ref_max = std::max(s.ref_max, v);
    }
    return s;
}

double mattes_mi_sampled(const MiSamples& samples, const Volume& test, double test_min,
                         double test_max, const RigidTransform3D& T, const MIConfig& cfg) {
    const int nb = cfg.n_bins;
    std::vector<double> joint(static_cast<std::size_t>(nb) * nb, 0.0);

    const double ref_span = std::max(samples.ref_max - samples.ref_min, 1e-12);
    const double test_span = std::max(test_max - test_min, 1e-12) * (1.0 + 1e-9);
    const double xmax = test.dims.x - 1.0, ymax = test.dims.y - 1.0, zmax = test.dims.z - 1.0;

    std::int64_t inside = 0;
    for (std::size_t i = 0; i < samples.points.size(); ++i) {
        const Eigen::Vector3d q = T.apply(samples.points[i]);
        if (q.x() < 0.0 || q.x() > xmax || q.y() < 0.0 || q.y() > ymax || q.z() < 0.0 ||
            q.z() > zmax)
            continue;
        ++inside;
        const double tv = test.sample_linear(q.x(), q.y(), q.z());

        int rbin = static_cast<int>((samples.ref_values[i] - samples.ref_min) / ref_span * nb);
        rbin = std::clamp(rbin, 0, nb - 1);

        // Continuous test-bin coordinate kept in [1, nb-2) so the 4-tap cubic
        // kernel always lands inside the histogram.
        const double u = 1.0 + (tv - test_min) / test_span * (nb - 3);
        const int base = static_cast<int>(std::floor(u));
        for (int k = -1; k <= 2; ++k) {
            const int mbin = base + k;
            if (mbin < 0 || mbin >= nb) continue;
            joint[static_cast<std::size_t>(rbin) * nb + mbin] += bspline3(u - mbin);
        }
    }

    if (inside < static_cast<std::int64_t>(nb) * nb)
        throw std::runtime_error("mattes_mi: insufficient overlap between volumes");

    const double total = static_cast<double>(inside);
    std::vector<double> pr(nb, 0.0), pm(nb, 0.0);
    for (int r = 0; r < nb; ++r)
        for (int m = 0; m < nb; ++m) {
            const double p = joint[static_cast<std::size_t>(r) * nb + m] / total;
            joint[static_cast<std::size_t>(r) * nb + m] = p;
            pr[r] += p;
            pm[m] += p;
        }

    double mi = 0.0;
    for (int r = 0; r < nb; ++r) {
        if (pr[r] <= 0.0) continue;
        for (int m = 0; m < nb; ++m) {
            const double p = joint[static_cast<std::size_t>(r) * nb + m];
            if (p <= 0.0 || pm[m] <= 0.0) continue;
            mi += p * std::log(p / (pr[r] * pm[m]));
        }
    }
    return -mi;
}

double volume_min(const Volume& v) {
    double m = 1.0;
    for (double x : v.data) m = std::min(m, x);
    return m;
}
double volume_max(const Volume& v) {
    double m = 0.0;
    for (double x : v.data) m = std::max(m, x);
    return m;
}

} // namespace

double mattes_mi(const Volume& ref, const Volume& test, const RigidTransform3D& T,
                 const MIConfig& cfg) {
    cfg.validate();
    if (ref.dims.voxels() <= 0 || test.dims.voxels() <= 0)
        throw std::invalid_argument("mattes_mi: empty volume");
    const MiSamples samples = draw_mi_samples(ref, cfg);
    return mattes_mi_sampled(samples, test, volume_min(test), volume_max(test), T, cfg);
}

namespace {

RigidTransform3D transform_from_params(const std::array<double, 6>& mu,
                                       const Eigen::Vector3d& center, double rot_scale) {
    const Eigen::Vector3d r(mu[0], mu[1], mu[2]);
    const double angle = r.norm() * rot_scale;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    if (angle > 0.0) R = Eigen::AngleAxisd(angle, r.normalized()).toRotationMatrix();
    RigidTransform3D T;
    T.rotation = R;
    T.translation = center - R * center + Eigen::Vector3d(mu[3], mu[4], mu[5]);
    return T;
}

} // namespace

RigidTransform3D fine_register(const Volume& ref, const Volume& test, const MIConfig& cfg) {
    cfg.validate();
    const Eigen::Vector3d center((ref.dims.x - 1) / 2.0, (ref.dims.y - 1) / 2.0,
                                 (ref.dims.z - 1) / 2.0);
    // One unit of rotation parameter moves the boundary about one voxel.
    const double radius = std::max(1.0, center.norm());
    const double rot_scale = 1.0 / radius;
    const double rot_bound = cfg.rotation_bound_deg * M_PI / 180.0 * radius;

    const MiSamples samples = draw_mi_samples(ref, cfg);
    const double tmin = volume_min(test);
    const double tmax = volume_max(test);
    auto score = [&](const std::array<double, 6>& mu) {
        return mattes_mi_sampled(samples, test, tmin, tmax,
                                 transform_from_params(mu, center, rot_scale), cfg);
    };

    std::array<double, 6> mu{};
    double best = score(mu);
    double step = cfg.initial_step;
    for (int sweep = 0; sweep < cfg.max_iterations && step >= cfg.final_step; ++sweep) {
        bool improved = false;
        for (int d = 0; d < 6; ++d) {
            const double bound = d < 3 ? rot_bound : cfg.translation_bound;
            for (double sign : {+1.0, -1.0}) {
                std::array<double, 6> cand = mu;
                cand[d] = std::clamp(cand[d] + sign * step, -bound, bound);
                if (cand[d] == mu[d]) continue;
                double v;
                try {
                    v = score(cand);
                } catch (const std::runtime_error&) {
                    continue; // candidate pushed the overlap too small
                }
                if (v < best - 1e-12) {
                    best = v;
                    mu = cand;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return transform_from_params(mu, center, rot_scale);
}

bool is_black(const Volume& substack) {
    return max_entropy_thresholds(substack).theta2 < 30;
}

void save_transforms(const std::vector<LabeledTransform>& transforms, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write transforms: " + path);
    out << "# label r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2\n";
    char buf[40];
    for (const auto& lt : transforms) {
        out << lt.label;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                std::snprintf(buf, sizeof(buf), " %.17g", lt.transform.rotation(r, c));
                out << buf;
            }
        for (int k = 0; k < 3; ++k) {
            std::snprintf(buf, sizeof(buf), " %.17g", lt.transform.translation(k));
            out << buf;
        }
        out << '\n';
    }
}

std::vector<LabeledTransform> load_transforms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read transforms: " + path);
    std::vector<LabeledTransform> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        LabeledTransform lt;
        ss >> lt.label;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) ss >> lt.transform.rotation(r, c);
        for (int k = 0; k < 3; ++k) ss >> lt.transform.translation(k);
        if (!ss) throw std::runtime_error("malformed transform line in " + path);
        out.push_back(std::move(lt));
    }
    return out;
}

const RigidTransform3D* find_transform(const std::vector<LabeledTransform>& transforms,
                                       const std::string& label) {
    for (const auto& lt : transforms)
        if (lt.label == label) return &lt.transform;
    return nullptr;
}

} // namespace mvcell
