#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvcell/volume.hpp"

namespace mvcell {

// Rigid map y = R x + t between voxel coordinate frames.
struct RigidTransform3D {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform3D identity() { return {}; }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    Marker apply(const Marker& m) const {
        const Eigen::Vector3d q = apply(Eigen::Vector3d(m.x, m.y, m.z));
        Marker out = m;
        out.x = q.x();
        out.y = q.y();
        out.z = q.z();
        return out;
    }

    // Max deviation from R^T R = I plus |det - 1|.
    double rigidity_error() const;
    // Nearest rotation via SVD; applied when compose/invert drift exceeds 1e-9.
    void reorthonormalize();

    double rotation_angle_deg() const;
};

// compose(first, second): apply `first`, then `second`.
RigidTransform3D compose(const RigidTransform3D& first, const RigidTransform3D& second);
RigidTransform3D invert(const RigidTransform3D& T);

// Least-squares rigid fit of src -> dst (SVD of the centered cross-covariance,
// reflection corrected by flipping the last singular vector).
// Throws std::invalid_argument on <3 pairs or rank-deficient (collinear) input.
RigidTransform3D arun_absolute_orientation(const std::vector<Eigen::Vector3d>& src,
                                           const std::vector<Eigen::Vector3d>& dst);

struct RansacResult {
    RigidTransform3D transform;
    std::vector<int> inliers;
    double mean_residual = 0.0;
    double max_residual = 0.0;
};

// RANSAC over index-aligned correspondences: minimal 3-point samples, inlier
// scoring at `inlier_tol`, final refit on the largest consensus set.
RansacResult estimate_rigid_ransac(const MarkerList& src, const MarkerList& dst,
                                   double inlier_tol = 3.0, int n_iter = 1000,
                                   std::uint64_t seed = 871263);

// out(x) = volume(T^-1 x) with nearest-neighbor lookup, zero outside.
Volume resample(const Volume& volume, const RigidTransform3D& T, Dim3 out_dims);

struct MIConfig {
    int n_samples = 100000;
    int n_bins = 32;
    std::uint64_t seed = 1234;
    double initial_step = 2.0; // voxels of boundary motion
    double final_step = 0.02;
    int max_iterations = 200;         // optimizer sweeps
    double translation_bound = 10.0;  // voxels, per component
    double rotation_bound_deg = 10.0; // per component of the scaled rotation vector

    void validate() const;
};

// Negative mutual information of (ref(x), test(T x)) over a frozen random
// sample of ref voxels. Joint density via Parzen histogram: cubic B-spline
// kernel on the test axis, zero-order on the ref axis; trilinear lookup of the
// test volume. Throws std::runtime_error when fewer than n_bins^2 samples land
// inside the test volume.
double mattes_mi(const Volume& ref, const Volume& test, const RigidTransform3D& T,
                 const MIConfig& cfg);

// Derivative-free regular-step descent over 6 parameters (rotation vector
// scaled so one unit moves the substack boundary about one voxel, plus
// translation), starting at identity, step halved on failure to improve.
// Returns the map from ref coordinates to test coordinates; rotations pivot on
// the substack center.
RigidTransform3D fine_register(const Volume& ref, const Volume& test, const MIConfig& cfg);

// theta2 of the substack's max-entropy threshold pair below 30 (0-255 units).
bool is_black(const Volume& substack);

struct LabeledTransform {
    std::string label; // e.g. "90->0"
    RigidTransform3D transform;
};

// Text format, one transform per line: label + 9 row-major rotation entries +
// 3 translation entries.
void save_transforms(const std::vector<LabeledTransform>& transforms, const std::string& path);
std::vector<LabeledTransform> load_transforms(const std::string& path);
const RigidTransform3D* find_transform(const std::vector<LabeledTransform>& transforms,
                                       const std::string& label);

} // namespace mvcell
