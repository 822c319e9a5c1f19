#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvcell/volume.hpp"

namespace mvcell {

// Ideal-image construction: truncated Gaussian blobs around soma centers.
struct TargetSpec {
    double sigma = 3.0;
    double truncation_radius() const { return 2.0 * sigma / 3.0; }
};

// Each marker contributes exp(-d^2 / 2 sigma^2) within the truncation radius;
// overlaps take the voxel-wise maximum.
Volume make_target(const MarkerList& markers, Dim3 dims, const TargetSpec& spec);

enum class NetArch : std::uint8_t { Flat = 0, Columnar = 1 };

struct DenseLayer {
    Eigen::MatrixXd W; // out x in
    Eigen::VectorXd b;
};

// Patch-to-patch MLP. Hidden layers are rectifiers, the output layer is
// logistic with one unit per patch voxel. Flat: the (concatenated) input feeds
// a single trunk. Columnar: each view first passes through its own column;
// the concatenated column outputs feed the trunk.
struct PatchNet {
    NetArch arch = NetArch::Flat;
    int arity = 2;      // number of input views
    int half_width = 2; // patch side = 2h+1
    std::vector<DenseLayer> column_a;
    std::vector<DenseLayer> column_b;
    std::vector<DenseLayer> trunk;

    int patch_side() const { return 2 * half_width + 1; }
    int patch_voxels() const { return patch_side() * patch_side() * patch_side(); }
};

// Default shapes: flat nets use two hidden layers of 4n^3 units; columnar nets
// use one hidden layer of 2n^3 units per view column and a 4n^3 merge layer.
PatchNet make_patch_net(NetArch arch, int arity, int half_width, std::uint64_t seed);

// Gradient holder, same shapes as the net's layers.
struct NetGradients {
    std::vector<DenseLayer> column_a;
    std::vector<DenseLayer> column_b;
    std::vector<DenseLayer> trunk;
};

// Single-patch evaluation; inputs are length-n^3 vectors, outputs in (0,1).
Eigen::VectorXd forward(const PatchNet& net, const Eigen::VectorXd& patch_a,
                        const Eigen::VectorXd* patch_b = nullptr);
// Batched evaluation: one patch per column.
Eigen::MatrixXd forward_batch(const PatchNet& net, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd* b = nullptr);

// Summed cross entropy -sum[y log F + (1-y) log(1-F)]; outputs clamped to
// [1e-7, 1-1e-7] before the logs.
double loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets);

// Analytic gradient of loss(forward_batch(net,a,b), y) w.r.t. all weights.
NetGradients loss_gradient(const PatchNet& net, const Eigen::MatrixXd& a,
                           const Eigen::MatrixXd* b, const Eigen::MatrixXd& y,
                           double* loss_out = nullptr);

struct TrainConfig {
    double learning_rate = 0.05;
    double lr_decay = 0.97; // per epoch
    int epochs = 15;
    int batch_size = 32;
    double mask_probability = 0.2; // per view; an example masks at most one view
    double soma_fraction = 0.5;    // fraction of patches centered on bright target voxels
    int patches_per_substack = 1500;
    std::uint64_t seed = 7;

    void validate() const;
};

struct TrainItem {
    const Volume* view_a = nullptr;
    const Volume* view_b = nullptr; // null for arity-1 nets
    const Volume* target = nullptr;
};

struct TrainStats {
    std::vector<double> loss_curve; // mean per-example loss per epoch
    std::int64_t presented = 0;
    std::int64_t masked_a = 0;
    std::int64_t masked_b = 0;
};

// Minibatch SGD on patches sampled from the substacks; with probability
// mask_probability per view, an example sees that view's patch zeroed.
TrainStats train(PatchNet& net, const std::vector<TrainItem>& items, const TrainConfig& cfg);

// Convolutional application: the net is evaluated on patches centered on a
// stride lattice (final positions clamped to keep full coverage) and each
// voxel averages every prediction that covers it.
Volume predict_volume(const PatchNet& net, const Volume& view_a, const Volume* view_b,
                      int stride = 1);

// Affine rescale of a substack to [0,1] (contrast equalization ahead of the
// net); constant substacks map to zero.
Volume normalize_substack(const Volume& v);

enum class SdMode { SVIM, IFI, MSD };

struct SdOutput {
    // SVIM: one deconvolved volume per view; IFI and MSD: a single volume.
    std::vector<Volume> volumes;
};

// Dispatcher over the three multiview strategies. `single_net` must have
// arity 1 (used by SVIM and IFI), `pair_net` arity 2 (used by MSD).
SdOutput sd_pipelines(const Volume& view_a, const Volume& view_b, SdMode mode,
                      const PatchNet* single_net, const PatchNet* pair_net, int stride = 1);

void save_net(const PatchNet& net, const std::string& path);
PatchNet load_net(const std::string& path);

void save_loss_curve(const std::vector<double>& curve, const std::string& path);

} // namespace mvcell
