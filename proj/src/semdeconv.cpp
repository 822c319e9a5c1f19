#include "mvcell/semdeconv.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mvcell/fusion.hpp"
#include "mvcell/rng.hpp"

namespace mvcell {

Volume make_target(const MarkerList& markers, Dim3 dims, const TargetSpec& spec) {
    if (spec.sigma <= 0.0) throw std::invalid_argument("make_target: sigma must be positive");
    Volume out(dims, 0.0);
    const double radius = spec.truncation_radius();
    const double inv2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
    const int r = static_cast<int>(std::ceil(radius));
    for (const auto& m : markers.points) {
        if (!dims.contains(static_cast<int>(std::lround(m.x)), static_cast<int>(std::lround(m.y)),
                           static_cast<int>(std::lround(m.z))))
            throw std::invalid_argument("make_target: marker outside volume");
        const int x0 = std::max(0, static_cast<int>(std::floor(m.x)) - r);
        const int x1 = std::min(dims.x - 1, static_cast<int>(std::ceil(m.x)) + r);
        const int y0 = std::max(0, static_cast<int>(std::floor(m.y)) - r);
        const int y1 = std::min(dims.y - 1, static_cast<int>(std::ceil(m.y)) + r);
        const int z0 = std::max(0, static_cast<int>(std::floor(m.z)) - r);
        const int z1 = std::min(dims.z - 1, static_cast<int>(std::ceil(m.z)) + r);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - m.x, dy = y - m.y, dz = z - m.z;
                    const double d2 = dx * dx + dy * dy + dz * dz;
                    if (d2 > radius * radius) continue;
                    double& v = out.at(x, y, z);
                    v = std::max(v, std::exp(-d2 * inv2s2));
                }
    }
    return out;
}

namespace {

DenseLayer init_layer(int out, int in, Rng& rng) {
    DenseLayer layer;
    layer.W.resize(out, in);
    const double scale = std::sqrt(2.0 / in);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.W(r, c) = scale * rng.normal();
    layer.b = Eigen::VectorXd::Zero(out);
    return layer;
}

} // namespace

PatchNet make_patch_net(NetArch arch, int arity, int half_width, std::uint64_t seed) {
    if (arity != 1 && arity != 2) throw std::invalid_argument("make_patch_net: arity must be 1 or 2");
    if (half_width < 1) throw std::invalid_argument("make_patch_net: half_width must be >= 1");
    if (arch == NetArch::Columnar && arity != 2)
        throw std::invalid_argument("make_patch_net: columnar nets take two views");

    PatchNet net;
    net.arch = arch;
    net.arity = arity;
    net.half_width = half_width;
    const int n3 = net.patch_voxels();
    Rng rng(seed);

    if (arch == NetArch::Flat) {
        const int in = arity * n3;
        net.trunk.push_back(init_layer(4 * n3, in, rng));
        net.trunk.push_back(init_layer(4 * n3, 4 * n3, rng));
        net.trunk.push_back(init_layer(n3, 4 * n3, rng));
    } else {
        net.column_a.push_back(init_layer(2 * n3, n3, rng));
        net.column_b.push_back(init_layer(2 * n3, n3, rng));
        net.trunk.push_back(init_layer(4 * n3, 4 * n3, rng));
        net.trunk.push_back(init_layer(n3, 4 * n3, rng));
    }
    return net;
}

namespace {

inline void relu_inplace(Eigen::MatrixXd& m) { m = m.cwiseMax(0.0); }

inline void logistic_inplace(Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 1.0 / (1.0 + std::exp(-m.data()[i]));
}

struct ForwardPass {
    // Activations after each layer; index 0 is the layer input.
    std::vector<Eigen::MatrixXd> col_a;
    std::vector<Eigen::MatrixXd> col_b;
    std::vector<Eigen::MatrixXd> trunk;
    Eigen::MatrixXd trunk_input;
};

ForwardPass run_forward(const PatchNet& net, const Eigen::MatrixXd& a, const Eigen::MatrixXd* b) {
    if (net.arity == 2 && b == nullptr)
        throw std::invalid_argument("forward: two-view net needs both patches");
    if (net.arity == 1 && b != nullptr)
        throw std::invalid_argument("forward: single-view net takes one patch");
    const int n3 = net.patch_voxels();
    if (a.rows() != n3 || (b && (b->rows() != n3 || b->cols() != a.cols())))
        throw std::invalid_argument("forward: patch dims mismatch");

    ForwardPass fp;
    auto run_column = [](const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& input,
                         std::vector<Eigen::MatrixXd>& acts) {
        acts.push_back(input);
        for (const auto& layer : layers) {
            Eigen::MatrixXd z = layer.W * acts.back();
            z.colwise() += layer.b;
            relu_inplace(z);
            acts.push_back(std::move(z));
        }
    };

    if (net.arch == NetArch::Columnar) {
        run_column(net.column_a, a, fp.col_a);
        run_column(net.column_b, *b, fp.col_b);
        fp.trunk_input.resize(fp.col_a.back().rows() + fp.col_b.back().rows(), a.cols());
        fp.trunk_input << fp.col_a.back(), fp.col_b.back();
    } else if (net.arity == 2) {
        fp.trunk_input.resize(2 * n3, a.cols());
        fp.trunk_input << a, *b;
    } else {
        fp.trunk_input = a;
    }

    fp.trunk.push_back(fp.trunk_input);
    for (std::size_t l = 0; l < net.trunk.size(); ++l) {
        Eigen::MatrixXd z = net.trunk[l].W * fp.trunk.back();
        z.colwise() += net.trunk[l].b;
        if (l + 1 == net.trunk.size())
            logistic_inplace(z);
        else
            relu_inplace(z);
        fp.trunk.push_back(std::move(z));
    }
    return fp;
}

} // namespace

Eigen::MatrixXd forward_batch(const PatchNet& net, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd* b) {
    return run_forward(net, a, b).trunk.back();
}

Eigen::VectorXd forward(const PatchNet& net, const Eigen::VectorXd& patch_a,
                        const Eigen::VectorXd* patch_b) {
    const Eigen::MatrixXd a = patch_a;
    if (patch_b) {
        const Eigen::MatrixXd b = *patch_b;
        return forward_batch(net, a, &b).col(0);
    }
    return forward_batch(net, a, nullptr).col(0);
}

double loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets) {
    if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
        throw std::invalid_argument("loss: shape mismatch");
    double e = 0.0;
    for (Eigen::Index i = 0; i < outputs.size(); ++i) {
        const double f = std::clamp(outputs.data()[i], 1e-7, 1.0 - 1e-7);
        const double y = targets.data()[i];
        e -= y * std::log(f) + (1.0 - y) * std::log(1.0 - f);
    }
    return e;
}

NetGradients loss_gradient(const PatchNet& net, const Eigen::MatrixXd& a,
                           const Eigen::MatrixXd* b, const Eigen::MatrixXd& y,
                           double* loss_out) {
    const ForwardPass fp = run_forward(net, a, b);
    const Eigen::MatrixXd& out = fp.trunk.back();
    if (loss_out) *loss_out = loss(out, y);

    NetGradients g;
    auto zero_like = [](const std::vector<DenseLayer>& layers) {
        std::vector<DenseLayer> out_layers;
        out_layers.reserve(layers.size());
        for (const auto& l : layers)
            out_layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                                  Eigen::VectorXd::Zero(l.b.size())});
        return out_layers;
    };
    g.column_a = zero_like(net.column_a);
    g.column_b = zero_like(net.column_b);
    g.trunk = zero_like(net.trunk);

    // Logistic + cross entropy: dE/dz = F - y.
    Eigen::MatrixXd delta = out - y;
    for (int l = static_cast<int>(net.trunk.size()) - 1; l >= 0; --l) {
        g.trunk[l].W = delta * fp.trunk[l].transpose();
        g.trunk[l].b = delta.rowwise().sum();
        if (l > 0) {
            delta = net.trunk[l].W.transpose() * delta;
            // ReLU mask of the previous layer output.
            const Eigen::MatrixXd& act = fp.trunk[l];
            for (Eigen::Index i = 0; i < delta.size(); ++i)
                if (act.data()[i] <= 0.0) delta.data()[i] = 0.0;
        } else if (net.arch == NetArch::Columnar) {
            delta = net.trunk[0].W.transpose() * delta;
            const Eigen::Index rows_a = fp.col_a.back().rows();
            Eigen::MatrixXd delta_a = delta.topRows(rows_a);
            Eigen::MatrixXd delta_b = delta.bottomRows(delta.rows() - rows_a);
            auto backprop_column = [](const std::vector<DenseLayer>& layers,
                                      const std::vector<Eigen::MatrixXd>& acts,
                                      Eigen::MatrixXd col_delta, std::vector<DenseLayer>& grads) {
                for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
                    const Eigen::MatrixXd& act_out = acts[k + 1];
                    for (Eigen::Index i = 0; i < col_delta.size(); ++i)
                        if (act_out.data()[i] <= 0.0) col_delta.data()[i] = 0.0;
                    grads[k].W = col_delta * acts[k].transpose();
                    grads[k].b = col_delta.rowwise().sum();
                    if (k > 0) col_delta = layers[k].W.transpose() * col_delta;
                }
            };
            backprop_column(net.column_a, fp.col_a, delta_a, g.column_a);
            backprop_column(net.column_b, fp.col_b, delta_b, g.column_b);
        }
    }
    return g;
}

void TrainConfig::validate() const {
    if (mask_probability < 0.0 || mask_probability > 0.5)
        throw std::invalid_argument("TrainConfig: mask_probability must be in [0, 0.5]");
    if (learning_rate <= 0.0 || epochs <= 0 || batch_size <= 0 || patches_per_substack <= 0)
        throw std::invalid_argument("TrainConfig: rates, epochs and sizes must be positive");
    if (soma_fraction < 0.0 || soma_fraction > 1.0)
        throw std::invalid_argument("TrainConfig: soma_fraction must be in [0,1]");
}

namespace {

void copy_patch(const Volume& v, int cx, int cy, int cz, int h, double* dst) {
    std::size_t k = 0;
    for (int dz = -h; dz <= h; ++dz)
        for (int dy = -h; dy <= h; ++dy)
            for (int dx = -h; dx <= h; ++dx) dst[k++] = v.at(cx + dx, cy + dy, cz + dz);
}

struct PatchDataset {
    Eigen::MatrixXd a;
    Eigen::MatrixXd b; // empty for arity-1
    Eigen::MatrixXd y;
};

PatchDataset build_dataset(const PatchNet& net, const std::vector<TrainItem>& items,
                           const TrainConfig& cfg, Rng& rng) {
    const int h = net.half_width;
    const int n3 = net.patch_voxels();
    const bool two_view = net.arity == 2;

    std::vector<std::array<const Volume*, 3>> prepared;
    std::vector<Volume> normalized; // storage for normalized copies
    normalized.reserve(items.size() * 2);
    for (const auto& item : items) {
        if (!item.view_a || !item.target) throw std::invalid_argument("train: missing volumes");
        if (two_view && !item.view_b) throw std::invalid_argument("train: missing second view");
        normalized.push_back(normalize_substack(*item.view_a));
        const Volume* na = &normalized.back();
        const Volume* nb = nullptr;
        if (two_view) {
            normalized.push_back(normalize_substack(*item.view_b));
            nb = &normalized.back();
        }
        prepared.push_back({na, nb, item.target});
    }

    const std::size_t total =
        prepared.size() * static_cast<std::size_t>(cfg.patches_per_substack);
    PatchDataset ds;
    ds.a.resize(n3, static_cast<Eigen::Index>(total));
    if (two_view) ds.b.resize(n3, static_cast<Eigen::Index>(total));
    ds.y.resize(n3, static_cast<Eigen::Index>(total));

    std::size_t col = 0;
    for (const auto& [va, vb, target] : prepared) {
        const Dim3 dims = va->dims;
        if (dims.x < 2 * h + 1 || dims.y < 2 * h + 1 || dims.z < 2 * h + 1)
            throw std::invalid_argument("train: substack smaller than patch");
        // Candidate centers on bright target voxels.
        std::vector<std::int64_t> bright;
        for (std::int64_t i = 0; i < target->dims.voxels(); ++i)
            if (target->data[static_cast<std::size_t>(i)] > 0.5) bright.push_back(i);

        for (int k = 0; k < cfg.patches_per_substack; ++k) {
            int cx, cy, cz;
            const bool soma_centered = !bright.empty() && rng.uniform() < cfg.soma_fraction;
            if (soma_centered) {
                const std::int64_t i = bright[rng.uniform_int(bright.size())];
                cx = static_cast<int>(i % dims.x);
                cy = static_cast<int>((i / dims.x) % dims.y);
                cz = static_cast<int>(i / (static_cast<std::int64_t>(dims.x) * dims.y));
                cx = std::clamp(cx, h, dims.x - 1 - h);
                cy = std::clamp(cy, h, dims.y - 1 - h);
                cz = std::clamp(cz, h, dims.z - 1 - h);
            } else {
                cx = h + static_cast<int>(rng.uniform_int(dims.x - 2 * h));
                cy = h + static_cast<int>(rng.uniform_int(dims.y - 2 * h));
                cz = h + static_cast<int>(rng.uniform_int(dims.z - 2 * h));
            }
            copy_patch(*va, cx, cy, cz, h, ds.a.col(col).data());
            if (two_view) copy_patch(*vb, cx, cy, cz, h, ds.b.col(col).data());
            copy_patch(*target, cx, cy, cz, h, ds.y.col(col).data());
            ++col;
        }
    }
    return ds;
}

void apply_step(std::vector<DenseLayer>& layers, const std::vector<DenseLayer>& grads,
                double step) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].W.noalias() -= step * grads[i].W;
        layers[i].b.noalias() -= step * grads[i].b;
    }
}

} // namespace

TrainStats train(PatchNet& net, const std::vector<TrainItem>& items, const TrainConfig& cfg) {
    cfg.validate();
    if (items.empty()) throw std::invalid_argument("train: empty training set");

    Rng rng(cfg.seed);
    PatchDataset ds = build_dataset(net, items, cfg, rng);
    const Eigen::Index total = ds.a.cols();
    const int n3 = net.patch_voxels();
    const bool two_view = net.arity == 2;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);

    TrainStats stats;
    double lr = cfg.learning_rate;
    Eigen::MatrixXd batch_a(n3, cfg.batch_size), batch_b(n3, cfg.batch_size),
        batch_y(n3, cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates shuffle with the deterministic engine.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start + cfg.batch_size <= total; start += cfg.batch_size) {
            const int bs = cfg.batch_size;
            for (int k = 0; k < bs; ++k) {
                const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
                batch_a.col(k) = ds.a.col(src);
                if (two_view) batch_b.col(k) = ds.b.col(src);
                batch_y.col(k) = ds.y.col(src);
                ++stats.presented;
                if (two_view) {
                    const double u = rng.uniform();
                    if (u < cfg.mask_probability) {
                        batch_b.col(k).setZero();
                        ++stats.masked_b;
                    } else if (u < 2.0 * cfg.mask_probability) {
                        batch_a.col(k).setZero();
                        ++stats.masked_a;
                    }
                }
            }
            double batch_loss = 0.0;
            const NetGradients g =
                loss_gradient(net, batch_a, two_view ? &batch_b : nullptr, batch_y, &batch_loss);
            epoch_loss += batch_loss;
            const double step = lr / bs;
            apply_step(net.column_a, g.column_a, step);
            apply_step(net.column_b, g.column_b, step);
            apply_step(net.trunk, g.trunk, step);
        }
        const Eigen::Index used = (total / cfg.batch_size) * cfg.batch_size;
        stats.loss_curve.push_back(used > 0 ? epoch_loss / static_cast<double>(used) : 0.0);
        lr *= cfg.lr_decay;
    }
    return stats;
}

Volume normalize_substack(const Volume& v) {
    double lo = 1.0, hi = 0.0;
    for (double x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    Volume out(v.dims, 0.0, v.voxel_size);
    if (hi > lo) {
        const double scale = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = (v.data[i] - lo) * scale;
    }
    return out;
}

Volume predict_volume(const PatchNet& net, const Volume& view_a, const Volume* view_b,
                      int stride) {
    if (stride < 1) throw std::invalid_argument("predict_volume: stride must be >= 1");
    if (net.arity == 2) {
        if (!view_b) throw std::invalid_argument("predict_volume: two-view net needs both views");
        if (!(view_a.dims == view_b->dims))
            throw std::invalid_argument("predict_volume: view dims mismatch");
    } else if (view_b) {
        throw std::invalid_argument("predict_volume: single-view net takes one view");
    }
    const int h = net.half_width;
    const int side = net.patch_side();
    const Dim3 dims = view_a.dims;
    if (dims.x < side || dims.y < side || dims.z < side)
        throw std::invalid_argument("predict_volume: substack smaller than patch");
    // Strides beyond the patch side would leave voxels uncovered.
    const int s = std::min(stride, side);

    auto lattice = [&](int extent) {
        std::vector<int> centers;
        for (int c = h;; c += s) {
            if (c >= extent - 1 - h) {
                centers.push_back(extent - 1 - h);
                break;
            }
            centers.push_back(c);
        }
        return centers;
    };
    const auto cx = lattice(dims.x);
    const auto cy = lattice(dims.y);
    const auto cz = lattice(dims.z);

    Volume sum(dims, 0.0, view_a.voxel_size);
    std::vector<std::int32_t> count(static_cast<std::size_t>(dims.voxels()), 0);

    const int n3 = net.patch_voxels();
    const int batch_cap = 256;
    Eigen::MatrixXd batch_a(n3, batch_cap), batch_b(n3, batch_cap);
    std::vector<std::array<int, 3>> centers;
    centers.reserve(batch_cap);

    auto flush = [&]() {
        if (centers.empty()) return;
        const Eigen::Index bs = static_cast<Eigen::Index>(centers.size());
        const Eigen::MatrixXd a_block = batch_a.leftCols(bs);
        Eigen::MatrixXd out;
        if (net.arity == 2) {
            const Eigen::MatrixXd b_block = batch_b.leftCols(bs);
            out = forward_batch(net, a_block, &b_block);
        } else {
            out = forward_batch(net, a_block, nullptr);
        }
        for (Eigen::Index k = 0; k < bs; ++k) {
            const auto [px, py, pz] = centers[static_cast<std::size_t>(k)];
            std::size_t idx = 0;
            for (int dz = -h; dz <= h; ++dz)
                for (int dy = -h; dy <= h; ++dy)
                    for (int dx = -h; dx <= h; ++dx) {
                        const std::size_t vi = sum.index(px + dx, py + dy, pz + dz);
                        sum.data[vi] += out(static_cast<Eigen::Index>(idx), k);
                        ++count[vi];
                        ++idx;
                    }
        }
        centers.clear();
    };

    for (int iz : cz)
        for (int iy : cy)
            for (int ix : cx) {
                const Eigen::Index k = static_cast<Eigen::Index>(centers.size());
                copy_patch(view_a, ix, iy, iz, h, batch_a.col(k).data());
                if (net.arity == 2) copy_patch(*view_b, ix, iy, iz, h, batch_b.col(k).data());
                centers.push_back({ix, iy, iz});
                if (centers.size() == static_cast<std::size_t>(batch_cap)) flush();
            }
    flush();

    for (std::size_t i = 0; i < sum.data.size(); ++i)
        if (count[i] > 0) sum.data[i] /= static_cast<double>(count[i]);
    return sum;
}

SdOutput sd_pipelines(const Volume& view_a, const Volume& view_b, SdMode mode,
                      const PatchNet* single_net, const PatchNet* pair_net, int stride) {
    SdOutput out;
    switch (mode) {
        case SdMode::SVIM: {
            if (!single_net || single_net->arity != 1)
                throw std::invalid_argument("sd_pipelines: SVIM needs a single-view net");
            const Volume na = normalize_substack(view_a);
            const Volume nb = normalize_substack(view_b);
            out.volumes.push_back(predict_volume(*single_net, na, nullptr, stride));
            out.volumes.push_back(predict_volume(*single_net, nb, nullptr, stride));
            break;
        }
        case SdMode::IFI: {
            if (!single_net || single_net->arity != 1)
                throw std::invalid_argument("sd_pipelines: IFI needs a single-view net");
            const EntropyMap ha = local_entropy(view_a);
            const EntropyMap hb = local_entropy(view_b);
            const Volume fused = fuse_content_based(view_a, view_b, ha, hb);
            out.volumes.push_back(
                predict_volume(*single_net, normalize_substack(fused), nullptr, stride));
            break;
        }
        case SdMode::MSD: {
            if (!pair_net || pair_net->arity != 2)
                throw std::invalid_argument("sd_pipelines: MSD needs a two-view net");
            const Volume na = normalize_substack(view_a);
            const Volume nb = normalize_substack(view_b);
            out.volumes.push_back(predict_volume(*pair_net, na, &nb, stride));
            break;
        }
    }
    return out;
}

namespace {

void write_layer(std::ofstream& out, const DenseLayer& layer, char activation) {
    const std::int32_t rows = static_cast<std::int32_t>(layer.W.rows());
    const std::int32_t cols = static_cast<std::int32_t>(layer.W.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.put(activation);
    for (std::int32_t r = 0; r < rows; ++r)
        for (std::int32_t c = 0; c < cols; ++c) {
            const double v = layer.W(r, c);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    out.write(reinterpret_cast<const char*>(layer.b.data()),
              static_cast<std::streamsize>(sizeof(double) * layer.b.size()));
}

DenseLayer read_layer(std::ifstream& in, char expect_activation) {
    std::int32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    const char act = static_cast<char>(in.get());
    if (!in || rows <= 0 || cols <= 0 || act != expect_activation)
        throw std::runtime_error("load_net: malformed layer header");
    DenseLayer layer;
    layer.W.resize(rows, cols);
    for (std::int32_t r = 0; r < rows; ++r)
        for (std::int32_t c = 0; c < cols; ++c) {
            double v = 0.0;
            in.read(reinterpret_cast<char*>(&v), 8);
            layer.W(r, c) = v;
        }
    layer.b.resize(rows);
    in.read(reinterpret_cast<char*>(layer.b.data()),
            static_cast<std::streamsize>(sizeof(double) * rows));
    if (!in) throw std::runtime_error("load_net: truncated layer");
    return layer;
}

constexpr char kNetMagic[8] = {'M', 'V', 'S', 'D', 'N', 'E', 'T', '1'};

} // namespace

void save_net(const PatchNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write net: " + path);
    out.write(kNetMagic, 8);
    out.put(static_cast<char>(net.arch));
    out.put(static_cast<char>(net.arity));
    const std::int32_t h = net.half_width;
    out.write(reinterpret_cast<const char*>(&h), 4);
    auto write_group = [&](const std::vector<DenseLayer>& layers, bool logistic_last) {
        const std::int32_t n = static_cast<std::int32_t>(layers.size());
        out.write(reinterpret_cast<const char*>(&n), 4);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const bool last = logistic_last && i + 1 == layers.size();
            write_layer(out, layers[i], last ? 's' : 'r');
        }
    };
    write_group(net.column_a, false);
    write_group(net.column_b, false);
    write_group(net.trunk, true);
    if (!out) throw std::runtime_error("short write on net: " + path);
}

PatchNet load_net(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read net: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kNetMagic, 8) != 0)
        throw std::runtime_error("load_net: bad magic in " + path);
    PatchNet net;
    net.arch = static_cast<NetArch>(in.get());
    net.arity = in.get();
    std::int32_t h = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    net.half_width = h;
    auto read_group = [&](std::vector<DenseLayer>& layers, bool logistic_last) {
        std::int32_t n = 0;
        in.read(reinterpret_cast<char*>(&n), 4);
        if (!in || n < 0 || n > 64) throw std::runtime_error("load_net: bad layer count");
        for (std::int32_t i = 0; i < n; ++i) {
            const bool last = logistic_last && i + 1 == n;
            layers.push_back(read_layer(in, last ? 's' : 'r'));
        }
    };
    read_group(net.column_a, false);
    read_group(net.column_b, false);
    read_group(net.trunk, true);
    return net;
}

void save_loss_curve(const std::vector<double>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss curve: " + path);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
}

} // namespace mvcell
