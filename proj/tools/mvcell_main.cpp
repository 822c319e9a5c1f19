// Command-line front end: every subcommand is a thin wrapper over the library.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mvcell/detect.hpp"
#include "mvcell/eval.hpp"
#include "mvcell/fusion.hpp"
#include "mvcell/merge.hpp"
#include "mvcell/phantom.hpp"
#include "mvcell/pipeline.hpp"
#include "mvcell/registration.hpp"
#include "mvcell/semdeconv.hpp"
#include "mvcell/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvcell;

namespace {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return j;
}

void print_score(const Score& s) {
    std::printf("TP %lld FP %lld FN %lld\n", static_cast<long long>(s.tp),
                static_cast<long long>(s.fp), static_cast<long long>(s.fn));
    std::printf("precision %.4f recall %.4f f1 %.4f\n", s.precision, s.recall, s.f1);
}

int cmd_phantom(const std::string& out_dir, int size, int n_somata, double attenuation,
                double background, double noise, double clutter, double saturation,
                std::uint64_t seed) {
    PhantomSpec spec;
    spec.dims = {size, size, size};
    spec.n_somata = n_somata;
    spec.attenuation_length = attenuation > 0.0 ? attenuation
                                                : std::numeric_limits<double>::infinity();
    spec.background_level = background;
    spec.noise_sigma = noise;
    spec.clutter_density = clutter;
    spec.saturation_band_width = saturation;
    spec.rng_seed = seed;
    const PhantomResult phantom = generate_phantom(spec);
    save_phantom(phantom, out_dir);
    std::printf("phantom: %d somata, 4 views of %dx%dx%d -> %s\n",
                static_cast<int>(phantom.truth.size()), size, size, size, out_dir.c_str());
    return 0;
}

int cmd_coarse(const std::string& src, const std::string& dst, const std::string& out,
               const std::string& label, double tol, int iters, std::uint64_t seed) {
    const MarkerList s = load_markers_csv(src);
    const MarkerList d = load_markers_csv(dst);
    const RansacResult r = estimate_rigid_ransac(s, d, tol, iters, seed);
    save_transforms({{label, r.transform}}, out);
    std::printf("coarse: %zu/%zu inliers, mean residual %.4f, max %.4f -> %s\n",
                r.inliers.size(), s.size(), r.mean_residual, r.max_residual, out.c_str());
    return 0;
}

int cmd_fine(const std::string& ref, const std::string& test, const std::string& out,
             const std::string& label, int n_samples, std::uint64_t seed) {
    const Volume vr = load_volume(ref);
    const Volume vt = load_volume(test);
    if (is_black(vr) || is_black(vt)) {
        std::fprintf(stderr, "fine-register: black substack\n");
        return 2;
    }
    MIConfig cfg;
    cfg.n_samples = n_samples;
    cfg.seed = seed;
    const RigidTransform3D T = fine_register(vr, vt, cfg);
    save_transforms({{label, T}}, out);
    std::printf("fine: rotation %.3f deg, translation (%.3f, %.3f, %.3f) -> %s\n",
                T.rotation_angle_deg(), T.translation.x(), T.translation.y(), T.translation.z(),
                out.c_str());
    return 0;
}

int cmd_fuse(const std::string& a, const std::string& b, const std::string& out, int window) {
    const Volume va = load_volume(a);
    const Volume vb = load_volume(b);
    const EntropyMap ha = local_entropy(va, window);
    const EntropyMap hb = local_entropy(vb, window);
    save_volume(fuse_content_based(va, vb, ha, hb), out);
    std::printf("fused -> %s\n", out.c_str());
    return 0;
}

int cmd_make_targets(const std::string& markers, const std::string& out, int sx, int sy, int sz,
                     double sigma) {
    TargetSpec spec;
    spec.sigma = sigma;
    const MarkerList m = load_markers_csv(markers);
    save_volume(make_target(m, {sx, sy, sz}, spec), out);
    std::printf("target (%zu markers) -> %s\n", m.size(), out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path) {
    const json j = load_json(config_path);
    const std::string arch_name = j.value("arch", "columnar");
    const int arity = j.value("arity", 2);
    const int half_width = j.value("half_width", 2);
    const NetArch arch = arch_name == "flat" ? NetArch::Flat : NetArch::Columnar;

    TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.mask_probability = j.value("mask_probability", cfg.mask_probability);
    cfg.soma_fraction = j.value("soma_fraction", cfg.soma_fraction);
    cfg.patches_per_substack = j.value("patches_per_substack", cfg.patches_per_substack);
    cfg.seed = j.value("seed", cfg.seed);

    if (!j.contains("items") || j["items"].empty())
        throw ConfigError("train-sd: config lists no training items");
    std::vector<Volume> storage;
    storage.reserve(j["items"].size() * 3);
    std::vector<TrainItem> items;
    for (const auto& item : j["items"]) {
        TrainItem t;
        storage.push_back(load_volume(item.at("view_a").get<std::string>()));
        t.view_a = &storage.back();
        if (item.contains("view_b")) {
            storage.push_back(load_volume(item.at("view_b").get<std::string>()));
            t.view_b = &storage.back();
        }
        storage.push_back(load_volume(item.at("target").get<std::string>()));
        t.target = &storage.back();
        items.push_back(t);
    }

    PatchNet net = make_patch_net(arch, arity, half_width, j.value("init_seed", 11));
    const TrainStats stats = train(net, items, cfg);
    const std::string out_net = j.value("out_net", "net.bin");
    save_net(net, out_net);
    if (j.contains("loss_csv")) save_loss_curve(stats.loss_curve, j["loss_csv"].get<std::string>());
    std::printf("trained %s net on %zu items: loss %.4f -> %.4f, saved %s\n", arch_name.c_str(),
                items.size(), stats.loss_curve.front(), stats.loss_curve.back(), out_net.c_str());
    return 0;
}

int cmd_deconvolve(const std::string& net_path, const std::string& a, const std::string& b,
                   const std::string& out, int stride) {
    const PatchNet net = load_net(net_path);
    const Volume va = normalize_substack(load_volume(a));
    if (net.arity == 2) {
        if (b.empty()) throw ConfigError("deconvolve: two-view net needs --b");
        const Volume vb = normalize_substack(load_volume(b));
        save_volume(predict_volume(net, va, &vb, stride), out);
    } else {
        save_volume(predict_volume(net, va, nullptr, stride), out);
    }
    std::printf("deconvolved -> %s\n", out.c_str());
    return 0;
}

int cmd_detect(const std::string& in, const std::string& out, double radius,
               const std::string& criterion, double bandwidth) {
    const Volume v = load_volume(in);
    SeedConfig seed_cfg;
    seed_cfg.radius = radius;
    seed_cfg.criterion =
        criterion == "hard" ? SeedConfig::Criterion::Hard : SeedConfig::Criterion::Soft;
    MeanShiftConfig ms_cfg;
    ms_cfg.bandwidth = bandwidth;
    const MarkerList detections = detect_substack(v, seed_cfg, ms_cfg);
    save_markers_csv(detections, out);
    std::printf("detected %zu -> %s\n", detections.size(), out.c_str());
    return 0;
}

int cmd_merge(const std::vector<std::string>& lists, const std::string& t180_path,
              const std::string& out, double corr_dist) {
    if (lists.size() != 4) throw ConfigError("merge: need exactly 4 list paths ('-' for empty)");
    std::array<MarkerList, 4> loaded;
    for (std::size_t i = 0; i < 4; ++i)
        if (lists[i] != "-") loaded[i] = load_markers_csv(lists[i]);
    TransformProvider provider;
    if (!t180_path.empty()) {
        provider = [&]() -> std::optional<RigidTransform3D> {
            const auto ts = load_transforms(t180_path);
            if (const RigidTransform3D* t = find_transform(ts, "180->0")) return *t;
            return ts.empty() ? std::nullopt : std::make_optional(ts.front().transform);
        };
    }
    const FusedLists fused = fuse_substack_lists(loaded, provider, corr_dist);
    save_markers_csv(fused.merged, out);
    std::printf("merged %zu%s -> %s\n", fused.merged.size(),
                fused.used_fallback ? " (fallback concatenation)" : "", out.c_str());
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& truth, double cutoff, int n_mc,
             std::uint64_t seed) {
    const MarkerList p = load_markers_csv(pred);
    const MarkerList t = load_markers_csv(truth);
    const DetectionScore ds = score_detection(p, t, cutoff);
    print_score(ds.score);
    if (ds.score.tp + ds.score.fp + ds.score.fn > 0) {
        const auto ci = f1_confidence_interval(ds.score, n_mc, seed);
        std::printf("f1 95%% CI [%.4f, %.4f]\n", ci.first, ci.second);
    }
    return 0;
}

int cmd_sweep(const std::string& config_path) {
    const json j = load_json(config_path);
    std::vector<SweepCase> cases;
    if (!j.contains("cases") || j["cases"].empty()) throw ConfigError("sweep: no cases");
    for (const auto& c : j["cases"]) {
        SweepCase sc;
        for (const auto& v : c.at("volumes")) sc.volumes.push_back(load_volume(v.get<std::string>()));
        sc.truth = load_markers_csv(c.at("truth").get<std::string>());
        cases.push_back(std::move(sc));
    }
    std::vector<double> r_values, b_values;
    for (const auto& r : j.at("r_values")) r_values.push_back(r.get<double>());
    for (const auto& b : j.at("b_values")) b_values.push_back(b.get<double>());
    SeedConfig seed_cfg;
    MeanShiftConfig ms_cfg;
    const SweepResult result =
        sweep(cases, r_values, b_values, seed_cfg, ms_cfg, j.value("cutoff", 3.5),
              j.value("icp_corr_dist", 3.5), j.value("workers", 1));
    const std::string out_csv = j.value("out_csv", "sweep.csv");
    save_sweep_csv(result, out_csv);
    std::printf("sweep: best (r=%.2f, b=%.2f) f1_glob %.4f f1_loc %.4f -> %s\n", result.best_r,
                result.best_b, result.f1_glob, result.f1_loc, out_csv.c_str());
    return 0;
}

int cmd_pipeline(const std::string& config_path, int workers_override,
                 std::int64_t seed_override, const std::string& mode_override) {
    PipelineConfig cfg = load_pipeline_config(config_path);
    if (workers_override > 0) cfg.workers = workers_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!mode_override.empty()) cfg.mode = parse_sd_mode(mode_override);
    const PipelineOutcome outcome = run_pipeline(cfg);
    std::printf("pipeline: %zu substacks, %zu non-empty, %zu failed, %zu fallback merges\n",
                outcome.substacks_total, outcome.substacks_nonempty, outcome.substacks_failed,
                outcome.fallback_merges);
    std::printf("world list: %zu detections -> %s/world.csv\n", outcome.world.size(),
                cfg.output_dir.c_str());
    if (outcome.score) print_score(*outcome.score);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multiview cell identification pipeline"};
    app.require_subcommand(1);

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic multiview dataset");
    std::string ph_out = "phantom";
    int ph_size = 64, ph_n = 20;
    double ph_att = 0.0, ph_bg = 0.05, ph_noise = 0.01, ph_clutter = 0.0, ph_sat = 0.0;
    std::uint64_t ph_seed = 1;
    phantom->add_option("--out", ph_out, "output directory");
    phantom->add_option("--size", ph_size, "cubic volume side");
    phantom->add_option("--somata", ph_n, "number of somata");
    phantom->add_option("--attenuation", ph_att, "attenuation length in voxels (0 = none)");
    phantom->add_option("--background", ph_bg, "background level");
    phantom->add_option("--noise", ph_noise, "noise sigma");
    phantom->add_option("--clutter", ph_clutter, "clutter density per 1e6 voxels");
    phantom->add_option("--saturation", ph_sat, "saturation band width");
    phantom->add_option("--seed", ph_seed, "rng seed");

    // coarse-register
    auto* coarse = app.add_subcommand("coarse-register", "landmark RANSAC rigid registration");
    std::string co_src, co_dst, co_out = "transform.txt", co_label = "src->dst";
    double co_tol = 3.0;
    int co_iters = 1000;
    std::uint64_t co_seed = 871263;
    coarse->add_option("--src", co_src, "moving landmarks csv")->required();
    coarse->add_option("--dst", co_dst, "reference landmarks csv")->required();
    coarse->add_option("--out", co_out, "output transform file");
    coarse->add_option("--label", co_label, "transform label");
    coarse->add_option("--tol", co_tol, "inlier tolerance (voxels)");
    coarse->add_option("--iters", co_iters, "ransac iterations");
    coarse->add_option("--seed", co_seed, "rng seed");

    // fine-register
    auto* fine = app.add_subcommand("fine-register", "mutual-information substack registration");
    std::string fi_ref, fi_test, fi_out = "fine.txt", fi_label = "fine";
    int fi_samples = 100000;
    std::uint64_t fi_seed = 1234;
    fine->add_option("--ref", fi_ref, "reference substack dir")->required();
    fine->add_option("--test", fi_test, "test substack dir")->required();
    fine->add_option("--out", fi_out, "output transform file");
    fine->add_option("--label", fi_label, "transform label");
    fine->add_option("--samples", fi_samples, "MI sample count");
    fine->add_option("--seed", fi_seed, "MI sampling seed");

    // fuse
    auto* fuse = app.add_subcommand("fuse", "content-based fusion of two aligned views");
    std::string fu_a, fu_b, fu_out = "fused";
    int fu_window = 9;
    fuse->add_option("--a", fu_a, "first view dir")->required();
    fuse->add_option("--b", fu_b, "second view dir")->required();
    fuse->add_option("--out", fu_out, "output volume dir");
    fuse->add_option("--window", fu_window, "entropy window side");

    // make-targets
    auto* targets = app.add_subcommand("make-targets", "build the ideal target volume");
    std::string mt_markers, mt_out = "target";
    int mt_x = 0, mt_y = 0, mt_z = 0;
    double mt_sigma = 3.0;
    targets->add_option("--markers", mt_markers, "soma centers csv")->required();
    targets->add_option("--out", mt_out, "output volume dir");
    targets->add_option("--dx", mt_x, "width")->required();
    targets->add_option("--dy", mt_y, "height")->required();
    targets->add_option("--dz", mt_z, "depth")->required();
    targets->add_option("--sigma", mt_sigma, "target blob sigma");

    // train-sd
    auto* train_cmd = app.add_subcommand("train-sd", "train a semantic deconvolution net");
    std::string tr_config;
    train_cmd->add_option("--config", tr_config, "training config json")->required();

    // deconvolve
    auto* deconv = app.add_subcommand("deconvolve", "apply a net convolutionally");
    std::string de_net, de_a, de_b, de_out = "deconvolved";
    int de_stride = 1;
    deconv->add_option("--net", de_net, "net file")->required();
    deconv->add_option("--a", de_a, "first (or only) view dir")->required();
    deconv->add_option("--b", de_b, "second view dir");
    deconv->add_option("--out", de_out, "output volume dir");
    deconv->add_option("--stride", de_stride, "patch lattice stride");

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "soma detection on a substack");
    std::string dt_in, dt_out = "detections.csv", dt_criterion = "soft";
    double dt_radius = 1.9, dt_bandwidth = 2.5;
    detect_cmd->add_option("--in", dt_in, "substack volume dir")->required();
    detect_cmd->add_option("--out", dt_out, "detections csv");
    detect_cmd->add_option("--radius", dt_radius, "seed ball radius");
    detect_cmd->add_option("--criterion", dt_criterion, "seed criterion: soft|hard");
    detect_cmd->add_option("--bandwidth", dt_bandwidth, "mean-shift bandwidth");

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "five-case fusion of per-pair lists");
    std::vector<std::string> mg_lists;
    std::string mg_t180, mg_out = "merged.csv";
    double mg_corr = 3.5;
    merge_cmd->add_option("--lists", mg_lists, "4 csv paths, '-' for empty")
        ->expected(4)
        ->required();
    merge_cmd->add_option("--t180", mg_t180, "transform file with label 180->0");
    merge_cmd->add_option("--out", mg_out, "merged csv");
    merge_cmd->add_option("--corr-dist", mg_corr, "ICP correspondence cutoff");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score detections against ground truth");
    std::string ev_pred, ev_truth;
    double ev_cutoff = 3.5;
    int ev_mc = 10000;
    std::uint64_t ev_seed = 99;
    eval_cmd->add_option("--pred", ev_pred, "predicted csv")->required();
    eval_cmd->add_option("--truth", ev_truth, "truth csv")->required();
    eval_cmd->add_option("--cutoff", ev_cutoff, "match cutoff (voxels)");
    eval_cmd->add_option("--mc", ev_mc, "Monte-Carlo samples for the CI");
    eval_cmd->add_option("--seed", ev_seed, "CI sampling seed");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "parameter stability sweep");
    std::string sw_config;
    sweep_cmd->add_option("--config", sw_config, "sweep config json")->required();

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "full multiview run");
    std::string pi_config, pi_mode;
    int pi_workers = 0;
    std::int64_t pi_seed = -1;
    pipe->add_option("--config", pi_config, "pipeline config json")->required();
    pipe->add_option("--workers", pi_workers, "worker count override");
    pipe->add_option("--seed", pi_seed, "seed override");
    pipe->add_option("--mode", pi_mode, "SD mode override: svim|ifi|msd");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*phantom)
            return cmd_phantom(ph_out, ph_size, ph_n, ph_att, ph_bg, ph_noise, ph_clutter, ph_sat,
                               ph_seed);
        if (*coarse) return cmd_coarse(co_src, co_dst, co_out, co_label, co_tol, co_iters, co_seed);
        if (*fine) return cmd_fine(fi_ref, fi_test, fi_out, fi_label, fi_samples, fi_seed);
        if (*fuse) return cmd_fuse(fu_a, fu_b, fu_out, fu_window);
        if (*targets) return cmd_make_targets(mt_markers, mt_out, mt_x, mt_y, mt_z, mt_sigma);
        if (*train_cmd) return cmd_train(tr_config);
        if (*deconv) return cmd_deconvolve(de_net, de_a, de_b, de_out, de_stride);
        if (*detect_cmd) return cmd_detect(dt_in, dt_out, dt_radius, dt_criterion, dt_bandwidth);
        if (*merge_cmd) return cmd_merge(mg_lists, mg_t180, mg_out, mg_corr);
        if (*eval_cmd) return cmd_eval(ev_pred, ev_truth, ev_cutoff, ev_mc, ev_seed);
        if (*sweep_cmd) return cmd_sweep(sw_config);
        if (*pipe) return cmd_pipeline(pi_config, pi_workers, pi_seed, pi_mode);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
