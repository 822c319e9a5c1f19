#include "mvcell/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvcell/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvcell {

SdMode parse_sd_mode(const std::string& name) {
    if (name == "svim" || name == "SVIM") return SdMode::SVIM;
    if (name == "ifi" || name == "IFI") return SdMode::IFI;
    if (name == "msd" || name == "MSD") return SdMode::MSD;
    throw ConfigError("unknown SD mode: " + name);
}

void PipelineConfig::validate() const {
    if (views_dir.empty() || output_dir.empty())
        throw ConfigError("pipeline config: views_dir and output_dir are required");
    if (!fs::exists(views_dir)) throw ConfigError("pipeline config: missing views_dir " + views_dir);
    if (mode == SdMode::MSD) {
        if (pair_net_path.empty() || !fs::exists(pair_net_path))
            throw ConfigError("pipeline config: MSD mode needs an existing pair net");
    } else {
        if (single_net_path.empty() || !fs::exists(single_net_path))
            throw ConfigError("pipeline config: SVIM/IFI modes need an existing single-view net");
    }
    if (!truth_csv.empty() && !fs::exists(truth_csv))
        throw ConfigError("pipeline config: missing truth csv " + truth_csv);
    if (workers < 1) throw ConfigError("pipeline config: workers must be >= 1");
    if (overlap < 0) throw ConfigError("pipeline config: negative overlap");
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    PipelineConfig cfg;
    try {
        cfg.views_dir = j.value("views_dir", "");
        cfg.output_dir = j.value("output_dir", "");
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            if (g.contains("substack")) {
                cfg.substack_dims = {g["substack"][0].get<int>(), g["substack"][1].get<int>(),
                                     g["substack"][2].get<int>()};
            }
            cfg.overlap = g.value("overlap", cfg.overlap);
        }
        if (j.contains("registration")) {
            const auto& r = j["registration"];
            cfg.mi.n_samples = r.value("n_samples", cfg.mi.n_samples);
            cfg.mi.n_bins = r.value("n_bins", cfg.mi.n_bins);
            cfg.mi.initial_step = r.value("initial_step", cfg.mi.initial_step);
            cfg.mi.final_step = r.value("final_step", cfg.mi.final_step);
            cfg.mi.max_iterations = r.value("max_iterations", cfg.mi.max_iterations);
            cfg.mi.translation_bound = r.value("translation_bound", cfg.mi.translation_bound);
            cfg.mi.rotation_bound_deg = r.value("rotation_bound_deg", cfg.mi.rotation_bound_deg);
            cfg.ransac_tol = r.value("ransac_tol", cfg.ransac_tol);
            cfg.ransac_iters = r.value("ransac_iters", cfg.ransac_iters);
        }
        if (j.contains("sd")) {
            const auto& s = j["sd"];
            cfg.mode = parse_sd_mode(s.value("mode", "msd"));
            cfg.single_net_path = s.value("single_net", "");
            cfg.pair_net_path = s.value("pair_net", "");
            cfg.sd_stride = s.value("stride", cfg.sd_stride);
        }
        if (j.contains("detect")) {
            const auto& d = j["detect"];
            cfg.seed_cfg.radius = d.value("seed_radius", cfg.seed_cfg.radius);
            const std::string crit = d.value("criterion", "soft");
            cfg.seed_cfg.criterion =
                crit == "hard" ? SeedConfig::Criterion::Hard : SeedConfig::Criterion::Soft;
            cfg.ms_cfg.bandwidth = d.value("bandwidth", cfg.ms_cfg.bandwidth);
            cfg.ms_cfg.epsilon = d.value("epsilon", cfg.ms_cfg.epsilon);
            cfg.ms_cfg.max_iterations = d.value("max_iterations", cfg.ms_cfg.max_iterations);
            cfg.ms_cfg.collapse_distance =
                d.value("collapse_distance", cfg.ms_cfg.collapse_distance);
        }
        if (j.contains("merge")) {
            const auto& m = j["merge"];
            cfg.icp_corr_dist = m.value("icp_corr_dist", cfg.icp_corr_dist);
            cfg.d_star = m.value("d_star", cfg.d_star);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            cfg.truth_csv = e.value("truth", "");
            cfg.eval_cutoff = e.value("cutoff", cfg.eval_cutoff);
        }
        cfg.workers = j.value("workers", cfg.workers);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    return cfg;
}

std::vector<LabeledTransform> coarse_register_views(const std::map<int, MarkerList>& landmarks,
                                                    double ransac_tol, int ransac_iters,
                                                    std::uint64_t seed) {
    auto estimate = [&](int from, int to) -> RigidTransform3D {
        const auto src = landmarks.find(from);
        const auto dst = landmarks.find(to);
        if (src == landmarks.end() || dst == landmarks.end() || src->second.size() < 3 ||
            dst->second.size() < 3 || src->second.size() != dst->second.size())
            return RigidTransform3D::identity();
        return estimate_rigid_ransac(src->second, dst->second, ransac_tol, ransac_iters, seed)
            .transform;
    };
    const RigidTransform3D t90_0 = estimate(90, 0);
    const RigidTransform3D t270_0 = estimate(270, 0);
    const RigidTransform3D t180_90 = estimate(180, 90);
    // Opposite views share too little content for direct landmarks; compose
    // through the 90-degree view instead.
    const RigidTransform3D t180_0 = compose(t180_90, t90_0);
    return {{"90->0", t90_0}, {"270->0", t270_0}, {"180->90", t180_90}, {"180->0", t180_0}};
}

namespace {

struct SubstackResult {
    MarkerList fused;
    bool fallback = false;
    bool failed = false;
    std::string log;
};

MarkerList detect_on(const Volume& v, const PipelineConfig& cfg) {
    return detect_substack(v, cfg.seed_cfg, cfg.ms_cfg);
}

MarkerList process_pair(const Volume& ref, const Volume& mov, const PipelineConfig& cfg,
                        const PatchNet* single_net, const PatchNet* pair_net,
                        std::uint64_t mi_seed, int* n_black) {
    const bool ref_black = is_black(ref);
    const bool mov_black = is_black(mov);
    if (ref_black && mov_black) {
        if (n_black) *n_black += 1;
        return {};
    }
    RigidTransform3D T = RigidTransform3D::identity();
    if (!ref_black && !mov_black) {
        MIConfig mi = cfg.mi;
        mi.seed = mi_seed;
        try {
            T = fine_register(ref, mov, mi);
        } catch (const std::runtime_error&) {
            T = RigidTransform3D::identity(); // overlap too small: keep coarse alignment
        }
    }
    const Volume aligned = resample(mov, invert(T), ref.dims);
    const SdOutput sd = sd_pipelines(ref, aligned, cfg.mode, single_net, pair_net, cfg.sd_stride);
    if (cfg.mode == SdMode::SVIM) {
        const MarkerList la = detect_on(sd.volumes[0], cfg);
        const MarkerList lb = detect_on(sd.volumes[1], cfg);
        return icp_merge(la, lb, cfg.icp_corr_dist).merged;
    }
    return detect_on(sd.volumes[0], cfg);
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t x = base ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

} // namespace

PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);

    // Load views and landmarks.
    std::map<int, Volume> views;
    std::map<int, MarkerList> landmarks;
    for (int angle : {0, 90, 180, 270}) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03d", angle);
        const fs::path vdir = fs::path(cfg.views_dir) / name;
        if (!fs::exists(vdir)) throw ConfigError("missing view directory: " + vdir.string());
        views.emplace(angle, load_volume(vdir.string()));
        char lm[48];
        std::snprintf(lm, sizeof(lm), "landmarks_%03d.csv", angle);
        const fs::path lpath = fs::path(cfg.views_dir) / lm;
        if (fs::exists(lpath)) landmarks.emplace(angle, load_markers_csv(lpath.string()));
    }
    const Dim3 dims = views.at(0).dims;
    for (const auto& [angle, v] : views)
        if (!(v.dims == dims)) throw ConfigError("views disagree on dims");

    // Nets.
    PatchNet single_net, pair_net;
    const PatchNet* single_ptr = nullptr;
    const PatchNet* pair_ptr = nullptr;
    if (cfg.mode == SdMode::MSD) {
        pair_net = load_net(cfg.pair_net_path);
        pair_ptr = &pair_net;
    } else {
        single_net = load_net(cfg.single_net_path);
        single_ptr = &single_net;
    }

    // Coarse registration and alignment into the reference frames. Both
    // reference stacks live in 0-frame coordinates after this step; the
    // 180-reference pairs differ by which intensities drive fine registration.
    const auto coarse = coarse_register_views(landmarks, cfg.ransac_tol, cfg.ransac_iters,
                                              mix_seed(cfg.seed, 17));
    save_transforms(coarse, (fs::path(cfg.output_dir) / "coarse_transforms.txt").string());

    const RigidTransform3D t90_0 = *find_transform(coarse, "90->0");
    const RigidTransform3D t270_0 = *find_transform(coarse, "270->0");
    const RigidTransform3D t180_0 = *find_transform(coarse, "180->0");

    const Volume& v0 = views.at(0);
    const Volume a90 = resample(views.at(90), t90_0, dims);
    const Volume a270 = resample(views.at(270), t270_0, dims);
    const Volume a180 = resample(views.at(180), t180_0, dims);

    const SubstackGrid grid = split_substacks(dims, cfg.substack_dims, cfg.overlap);
    const std::size_t n = grid.count();

    std::vector<SubstackResult> results(n);
    parallel_for_indexed(n, cfg.workers, [&](std::size_t i) {
        SubstackResult& res = results[i];
        try {
            const Volume s0 = extract_substack(v0, grid, i);
            const Volume s90 = extract_substack(a90, grid, i);
            const Volume s270 = extract_substack(a270, grid, i);
            const Volume s180 = extract_substack(a180, grid, i);

            int black_pairs = 0;
            std::array<MarkerList, 4> lists;
            lists[kRef0View90] = process_pair(s0, s90, cfg, single_ptr, pair_ptr,
                                              mix_seed(cfg.seed, i * 8 + 0), &black_pairs);
            lists[kRef0View270] = process_pair(s0, s270, cfg, single_ptr, pair_ptr,
                                               mix_seed(cfg.seed, i * 8 + 1), &black_pairs);
            lists[kRef180View90] = process_pair(s180, s90, cfg, single_ptr, pair_ptr,
                                                mix_seed(cfg.seed, i * 8 + 2), &black_pairs);
            lists[kRef180View270] = process_pair(s180, s270, cfg, single_ptr, pair_ptr,
                                                 mix_seed(cfg.seed, i * 8 + 3), &black_pairs);

            TransformProvider provider = [&]() -> std::optional<RigidTransform3D> {
                if (is_black(s180) || is_black(s0)) return std::nullopt;
                MIConfig mi = cfg.mi;
                mi.seed = mix_seed(cfg.seed, i * 8 + 4);
                try {
                    return fine_register(s180, s0, mi);
                } catch (const std::runtime_error&) {
                    return std::nullopt;
                }
            };
            const FusedLists fused =
                fuse_substack_lists(lists, provider, cfg.icp_corr_dist);
            res.fused = fused.merged;
            res.fallback = fused.used_fallback;
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "substack %04zu: lists %zu/%zu/%zu/%zu black_pairs %d fused %zu%s",
                          i, lists[0].size(), lists[1].size(), lists[2].size(), lists[3].size(),
                          black_pairs, res.fused.size(), res.fallback ? " fallback" : "");
            res.log = buf;
        } catch (const std::exception& e) {
            res.failed = true;
            char buf[200];
            std::snprintf(buf, sizeof(buf), "substack %04zu: FAILED (%s)", i, e.what());
            res.log = buf;
        }
    });

    PipelineOutcome outcome;
    outcome.substacks_total = n;
    std::map<std::size_t, MarkerList> per_substack;
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i].failed) {
            ++outcome.substacks_failed;
        } else if (!results[i].fused.empty()) {
            ++outcome.substacks_nonempty;
            per_substack.emplace(i, results[i].fused);
        }
        if (results[i].fallback) ++outcome.fallback_merges;
        outcome.log.push_back(results[i].log);
    }

    outcome.world = assemble_world(per_substack, grid);
    save_markers_csv(outcome.world, (fs::path(cfg.output_dir) / "world.csv").string());
    save_markers_ply(outcome.world, (fs::path(cfg.output_dir) / "world.ply").string());
    {
        std::ofstream log(fs::path(cfg.output_dir) / "substacks.log");
        for (const auto& line : outcome.log) log << line << '\n';
    }

    if (!cfg.truth_csv.empty()) {
        const MarkerList truth = load_markers_csv(cfg.truth_csv);
        const DetectionScore ds = score_detection(outcome.world, truth, cfg.eval_cutoff);
        outcome.score = ds.score;
        std::ofstream out(fs::path(cfg.output_dir) / "score.txt");
        char buf[200];
        std::snprintf(buf, sizeof(buf), "TP %lld FP %lld FN %lld P %.4f R %.4f F1 %.4f\n",
                      static_cast<long long>(ds.score.tp), static_cast<long long>(ds.score.fp),
                      static_cast<long long>(ds.score.fn), ds.score.precision, ds.score.recall,
                      ds.score.f1);
        out << buf;
    }
    return outcome;
}

} // namespace mvcell
