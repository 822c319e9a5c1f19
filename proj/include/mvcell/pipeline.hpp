#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvcell/detect.hpp"
#include "mvcell/eval.hpp"
#include "mvcell/merge.hpp"
#include "mvcell/registration.hpp"
#include "mvcell/semdeconv.hpp"
#include "mvcell/volume.hpp"

namespace mvcell {

// Raised for malformed or inconsistent configuration (CLI exit code 1;
// other failures exit 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    std::string views_dir;
    std::string output_dir;

    Dim3 substack_dims{91, 90, 90};
    int overlap = 16;

    MIConfig mi;
    double ransac_tol = 3.0;
    int ransac_iters = 1000;

    SdMode mode = SdMode::MSD;
    std::string single_net_path; // SVIM / IFI
    std::string pair_net_path;   // MSD
    int sd_stride = 2;

    SeedConfig seed_cfg;
    MeanShiftConfig ms_cfg;

    double icp_corr_dist = 3.5;
    double d_star = 3.0;

    std::string truth_csv; // optional: score the world list against it
    double eval_cutoff = 3.5;

    int workers = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

PipelineConfig load_pipeline_config(const std::string& path);
SdMode parse_sd_mode(const std::string& name);

struct PipelineOutcome {
    MarkerList world;
    std::size_t substacks_total = 0;
    std::size_t substacks_nonempty = 0;
    std::size_t substacks_failed = 0;
    std::size_t fallback_merges = 0;
    std::optional<Score> score;
    std::vector<std::string> log; // one line per substack, index order
};

// Full run: coarse registration (90/270 direct, 180 composed through 90),
// substack split, per-pair black test + fine registration, semantic
// deconvolution per mode, detection, five-case fusion, world assembly and
// optional scoring. Deterministic for a fixed seed regardless of worker count.
PipelineOutcome run_pipeline(const PipelineConfig& cfg);

// Coarse landmark stage shared by the CLI and run_pipeline: estimates
// 90->0, 270->0 and 180->90, composes 180->0. Returns labeled transforms
// ("90->0", "270->0", "180->90", "180->0"). Views with fewer than 3 landmarks
// fall back to identity.
std::vector<LabeledTransform> coarse_register_views(const std::map<int, MarkerList>& landmarks,
                                                    double ransac_tol, int ransac_iters,
                                                    std::uint64_t seed);

} // namespace mvcell
