#include "mvcell/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mvcell/parallel.hpp"
#include "mvcell/rng.hpp"

namespace mvcell {

Score make_score(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    Score s;
    s.tp = tp;
    s.fp = fp;
    s.fn = fn;
    s.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
    s.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
}

DetectionScore score_detection(const MarkerList& predicted, const MarkerList& truth,
                               double cutoff) {
    DetectionScore out;
    out.matches = match_bipartite(truth, predicted, cutoff);
    const std::int64_t tp = static_cast<std::int64_t>(out.matches.pairs.size());
    out.score = make_score(tp, static_cast<std::int64_t>(predicted.size()) - tp,
                           static_cast<std::int64_t>(truth.size()) - tp);
    return out;
}

double voxel_f1(const Volume& deconvolved, const Volume& target, int theta1) {
    if (!(deconvolved.dims == target.dims)) throw std::invalid_argument("voxel_f1: dim mismatch");
    const double cut = theta1 / 255.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < deconvolved.data.size(); ++i) {
        const bool pred = deconvolved.data[i] >= cut;
        const bool pos = target.data[i] > 0.0;
        if (pred && pos)
            ++tp;
        else if (pred && !pos)
            ++fp;
        else if (!pred && pos)
            ++fn;
    }
    return make_score(tp, fp, fn).f1;
}

std::pair<double, double> f1_confidence_interval(const Score& score, int n_mc,
                                                 std::uint64_t seed) {
    if (score.tp + score.fp + score.fn <= 0)
        throw std::invalid_argument("f1_confidence_interval: all counts zero");
    if (n_mc < 2) throw std::invalid_argument("f1_confidence_interval: n_mc too small");
    Rng rng(seed);
    std::vector<double> samples(static_cast<std::size_t>(n_mc));
    for (int i = 0; i < n_mc; ++i) {
        const double p = rng.beta(score.tp + 1.0, score.fp + 1.0);
        const double r = rng.beta(score.tp + 1.0, score.fn + 1.0);
        samples[static_cast<std::size_t>(i)] = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    std::sort(samples.begin(), samples.end());
    auto quantile = [&](double q) {
        const double pos = q * (n_mc - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, samples.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return samples[lo] * (1.0 - frac) + samples[hi] * frac;
    };
    return {quantile(0.025), quantile(0.975)};
}

namespace {

MarkerList detect_case(const SweepCase& c, const SeedConfig& seed_cfg,
                       const MeanShiftConfig& ms_cfg, double icp_corr_dist) {
    if (c.volumes.empty()) throw std::invalid_argument("sweep: case without volumes");
    MarkerList merged = detect_substack(c.volumes[0], seed_cfg, ms_cfg);
    for (std::size_t v = 1; v < c.volumes.size(); ++v) {
        const MarkerList next = detect_substack(c.volumes[v], seed_cfg, ms_cfg);
        merged = icp_merge(merged, next, icp_corr_dist).merged;
    }
    return merged;
}

} // namespace

SweepResult sweep(const std::vector<SweepCase>& cases, const std::vector<double>& r_values,
                  const std::vector<double>& b_values, const SeedConfig& seed_base,
                  const MeanShiftConfig& ms_base, double cutoff, double icp_corr_dist,
                  int workers) {
    if (cases.empty() || r_values.empty() || b_values.empty())
        throw std::invalid_argument("sweep: empty grid or case list");

    const std::size_t n_params = r_values.size() * b_values.size();
    const std::size_t n_cases = cases.size();

    // scores[param][case]
    std::vector<std::vector<Score>> scores(n_params, std::vector<Score>(n_cases));
    parallel_for_indexed(n_params * n_cases, workers, [&](std::size_t task) {
        const std::size_t param = task / n_cases;
        const std::size_t case_i = task % n_cases;
        SeedConfig seed_cfg = seed_base;
        MeanShiftConfig ms_cfg = ms_base;
        seed_cfg.radius = r_values[param / b_values.size()];
        ms_cfg.bandwidth = b_values[param % b_values.size()];
        const MarkerList detections =
            detect_case(cases[case_i], seed_cfg, ms_cfg, icp_corr_dist);
        scores[param][case_i] = score_detection(detections, cases[case_i].truth, cutoff).score;
    });

    SweepResult result;
    result.rows.resize(n_params);
    std::size_t best_param = 0;
    for (std::size_t p = 0; p < n_params; ++p) {
        SweepRow& row = result.rows[p];
        row.r = r_values[p / b_values.size()];
        row.b = b_values[p % b_values.size()];
        std::int64_t tp = 0, fp = 0, fn = 0;
        double f1_sum = 0.0;
        for (const Score& s : scores[p]) {
            tp += s.tp;
            fp += s.fp;
            fn += s.fn;
            f1_sum += s.f1;
        }
        row.pooled = make_score(tp, fp, fn);
        row.mean_f1 = f1_sum / static_cast<double>(n_cases);
        if (tp + fp + fn > 0) {
            const auto ci = f1_confidence_interval(row.pooled);
            row.ci_lo = ci.first;
            row.ci_hi = ci.second;
        }
        if (row.mean_f1 > result.rows[best_param].mean_f1) best_param = p;
    }

    result.best_r = result.rows[best_param].r;
    result.best_b = result.rows[best_param].b;
    result.f1_glob = result.rows[best_param].mean_f1;
    result.pooled_glob = result.rows[best_param].pooled;

    // Per-case optima: the globally best parameters are in every case's
    // candidate set, so the mean of per-case maxima dominates f1_glob.
    double loc_sum = 0.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < n_cases; ++c) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < n_params; ++p)
            if (scores[p][c].f1 > scores[best][c].f1) best = p;
        loc_sum += scores[best][c].f1;
        tp += scores[best][c].tp;
        fp += scores[best][c].fp;
        fn += scores[best][c].fn;
    }
    result.f1_loc = loc_sum / static_cast<double>(n_cases);
    result.pooled_loc = make_score(tp, fp, fn);
    return result;
}

void save_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sweep csv: " + path);
    out << "r,b,precision,recall,f1,ci_lo,ci_hi\n";
    char buf[160];
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.r, row.b,
                      row.pooled.precision, row.pooled.recall, row.pooled.f1, row.ci_lo,
                      row.ci_hi);
        out << buf;
    }
}

} // namespace mvcell
