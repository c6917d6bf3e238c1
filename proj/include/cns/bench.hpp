#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cns/control.hpp"
#include "cns/correspondence.hpp"
#include "cns/policy.hpp"
#include "cns/scene.hpp"

namespace cns {

enum class ControllerKind { kCns, kPbvs, kIbvs };

std::string controller_name(ControllerKind kind);
ControllerKind controller_from_name(const std::string& name);

struct BenchmarkConfig {
    uint64_t seed_begin = 0;
    uint64_t seed_count = 50;
    double re_success_deg = 3.0;
    double te_success_mm = 30.0;
    double stop_threshold = 5e-4;  // normalized-plane keypoint error
    int stop_patience = 20;
    double dt = 0.04;
    int max_steps = 1000;
    double lambda = 2.0;           // PBVS / IBVS gain
    double distance_prior_m = 0.0; // 0: use the ground-truth scene distance
    bool augment_enabled = true;   // false: clean, ideal correspondence
    AugmentConfig augment;
    SceneConfig scene;
    PoseSamplingConfig initial_pose = initial_pose_config();
    PoseSamplingConfig desired_pose = desired_pose_config();
    bool ibvs_true_depth = true;
    double ibvs_const_depth_m = 0.7;
    bool record_timing = false;    // timings break byte reproducibility
    int threads = 1;
};

struct EpisodeRecord {
    std::string controller;
    uint64_t seed = 0;
    double initial_re_deg = 0.0, initial_te_mm = 0.0;
    double final_re_deg = 0.0, final_te_mm = 0.0;
    int steps = 0;
    bool success = false;
    double mct_ms = 0.0;
    std::vector<Pose> trajectory;        // filled only when requested
    std::vector<double> keypoint_error;  // per-step mean error, when requested
    std::vector<double> re_history_deg;
    std::vector<double> te_history_mm;
};

struct EpisodeOptions {
    bool keep_trajectory = false;
    int trajectory_stride = 10;
};

EpisodeRecord run_episode(const BenchmarkConfig& cfg, ControllerKind controller,
                          const PolicyParams* params, uint64_t seed,
                          const EpisodeOptions& options = {});

std::vector<EpisodeRecord> run_suite(const BenchmarkConfig& cfg, ControllerKind controller,
                                     const PolicyParams* params = nullptr);

struct MetricStat {
    double mean = 0.0, stddev = 0.0;
    int count = 0;
};

struct Summary {
    int episodes = 0, successes = 0;
    double sr_percent = 0.0, sr_ci_low = 0.0, sr_ci_high = 0.0;
    MetricStat ts;      // steps to convergence, successful episodes
    MetricStat re_deg;  // final rotation error, successful episodes
    MetricStat te_mm;   // final translation error, successful episodes
    MetricStat mct_ms;  // controller compute per frame, all episodes
};

/// SR with a 95% Wald interval clamped to [0, 100]; TS/RE/TE over
/// successful episodes, mCT over all.
Summary aggregate(const std::vector<EpisodeRecord>& records);

void write_csv(std::ostream& os, const std::vector<EpisodeRecord>& records);
std::vector<EpisodeRecord> read_csv(std::istream& is);
void write_summary_json(std::ostream& os, const Summary& summary);

/// Simple static SVG line plot of one or more named series.
struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};
void write_svg_plot(std::ostream& os, const std::string& title,
                    const std::vector<PlotSeries>& series, int width = 720, int height = 420);

}  // namespace cns
