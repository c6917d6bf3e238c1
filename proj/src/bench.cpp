#include "cns/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cns/graph.hpp"
#include "json.hpp"

namespace cns {

std::string controller_name(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::kCns: return "cns";
        case ControllerKind::kPbvs: return "pbvs";
        case ControllerKind::kIbvs: return "ibvs";
    }
    return "unknown";
}

ControllerKind controller_from_name(const std::string& name) {
    if (name == "cns") return ControllerKind::kCns;
    if (name == "pbvs") return ControllerKind::kPbvs;
    if (name == "ibvs") return ControllerKind::kIbvs;
    throw std::invalid_argument("unknown controller: " + name);
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

double mean_keypoint_error(const ServoGraph& graph) {
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < graph.num_keypoints(); ++i) {
        if (!graph.visible[i]) continue;
        total += (graph.current_kp[i] - graph.desired_kp[i]).norm();
        ++count;
    }
    return count > 0 ? total / count : std::numeric_limits<double>::infinity();
}

std::vector<double> point_depths(const Scene& scene, const Pose& pose) {
    std::vector<double> depths(scene.size());
    for (size_t i = 0; i < scene.size(); ++i) {
        depths[i] = pose.to_camera(scene.points[i]).z();
    }
    return depths;
}

}  // namespace

EpisodeRecord run_episode(const BenchmarkConfig& cfg, ControllerKind controller,
                          const PolicyParams* params, uint64_t seed,
                          const EpisodeOptions& options) {
    if (controller == ControllerKind::kCns && params == nullptr) {
        throw std::invalid_argument("run_episode: cns controller requires policy parameters");
    }
    Rng rng(mix_seed(seed, 0xB5EDA4));
    const Scene scene = sample_scene(cfg.scene, rng);
    auto [current, desired] = sample_pose_pair(cfg.initial_pose, cfg.desired_pose, rng);
    const GraphContext ctx = GraphContext::create(scene, CameraModel{}, desired);
    CorrState corr = CorrState::init(scene.size(), current, scene.radius_m, rng);
    HiddenState hidden =
        params ? HiddenState::zeros(ctx.clusters.groups.size(), params->hidden) : HiddenState{};
    const double d_gt = desired.to_camera(scene.center()).norm();
    const double d_prior = cfg.distance_prior_m > 0 ? cfg.distance_prior_m : d_gt;

    EpisodeRecord rec;
    rec.controller = controller_name(controller);
    rec.seed = seed;
    rec.initial_re_deg = rotation_error_deg(current, desired);
    rec.initial_te_mm = translation_error_mm(current, desired);

    StoppingMonitor monitor(cfg.stop_threshold, cfg.stop_patience);
    double compute_ns = 0.0;
    int compute_frames = 0;

    int step = 0;
    for (; step < cfg.max_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        ServoGraph graph =
            cfg.augment_enabled
                ? graph_observation(ctx, current, corr, cfg.augment, cfg.dt, rng)
                : graph_observation_clean(ctx, current);

        Twist twist;
        switch (controller) {
            case ControllerKind::kPbvs:
                twist = pbvs(current, desired, ControlGain{cfg.lambda});
                break;
            case ControllerKind::kIbvs: {
                std::vector<double> depths;
                if (cfg.ibvs_true_depth) {
                    depths = point_depths(scene, current);
                } else {
                    depths.assign(scene.size(), cfg.ibvs_const_depth_m);
                }
                twist = ibvs(graph.current_kp, graph.desired_kp, graph.visible, depths,
                             ControlGain{cfg.lambda})
                            .twist;
                break;
            }
            case ControllerKind::kCns: {
                ad::NoGradGuard inference;
                auto [trace, new_hidden] = policy_forward(graph, hidden, *params);
                hidden = new_hidden;
                twist = decode_velocity(trace.output(), d_prior);
                break;
            }
        }
        if (cfg.record_timing) {
            compute_ns += std::chrono::duration<double, std::nano>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            ++compute_frames;
        }

        if (options.keep_trajectory) {
            if (step % options.trajectory_stride == 0) rec.trajectory.push_back(current);
            rec.keypoint_error.push_back(mean_keypoint_error(graph));
            rec.re_history_deg.push_back(rotation_error_deg(current, desired));
            rec.te_history_mm.push_back(translation_error_mm(current, desired));
        }

        current = se3_step(current, twist, cfg.dt);
        if (monitor.push(mean_keypoint_error(graph))) {
            ++step;
            break;
        }
    }

    rec.steps = step;
    rec.final_re_deg = rotation_error_deg(current, desired);
    rec.final_te_mm = translation_error_mm(current, desired);
    rec.success = rec.final_re_deg < cfg.re_success_deg && rec.final_te_mm < cfg.te_success_mm;
    rec.mct_ms = compute_frames > 0 ? compute_ns / compute_frames * 1e-6 : 0.0;
    if (options.keep_trajectory) rec.trajectory.push_back(current);
    return rec;
}

std::vector<EpisodeRecord> run_suite(const BenchmarkConfig& cfg, ControllerKind controller,
                                     const PolicyParams* params) {
    std::vector<EpisodeRecord> records(cfg.seed_count);
    const int threads = std::max(1, cfg.threads);
    auto worker = [&](uint64_t begin, uint64_t end) {
        for (uint64_t i = begin; i < end; ++i) {
            const uint64_t seed = cfg.seed_begin + i;
            try {
                records[i] = run_episode(cfg, controller, params, seed);
            } catch (const std::exception& e) {
                records[i].controller = controller_name(controller);
                records[i].seed = seed;
                records[i].success = false;
                records[i].final_re_deg = std::numeric_limits<double>::quiet_NaN();
                records[i].final_te_mm = std::numeric_limits<double>::quiet_NaN();
            }
        }
    };
    if (threads == 1) {
        worker(0, cfg.seed_count);
    } else {
        std::vector<std::thread> pool;
        const uint64_t chunk = (cfg.seed_count + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const uint64_t begin = t * chunk;
            const uint64_t end = std::min<uint64_t>(begin + chunk, cfg.seed_count);
            if (begin >= end) break;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    return records;
}

namespace {

MetricStat stat_of(const std::vector<double>& xs) {
    MetricStat s;
    s.count = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
    return s;
}

}  // namespace

Summary aggregate(const std::vector<EpisodeRecord>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    Summary s;
    s.episodes = static_cast<int>(records.size());
    std::vector<double> ts, re, te, mct;
    for (const auto& r : records) {
        if (r.success) {
            ++s.successes;
            ts.push_back(static_cast<double>(r.steps));
            re.push_back(r.final_re_deg);
            te.push_back(r.final_te_mm);
        }
        mct.push_back(r.mct_ms);
    }
    const double p = static_cast<double>(s.successes) / s.episodes;
    const double half = 1.96 * std::sqrt(p * (1.0 - p) / s.episodes);
    s.sr_percent = 100.0 * p;
    s.sr_ci_low = std::clamp(100.0 * (p - half), 0.0, 100.0);
    s.sr_ci_high = std::clamp(100.0 * (p + half), 0.0, 100.0);
    s.ts = stat_of(ts);
    s.re_deg = stat_of(re);
    s.te_mm = stat_of(te);
    s.mct_ms = stat_of(mct);
    return s;
}

void write_csv(std::ostream& os, const std::vector<EpisodeRecord>& records) {
    os << "controller,seed,initial_re_deg,initial_te_mm,final_re_deg,final_te_mm,steps,success,"
          "mct_ms\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f,%.6f,%.6f,%d,%d,%.6f\n",
                      r.controller.c_str(), static_cast<unsigned long long>(r.seed),
                      r.initial_re_deg, r.initial_te_mm, r.final_re_deg, r.final_te_mm, r.steps,
                      r.success ? 1 : 0, r.mct_ms);
        os << buf;
    }
}

std::vector<EpisodeRecord> read_csv(std::istream& is) {
    std::vector<EpisodeRecord> records;
    std::string line;
    if (!std::getline(is, line)) return records;  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        EpisodeRecord r;
        std::string field;
        std::getline(ss, r.controller, ',');
        std::getline(ss, field, ',');
        r.seed = std::stoull(field);
        std::getline(ss, field, ',');
        r.initial_re_deg = std::stod(field);
        std::getline(ss, field, ',');
        r.initial_te_mm = std::stod(field);
        std::getline(ss, field, ',');
        r.final_re_deg = std::stod(field);
        std::getline(ss, field, ',');
        r.final_te_mm = std::stod(field);
        std::getline(ss, field, ',');
        r.steps = std::stoi(field);
        std::getline(ss, field, ',');
        r.success = field == "1";
        std::getline(ss, field, ',');
        r.mct_ms = std::stod(field);
        records.push_back(std::move(r));
    }
    return records;
}

void write_summary_json(std::ostream& os, const Summary& s) {
    nlohmann::json j;
    j["episodes"] = s.episodes;
    j["successes"] = s.successes;
    j["sr_percent"] = s.sr_percent;
    j["sr_ci_95"] = {s.sr_ci_low, s.sr_ci_high};
    auto stat = [](const MetricStat& m) {
        return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}, {"count", m.count}};
    };
    j["ts_steps"] = stat(s.ts);
    j["re_deg"] = stat(s.re_deg);
    j["te_mm"] = stat(s.te_mm);
    j["mct_ms"] = stat(s.mct_ms);
    os << j.dump(2) << '\n';
}

void write_svg_plot(std::ostream& os, const std::string& title,
                    const std::vector<PlotSeries>& series, int width, int height) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (double x : s.x) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
        for (double y : s.y) {
            if (!std::isfinite(y)) continue;
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (!std::isfinite(xmin) || xmin == xmax) {
        xmin = 0;
        xmax = 1;
    }
    if (!std::isfinite(ymin) || ymin == ymax) {
        ymin = 0;
        ymax = 1;
    }
    const int margin = 50;
    auto sx = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto sy = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
       << title << "</text>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
       << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    char label[64];
    std::snprintf(label, sizeof(label), "%.3g", ymax);
    os << "<text x=\"4\" y=\"" << margin << "\" font-size=\"11\">" << label << "</text>\n";
    std::snprintf(label, sizeof(label), "%.3g", ymin);
    os << "<text x=\"4\" y=\"" << height - margin << "\" font-size=\"11\">" << label
       << "</text>\n";
    std::snprintf(label, sizeof(label), "%.3g", xmax);
    os << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 16
       << "\" font-size=\"11\" text-anchor=\"end\">" << label << "</text>\n";
    for (size_t k = 0; k < series.size(); ++k) {
        os << "<polyline fill=\"none\" stroke=\"" << kColors[k % 5]
           << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[k].x.size(); ++i) {
            if (!std::isfinite(series[k].y[i])) continue;
            os << sx(series[k].x[i]) << ',' << sy(series[k].y[i]) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * k
           << "\" font-size=\"11\" fill=\"" << kColors[k % 5] << "\">" << series[k].label
           << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace cns
