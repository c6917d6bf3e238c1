#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cns/bench.hpp"
#include "cns/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Configuration problems exit with code 2; everything else that throws is a
// runtime failure and exits with code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int line_of_offset(const std::string& text, size_t byte) {
    int line = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') ++line;
    }
    return line;
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ":" + std::to_string(line_of_offset(text, e.byte)) +
                          ": " + e.what());
    }
}

double want_number(const json& j, const std::string& field) {
    if (!j.is_number()) throw ConfigError("config field '" + field + "': expected a number");
    return j.get<double>();
}

bool want_bool(const json& j, const std::string& field) {
    if (!j.is_boolean()) throw ConfigError("config field '" + field + "': expected a boolean");
    return j.get<bool>();
}

std::string want_string(const json& j, const std::string& field) {
    if (!j.is_string()) throw ConfigError("config field '" + field + "': expected a string");
    return j.get<std::string>();
}

cns::DropoutMode dropout_mode_from(const std::string& name) {
    if (name == "off") return cns::DropoutMode::kOff;
    if (name == "uniform") return cns::DropoutMode::kUniform;
    if (name == "weighted") return cns::DropoutMode::kWeighted;
    throw ConfigError("config field 'dropout_mode': unknown mode '" + name + "'");
}

cns::KeypointMode keypoint_mode_from(const std::string& name) {
    if (name == "clustered") return cns::KeypointMode::kClustered;
    if (name == "uniform") return cns::KeypointMode::kUniform;
    throw ConfigError("config field 'keypoint_mode': unknown mode '" + name + "'");
}

void apply_augment(const json& j, cns::AugmentConfig& cfg) {
    for (const auto& [key, value] : j.items()) {
        if (key == "mismatch_fraction") cfg.mismatch_fraction = want_number(value, key);
        else if (key == "dropout_fraction") cfg.dropout_fraction = want_number(value, key);
        else if (key == "dropout_mode") cfg.dropout_mode = dropout_mode_from(want_string(value, key));
        else if (key == "keypoint_mode") cfg.keypoint_mode = keypoint_mode_from(want_string(value, key));
        else throw ConfigError("config: unknown field 'augment." + key + "'");
    }
}

void apply_scene(const json& j, cns::SceneConfig& cfg) {
    for (const auto& [key, value] : j.items()) {
        if (key == "n_points_min") cfg.n_points_min = static_cast<int>(want_number(value, key));
        else if (key == "n_points_max") cfg.n_points_max = static_cast<int>(want_number(value, key));
        else if (key == "scene_radius_m") cfg.scene_radius_m = want_number(value, key);
        else throw ConfigError("config: unknown field 'scene." + key + "'");
    }
    if (cfg.n_points_min < 4 || cfg.n_points_max < cfg.n_points_min) {
        throw ConfigError("config field 'scene.n_points_min': invalid point-count range");
    }
}

void apply_bench(const json& j, cns::BenchmarkConfig& cfg, std::string& controller) {
    for (const auto& [key, value] : j.items()) {
        if (key == "seed_begin") cfg.seed_begin = static_cast<uint64_t>(want_number(value, key));
        else if (key == "seed_count") cfg.seed_count = static_cast<uint64_t>(want_number(value, key));
        else if (key == "re_success_deg") cfg.re_success_deg = want_number(value, key);
        else if (key == "te_success_mm") cfg.te_success_mm = want_number(value, key);
        else if (key == "stop_threshold") cfg.stop_threshold = want_number(value, key);
        else if (key == "stop_patience") cfg.stop_patience = static_cast<int>(want_number(value, key));
        else if (key == "dt") cfg.dt = want_number(value, key);
        else if (key == "max_steps") cfg.max_steps = static_cast<int>(want_number(value, key));
        else if (key == "lambda") cfg.lambda = want_number(value, key);
        else if (key == "distance_prior_m") cfg.distance_prior_m = want_number(value, key);
        else if (key == "augment_enabled") cfg.augment_enabled = want_bool(value, key);
        else if (key == "record_timing") cfg.record_timing = want_bool(value, key);
        else if (key == "threads") cfg.threads = static_cast<int>(want_number(value, key));
        else if (key == "ibvs_true_depth") cfg.ibvs_true_depth = want_bool(value, key);
        else if (key == "ibvs_const_depth_m") cfg.ibvs_const_depth_m = want_number(value, key);
        else if (key == "controller") controller = want_string(value, key);
        else if (key == "augment") apply_augment(value, cfg.augment);
        else if (key == "scene") apply_scene(value, cfg.scene);
        else throw ConfigError("config: unknown field '" + key + "'");
    }
    if (cfg.re_success_deg <= 0 || cfg.te_success_mm <= 0) {
        throw ConfigError("config field 're_success_deg'/'te_success_mm': thresholds must be > 0");
    }
    if (cfg.dt <= 0) throw ConfigError("config field 'dt': must be > 0");
    if (cfg.max_steps <= 0) throw ConfigError("config field 'max_steps': must be > 0");
    if (cfg.threads <= 0) throw ConfigError("config field 'threads': must be > 0");
}

void apply_train(const json& j, cns::TrainConfig& cfg) {
    for (const auto& [key, value] : j.items()) {
        if (key == "batch_envs") cfg.batch_envs = static_cast<int>(want_number(value, key));
        else if (key == "dt") cfg.dt = want_number(value, key);
        else if (key == "max_episode_steps") cfg.max_episode_steps = static_cast<int>(want_number(value, key));
        else if (key == "tbptt_window") cfg.tbptt_window = static_cast<int>(want_number(value, key));
        else if (key == "learning_rate") cfg.learning_rate = want_number(value, key);
        else if (key == "total_env_steps") cfg.total_env_steps = static_cast<long>(want_number(value, key));
        else if (key == "hidden") cfg.hidden = static_cast<int>(want_number(value, key));
        else if (key == "supervision_lambda") cfg.supervision_lambda = want_number(value, key);
        else if (key == "expert_action_prob") cfg.expert_action_prob = want_number(value, key);
        else if (key == "near_start_prob") cfg.near_start_prob = want_number(value, key);
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(want_number(value, key));
        else if (key == "checkpoint_every_updates") cfg.checkpoint_every_updates = static_cast<long>(want_number(value, key));
        else if (key == "verbose") cfg.verbose = want_bool(value, key);
        else if (key == "augment") apply_augment(value, cfg.augment);
        else if (key == "scene") apply_scene(value, cfg.scene);
        else throw ConfigError("config: unknown field '" + key + "'");
    }
    if (cfg.batch_envs <= 0) throw ConfigError("config field 'batch_envs': must be > 0");
    if (cfg.hidden <= 0) throw ConfigError("config field 'hidden': must be > 0");
    if (cfg.total_env_steps <= 0) throw ConfigError("config field 'total_env_steps': must be > 0");
}

void parse_seed_range(const std::string& text, cns::BenchmarkConfig& cfg) {
    const size_t colon = text.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("--seed-range: expected BEGIN:END, got '" + text + "'");
    }
    try {
        const uint64_t begin = std::stoull(text.substr(0, colon));
        const uint64_t end = std::stoull(text.substr(colon + 1));
        if (end <= begin) throw ConfigError("--seed-range: END must exceed BEGIN");
        cfg.seed_begin = begin;
        cfg.seed_count = end - begin;
    } catch (const std::logic_error&) {
        throw ConfigError("--seed-range: expected BEGIN:END, got '" + text + "'");
    }
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os.good()) throw std::runtime_error("cannot write '" + path.string() + "'");
    return os;
}

struct CommonArgs {
    std::string config_path;
    std::string controller = "pbvs";
    std::string checkpoint;
    std::string out_dir = ".";
    std::string seed_range;
    int threads = 0;
    double distance_prior = -1.0;
};

cns::BenchmarkConfig resolve_bench_config(const CommonArgs& args, std::string& controller) {
    cns::BenchmarkConfig cfg;
    controller = args.controller;
    if (!args.config_path.empty()) apply_bench(load_json(args.config_path), cfg, controller);
    if (!args.seed_range.empty()) parse_seed_range(args.seed_range, cfg);
    if (args.threads > 0) cfg.threads = args.threads;
    if (args.distance_prior >= 0.0) cfg.distance_prior_m = args.distance_prior;
    return cfg;
}

std::optional<cns::PolicyParams> resolve_policy(const CommonArgs& args,
                                                const std::string& controller) {
    if (controller != "cns") return std::nullopt;
    if (args.checkpoint.empty()) {
        throw ConfigError("controller 'cns' requires --checkpoint");
    }
    return cns::load_checkpoint(args.checkpoint);
}

void write_final_error_plot(const fs::path& path,
                            const std::vector<cns::EpisodeRecord>& records) {
    cns::PlotSeries re, te;
    re.label = "final RE (deg)";
    te.label = "final TE (mm)";
    for (size_t i = 0; i < records.size(); ++i) {
        re.x.push_back(static_cast<double>(i));
        re.y.push_back(records[i].final_re_deg);
        te.x.push_back(static_cast<double>(i));
        te.y.push_back(records[i].final_te_mm);
    }
    auto os = open_out(path);
    cns::write_svg_plot(os, "final errors per episode", {re, te});
}

int cmd_run(const CommonArgs& args) {
    std::string controller;
    cns::BenchmarkConfig cfg = resolve_bench_config(args, controller);
    const cns::ControllerKind kind = cns::controller_from_name(controller);
    std::optional<cns::PolicyParams> params = resolve_policy(args, controller);

    const auto records = cns::run_suite(cfg, kind, params ? &*params : nullptr);
    const cns::Summary summary = cns::aggregate(records);

    fs::create_directories(args.out_dir);
    {
        auto os = open_out(fs::path(args.out_dir) / "episodes.csv");
        cns::write_csv(os, records);
    }
    {
        auto os = open_out(fs::path(args.out_dir) / "summary.json");
        cns::write_summary_json(os, summary);
    }
    write_final_error_plot(fs::path(args.out_dir) / "final_errors.svg", records);

    std::cout << controller << ": SR " << summary.sr_percent << "% (" << summary.sr_ci_low
              << ", " << summary.sr_ci_high << ") over " << summary.episodes << " episodes\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    cns::TrainConfig cfg;
    if (!args.config_path.empty()) apply_train(load_json(args.config_path), cfg);
    fs::create_directories(args.out_dir);
    cfg.out_dir = args.out_dir;

    const cns::TrainResult result = cns::train(cfg);
    cns::save_checkpoint((fs::path(args.out_dir) / "policy.ckpt").string(), result.params, cfg,
                         result.env_steps);

    auto os = open_out(fs::path(args.out_dir) / "train_log.csv");
    os << "env_steps,updates,mean_loss,mean_final_re_deg,mean_final_te_mm,learning_rate\n";
    cns::PlotSeries loss;
    loss.label = "mean loss";
    char buf[256];
    for (const auto& entry : result.log) {
        std::snprintf(buf, sizeof(buf), "%ld,%ld,%.6f,%.6f,%.6f,%.8f\n", entry.env_steps,
                      entry.updates, entry.mean_loss, entry.mean_final_re_deg,
                      entry.mean_final_te_mm, entry.learning_rate);
        os << buf;
        loss.x.push_back(static_cast<double>(entry.env_steps));
        loss.y.push_back(entry.mean_loss);
    }
    auto plot = open_out(fs::path(args.out_dir) / "loss.svg");
    cns::write_svg_plot(plot, "training loss", {loss});
    std::cout << "trained " << result.env_steps << " env steps; checkpoint in " << args.out_dir
              << "\n";
    return 0;
}

std::string sanitize(const std::string& value) {
    std::string out = value;
    for (char& c : out) {
        if (c == '.' || c == '/' ) c = '_';
    }
    return out;
}

int cmd_ablate(const CommonArgs& args, const std::string& axis,
               const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("--values: at least one value required");
    fs::create_directories(args.out_dir);

    auto table = open_out(fs::path(args.out_dir) / "ablate.csv");
    table << "axis,value,episodes,successes,sr_percent,sr_ci_low,sr_ci_high,re_deg_mean,"
             "te_mm_mean\n";
    for (const std::string& value : values) {
        std::string controller;
        cns::BenchmarkConfig cfg = resolve_bench_config(args, controller);
        if (axis == "distance-prior") {
            cfg.distance_prior_m = std::stod(value);
        } else if (axis == "dropout") {
            cfg.augment.dropout_mode = dropout_mode_from(value);
        } else if (axis == "mismatch") {
            if (value == "on") cfg.augment.mismatch_fraction = 0.1;
            else if (value == "off") cfg.augment.mismatch_fraction = 0.0;
            else cfg.augment.mismatch_fraction = std::stod(value);
        } else if (axis == "cluster") {
            if (value == "on") cfg.augment.keypoint_mode = cns::KeypointMode::kClustered;
            else if (value == "off") cfg.augment.keypoint_mode = cns::KeypointMode::kUniform;
            else throw ConfigError("--values: cluster axis expects on/off");
        } else {
            throw ConfigError("--axis: unknown axis '" + axis + "'");
        }

        const cns::ControllerKind kind = cns::controller_from_name(controller);
        std::optional<cns::PolicyParams> params = resolve_policy(args, controller);
        const auto records = cns::run_suite(cfg, kind, params ? &*params : nullptr);
        const cns::Summary s = cns::aggregate(records);

        auto os = open_out(fs::path(args.out_dir) /
                           ("summary_" + axis + "_" + sanitize(value) + ".json"));
        cns::write_summary_json(os, s);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%.2f,%.2f,%.2f,%.4f,%.4f\n", axis.c_str(),
                      value.c_str(), s.episodes, s.successes, s.sr_percent, s.sr_ci_low,
                      s.sr_ci_high, s.re_deg.mean, s.te_mm.mean);
        table << buf;
        std::cout << axis << "=" << value << ": SR " << s.sr_percent << "%\n";
    }
    return 0;
}

int cmd_export(const CommonArgs& args, uint64_t seed) {
    std::string controller;
    cns::BenchmarkConfig cfg = resolve_bench_config(args, controller);
    const cns::ControllerKind kind = cns::controller_from_name(controller);
    std::optional<cns::PolicyParams> params = resolve_policy(args, controller);

    cns::EpisodeOptions options;
    options.keep_trajectory = true;
    options.trajectory_stride = 1;
    const cns::EpisodeRecord rec =
        cns::run_episode(cfg, kind, params ? &*params : nullptr, seed, options);

    fs::create_directories(args.out_dir);
    {
        cns::PlotSeries re, te;
        re.label = "RE (deg)";
        te.label = "TE (mm)";
        for (size_t i = 0; i < rec.re_history_deg.size(); ++i) {
            re.x.push_back(static_cast<double>(i));
            re.y.push_back(rec.re_history_deg[i]);
            te.x.push_back(static_cast<double>(i));
            te.y.push_back(rec.te_history_mm[i]);
        }
        auto os = open_out(fs::path(args.out_dir) / "errors.svg");
        cns::write_svg_plot(os, controller + " pose errors, seed " + std::to_string(seed),
                            {re, te});
    }
    {
        cns::PlotSeries xz, xy;
        xz.label = "camera x-z";
        xy.label = "camera x-y";
        for (const cns::Pose& pose : rec.trajectory) {
            xz.x.push_back(pose.translation.x());
            xz.y.push_back(pose.translation.z());
            xy.x.push_back(pose.translation.x());
            xy.y.push_back(pose.translation.y());
        }
        auto os = open_out(fs::path(args.out_dir) / "trajectory.svg");
        cns::write_svg_plot(os, controller + " camera path, seed " + std::to_string(seed),
                            {xz, xy});
    }
    std::cout << "episode seed " << seed << ": " << rec.steps << " steps, final RE "
              << rec.final_re_deg << " deg, TE " << rec.final_te_mm << " mm, "
              << (rec.success ? "success" : "failure") << "\n";
    return 0;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON configuration file");
    cmd->add_option("--controller", args.controller, "cns, pbvs, or ibvs")
        ->check(CLI::IsMember({"cns", "pbvs", "ibvs"}));
    cmd->add_option("--checkpoint", args.checkpoint, "policy checkpoint (required for cns)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed-range", args.seed_range, "episode seeds, BEGIN:END (END exclusive)");
    cmd->add_option("--threads", args.threads, "parallel episode workers");
    cmd->add_option("--distance-prior", args.distance_prior,
                    "scene distance prior in meters (0 = ground truth)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"visual servoing benchmark harness"};
    app.require_subcommand(1);

    CommonArgs run_args, train_args, ablate_args, export_args;
    std::string ablate_axis;
    std::vector<std::string> ablate_values;
    uint64_t export_seed = 0;

    CLI::App* run = app.add_subcommand("run", "run a benchmark suite");
    add_common(run, run_args);
    CLI::App* train = app.add_subcommand("train", "train a policy");
    add_common(train, train_args);
    CLI::App* ablate = app.add_subcommand("ablate", "sweep one configuration axis");
    add_common(ablate, ablate_args);
    ablate->add_option("--axis", ablate_axis, "dropout, mismatch, distance-prior, or cluster")
        ->required();
    ablate->add_option("--values", ablate_values, "comma-separated axis values")
        ->required()
        ->delimiter(',');
    CLI::App* exp = app.add_subcommand("export", "render one episode's plots");
    add_common(exp, export_args);
    exp->add_option("--seed", export_seed, "episode seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (train->parsed()) return cmd_train(train_args);
        if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_axis, ablate_values);
        if (exp->parsed()) return cmd_export(export_args, export_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
