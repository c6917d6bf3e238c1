#include "cns/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cns {

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

Scene sample_scene_for_mode(const TrainConfig& cfg, Rng& rng) {
    if (cfg.augment.keypoint_mode == KeypointMode::kUniform) {
        // Uniform mode: all points scattered in the scene cylinder.
        std::uniform_int_distribution<int> un(cfg.scene.n_points_min, cfg.scene.n_points_max);
        const int n = un(rng);
        const double r = cfg.scene.scene_radius_m;
        Scene scene;
        scene.radius_m = r;
        scene.points = sample_cylinder(n, Eigen::Vector3d::Zero(), 0.5 * r, r, r, rng);
        scene.cluster_id.assign(n, 0);
        return scene;
    }
    return sample_scene(cfg.scene, rng);
}

double in_view_fraction(const GraphContext& ctx, const Pose& pose) {
    const Projection proj = project(ctx.camera, pose, ctx.scene.points);
    if (proj.in_view.empty()) return 0.0;
    const auto visible = std::count(proj.in_view.begin(), proj.in_view.end(), true);
    return static_cast<double>(visible) / static_cast<double>(proj.in_view.size());
}

}  // namespace

EnvState make_env(const TrainConfig& cfg, int hidden_width, uint64_t episode_seed) {
    EnvState env;
    env.episode_seed = episode_seed;
    env.rng.seed(episode_seed);
    env.scene = sample_scene_for_mode(cfg, env.rng);
    std::tie(env.current_pose, env.desired_pose) =
        sample_pose_pair(cfg.initial_pose, cfg.desired_pose, env.rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (cfg.near_start_prob > 0.0 && unit(env.rng) < cfg.near_start_prob) {
        // Square the draw so small-error starts are over-represented; the
        // speed head needs dense coverage near the goal to learn to slow down.
        const double x = unit(env.rng);
        const double u = 0.05 + 0.95 * x * x;
        const Eigen::Vector3d aa =
            axis_angle(env.desired_pose.rotation.transpose() * env.current_pose.rotation);
        env.current_pose.rotation = env.desired_pose.rotation * rotation_exp(u * aa);
        env.current_pose.translation =
            env.desired_pose.translation +
            u * (env.current_pose.translation - env.desired_pose.translation);
    }
    env.ctx = GraphContext::create(env.scene, CameraModel{}, env.desired_pose);
    env.corr = CorrState::init(env.scene.size(), env.current_pose, env.scene.radius_m, env.rng);
    env.hidden = HiddenState::zeros(env.ctx.clusters.groups.size(), hidden_width);
    env.d_gt = env.desired_pose.to_camera(env.scene.center()).norm();
    env.step_count = 0;
    return env;
}

bool should_resample(const EnvState& env, const TrainConfig& cfg) {
    if (env.step_count >= cfg.max_episode_steps) return true;
    const double re = rotation_error_deg(env.current_pose, env.desired_pose);
    const double te = translation_error_mm(env.current_pose, env.desired_pose);
    if (re < 1.0 && te < 10.0) return true;  // reached
    const double d = env.current_pose.to_camera(env.scene.center()).norm();
    if (d < 0.1 || d > 2.0) return true;  // too close or too far
    if (in_view_fraction(env.ctx, env.current_pose) < 0.25) return true;
    return false;
}

std::vector<Tensor> rollout_step(std::vector<EnvState>& envs, const PolicyParams& params,
                                 const TrainConfig& cfg, uint64_t& episode_counter,
                                 RolloutStats& stats) {
    std::vector<Tensor> losses;
    for (auto& env : envs) {
        ServoGraph graph =
            graph_observation(env.ctx, env.current_pose, env.corr, cfg.augment, cfg.dt, env.rng);
        auto [trace, hidden] = policy_forward(graph, env.hidden, params);
        env.hidden = hidden;

        const Supervision sup =
            pbvs_supervision(env.current_pose, env.desired_pose, env.scene.center(),
                             ControlGain{cfg.supervision_lambda});
        Twist twist;  // hold step: zero twist
        if (!trace.hold) {
            Tensor loss = servo_loss(trace, sup.v_gt_dd);
            stats.mean_loss += loss.value();
            ++stats.loss_terms;
            losses.push_back(loss);
            twist = decode_velocity(trace.output(), sup.d_gt);
        }
        std::bernoulli_distribution use_expert(cfg.expert_action_prob);
        if (use_expert(env.rng)) {
            twist.nu = sup.v_gt_dd.head<3>() * sup.d_gt;
            twist.omega = sup.v_gt_dd.tail<3>();
        }
        env.current_pose = se3_step(env.current_pose, twist, cfg.dt);
        ++env.step_count;

        if (should_resample(env, cfg)) {
            stats.resampled_re_deg.push_back(
                rotation_error_deg(env.current_pose, env.desired_pose));
            stats.resampled_te_mm.push_back(
                translation_error_mm(env.current_pose, env.desired_pose));
            env = make_env(cfg, params.hidden, mix_seed(cfg.seed, ++episode_counter));
        }
    }
    return losses;
}

TrainResult train(const TrainConfig& cfg, const std::function<void(const TrainLogEntry&)>& on_log) {
    Rng init_rng(mix_seed(cfg.seed, 0xC0FFEE));
    PolicyParams params = PolicyParams::create(cfg.hidden, init_rng);
    std::vector<Tensor> trainable = params.parameters();
    ad::AdamState adam;

    uint64_t episode_counter = 0;
    std::vector<EnvState> envs;
    envs.reserve(cfg.batch_envs);
    for (int i = 0; i < cfg.batch_envs; ++i) {
        envs.push_back(make_env(cfg, cfg.hidden, mix_seed(cfg.seed, ++episode_counter)));
    }

    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        log_file.open(cfg.out_dir + "/train_log.csv");
        log_file << "env_steps,updates,mean_loss,mean_final_re_deg,mean_final_te_mm,lr\n";
    }

    TrainResult result{std::move(params), {}, 0};
    long env_steps = 0;
    long updates = 0;
    std::vector<Tensor> window_losses;
    RolloutStats stats;

    while (env_steps < cfg.total_env_steps) {
        auto losses = rollout_step(envs, result.params, cfg, episode_counter, stats);
        window_losses.insert(window_losses.end(), losses.begin(), losses.end());
        env_steps += cfg.batch_envs;

        const bool window_done =
            (env_steps / cfg.batch_envs) % cfg.tbptt_window == 0 && !window_losses.empty();
        if (!window_done) continue;

        Tensor total = window_losses[0];
        for (size_t i = 1; i < window_losses.size(); ++i) total = ad::add(total, window_losses[i]);
        Tensor mean_loss = ad::scale(total, 1.0 / static_cast<double>(window_losses.size()));

        if (!std::isfinite(mean_loss.value())) {
            // Skip the update and restart every environment in the window.
            ad::zero_grad(trainable);
            window_losses.clear();
            for (auto& env : envs) {
                env = make_env(cfg, cfg.hidden, mix_seed(cfg.seed, ++episode_counter));
            }
            if (cfg.verbose) {
                std::cerr << "train: non-finite loss at step " << env_steps
                          << ", update skipped\n";
            }
            continue;
        }

        ad::backward(mean_loss);
        const double progress =
            static_cast<double>(env_steps) / static_cast<double>(cfg.total_env_steps);
        ad::AdamConfig adam_cfg;
        adam_cfg.lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
        ad::adam_step(trainable, adam, adam_cfg);
        ad::zero_grad(trainable);
        ++updates;
        window_losses.clear();

        // Detach hidden states so gradients stop at the window boundary.
        for (auto& env : envs) env.hidden.h = env.hidden.h.detach();

        TrainLogEntry entry;
        entry.env_steps = env_steps;
        entry.updates = updates;
        entry.mean_loss = stats.loss_terms > 0 ? stats.mean_loss / stats.loss_terms : 0.0;
        entry.learning_rate = adam_cfg.lr;
        if (!stats.resampled_re_deg.empty()) {
            entry.mean_final_re_deg =
                std::accumulate(stats.resampled_re_deg.begin(), stats.resampled_re_deg.end(),
                                0.0) /
                stats.resampled_re_deg.size();
            entry.mean_final_te_mm =
                std::accumulate(stats.resampled_te_mm.begin(), stats.resampled_te_mm.end(), 0.0) /
                stats.resampled_te_mm.size();
        }
        result.log.push_back(entry);
        stats = RolloutStats{};
        if (on_log) on_log(entry);
        if (log_file.is_open()) {
            log_file << entry.env_steps << ',' << entry.updates << ',' << entry.mean_loss << ','
                     << entry.mean_final_re_deg << ',' << entry.mean_final_te_mm << ','
                     << entry.learning_rate << '\n';
            log_file.flush();
        }
        if (!cfg.out_dir.empty() && updates % cfg.checkpoint_every_updates == 0) {
            save_checkpoint(cfg.out_dir + "/policy.ckpt", result.params, cfg, env_steps);
        }
    }

    result.env_steps = env_steps;
    if (!cfg.out_dir.empty()) {
        save_checkpoint(cfg.out_dir + "/policy.ckpt", result.params, cfg, env_steps);
    }
    return result;
}

void save_checkpoint(const std::string& path, const PolicyParams& params, const TrainConfig& cfg,
                     long env_steps) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    params.save(os);

    nlohmann::json manifest;
    manifest["hidden"] = params.hidden;
    manifest["trained_env_steps"] = env_steps;
    manifest["seed"] = cfg.seed;
    manifest["augment"] = {
        {"mismatch_fraction", cfg.augment.mismatch_fraction},
        {"dropout_fraction", cfg.augment.dropout_fraction},
        {"dropout_mode", cfg.augment.dropout_mode == DropoutMode::kUniform  ? "uniform"
                         : cfg.augment.dropout_mode == DropoutMode::kWeighted ? "weighted"
                                                                              : "off"},
        {"keypoint_mode",
         cfg.augment.keypoint_mode == KeypointMode::kClustered ? "clustered" : "uniform"},
    };
    std::vector<std::string> layer_names;
    for (const auto& [name, t] : params.named_parameters()) layer_names.push_back(name);
    manifest["layers"] = layer_names;
    std::hash<std::string> hasher;
    std::ostringstream cfg_text;
    cfg_text << cfg.scene.n_points_min << ' ' << cfg.scene.n_points_max << ' '
             << cfg.scene.scene_radius_m << ' ' << cfg.augment.mismatch_fraction << ' '
             << cfg.augment.dropout_fraction;
    manifest["randomization_config_hash"] = hasher(cfg_text.str());

    std::ofstream ms(path + ".manifest.json");
    ms << manifest.dump(2) << '\n';
}

PolicyParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    return PolicyParams::load(is);
}

}  // namespace cns
