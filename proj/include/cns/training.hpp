#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cns/control.hpp"
#include "cns/correspondence.hpp"
#include "cns/graph.hpp"
#include "cns/policy.hpp"
#include "cns/scene.hpp"

namespace cns {

struct TrainConfig {
    int batch_envs = 64;
    double dt = 0.04;
    int max_episode_steps = 500;
    int tbptt_window = 20;
    double learning_rate = 1e-3;
    long total_env_steps = 3200000;
    int hidden = 64;
    double supervision_lambda = 1.0;
    // Chance that an env advances on the expert twist instead of the policy's.
    // Mixing keeps the visited states near expert descent paths while still
    // exposing the policy to its own drift.
    double expert_action_prob = 0.0;
    // Chance that an episode starts partway between the desired pose and the
    // sampled initial pose (interpolation factor uniform in [0.05, 1]), so
    // small-error states are visited from the first update onward and the
    // speed head learns to slow down near the goal.
    double near_start_prob = 0.0;
    AugmentConfig augment;
    SceneConfig scene;
    PoseSamplingConfig initial_pose = initial_pose_config();
    PoseSamplingConfig desired_pose = desired_pose_config();
    uint64_t seed = 0;
    long checkpoint_every_updates = 500;
    std::string out_dir;  // empty: no files written
    bool verbose = true;
};

struct EnvState {
    Scene scene;
    Pose desired_pose;
    Pose current_pose;
    GraphContext ctx;
    CorrState corr;
    HiddenState hidden;
    int step_count = 0;
    uint64_t episode_seed = 0;
    Rng rng;
    double d_gt = 0.0;
};

/// Fresh episode: new scene, pose pair, correspondence state, zero hidden.
EnvState make_env(const TrainConfig& cfg, int hidden_width, uint64_t episode_seed);

/// Episode termination: desired pose reached, ill-posed camera (too close,
/// too far, or most keypoints out of view), or step cap hit.
bool should_resample(const EnvState& env, const TrainConfig& cfg);

struct RolloutStats {
    double mean_loss = 0.0;
    int loss_terms = 0;
    std::vector<double> resampled_re_deg;
    std::vector<double> resampled_te_mm;
};

struct TrainLogEntry {
    long env_steps = 0;
    long updates = 0;
    double mean_loss = 0.0;
    double mean_final_re_deg = 0.0;
    double mean_final_te_mm = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    PolicyParams params;
    std::vector<TrainLogEntry> log;
    long env_steps = 0;
};

/// Advance every environment one step with the current policy, collecting
/// per-step supervision losses. Returns the loss tensors of this step.
std::vector<Tensor> rollout_step(std::vector<EnvState>& envs, const PolicyParams& params,
                                 const TrainConfig& cfg, uint64_t& episode_counter,
                                 RolloutStats& stats);

/// On-policy training with truncated backpropagation through time.
TrainResult train(const TrainConfig& cfg,
                  const std::function<void(const TrainLogEntry&)>& on_log = {});

/// Checkpoint plus text manifest (hidden width, env steps, config hash).
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const TrainConfig& cfg, long env_steps);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace cns
