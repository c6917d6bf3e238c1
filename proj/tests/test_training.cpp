#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cns/training.hpp"
#include "doctest.h"

using namespace cns;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.batch_envs = 4;
    cfg.hidden = 16;
    cfg.scene.n_points_min = 8;
    cfg.scene.n_points_max = 32;
    cfg.total_env_steps = 4 * 200;
    cfg.tbptt_window = 10;
    cfg.verbose = false;
    return cfg;
}

// Mean supervision loss of `params` over a fixed probe set of fresh episodes.
double probe_loss(const PolicyParams& params, const TrainConfig& cfg, uint64_t seed_base,
                  int n_envs, int steps) {
    double total = 0.0;
    long terms = 0;
    for (int e = 0; e < n_envs; ++e) {
        EnvState env = make_env(cfg, params.hidden, seed_base + e);
        for (int s = 0; s < steps; ++s) {
            ServoGraph graph =
                graph_observation(env.ctx, env.current_pose, env.corr, cfg.augment, cfg.dt,
                                  env.rng);
            auto [trace, hidden] = policy_forward(graph, env.hidden, params);
            env.hidden = hidden;
            if (trace.hold) continue;
            const Supervision sup =
                pbvs_supervision(env.current_pose, env.desired_pose, env.scene.center(),
                                 ControlGain{cfg.supervision_lambda});
            total += servo_loss(trace, sup.v_gt_dd).value();
            ++terms;
            env.current_pose =
                se3_step(env.current_pose, decode_velocity(trace.output(), sup.d_gt), cfg.dt);
        }
    }
    REQUIRE(terms > 0);
    return total / terms;
}

}  // namespace

TEST_CASE("make_env: hidden rows match the cluster count, distances are sane") {
    TrainConfig cfg = tiny_config();
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        EnvState env = make_env(cfg, cfg.hidden, seed);
        CHECK(env.hidden.h.rows() == static_cast<int>(env.ctx.clusters.groups.size()));
        CHECK(env.hidden.h.cols() == cfg.hidden);
        for (double v : env.hidden.h.values()) CHECK(v == 0.0);
        CHECK(env.d_gt > 0.1);
        CHECK(env.d_gt < 2.0);
        CHECK(env.step_count == 0);
    }
}

TEST_CASE("make_env: uniform keypoint mode produces a single unclustered scene") {
    TrainConfig cfg = tiny_config();
    cfg.augment.keypoint_mode = KeypointMode::kUniform;
    EnvState env = make_env(cfg, cfg.hidden, 3);
    for (int id : env.scene.cluster_id) CHECK(id == 0);
}

TEST_CASE("should_resample: reached, fresh, and retreated traces") {
    TrainConfig cfg = tiny_config();
    EnvState env = make_env(cfg, cfg.hidden, 7);
    CHECK_FALSE(should_resample(env, cfg));

    EnvState reached = env;
    reached.current_pose = reached.desired_pose;
    CHECK(should_resample(reached, cfg));

    EnvState far = env;
    far.current_pose.translation = 3.0 * far.current_pose.translation.normalized();
    CHECK(should_resample(far, cfg));

    EnvState capped = env;
    capped.step_count = cfg.max_episode_steps;
    CHECK(should_resample(capped, cfg));
}

TEST_CASE("rollout_step: deterministic loss trajectory across identical runs") {
    TrainConfig cfg = tiny_config();

    auto run = [&] {
        Rng prng(99);
        PolicyParams params = PolicyParams::create(cfg.hidden, prng);
        std::vector<EnvState> envs;
        uint64_t counter = 0;
        for (int i = 0; i < cfg.batch_envs; ++i) envs.push_back(make_env(cfg, cfg.hidden, ++counter));
        RolloutStats stats;
        std::vector<double> losses;
        for (int step = 0; step < 15; ++step) {
            for (auto& loss : rollout_step(envs, params, cfg, counter, stats)) {
                losses.push_back(loss.value());
            }
        }
        return losses;
    };

    auto a = run();
    auto b = run();
    REQUIRE(!a.empty());
    CHECK(a == b);
}

TEST_CASE("rollout_step: frozen parameters still move the camera via decoded twists") {
    TrainConfig cfg = tiny_config();
    cfg.augment.mismatch_fraction = 0.0;
    cfg.augment.dropout_mode = DropoutMode::kOff;
    Rng prng(5);
    PolicyParams params = PolicyParams::create(cfg.hidden, prng);
    std::vector<EnvState> envs{make_env(cfg, cfg.hidden, 11)};
    const Pose before = envs[0].current_pose;
    uint64_t counter = 100;
    RolloutStats stats;
    rollout_step(envs, params, cfg, counter, stats);
    const Pose after = envs[0].current_pose;
    CHECK((before.translation - after.translation).norm() +
              (before.rotation - after.rotation).norm() >
          0.0);
}

TEST_CASE("detached hidden state blocks gradients into earlier windows") {
    TrainConfig cfg = tiny_config();
    Rng prng(6);
    PolicyParams params = PolicyParams::create(cfg.hidden, prng);
    std::vector<EnvState> envs{make_env(cfg, cfg.hidden, 21)};
    uint64_t counter = 200;
    RolloutStats stats;

    // First window.
    for (int i = 0; i < 3; ++i) rollout_step(envs, params, cfg, counter, stats);
    ad::Tensor h_before = envs[0].hidden.h;
    envs[0].hidden.h = envs[0].hidden.h.detach();

    // Second window: backprop must stop at the detach point.
    auto losses = rollout_step(envs, params, cfg, counter, stats);
    REQUIRE(!losses.empty());
    std::vector<ad::Tensor> trainable = params.parameters();
    ad::zero_grad(trainable);
    ad::backward(losses[0]);
    for (double gv : h_before.grad()) CHECK(gv == 0.0);
}

TEST_CASE("train: deterministic log and improvement over the random initialization") {
    TrainConfig cfg = tiny_config();
    cfg.total_env_steps = 4 * 600;
    cfg.seed = 12345;

    TrainResult r1 = train(cfg);
    TrainResult r2 = train(cfg);
    REQUIRE(!r1.log.empty());
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].mean_loss == r2.log[i].mean_loss);
        CHECK(r1.log[i].env_steps == r2.log[i].env_steps);
    }
    CHECK(r1.env_steps >= cfg.total_env_steps);
}

TEST_CASE("train: learning rate follows the cosine schedule down") {
    TrainConfig cfg = tiny_config();
    cfg.total_env_steps = 4 * 400;
    TrainResult result = train(cfg);
    REQUIRE(result.log.size() >= 2);
    CHECK(result.log.front().learning_rate > result.log.back().learning_rate);
    CHECK(result.log.back().learning_rate >= 0.0);
    CHECK(result.log.front().learning_rate <= cfg.learning_rate);
}

TEST_CASE("checkpoint: save/load reproduces the probe loss bit-exactly") {
    TrainConfig cfg = tiny_config();
    Rng prng(7);
    PolicyParams params = PolicyParams::create(cfg.hidden, prng);

    const std::string dir = "checkpoint_test_tmp";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/policy.ckpt";
    save_checkpoint(path, params, cfg, 1234);
    PolicyParams loaded = load_checkpoint(path);

    const double a = probe_loss(params, cfg, 500, 4, 10);
    const double b = probe_loss(loaded, cfg, 500, 4, 10);
    CHECK(a == b);

    // Manifest is valid JSON with the expected fields.
    std::ifstream ms(path + ".manifest.json");
    REQUIRE(ms.good());
    std::stringstream buf;
    buf << ms.rdbuf();
    const std::string manifest = buf.str();
    CHECK(manifest.find("\"hidden\": 16") != std::string::npos);
    CHECK(manifest.find("\"trained_env_steps\": 1234") != std::string::npos);
    CHECK(manifest.find("randomization_config_hash") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train: short run lowers the probe loss below a random initialization") {
    TrainConfig cfg = tiny_config();
    cfg.batch_envs = 16;
    cfg.hidden = 32;
    cfg.total_env_steps = 16 * 1500;
    cfg.seed = 77;

    Rng prng(4242);
    PolicyParams random_init = PolicyParams::create(cfg.hidden, prng);
    const double before = probe_loss(random_init, cfg, 900, 6, 15);

    TrainResult result = train(cfg);
    const double after = probe_loss(result.params, cfg, 900, 6, 15);
    CHECK(after < before);
}
