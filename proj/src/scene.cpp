#include "cns/scene.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cns {

PoseSamplingConfig initial_pose_config() {
    PoseSamplingConfig cfg;
    cfg.theta_min_deg = 30.0;
    cfg.theta_max_deg = 90.0;
    cfg.perturb_max_deg = Eigen::Vector3d(10.0, 10.0, 60.0);
    return cfg;
}

PoseSamplingConfig desired_pose_config() {
    PoseSamplingConfig cfg;
    cfg.theta_min_deg = 70.0;
    cfg.theta_max_deg = 90.0;
    cfg.perturb_max_deg = Eigen::Vector3d(5.0, 5.0, 15.0);
    return cfg;
}

std::vector<Eigen::Vector3d> sample_cylinder(int n, const Eigen::Vector3d& center,
                                             double h, double a, double b, Rng& rng) {
    if (n < 0 || !(h > 0) || !(a > 0) || !(b > 0)) {
        throw std::invalid_argument("sample_cylinder: invalid cylinder");
    }
    std::uniform_real_distribution<double> ux(-a, a), uy(-b, b), uz(-h / 2, h / 2);
    std::vector<Eigen::Vector3d> out;
    out.reserve(n);
    while (static_cast<int>(out.size()) < n) {
        const double x = ux(rng), y = uy(rng);
        if ((x / a) * (x / a) + (y / b) * (y / b) > 1.0) continue;  // rejection on the ellipse
        out.emplace_back(center + Eigen::Vector3d(x, y, uz(rng)));
    }
    return out;
}

namespace {

bool inside_scene_cylinder(const Eigen::Vector3d& p, double r) {
    return (p.x() / r) * (p.x() / r) + (p.y() / r) * (p.y() / r) <= 1.0 &&
           std::abs(p.z()) <= 0.25 * r;
}

}  // namespace

Eigen::Matrix3d random_rotation(Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    return q.toRotationMatrix();
}

Scene sample_scene(const SceneConfig& cfg, Rng& rng) {
    if (cfg.n_points_min < 1 || cfg.n_points_max > 10000 || cfg.n_points_min > cfg.n_points_max ||
        !(cfg.scene_radius_m > 0) || cfg.residual_fraction_min < 0 ||
        cfg.residual_fraction_min >= 1) {
        throw std::invalid_argument("sample_scene: invalid config");
    }
    const double r = cfg.scene_radius_m;
    std::uniform_int_distribution<int> un(cfg.n_points_min, cfg.n_points_max);
    const int n = un(rng);

    const double nc_hi = 1.0 + std::log2(static_cast<double>(n));
    std::uniform_real_distribution<double> unc(std::min(3.0, nc_hi), std::max(3.0, nc_hi));
    const int budget = static_cast<int>(std::floor((1.0 - cfg.residual_fraction_min) * n));
    int n_clusters = static_cast<int>(std::lround(unc(rng)));
    n_clusters = std::clamp(n_clusters, 1, std::max(1, budget));

    // Cluster sizes: symmetric Dirichlet split of the budget, each >= 1.
    std::gamma_distribution<double> gamma(1.0, 1.0);
    std::vector<double> w(n_clusters);
    double wsum = 0;
    for (double& wi : w) {
        wi = gamma(rng);
        wsum += wi;
    }
    std::vector<int> sizes(n_clusters);
    int total = 0;
    for (int i = 0; i < n_clusters; ++i) {
        sizes[i] = std::max(1, static_cast<int>(std::lround(w[i] / wsum * budget)));
        total += sizes[i];
    }
    while (total > budget) {
        int k = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        if (sizes[k] <= 1) break;
        --sizes[k];
        --total;
    }

    Scene scene;
    scene.radius_m = r;
    scene.points.reserve(n);
    scene.cluster_id.reserve(n);

    const auto centers = sample_cylinder(n_clusters, Eigen::Vector3d::Zero(), 0.5 * r, r, r, rng);
    const double log_nc = std::log2(std::max<double>(n_clusters, 2.0));
    std::uniform_real_distribution<double> ua(0.3 * r / log_nc, 1.2 * r / log_nc);

    for (int i = 0; i < n_clusters; ++i) {
        const double a = ua(rng);
        const double b = 1.5 * r / log_nc - a;
        const Eigen::Matrix3d rot = random_rotation(rng);
        const double h = cfg.cluster_height_factor * r;
        for (int j = 0; j < sizes[i]; ++j) {
            Eigen::Vector3d local =
                sample_cylinder(1, Eigen::Vector3d::Zero(), h, a, b, rng)[0];
            Eigen::Vector3d p = centers[i] + rot * local;
            int tries = 0;
            while (!inside_scene_cylinder(p, r)) {
                if (++tries > 32) {
                    local *= 0.5;  // pull toward the (in-bounds) cluster center
                } else {
                    local = sample_cylinder(1, Eigen::Vector3d::Zero(), h, a, b, rng)[0];
                }
                p = centers[i] + rot * local;
            }
            scene.points.push_back(p);
            scene.cluster_id.push_back(i + 1);
        }
    }

    const int residual = n - total;
    for (const auto& p : sample_cylinder(residual, Eigen::Vector3d::Zero(), 0.5 * r, r, r, rng)) {
        scene.points.push_back(p);
        scene.cluster_id.push_back(0);
    }
    return scene;
}

Pose sample_pose(const PoseSamplingConfig& cfg, Rng& rng) {
    const double deg = M_PI / 180.0;
    std::uniform_real_distribution<double> ud(cfg.d_min_m, cfg.d_max_m);
    std::uniform_real_distribution<double> ut(cfg.theta_min_deg * deg, cfg.theta_max_deg * deg);
    std::uniform_real_distribution<double> uphi(0.0, 2.0 * M_PI);
    const double d = ud(rng);
    const double theta = ut(rng);
    const double phi = uphi(rng);

    Pose pose;
    pose.translation =
        d * Eigen::Vector3d(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi),
                            std::sin(theta));
    const Eigen::Vector3d z_axis = -pose.translation.normalized();
    Eigen::Vector3d x_axis = z_axis.cross(Eigen::Vector3d::UnitZ());
    if (x_axis.norm() < 1e-9) {
        x_axis = Eigen::Vector3d::UnitX();  // optical axis vertical: pole fallback
    } else {
        x_axis.normalize();
    }
    const Eigen::Vector3d y_axis = z_axis.cross(x_axis);
    pose.rotation.col(0) = x_axis;
    pose.rotation.col(1) = y_axis;
    pose.rotation.col(2) = z_axis;

    Eigen::Vector3d axis_angle_perturb;
    for (int i = 0; i < 3; ++i) {
        const double cap = cfg.perturb_max_deg[i] * deg;
        std::uniform_real_distribution<double> up(-cap, cap);
        axis_angle_perturb[i] = cap > 0 ? up(rng) : 0.0;
    }
    pose.rotation = orthonormalize(pose.rotation * rotation_exp(axis_angle_perturb));
    return pose;
}

std::pair<Pose, Pose> sample_pose_pair(const PoseSamplingConfig& initial_cfg,
                                       const PoseSamplingConfig& desired_cfg, Rng& rng) {
    Pose initial = sample_pose(initial_cfg, rng);
    Pose desired = sample_pose(desired_cfg, rng);
    return {initial, desired};
}

void save_scene(std::ostream& os, const Scene& scene) {
    os.precision(17);
    for (size_t i = 0; i < scene.points.size(); ++i) {
        os << scene.points[i].x() << ' ' << scene.points[i].y() << ' ' << scene.points[i].z()
           << ' ' << scene.cluster_id[i] << '\n';
    }
}

Scene load_scene(std::istream& is) {
    Scene scene;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Eigen::Vector3d p;
        int id = 0;
        if (!(ss >> p.x() >> p.y() >> p.z() >> id)) {
            throw std::runtime_error("load_scene: malformed line: " + line);
        }
        scene.points.push_back(p);
        scene.cluster_id.push_back(id);
    }
    return scene;
}

}  // namespace cns
