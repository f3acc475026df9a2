#include "mmsense/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace mmsense {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kSubjectStream = 0x5b1e0a7u;
constexpr std::uint64_t kActivityStream = 0xac7117e5u;

}  // namespace

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 ab = b - a;
    double denom = ab.dot(ab);
    double t = denom > 0 ? std::clamp((p - a).dot(ab) / denom, 0.0, 1.0) : 0.0;
    return (p - (a + ab * t)).norm();
}

namespace {

/// Fixed base bone-length pattern; subjects scale it bone by bone.
double base_bone_length(std::size_t bone) {
    return 0.22 + 0.10 * std::sin(1.7 * static_cast<double>(bone) + 0.5);
}

std::vector<double> subject_bone_lengths(int subject_id, std::size_t num_bones) {
    Rng rng(mix_seed(kSubjectStream, static_cast<std::uint64_t>(subject_id)));
    std::vector<double> lengths(num_bones);
    for (std::size_t i = 0; i < num_bones; ++i) {
        lengths[i] = base_bone_length(i) * rng.uniform(0.8, 1.2);
    }
    return lengths;
}

/// Per-activity base joint angles; the pose family of an activity id.
std::vector<std::pair<double, double>> activity_pose(int activity_id, std::size_t num_bones) {
    Rng rng(mix_seed(kActivityStream, static_cast<std::uint64_t>(activity_id)));
    std::vector<std::pair<double, double>> angles(num_bones);
    for (auto& [theta, phi] : angles) {
        theta = rng.uniform(0.25 * kPi, 0.75 * kPi);  // mostly sideways bones
        phi = rng.uniform(0.0, 2.0 * kPi);
    }
    return angles;
}

bool segment_blocked(const Vec3& tx, const Vec3& rx, const std::vector<Obstacle>& obstacles,
                     double dt) {
    for (const Obstacle& o : obstacles) {
        Vec3 c = o.center + o.velocity * dt;
        if (point_segment_distance(c, tx, rx) <= o.radius) return true;
    }
    return false;
}

}  // namespace

SensingScene generate_scene(const GeneratorConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    cfg.validate();
    SensingScene scene;
    scene.scene_seed = mix_seed(seed, index);
    Rng rng(scene.scene_seed);

    double half = cfg.room_size / 2.0;
    scene.tx_pos = {-half + 0.5, 0.0, 2.5};
    scene.rx_pos = {rng.uniform(0.5, half - 0.5), rng.uniform(-half + 0.5, half - 0.5), 1.5};

    // Codebook: azimuth fan over the sector the receiver can occupy. Depends
    // only on cfg, so the mapping beam index -> direction is global.
    scene.beam_dirs.reserve(cfg.num_beams);
    for (std::size_t b = 0; b < cfg.num_beams; ++b) {
        double az = -kPi / 3.0 +
                    (2.0 * kPi / 3.0) * (static_cast<double>(b) + 0.5) /
                        static_cast<double>(cfg.num_beams);
        scene.beam_dirs.push_back(Vec3{std::cos(az), std::sin(az), 0.0}.normalized());
    }

    scene.activity_id = static_cast<int>(rng.uniform_int(cfg.num_activities));
    scene.subject_id = static_cast<int>(rng.uniform_int(cfg.num_subjects));

    std::size_t bones = cfg.num_keypoints - 1;
    scene.bone_lengths = subject_bone_lengths(scene.subject_id, bones);
    auto pose = activity_pose(scene.activity_id, bones);

    Vec3 root{rng.uniform(-cfg.subject_area, cfg.subject_area),
              rng.uniform(-cfg.subject_area, cfg.subject_area), 0.9};
    scene.keypoints.push_back(root);
    for (std::size_t i = 0; i < bones; ++i) {
        double theta = pose[i].first + rng.uniform(-cfg.pose_jitter, cfg.pose_jitter);
        double phi = pose[i].second + rng.uniform(-cfg.pose_jitter, cfg.pose_jitter);
        Vec3 dir{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                 std::cos(theta)};
        scene.keypoints.push_back(scene.keypoints.back() + dir * scene.bone_lengths[i]);
    }

    for (std::size_t i = 0; i < cfg.num_obstacles; ++i) {
        Obstacle o;
        o.radius = rng.uniform(0.2, 0.4);
        double speed = rng.uniform(0.1, std::max(0.11, cfg.obstacle_speed));
        double heading = rng.uniform(0.0, 2.0 * kPi);
        o.velocity = {speed * std::cos(heading), speed * std::sin(heading), 0.0};
        if (rng.uniform() < cfg.obstacle_near_los_prob) {
            // Drop the obstacle near the line of sight so both blockage
            // outcomes occur with useful frequency.
            double t = rng.uniform(0.25, 0.75);
            Vec3 on_los = scene.tx_pos + (scene.rx_pos - scene.tx_pos) * t;
            Vec3 los_dir = (scene.rx_pos - scene.tx_pos).normalized();
            Vec3 perp = Vec3{-los_dir.y, los_dir.x, 0.0}.normalized();
            double offset = rng.uniform(-2.5, 2.5) * o.radius;
            o.center = on_los + perp * offset;
            o.center.z = rng.uniform(0.5, 2.0);
        } else {
            o.center = {rng.uniform(-half + 0.5, half - 0.5),
                        rng.uniform(-half + 0.5, half - 0.5), rng.uniform(0.5, 2.0)};
            // push well clear of the link
            double d = point_segment_distance(o.center, scene.tx_pos, scene.rx_pos);
            double clearance = o.radius + cfg.obstacle_speed * cfg.horizon + 0.3;
            if (d < clearance) {
                Vec3 los_dir = (scene.rx_pos - scene.tx_pos).normalized();
                Vec3 perp = Vec3{-los_dir.y, los_dir.x, 0.0}.normalized();
                o.center = o.center + perp * clearance;
            }
        }
        scene.obstacles.push_back(o);
    }

    scene.time = rng.uniform(0.0, 100.0);
    scene.horizon = cfg.horizon;
    scene.lobe_sharpness = cfg.lobe_sharpness;
    scene.block_atten = cfg.block_atten;
    return scene;
}

double compute_beam_gain(const SensingScene& scene, std::size_t b) {
    if (b >= scene.beam_dirs.size()) {
        throw DataError("beam index " + std::to_string(b) + " out of range, codebook has " +
                        std::to_string(scene.beam_dirs.size()) + " beams");
    }
    Vec3 link = scene.rx_pos - scene.tx_pos;
    double dist = link.norm();
    double cosine = std::max(0.0, scene.beam_dirs[b].dot(link.normalized()));
    double lobe = std::pow(cosine, scene.lobe_sharpness);
    double occlusion =
        segment_blocked(scene.tx_pos, scene.rx_pos, scene.obstacles, 0.0) ? scene.block_atten
                                                                          : 1.0;
    return lobe / (dist * dist) * occlusion;
}

SceneLabels derive_labels(const SensingScene& scene) {
    SceneLabels labels;
    double best = -1.0;
    for (std::size_t b = 0; b < scene.beam_dirs.size(); ++b) {
        double g = compute_beam_gain(scene, b);
        if (g > best) {  // ties keep the lowest index
            best = g;
            labels.beam_label = static_cast<int>(b);
        }
    }
    labels.activity_label = scene.activity_id;
    labels.keypoints.reserve(scene.keypoints.size() * 3);
    for (const Vec3& p : scene.keypoints) {
        labels.keypoints.push_back(p.x);
        labels.keypoints.push_back(p.y);
        labels.keypoints.push_back(p.z);
    }
    labels.blockage_label =
        segment_blocked(scene.tx_pos, scene.rx_pos, scene.obstacles, scene.horizon) ? 1 : 0;
    return labels;
}

namespace {

class ImageCanvas {
public:
    ImageCanvas(std::vector<double>& buf, std::size_t size, double room)
        : buf_(buf), size_(size), room_(room) {}

    void splat(std::size_t channel, double u_world, double v_world, double value,
               double v_range) {
        double u = (u_world + room_ / 2.0) / room_ * static_cast<double>(size_);
        double v = v_world / v_range * static_cast<double>(size_);
        long px = static_cast<long>(std::floor(u));
        long py = static_cast<long>(std::floor(v));
        for (long dy = -1; dy <= 1; ++dy) {
            for (long dx = -1; dx <= 1; ++dx) {
                long x = px + dx, y = py + dy;
                if (x < 0 || y < 0 || x >= static_cast<long>(size_) ||
                    y >= static_cast<long>(size_))
                    continue;
                double w = (dx == 0 && dy == 0) ? value : value * 0.4;
                double& cell =
                    buf_[(channel * size_ + static_cast<std::size_t>(y)) * size_ +
                         static_cast<std::size_t>(x)];
                cell = std::min(1.0, std::max(cell, w));
            }
        }
    }

private:
    std::vector<double>& buf_;
    std::size_t size_;
    double room_;
};

}  // namespace

Modalities render_modalities(const SensingScene& scene, const GeneratorConfig& cfg) {
    Modalities out;
    std::size_t s = cfg.image_size;
    out.height = out.width = s;
    out.image.assign(3 * s * s, 0.0);
    Rng rng(mix_seed(scene.scene_seed, 0x5e4de7u));

    ImageCanvas canvas(out.image, s, cfg.room_size);

    // channel 0: subject skeleton, side view (x horizontal, z vertical)
    for (std::size_t i = 0; i + 1 < scene.keypoints.size(); ++i) {
        const Vec3& a = scene.keypoints[i];
        const Vec3& b = scene.keypoints[i + 1];
        for (int t = 0; t <= 6; ++t) {
            Vec3 p = a + (b - a) * (static_cast<double>(t) / 6.0);
            canvas.splat(0, p.x, p.z, 1.0, 3.0);
        }
    }
    // channel 1: obstacles top-down with a motion trail over one second
    for (const Obstacle& o : scene.obstacles) {
        for (int ring = 0; ring < 12; ++ring) {
            double ang = 2.0 * kPi * ring / 12.0;
            canvas.splat(1, o.center.x + o.radius * std::cos(ang),
                         o.center.y + cfg.room_size / 2.0 + o.radius * std::sin(ang), 1.0,
                         cfg.room_size);
        }
        for (int t = 1; t <= 5; ++t) {
            Vec3 p = o.center + o.velocity * (0.2 * t);
            canvas.splat(1, p.x, p.y + cfg.room_size / 2.0, 1.0 - 0.15 * t, cfg.room_size);
        }
    }
    // channel 2: transceiver markers, top-down
    canvas.splat(2, scene.tx_pos.x, scene.tx_pos.y + cfg.room_size / 2.0, 1.0, cfg.room_size);
    canvas.splat(2, scene.rx_pos.x, scene.rx_pos.y + cfg.room_size / 2.0, 0.8, cfg.room_size);

    // radar: sparse returns with radial velocity relative to the receiver
    bool corrupt = rng.uniform() < cfg.radar_corrupt_prob;
    out.radar.reserve(cfg.radar_points * 5);
    double half = cfg.room_size / 2.0;
    for (std::size_t i = 0; i < cfg.radar_points; ++i) {
        Vec3 p;
        Vec3 vel{0, 0, 0};
        if (corrupt) {
            p = {rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(0.0, 3.0)};
            double vr = rng.uniform(-2.0, 2.0);
            out.radar.insert(out.radar.end(), {p.x, p.y, p.z, vr, rng.uniform(0.0, 1.0)});
            continue;
        }
        if (!scene.obstacles.empty() && i % 2 == 0) {
            const Obstacle& o = scene.obstacles[(i / 2) % scene.obstacles.size()];
            double u = rng.uniform(-1.0, 1.0);
            double ang = rng.uniform(0.0, 2.0 * kPi);
            double r = std::sqrt(std::max(0.0, 1.0 - u * u));
            p = o.center + Vec3{r * std::cos(ang), r * std::sin(ang), u} * o.radius;
            vel = o.velocity;
        } else {
            p = scene.keypoints[rng.uniform_int(scene.keypoints.size())];
        }
        Vec3 to_p = p - scene.rx_pos;
        double vr = to_p.norm() > 0 ? vel.dot(to_p.normalized()) : 0.0;
        double intensity = 1.0 / (1.0 + to_p.dot(to_p));
        p.x += rng.normal(0.0, cfg.sigma_radar);
        p.y += rng.normal(0.0, cfg.sigma_radar);
        p.z += rng.normal(0.0, cfg.sigma_radar);
        vr += rng.normal(0.0, cfg.sigma_radar);
        out.radar.insert(out.radar.end(), {p.x, p.y, p.z, vr, intensity});
    }

    // lidar: denser surface samples, position + intensity only
    out.lidar.reserve(cfg.lidar_points * 4);
    for (std::size_t i = 0; i < cfg.lidar_points; ++i) {
        Vec3 p;
        if (!scene.obstacles.empty() && i % 3 == 0) {
            const Obstacle& o = scene.obstacles[(i / 3) % scene.obstacles.size()];
            double u = rng.uniform(-1.0, 1.0);
            double ang = rng.uniform(0.0, 2.0 * kPi);
            double r = std::sqrt(std::max(0.0, 1.0 - u * u));
            p = o.center + Vec3{r * std::cos(ang), r * std::sin(ang), u} * o.radius;
        } else {
            std::size_t bone = rng.uniform_int(scene.keypoints.size() - 1);
            double t = rng.uniform();
            p = scene.keypoints[bone] + (scene.keypoints[bone + 1] - scene.keypoints[bone]) * t;
        }
        Vec3 to_p = p - scene.rx_pos;
        double intensity = 1.0 / (1.0 + to_p.dot(to_p));
        p.x += rng.normal(0.0, cfg.sigma_lidar);
        p.y += rng.normal(0.0, cfg.sigma_lidar);
        p.z += rng.normal(0.0, cfg.sigma_lidar);
        out.lidar.insert(out.lidar.end(), {p.x, p.y, p.z, intensity});
    }
    return out;
}

LabeledSample make_sample(const GeneratorConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    SensingScene scene = generate_scene(cfg, seed, index);
    SceneLabels labels = derive_labels(scene);
    Modalities mods = render_modalities(scene, cfg);

    LabeledSample sample;
    sample.image = std::move(mods.image);
    sample.height = mods.height;
    sample.width = mods.width;
    sample.radar = std::move(mods.radar);
    sample.lidar = std::move(mods.lidar);
    sample.beam_label = labels.beam_label;
    sample.activity_label = labels.activity_label;
    sample.keypoints = std::move(labels.keypoints);
    sample.blockage_label = labels.blockage_label;
    sample.subject_id = scene.subject_id;
    sample.scene_seed = scene.scene_seed;
    sample.scene_index = index;
    return sample;
}

std::vector<LabeledSample> generate_dataset(const GeneratorConfig& cfg, std::uint64_t seed,
                                            std::size_t count) {
    std::vector<LabeledSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(cfg, seed, i));
    return out;
}

namespace {

json sample_to_json(const LabeledSample& s) {
    json j;
    j["image"] = s.image;
    j["channels"] = s.channels;
    j["height"] = s.height;
    j["width"] = s.width;
    j["radar"] = s.radar;
    j["lidar"] = s.lidar;
    j["beam_label"] = s.beam_label;
    j["activity_label"] = s.activity_label;
    j["keypoints"] = s.keypoints;
    j["blockage_label"] = s.blockage_label;
    j["subject_id"] = s.subject_id;
    j["scene_seed"] = s.scene_seed;
    j["scene_index"] = s.scene_index;
    return j;
}

LabeledSample sample_from_json(const json& j) {
    LabeledSample s;
    j.at("image").get_to(s.image);
    j.at("channels").get_to(s.channels);
    j.at("height").get_to(s.height);
    j.at("width").get_to(s.width);
    j.at("radar").get_to(s.radar);
    j.at("lidar").get_to(s.lidar);
    j.at("beam_label").get_to(s.beam_label);
    j.at("activity_label").get_to(s.activity_label);
    j.at("keypoints").get_to(s.keypoints);
    j.at("blockage_label").get_to(s.blockage_label);
    j.at("subject_id").get_to(s.subject_id);
    j.at("scene_seed").get_to(s.scene_seed);
    j.at("scene_index").get_to(s.scene_index);
    return s;
}

}  // namespace

void write_dataset(const std::vector<LabeledSample>& samples, const GeneratorConfig& cfg,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    json header;
    header["format_version"] = 1;
    header["cfg"] = cfg;
    out << header.dump() << "\n";
    for (const LabeledSample& s : samples) out << sample_to_json(s).dump() << "\n";
    if (!out) throw DataError("write to '" + path + "' failed");
}

std::pair<GeneratorConfig, std::vector<LabeledSample>> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    std::string line;
    std::size_t lineno = 0;
    GeneratorConfig cfg;
    std::vector<LabeledSample> samples;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw DataError("dataset parse error at line " + std::to_string(lineno));
        }
        try {
            if (lineno == 1) {
                if (!j.contains("format_version") || j.at("format_version").get<int>() != 1) {
                    throw DataError("unsupported dataset format version at line 1");
                }
                j.at("cfg").get_to(cfg);
            } else {
                samples.push_back(sample_from_json(j));
            }
        } catch (const json::exception& e) {
            throw DataError("dataset record error at line " + std::to_string(lineno) + ": " +
                            e.what());
        }
    }
    if (lineno == 0) throw DataError("dataset file '" + path + "' is empty");
    return {cfg, std::move(samples)};
}

}  // namespace mmsense
