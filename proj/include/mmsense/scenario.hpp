#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmsense/config.hpp"

namespace mmsense {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double c) const { return {x * c, y * c, z * c}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
};

/// Distance from point p to the segment a-b.
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

struct Obstacle {
    Vec3 center;
    double radius = 0;
    Vec3 velocity;
};

/// Geometric ground truth of one time instant. All labels are derivable in
/// closed form from these fields.
struct SensingScene {
    Vec3 tx_pos, rx_pos;
    std::vector<Vec3> beam_dirs;       // unit vectors, the beam codebook
    std::vector<Vec3> keypoints;       // subject skeleton, kinematic chain
    std::vector<double> bone_lengths;  // J-1 entries, fixed per subject
    int activity_id = 0;
    int subject_id = 0;
    std::vector<Obstacle> obstacles;
    double time = 0;
    double horizon = 0.5;
    double lobe_sharpness = 16.0;
    double block_atten = 0.1;
    std::uint64_t scene_seed = 0;  // stream id the scene was drawn from
};

struct SceneLabels {
    int beam_label = 0;
    int activity_label = 0;
    std::vector<double> keypoints;  // J*3 row-major
    int blockage_label = 0;
};

struct Modalities {
    std::vector<double> image;  // 3 x H x W, row-major, values in [0,1]
    std::size_t height = 0, width = 0;
    std::vector<double> radar;  // N_r x 5: x,y,z, radial velocity, intensity
    std::vector<double> lidar;  // N_l x 4: x,y,z, intensity
};

/// One rendered record: modality frames plus the four task labels.
struct LabeledSample {
    std::vector<double> image;
    std::size_t channels = 3, height = 0, width = 0;
    std::vector<double> radar;
    std::vector<double> lidar;
    int beam_label = 0;
    int activity_label = 0;
    std::vector<double> keypoints;
    int blockage_label = 0;
    int subject_id = 0;
    std::uint64_t scene_seed = 0;
    std::uint64_t scene_index = 0;

    std::size_t n_radar() const { return radar.size() / 5; }
    std::size_t n_lidar() const { return lidar.size() / 4; }
};

/// Pure function of (cfg, seed, index); identical inputs give bit-identical
/// scenes.
SensingScene generate_scene(const GeneratorConfig& cfg, std::uint64_t seed, std::uint64_t index);

/// Closed-form gain of beam b: cosine-power lobe x inverse-square path loss x
/// occlusion factor at scene.time. This is the independent beam-label oracle.
double compute_beam_gain(const SensingScene& scene, std::size_t b);

SceneLabels derive_labels(const SensingScene& scene);

Modalities render_modalities(const SensingScene& scene, const GeneratorConfig& cfg);

LabeledSample make_sample(const GeneratorConfig& cfg, std::uint64_t seed, std::uint64_t index);

std::vector<LabeledSample> generate_dataset(const GeneratorConfig& cfg, std::uint64_t seed,
                                            std::size_t count);

/// Line-oriented dataset file: a header record (format version + cfg)
/// followed by one record per sample. Numeric round trips are bit-exact.
void write_dataset(const std::vector<LabeledSample>& samples, const GeneratorConfig& cfg,
                   const std::string& path);
std::pair<GeneratorConfig, std::vector<LabeledSample>> read_dataset(const std::string& path);

}  // namespace mmsense
