#include "mmsense/config.hpp"

#include <sstream>

namespace mmsense {

using nlohmann::json;

void GeneratorConfig::validate() const {
    if (num_beams < 2) throw ConfigError("gen.num_beams must be >= 2");
    if (num_activities < 2) throw ConfigError("gen.num_activities must be >= 2");
    if (num_keypoints < 2) throw ConfigError("gen.num_keypoints must be >= 2");
    if (num_subjects < 1) throw ConfigError("gen.num_subjects must be >= 1");
    if (image_size < 8 || image_size % 4 != 0)
        throw ConfigError("gen.image_size must be >= 8 and divisible by 4");
    if (radar_points < 1) throw ConfigError("gen.radar_points must be >= 1");
    if (lidar_points < 1) throw ConfigError("gen.lidar_points must be >= 1");
    if (lobe_sharpness <= 0) throw ConfigError("gen.lobe_sharpness must be positive");
    if (block_atten <= 0 || block_atten > 1)
        throw ConfigError("gen.block_atten must be in (0, 1]");
    if (room_size <= 2) throw ConfigError("gen.room_size must exceed 2 meters");
    if (horizon <= 0) throw ConfigError("gen.horizon must be positive");
    if (sigma_radar < 0) throw ConfigError("gen.sigma_radar must be >= 0");
    if (sigma_lidar < 0) throw ConfigError("gen.sigma_lidar must be >= 0");
    if (radar_corrupt_prob < 0 || radar_corrupt_prob > 1)
        throw ConfigError("gen.radar_corrupt_prob must be in [0, 1]");
}

std::vector<std::size_t> ModelConfig::resolved_taps() const {
    if (!tap_layers.empty()) return tap_layers;
    std::vector<std::size_t> out;
    for (std::size_t k = 1; k <= taps; ++k) {
        out.push_back((k * layers + taps - 1) / taps);  // evenly spaced, ends at L
    }
    return out;
}

void ModelConfig::validate() const {
    if (d_model == 0 || d_model % n_heads != 0)
        throw ConfigError("model.d_model must be a positive multiple of model.n_heads");
    if (layers == 0) throw ConfigError("model.layers must be >= 1");
    if (taps == 0) throw ConfigError("model.taps must be >= 1");
    if (n_f == 0) throw ConfigError("model.n_f must be >= 1");
    if (lora_rank == 0) throw ConfigError("model.lora_rank must be >= 1");
    for (std::size_t l : resolved_taps()) {
        if (l == 0 || l > layers)
            throw ConfigError("model.tap_layers entries must lie in [1, layers]");
    }
}

void TrainConfig::validate() const {
    if (optimizer != "adam" && optimizer != "sgd")
        throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
    if (lr <= 0) throw ConfigError("train.lr must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (few_shot_fraction <= 0 || few_shot_fraction > 1)
        throw ConfigError("train.few_shot_fraction must be in (0, 1]");
}

void RunConfig::validate() const {
    gen.validate();
    model.validate();
    train.validate();
}

#define MM_FIELD(j, c, name) j[#name] = c.name
#define MM_READ(j, c, name) \
    if (j.contains(#name)) j.at(#name).get_to(c.name)

void to_json(json& j, const GeneratorConfig& c) {
    j = json::object();
    MM_FIELD(j, c, num_beams);
    MM_FIELD(j, c, num_activities);
    MM_FIELD(j, c, num_keypoints);
    MM_FIELD(j, c, num_subjects);
    MM_FIELD(j, c, num_obstacles);
    MM_FIELD(j, c, image_size);
    MM_FIELD(j, c, radar_points);
    MM_FIELD(j, c, lidar_points);
    MM_FIELD(j, c, lobe_sharpness);
    MM_FIELD(j, c, block_atten);
    MM_FIELD(j, c, room_size);
    MM_FIELD(j, c, horizon);
    MM_FIELD(j, c, sigma_radar);
    MM_FIELD(j, c, sigma_lidar);
    MM_FIELD(j, c, obstacle_speed);
    MM_FIELD(j, c, obstacle_near_los_prob);
    MM_FIELD(j, c, subject_area);
    MM_FIELD(j, c, pose_jitter);
    MM_FIELD(j, c, radar_corrupt_prob);
}

void from_json(const json& j, GeneratorConfig& c) {
    MM_READ(j, c, num_beams);
    MM_READ(j, c, num_activities);
    MM_READ(j, c, num_keypoints);
    MM_READ(j, c, num_subjects);
    MM_READ(j, c, num_obstacles);
    MM_READ(j, c, image_size);
    MM_READ(j, c, radar_points);
    MM_READ(j, c, lidar_points);
    MM_READ(j, c, lobe_sharpness);
    MM_READ(j, c, block_atten);
    MM_READ(j, c, room_size);
    MM_READ(j, c, horizon);
    MM_READ(j, c, sigma_radar);
    MM_READ(j, c, sigma_lidar);
    MM_READ(j, c, obstacle_speed);
    MM_READ(j, c, obstacle_near_los_prob);
    MM_READ(j, c, subject_area);
    MM_READ(j, c, pose_jitter);
    MM_READ(j, c, radar_corrupt_prob);
}

void to_json(json& j, const ModelConfig& c) {
    j = json::object();
    MM_FIELD(j, c, n_f);
    MM_FIELD(j, c, d_model);
    MM_FIELD(j, c, layers);
    MM_FIELD(j, c, n_heads);
    MM_FIELD(j, c, ffn_width);
    MM_FIELD(j, c, taps);
    MM_FIELD(j, c, tap_layers);
    MM_FIELD(j, c, lora_rank);
    MM_FIELD(j, c, lora_alpha);
    MM_FIELD(j, c, gate_hidden);
    MM_FIELD(j, c, conv_channels);
    MM_FIELD(j, c, point_knn);
    MM_FIELD(j, c, max_prompt_tokens);
    MM_FIELD(j, c, frozen_seed);
}

void from_json(const json& j, ModelConfig& c) {
    MM_READ(j, c, n_f);
    MM_READ(j, c, d_model);
    MM_READ(j, c, layers);
    MM_READ(j, c, n_heads);
    MM_READ(j, c, ffn_width);
    MM_READ(j, c, taps);
    MM_READ(j, c, tap_layers);
    MM_READ(j, c, lora_rank);
    MM_READ(j, c, lora_alpha);
    MM_READ(j, c, gate_hidden);
    MM_READ(j, c, conv_channels);
    MM_READ(j, c, point_knn);
    MM_READ(j, c, max_prompt_tokens);
    MM_READ(j, c, frozen_seed);
}

void to_json(json& j, const TrainConfig& c) {
    j = json::object();
    MM_FIELD(j, c, optimizer);
    MM_FIELD(j, c, lr);
    MM_FIELD(j, c, batch_size);
    MM_FIELD(j, c, steps);
    MM_FIELD(j, c, eval_interval);
    MM_FIELD(j, c, seed);
    MM_FIELD(j, c, no_gating);
    MM_FIELD(j, c, no_task_attention);
    MM_FIELD(j, c, holdout_subjects);
    MM_FIELD(j, c, few_shot_fraction);
}

void from_json(const json& j, TrainConfig& c) {
    MM_READ(j, c, optimizer);
    MM_READ(j, c, lr);
    MM_READ(j, c, batch_size);
    MM_READ(j, c, steps);
    MM_READ(j, c, eval_interval);
    MM_READ(j, c, seed);
    MM_READ(j, c, no_gating);
    MM_READ(j, c, no_task_attention);
    MM_READ(j, c, holdout_subjects);
    MM_READ(j, c, few_shot_fraction);
}

void to_json(json& j, const RunConfig& c) {
    j = json::object();
    j["gen"] = c.gen;
    j["model"] = c.model;
    j["train"] = c.train;
    MM_FIELD(j, c, num_samples);
    MM_FIELD(j, c, seed);
    MM_FIELD(j, c, dataset_path);
    MM_FIELD(j, c, eval_dataset_path);
    MM_FIELD(j, c, checkpoint_path);
}

void from_json(const json& j, RunConfig& c) {
    if (j.contains("gen")) j.at("gen").get_to(c.gen);
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("train")) j.at("train").get_to(c.train);
    MM_READ(j, c, num_samples);
    MM_READ(j, c, seed);
    MM_READ(j, c, dataset_path);
    MM_READ(j, c, eval_dataset_path);
    MM_READ(j, c, checkpoint_path);
}

#undef MM_FIELD
#undef MM_READ

void apply_override(json& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    }
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json* cursor = &config;
    std::istringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    // Only keys that exist with defaults are overridable; anything else is a typo.
    json defaults = RunConfig{};
    json* probe = &defaults;
    for (const auto& p : path) {
        if (!probe->contains(p)) throw ConfigError("unknown config key '" + key + "'");
        probe = &(*probe)[p];
        cursor = &(*cursor)[p];
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare strings
    *cursor = parsed;
}

}  // namespace mmsense
