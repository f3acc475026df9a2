#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsense/common.hpp"

namespace mmsense {

/// Synthetic scene/dataset generator knobs. Every field has a runnable
/// default; validate() reports the first offending field by name.
struct GeneratorConfig {
    std::size_t num_beams = 16;       // beam codebook size B
    std::size_t num_activities = 27;  // activity classes C_h
    std::size_t num_keypoints = 17;   // skeleton joints J
    std::size_t num_subjects = 8;
    std::size_t num_obstacles = 2;
    std::size_t image_size = 32;      // square H x W grid, 3 channels
    std::size_t radar_points = 24;
    std::size_t lidar_points = 48;
    double lobe_sharpness = 16.0;     // cosine-power beam lobe exponent
    double block_atten = 0.1;         // gain factor when line of sight is blocked
    double room_size = 8.0;           // meters, square footprint
    double horizon = 0.5;             // blockage forecast horizon, seconds
    double sigma_radar = 0.02;
    double sigma_lidar = 0.005;
    double obstacle_speed = 0.5;      // max speed, m/s
    double obstacle_near_los_prob = 0.5;
    double subject_area = 1.0;        // subject root jitter around room center
    double pose_jitter = 0.08;        // radians, per-scene joint angle jitter
    double radar_corrupt_prob = 0.0;  // per-sample chance radar is replaced by noise

    void validate() const;
};

/// Network shape; desk-scale defaults throughout.
struct ModelConfig {
    std::size_t n_f = 8;        // tokens per modality
    std::size_t d_model = 64;
    std::size_t layers = 6;     // backbone depth L
    std::size_t n_heads = 4;
    std::size_t ffn_width = 128;
    std::size_t taps = 3;       // task-attention stages K
    std::vector<std::size_t> tap_layers;  // 1-based; empty = evenly spaced
    std::size_t lora_rank = 4;
    double lora_alpha = 8.0;
    std::size_t gate_hidden = 32;
    std::size_t conv_channels = 8;
    std::size_t point_knn = 8;
    std::size_t max_prompt_tokens = 12;
    std::uint64_t frozen_seed = 1234;

    std::vector<std::size_t> resolved_taps() const;
    void validate() const;
};

struct TrainConfig {
    std::string optimizer = "adam";  // "adam" | "sgd"
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::size_t steps = 1000;
    std::size_t eval_interval = 100;
    std::uint64_t seed = 0;
    bool no_gating = false;
    bool no_task_attention = false;
    std::vector<int> holdout_subjects;  // subjects reserved for zero-shot eval
    double few_shot_fraction = 0.10;

    void validate() const;
};

/// Top-level config consumed by the CLI; union of the per-module configs
/// plus paths and the global seed.
struct RunConfig {
    GeneratorConfig gen;
    ModelConfig model;
    TrainConfig train;
    std::size_t num_samples = 1000;
    std::uint64_t seed = 7;
    std::string dataset_path;
    std::string eval_dataset_path;
    std::string checkpoint_path;

    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Apply a flat "section.key=value" override onto a JSON config tree.
void apply_override(nlohmann::json& config, const std::string& assignment);

}  // namespace mmsense
