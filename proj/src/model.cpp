#include "mmsense/model.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace mmsense {

using json = nlohmann::ordered_json;

MMSenseModel::MMSenseModel(const GeneratorConfig& gen, const ModelConfig& model,
                           std::uint64_t init_seed, bool no_gating, bool no_task_attention)
    : gen_(gen),
      cfg_(model),
      init_seed_(init_seed),
      no_gating_(no_gating),
      no_task_attention_(no_task_attention),
      image_enc_([&] {
          Rng r(mix_seed(init_seed, 0x1117u));
          return ImageEncoder(model, gen.image_size, r);
      }()),
      radar_enc_([&] {
          Rng r(mix_seed(init_seed, 0x2227u));
          return PointEncoder(model, 5, Modality::radar, r);
      }()),
      lidar_enc_([&] {
          Rng r(mix_seed(init_seed, 0x3337u));
          return PointEncoder(model, 4, Modality::lidar, r);
      }()),
      gate_([&] {
          Rng r(mix_seed(init_seed, 0x4447u));
          return GatingNetwork(model, r);
      }()),
      cross_([&] {
          Rng r(mix_seed(init_seed, 0x5557u));
          return CrossModalAttention(model, r);
      }()),
      backbone_([&] {
          Rng r(mix_seed(init_seed, 0x6667u));
          return Backbone(model, r);
      }()),
      heads_([&] {
          Rng r(mix_seed(init_seed, 0x7777u));
          return TaskHeads(gen, model, r);
      }()),
      log_var_(Tensor::zeros({4}, true)) {}

MMSenseModel::ForwardResult MMSenseModel::forward(const LabeledSample& sample,
                                                  std::vector<Tensor>* attn_out) const {
    auto image = image_enc_.forward(sample.image, sample.height, sample.width);
    auto radar = radar_enc_.forward(sample.radar);
    auto lidar = lidar_enc_.forward(sample.lidar);

    GateWeights gate;
    if (no_gating_) {
        gate.weights = Tensor::full({3}, 1.0 / 3.0);
    } else {
        gate = gate_.forward(image, radar, lidar);
    }
    auto fused = cross_.forward(fuse(image, radar, lidar, gate), attn_out);

    std::array<HiddenStates, 4> hs;
    for (Task t : kAllTasks)
        hs[static_cast<std::size_t>(t)] = backbone_.forward(fused, t, true, attn_out);
    return {heads_.forward(hs, no_task_attention_), gate};
}

NamedParams MMSenseModel::trainable_params() const {
    NamedParams out;
    auto absorb = [&](NamedParams part) {
        for (auto& p : part) out.push_back(std::move(p));
    };
    absorb(image_enc_.named_params("image"));
    absorb(radar_enc_.named_params("radar"));
    absorb(lidar_enc_.named_params("lidar"));
    if (!no_gating_) absorb(gate_.named_params("gate"));
    absorb(cross_.named_params("fusion"));
    absorb(backbone_.trainable_params("backbone"));
    absorb(heads_.trainable_params("heads"));
    out.emplace_back("log_var", log_var_);
    return out;
}

void MMSenseModel::save_checkpoint(const std::string& path_base) const {
    auto params = trainable_params();
    json manifest;
    manifest["format_version"] = 1;
    manifest["init_seed"] = init_seed_;
    manifest["no_gating"] = no_gating_;
    manifest["no_task_attention"] = no_task_attention_;
    manifest["generator"] = nlohmann::json(gen_);
    manifest["model"] = nlohmann::json(cfg_);
    json order = json::array();
    std::size_t total = 0;
    for (const auto& [name, t] : params) {
        order.push_back({{"name", name}, {"shape", t.shape()}});
        total += t.size();
    }
    manifest["params"] = order;
    manifest["total_values"] = total;

    std::ofstream mf(path_base + ".json");
    if (!mf) throw DataError("cannot write " + path_base + ".json");
    mf << manifest.dump(2) << "\n";

    std::ofstream bf(path_base + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot write " + path_base + ".bin");
    for (const auto& [name, t] : params) {
        bf.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

void MMSenseModel::load_checkpoint(const std::string& path_base) {
    std::ifstream mf(path_base + ".json");
    if (!mf) throw DataError("cannot read " + path_base + ".json");
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint manifest: " + std::string(e.what()));
    }
    auto params = trainable_params();
    const auto& order = manifest.at("params");
    if (order.size() != params.size())
        throw DataError("checkpoint has " + std::to_string(order.size()) + " tensors, model has " +
                        std::to_string(params.size()));
    std::ifstream bf(path_base + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot read " + path_base + ".bin");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        if (order[i].at("name").get<std::string>() != name ||
            order[i].at("shape").get<std::vector<std::size_t>>() != t.shape())
            throw DataError("checkpoint tensor " + std::to_string(i) + " does not match model (" +
                            name + ")");
        bf.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!bf) throw DataError("checkpoint blob truncated at tensor " + name);
    }
}

}  // namespace mmsense
