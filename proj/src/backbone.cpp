#include "mmsense/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace mmsense {

std::string task_name(Task t) {
    switch (t) {
        case Task::BP: return "BP";
        case Task::HAR: return "HAR";
        case Task::HPE: return "HPE";
        case Task::FBP: return "FBP";
    }
    return "?";
}

Task task_from_name(const std::string& name) {
    for (Task t : kAllTasks) {
        if (task_name(t) == name) return t;
    }
    throw ConfigError("unknown task '" + name + "'");
}

Tensor lora_delta(const LoraAdapter& adapter) {
    if (adapter.a.rows() != adapter.rank || adapter.b.cols() != adapter.rank) {
        throw ShapeError("lora_delta: factor shapes do not match rank " +
                         std::to_string(adapter.rank));
    }
    return scale(matmul(adapter.b, adapter.a),
                 adapter.alpha / static_cast<double>(adapter.rank));
}

namespace {

const std::map<Task, std::string>& task_prompts() {
    static const std::map<Task, std::string> prompts = {
        {Task::BP, "predict the optimal beam index from multi-modal inputs"},
        {Task::HAR, "predict the human activity from multi-modal inputs"},
        {Task::HPE, "estimate the human pose keypoints from multi-modal inputs"},
        {Task::FBP, "predict whether the link will be blocked soon"},
    };
    return prompts;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream stream(text);
    std::vector<std::string> words;
    std::string w;
    while (stream >> w) words.push_back(w);
    return words;
}

}  // namespace

Backbone::Backbone(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();

    // vocabulary: sorted unique words over the built-in prompts
    for (const auto& [task, prompt] : task_prompts()) {
        for (const auto& w : split_words(prompt)) vocab_.push_back(w);
    }
    std::sort(vocab_.begin(), vocab_.end());
    vocab_.erase(std::unique(vocab_.begin(), vocab_.end()), vocab_.end());
    for (Task t : kAllTasks) {
        auto words = split_words(task_prompts().at(t));
        if (words.size() > cfg.max_prompt_tokens) {
            throw ConfigError("prompt for " + task_name(t) + " exceeds max_prompt_tokens");
        }
        for (const auto& w : words) {
            auto it = std::lower_bound(vocab_.begin(), vocab_.end(), w);
            prompt_ids_[static_cast<std::size_t>(t)].push_back(
                static_cast<std::size_t>(it - vocab_.begin()));
        }
    }
    prompt_table_ = init_matrix(rng, {vocab_.size(), cfg.d_model}, cfg.d_model);

    // frozen base, drawn once from its own seed
    Rng base_rng(cfg.frozen_seed);
    std::size_t d = cfg.d_model;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Layer layer;
        layer.wq = init_matrix(base_rng, {d, d}, d, false);
        layer.wk = init_matrix(base_rng, {d, d}, d, false);
        layer.wv = init_matrix(base_rng, {d, d}, d, false);
        layer.wo = init_matrix(base_rng, {d, d}, d, false);
        layer.ln1_g = Tensor::full({d}, 1.0, false);
        layer.ln1_b = Tensor::zeros({d}, false);
        layer.ln2_g = Tensor::full({d}, 1.0, false);
        layer.ln2_b = Tensor::zeros({d}, false);
        layer.ffn1_w = init_matrix(base_rng, {d, cfg.ffn_width}, d, false);
        layer.ffn1_b = Tensor::zeros({cfg.ffn_width}, false);
        layer.ffn2_w = init_matrix(base_rng, {cfg.ffn_width, d}, cfg.ffn_width, false);
        layer.ffn2_b = Tensor::zeros({d}, false);
        layers_.push_back(std::move(layer));

        for (const char* target : {"query", "value"}) {
            LoraAdapter adapter;
            adapter.rank = cfg.lora_rank;
            adapter.alpha = cfg.lora_alpha;
            adapter.layer = l;
            adapter.target = target;
            adapter.a = init_matrix(rng, {cfg.lora_rank, d}, d);
            adapter.b = Tensor::zeros({d, cfg.lora_rank}, true);
            adapters_.push_back(std::move(adapter));
        }
    }
}

Tensor Backbone::embed_instruction(Task task) const {
    return gather_rows(prompt_table_, prompt_ids_[static_cast<std::size_t>(task)]);
}

const std::vector<std::size_t>& Backbone::prompt_token_ids(Task task) const {
    return prompt_ids_[static_cast<std::size_t>(task)];
}

HiddenStates Backbone::forward(const FusedSequence& fused, Task task, bool with_adapters,
                               std::vector<Tensor>* attn_out) const {
    Tensor prompt = embed_instruction(task);
    std::vector<Tensor> seq_parts = {prompt, fused.tokens};
    Tensor x = concat_rows(seq_parts);

    HiddenStates states;
    states.prompt_len = prompt.rows();
    double score_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model / cfg_.n_heads));

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        Tensor wq = layer.wq;
        Tensor wv = layer.wv;
        if (with_adapters) {
            for (const LoraAdapter& adapter : adapters_) {
                if (adapter.layer != l) continue;
                // delta is d_out x d_in; projections multiply from the right
                Tensor delta_t = transpose(lora_delta(adapter));
                if (adapter.target == "query") wq = add(wq, delta_t);
                else if (adapter.target == "value") wv = add(wv, delta_t);
            }
        }
        Tensor normed = layer_norm(x, layer.ln1_g, layer.ln1_b);
        Tensor attended =
            multi_head_attention(normed, wq, layer.wk, wv, cfg_.n_heads, score_scale, attn_out);
        x = add(x, matmul(attended, layer.wo));
        Tensor normed2 = layer_norm(x, layer.ln2_g, layer.ln2_b);
        Tensor ff = linear(relu(linear(normed2, layer.ffn1_w, &layer.ffn1_b)), layer.ffn2_w,
                           &layer.ffn2_b);
        x = add(x, ff);
        states.layers.push_back(x);
    }
    return states;
}

NamedParams Backbone::trainable_params(const std::string& prefix) const {
    NamedParams out = {{prefix + ".prompt_table", prompt_table_}};
    for (const LoraAdapter& adapter : adapters_) {
        std::string base =
            prefix + ".lora." + std::to_string(adapter.layer) + "." + adapter.target;
        out.emplace_back(base + ".a", adapter.a);
        out.emplace_back(base + ".b", adapter.b);
    }
    return out;
}

NamedParams Backbone::base_params(const std::string& prefix) const {
    NamedParams out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        std::string base = prefix + ".layer." + std::to_string(l);
        out.emplace_back(base + ".wq", layer.wq);
        out.emplace_back(base + ".wk", layer.wk);
        out.emplace_back(base + ".wv", layer.wv);
        out.emplace_back(base + ".wo", layer.wo);
        out.emplace_back(base + ".ln1.g", layer.ln1_g);
        out.emplace_back(base + ".ln1.b", layer.ln1_b);
        out.emplace_back(base + ".ln2.g", layer.ln2_g);
        out.emplace_back(base + ".ln2.b", layer.ln2_b);
        out.emplace_back(base + ".ffn1.w", layer.ffn1_w);
        out.emplace_back(base + ".ffn1.b", layer.ffn1_b);
        out.emplace_back(base + ".ffn2.w", layer.ffn2_w);
        out.emplace_back(base + ".ffn2.b", layer.ffn2_b);
    }
    return out;
}

std::uint64_t Backbone::base_hash() const {
    std::uint64_t h = 0x811c9dc5u;
    for (const auto& [name, t] : base_params("base")) {
        h = mix_seed(h, hash_doubles(t.data()));
    }
    return h;
}

}  // namespace mmsense
