#include "mmsense/heads.hpp"

#include <array>
#include <string>

#include "mmsense/encoders.hpp"

namespace mmsense {

std::vector<std::size_t> default_taps(std::size_t layers, std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i <= k; ++i) out.push_back((i * layers + k - 1) / k);
    return out;
}

TaskHead::TaskHead(Task task, const std::vector<std::size_t>& taps, std::size_t layers,
                   std::size_t d_model, std::size_t hidden, std::size_t out_dim, Rng& rng)
    : task_(task), taps_(taps) {
    if (taps_.empty()) throw ConfigError("task head needs at least one tap layer");
    for (std::size_t k = 0; k < taps_.size(); ++k) {
        if (taps_[k] == 0 || taps_[k] > layers)
            throw ConfigError("tap layer " + std::to_string(taps_[k]) +
                              " outside [1, " + std::to_string(layers) + "]");
        if (k > 0 && taps_[k] <= taps_[k - 1])
            throw ConfigError("tap layers must be strictly increasing");
    }
    for (std::size_t k = 0; k < taps_.size(); ++k) {
        std::size_t in_dim = k == 0 ? d_model : 2 * d_model;
        Stage st;
        st.ln_g = Tensor::full({in_dim}, 1.0, true);
        st.ln_s = Tensor::zeros({in_dim}, true);
        st.gate_w = init_matrix(rng, {in_dim, in_dim}, in_dim);
        st.gate_b = Tensor::zeros({in_dim}, true);
        st.w1 = init_matrix(rng, {in_dim, hidden}, in_dim);
        st.b1 = Tensor::zeros({hidden}, true);
        st.w2 = init_matrix(rng, {hidden, d_model}, hidden);
        st.b2 = Tensor::zeros({d_model}, true);
        stages_.push_back(std::move(st));
    }
    out_w_ = init_matrix(rng, {d_model, out_dim}, d_model);
    out_b_ = Tensor::zeros({out_dim}, true);
}

Tensor TaskHead::pooled_last(const HiddenStates& hs) const {
    return mean_rows(hs.layers.back());
}

Tensor TaskHead::feature(const HiddenStates& hs) const {
    Tensor z;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        Tensor pooled = mean_rows(hs.layers[taps_[k] - 1]);
        Tensor raw = k == 0 ? pooled : concat_cols(std::array<Tensor, 2>{z, pooled});
        const Stage& st = stages_[k];
        Tensor x = layer_norm(raw, st.ln_g, st.ln_s);
        Tensor gated = mul(x, sigmoid(linear(x, st.gate_w, &st.gate_b)));
        Tensor h = relu(linear(gated, st.w1, &st.b1));
        z = linear(h, st.w2, &st.b2);
    }
    return z;
}

Tensor TaskHead::output(const Tensor& feature) const {
    return linear(feature, out_w_, &out_b_);
}

NamedParams TaskHead::attention_params(const std::string& prefix) const {
    NamedParams out;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const Stage& st = stages_[k];
        std::string base = prefix + ".stage" + std::to_string(k) + ".";
        out.emplace_back(base + "ln_g", st.ln_g);
        out.emplace_back(base + "ln_s", st.ln_s);
        out.emplace_back(base + "gate_w", st.gate_w);
        out.emplace_back(base + "gate_b", st.gate_b);
        out.emplace_back(base + "w1", st.w1);
        out.emplace_back(base + "b1", st.b1);
        out.emplace_back(base + "w2", st.w2);
        out.emplace_back(base + "b2", st.b2);
    }
    return out;
}

NamedParams TaskHead::output_params(const std::string& prefix) const {
    return {{prefix + ".out_w", out_w_}, {prefix + ".out_b", out_b_}};
}

TaskHeads::TaskHeads(const GeneratorConfig& gen, const ModelConfig& model, Rng& rng)
    : num_keypoints_(gen.num_keypoints) {
    auto taps = model.resolved_taps();
    std::array<std::size_t, 4> out_dims = {gen.num_beams, gen.num_activities,
                                           gen.num_keypoints * 3, 1};
    for (Task t : kAllTasks) {
        heads_.emplace_back(t, taps, model.layers, model.d_model, model.d_model,
                            out_dims[static_cast<std::size_t>(t)], rng);
    }
}

Tensor TaskHeads::task_output(Task task, const HiddenStates& hs, bool no_task_attention) const {
    const TaskHead& h = head(task);
    Tensor feat = no_task_attention ? h.pooled_last(hs) : h.feature(hs);
    return h.output(feat);
}

TaskOutputs TaskHeads::forward(const std::array<HiddenStates, 4>& per_task_hs,
                               bool no_task_attention) const {
    TaskOutputs out;
    out.beam_logits = task_output(Task::BP, per_task_hs[0], no_task_attention);
    out.har_logits = task_output(Task::HAR, per_task_hs[1], no_task_attention);
    Tensor hpe = task_output(Task::HPE, per_task_hs[2], no_task_attention);
    out.keypoints_pred = reshape(hpe, {num_keypoints_, 3});
    out.blockage_logit = task_output(Task::FBP, per_task_hs[3], no_task_attention);
    return out;
}

NamedParams TaskHeads::trainable_params(const std::string& prefix) const {
    NamedParams out;
    for (const TaskHead& h : heads_) {
        std::string base = prefix + "." + task_name(h.task());
        for (auto& p : h.attention_params(base + ".att")) out.push_back(std::move(p));
        for (auto& p : h.output_params(base)) out.push_back(std::move(p));
    }
    return out;
}

}  // namespace mmsense
