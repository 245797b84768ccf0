#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wlas/corpus.hpp"
#include "wlas/features.hpp"
#include "wlas/layers.hpp"

namespace wlas {

enum class Modality { Audio, Lips, Both };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Audio: return "audio";
        case Modality::Lips: return "lips";
        case Modality::Both: return "both";
    }
    return "?";
}

inline Modality modality_from_name(const std::string& s) {
    if (s == "audio") return Modality::Audio;
    if (s == "lips") return Modality::Lips;
    if (s == "both") return Modality::Both;
    fail("unknown modality '" + s + "' (expected audio|lips|both)");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int video_height = 32;
    int video_width = 32;
    std::string conv_preset = "tiny";  // tiny | paper
    int conv_channels1 = 8;
    int conv_channels2 = 16;
    int conv_out = 48;  // forced to 512 by the paper preset
    int watch_layers = 1;
    int watch_hidden = 48;
    int listen_layers = 1;
    int listen_hidden = 48;
    int spell_layers = 1;  // spell hidden is watch_hidden + listen_hidden
    int attention_dim = 48;
    int embed_dim = 16;
    int mlp_hidden = 128;
    int audio_dim = 13;
    double dropout = 0.1;
    double label_smoothing = 0.1;
    double init_range = 0.08;
    int max_decode_len = 100;

    int spell_hidden() const { return watch_hidden + listen_hidden; }

    // The full-scale configuration: 120x120 inputs through the VGG-M style
    // stack, three-layer encoders of cell 256 and a three-layer cell-512
    // decoder.
    static ModelConfig paper() {
        ModelConfig c;
        c.video_height = c.video_width = 120;
        c.conv_preset = "paper";
        c.conv_out = 512;
        c.watch_layers = c.listen_layers = c.spell_layers = 3;
        c.watch_hidden = c.listen_hidden = 256;
        c.attention_dim = 256;
        c.mlp_hidden = 256;
        return c;
    }

    // CPU-friendly default used by the synthetic-corpus experiments.
    static ModelConfig desk() { return ModelConfig{}; }

    ConvPreset make_conv_preset() const {
        check(video_height == video_width, "ModelConfig: video must be square");
        if (conv_preset == "paper") {
            ConvPreset p = ConvPreset::paper();
            check(video_height == p.input_size, "ModelConfig: paper conv preset expects 120x120 input");
            return p;
        }
        if (conv_preset == "tiny")
            return ConvPreset::tiny(video_height, conv_out, conv_channels1, conv_channels2);
        fail("ModelConfig: unknown conv preset '" + conv_preset + "'");
    }

    ordered_json to_json() const {
        return ordered_json{{"video_height", video_height},
                            {"video_width", video_width},
                            {"conv_preset", conv_preset},
                            {"conv_channels1", conv_channels1},
                            {"conv_channels2", conv_channels2},
                            {"conv_out", conv_out},
                            {"watch_layers", watch_layers},
                            {"watch_hidden", watch_hidden},
                            {"listen_layers", listen_layers},
                            {"listen_hidden", listen_hidden},
                            {"spell_layers", spell_layers},
                            {"attention_dim", attention_dim},
                            {"embed_dim", embed_dim},
                            {"mlp_hidden", mlp_hidden},
                            {"audio_dim", audio_dim},
                            {"dropout", dropout},
                            {"label_smoothing", label_smoothing},
                            {"init_range", init_range},
                            {"max_decode_len", max_decode_len}};
    }

    static ModelConfig from_json(const ordered_json& j) {
        ModelConfig c;
        c.video_height = j.at("video_height").get<int>();
        c.video_width = j.at("video_width").get<int>();
        c.conv_preset = j.at("conv_preset").get<std::string>();
        c.conv_channels1 = j.at("conv_channels1").get<int>();
        c.conv_channels2 = j.at("conv_channels2").get<int>();
        c.conv_out = j.at("conv_out").get<int>();
        c.watch_layers = j.at("watch_layers").get<int>();
        c.watch_hidden = j.at("watch_hidden").get<int>();
        c.listen_layers = j.at("listen_layers").get<int>();
        c.listen_hidden = j.at("listen_hidden").get<int>();
        c.spell_layers = j.at("spell_layers").get<int>();
        c.attention_dim = j.at("attention_dim").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.mlp_hidden = j.at("mlp_hidden").get<int>();
        c.audio_dim = j.at("audio_dim").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.label_smoothing = j.at("label_smoothing").get<double>();
        c.init_range = j.at("init_range").get<double>();
        c.max_decode_len = j.at("max_decode_len").get<int>();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename Real>
struct ModelParams {
    ModelConfig config;
    CharVocabulary vocab = CharVocabulary::standard();
    ConvParams<Real> conv;
    std::vector<LstmLayerParams<Real>> watch, listen, spell;
    AttentionParams<Real> attn_video, attn_audio;
    NDArray<Real> embed;  // (V, embed_dim)
    NDArray<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    static ModelParams sized(const ModelConfig& cfg, const CharVocabulary& vocab) {
        ModelParams p;
        p.config = cfg;
        p.vocab = vocab;
        p.conv = ConvParams<Real>::sized(cfg.make_conv_preset());
        check(cfg.spell_hidden() == cfg.watch_hidden + cfg.listen_hidden,
              "ModelParams: spell hidden size must equal watch + listen hidden sizes");
        for (int l = 0; l < cfg.watch_layers; ++l)
            p.watch.push_back(LstmLayerParams<Real>::sized(l == 0 ? cfg.conv_out : cfg.watch_hidden,
                                                           cfg.watch_hidden));
        for (int l = 0; l < cfg.listen_layers; ++l)
            p.listen.push_back(LstmLayerParams<Real>::sized(l == 0 ? cfg.audio_dim : cfg.listen_hidden,
                                                            cfg.listen_hidden));
        const int spell_in = cfg.embed_dim + cfg.watch_hidden + cfg.listen_hidden;
        for (int l = 0; l < cfg.spell_layers; ++l)
            p.spell.push_back(LstmLayerParams<Real>::sized(l == 0 ? spell_in : cfg.spell_hidden(),
                                                           cfg.spell_hidden()));
        p.attn_video = AttentionParams<Real>::sized(cfg.attention_dim, cfg.spell_hidden(), cfg.watch_hidden);
        p.attn_audio = AttentionParams<Real>::sized(cfg.attention_dim, cfg.spell_hidden(), cfg.listen_hidden);
        p.embed = NDArray<Real>({vocab.size(), cfg.embed_dim});
        const int mlp_in = cfg.spell_hidden() + cfg.watch_hidden + cfg.listen_hidden;
        p.mlp_w1 = NDArray<Real>({cfg.mlp_hidden, mlp_in});
        p.mlp_b1 = NDArray<Real>({cfg.mlp_hidden});
        p.mlp_w2 = NDArray<Real>({vocab.size(), cfg.mlp_hidden});
        p.mlp_b2 = NDArray<Real>({vocab.size()});
        return p;
    }

    static ModelParams init(const ModelConfig& cfg, const CharVocabulary& vocab, std::uint64_t seed) {
        ModelParams p = sized(cfg, vocab);
        Rng rng(seed);
        for (auto& [name, arr] : p.fields())
            for (std::int64_t i = 0; i < arr->size(); ++i)
                (*arr)[i] = static_cast<Real>(rng.uniform(-cfg.init_range, cfg.init_range));
        return p;
    }

    std::vector<std::pair<std::string, NDArray<Real>*>> fields() {
        std::vector<std::pair<std::string, NDArray<Real>*>> out;
        auto extend = [&](std::vector<std::pair<std::string, NDArray<Real>*>> v) {
            for (auto& e : v) out.push_back(std::move(e));
        };
        extend(conv.fields("conv"));
        for (std::size_t l = 0; l < watch.size(); ++l) extend(watch[l].fields("watch.l" + std::to_string(l)));
        for (std::size_t l = 0; l < listen.size(); ++l) extend(listen[l].fields("listen.l" + std::to_string(l)));
        for (std::size_t l = 0; l < spell.size(); ++l) extend(spell[l].fields("spell.l" + std::to_string(l)));
        extend(attn_video.fields("attn_video"));
        extend(attn_audio.fields("attn_audio"));
        out.emplace_back("embed", &embed);
        out.emplace_back("mlp.w1", &mlp_w1);
        out.emplace_back("mlp.b1", &mlp_b1);
        out.emplace_back("mlp.w2", &mlp_w2);
        out.emplace_back("mlp.b2", &mlp_b2);
        return out;
    }

    std::vector<std::pair<std::string, const NDArray<Real>*>> fields() const {
        std::vector<std::pair<std::string, const NDArray<Real>*>> out;
        for (auto& [name, arr] : const_cast<ModelParams*>(this)->fields()) out.emplace_back(name, arr);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, arr] : fields()) n += arr->size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Input preparation (modality zeroing)
// ---------------------------------------------------------------------------

// A disabled modality is replaced with all-zeros before encoding; the
// encoders always run. Audio-only utterances get a nominal zero video of
// ceil(T_a / 4) frames (minimum 5 so a window exists).
template <typename Real>
struct PreparedInputs {
    NDArray<Real> video_windows;  // (T_v - 4, 5*H*W)
    NDArray<Real> audio;          // (T_a, 13)
};

template <typename Real>
PreparedInputs<Real> prepare_inputs(const ModelConfig& cfg, const Utterance<Real>& utt, Modality mode,
                                    const NoiseConfig& noise = NoiseConfig::clean_config()) {
    check(utt.audio_frames() > 0, "prepare_inputs: utterance has no audio features");
    check(utt.audio.dim(1) == cfg.audio_dim, "prepare_inputs: audio feature dim mismatch");
    PreparedInputs<Real> out;

    const bool use_video = mode != Modality::Audio && utt.has_video;
    if (use_video) {
        check(utt.video.dim(1) == cfg.video_height && utt.video.dim(2) == cfg.video_width,
              "prepare_inputs: video geometry mismatch");
        out.video_windows = window_frames(utt.video).windows;
    } else {
        const int tv = std::max(5, utt.has_video ? utt.video.dim(0)
                                                 : (utt.audio_frames() + 3) / 4);
        out.video_windows = NDArray<Real>({tv - 4, 5 * cfg.video_height * cfg.video_width}, Real(0));
    }

    if (mode == Modality::Lips) {
        out.audio = NDArray<Real>({utt.audio_frames(), cfg.audio_dim}, Real(0));
    } else {
        out.audio = utt.audio;
        if (!noise.clean) out.audio = add_awgn(std::move(out.audio), noise);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

namespace graph {

template <typename Real>
int maybe_dropout(Tape<Real>& t, int node, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return node;
    const auto& v = t.value(node);
    NDArray<Real> mask(v.shape());
    const Real scale = static_cast<Real>(1.0 / (1.0 - rate));
    for (std::int64_t i = 0; i < mask.size(); ++i)
        mask[i] = rng->bernoulli(rate) ? Real(0) : scale;
    return t.mul(node, t.constant(std::move(mask)));
}

template <typename Real>
struct EncoderNodes {
    int outputs = -1;  // (T, H)
    int proj = -1;     // (T, A) attention projection
    int state = -1;    // (H) final hidden, reverse-time recursion end
    int timesteps = 0;
};

// Shared by Watch and Listen: consume per-timestep feature nodes in reverse
// temporal order through the layer stack; report outputs in original order.
template <typename Real>
EncoderNodes<Real> run_encoder_stack(Tape<Real>& t, const std::string& prefix,
                                     const std::vector<LstmLayerParams<Real>>& layers,
                                     const std::vector<int>& features_in_time_order,
                                     const AttentionParams<Real>& attn, const std::string& attn_prefix,
                                     double dropout, Rng* rng) {
    const int steps = static_cast<int>(features_in_time_order.size());
    check(steps > 0, prefix + ": empty input sequence");
    const int hidden = layers.front().hidden_size;
    std::vector<int> cur(features_in_time_order.rbegin(), features_in_time_order.rend());
    int final_h = -1;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const int zero = t.constant(NDArray<Real>({hidden}, Real(0)));
        LstmStepNodes<Real> state{zero, zero};
        std::vector<int> next(cur.size());
        for (std::size_t s = 0; s < cur.size(); ++s) {
            int x = cur[s];
            if (l > 0) x = maybe_dropout(t, x, dropout, rng);
            state = lstm_step_nodes(t, prefix + ".l" + std::to_string(l), layers[l], x, state);
            next[s] = state.h;
        }
        cur = std::move(next);
        final_h = state.h;
    }
    EncoderNodes<Real> out;
    out.timesteps = steps;
    out.state = final_h;
    std::vector<int> in_time_order(cur.rbegin(), cur.rend());
    out.outputs = t.stack_rows(in_time_order);
    out.proj = attention_projection_nodes(t, attn_prefix, attn, out.outputs);
    return out;
}

template <typename Real>
EncoderNodes<Real> build_watch(Tape<Real>& t, const ModelParams<Real>& p, int windows_node,
                               double dropout, Rng* rng) {
    const auto& w = t.value(windows_node);
    check(w.rank() == 2 && w.dim(0) > 0, "watch_encode: expected a nonempty (T, 5*H*W) window matrix");
    const int hw = p.config.video_height * p.config.video_width;
    check(w.dim(1) == 5 * hw, "watch_encode: window width mismatch");
    const int steps = w.dim(0);
    // A zeroed video stream makes every window identical, so one shared conv
    // node is exact: its gradient fan-in equals the sum over the T windows.
    bool all_zero = true;
    for (std::int64_t i = 0; i < w.size() && all_zero; ++i)
        if (w[i] != Real(0)) all_zero = false;
    std::vector<int> feats;
    if (all_zero) {
        const int win = t.reshape(t.row(windows_node, 0), {5, p.config.video_height, p.config.video_width});
        const int shared = conv_encode_nodes(t, "conv", p.conv, win);
        feats.assign(static_cast<std::size_t>(steps), shared);
    } else {
        for (int i = 0; i < steps; ++i) {
            const int win =
                t.reshape(t.row(windows_node, i), {5, p.config.video_height, p.config.video_width});
            feats.push_back(conv_encode_nodes(t, "conv", p.conv, win));
        }
    }
    return run_encoder_stack(t, "watch", p.watch, feats, p.attn_video, "attn_video", dropout, rng);
}

template <typename Real>
EncoderNodes<Real> build_listen(Tape<Real>& t, const ModelParams<Real>& p, int audio_node,
                                double dropout, Rng* rng) {
    const auto& a = t.value(audio_node);
    check(a.rank() == 2 && a.dim(0) > 0, "listen_encode: expected a nonempty (T, 13) feature matrix");
    check(a.dim(1) == p.config.audio_dim, "listen_encode: feature dim mismatch");
    const int steps = a.dim(0);
    std::vector<int> feats;
    for (int i = 0; i < steps; ++i) feats.push_back(t.row(audio_node, i));
    return run_encoder_stack(t, "listen", p.listen, feats, p.attn_audio, "attn_audio", dropout, rng);
}

template <typename Real>
struct SpellStepNodes {
    std::vector<LstmStepNodes<Real>> layers;
    int ctx_v = -1, ctx_a = -1;
    int alpha_v = -1, alpha_a = -1;
    int logits = -1;
};

// One decoder step: x = [embed(prev token); prev contexts] through the spell
// stack, dual attention queried with the top hidden state, then the output
// MLP.
template <typename Real>
SpellStepNodes<Real> build_spell_step(Tape<Real>& t, const ModelParams<Real>& p,
                                      const std::vector<LstmStepNodes<Real>>& prev_layers,
                                      int prev_ctx_v, int prev_ctx_a, int prev_token,
                                      const EncoderNodes<Real>& venc, const EncoderNodes<Real>& aenc,
                                      double dropout, Rng* rng) {
    const int emb = t.row(t.param("embed", p.embed), prev_token);
    const int x0 = t.concat({emb, prev_ctx_v, prev_ctx_a});
    SpellStepNodes<Real> out;
    int x = x0;
    for (std::size_t l = 0; l < p.spell.size(); ++l) {
        if (l > 0) x = maybe_dropout(t, x, dropout, rng);
        out.layers.push_back(
            lstm_step_nodes(t, "spell.l" + std::to_string(l), p.spell[l], x, prev_layers[l]));
        x = out.layers.back().h;
    }
    const int query = out.layers.back().h;
    const auto att_v = attend_nodes(t, "attn_video", p.attn_video, query, venc.outputs, venc.proj);
    const auto att_a = attend_nodes(t, "attn_audio", p.attn_audio, query, aenc.outputs, aenc.proj);
    out.ctx_v = att_v.context;
    out.ctx_a = att_a.context;
    out.alpha_v = att_v.alpha;
    out.alpha_a = att_a.alpha;
    const int mlp_in = t.concat({query, out.ctx_v, out.ctx_a});
    const int hidden = t.tanh(t.add(t.matmul(t.param("mlp.w1", p.mlp_w1), mlp_in), t.param("mlp.b1", p.mlp_b1)));
    out.logits = t.add(t.matmul(t.param("mlp.w2", p.mlp_w2), hidden), t.param("mlp.b2", p.mlp_b2));
    return out;
}

// Initial decoder state: layer 1 hidden = concat(s^a, s^v), everything else
// zero.
template <typename Real>
std::vector<LstmStepNodes<Real>> initial_spell_state(Tape<Real>& t, const ModelParams<Real>& p,
                                                     int s_video, int s_audio) {
    std::vector<LstmStepNodes<Real>> layers;
    const int zero = t.constant(NDArray<Real>({p.config.spell_hidden()}, Real(0)));
    layers.push_back({t.concat({s_audio, s_video}), zero});
    for (int l = 1; l < p.config.spell_layers; ++l) layers.push_back({zero, zero});
    return layers;
}

}  // namespace graph

// ---------------------------------------------------------------------------
// Public encoder operations
// ---------------------------------------------------------------------------

template <typename Real>
struct EncoderOutput {
    NDArray<Real> state;    // (H) final hidden vector
    NDArray<Real> outputs;  // (T, H) per-timestep outputs in temporal order
};

template <typename Real>
EncoderOutput<Real> watch_encode(const NDArray<Real>& video_windows, const ModelParams<Real>& p) {
    Tape<Real> t;
    auto enc = graph::build_watch(t, p, t.constant(video_windows), 0.0, nullptr);
    return {t.value(enc.state), t.value(enc.outputs)};
}

template <typename Real>
EncoderOutput<Real> listen_encode(const NDArray<Real>& audio, const ModelParams<Real>& p) {
    Tape<Real> t;
    auto enc = graph::build_listen(t, p, t.constant(audio), 0.0, nullptr);
    return {t.value(enc.state), t.value(enc.outputs)};
}

// ---------------------------------------------------------------------------
// Sequence loss (training forward/backward)
// ---------------------------------------------------------------------------

struct LossOptions {
    double sampling_prob = 0.0;   // scheduled sampling probability
    double label_smoothing = 0.1;
    double dropout = 0.0;         // 0 disables
    Rng* rng = nullptr;           // required when sampling_prob > 0 or dropout > 0
    bool compute_grads = true;
};

template <typename Real>
struct LossResult {
    Real loss = Real(0);
    std::unordered_map<std::string, NDArray<Real>> gradients;
};

template <typename Real>
LossResult<Real> sequence_loss(const ModelParams<Real>& params, const Utterance<Real>& utt,
                               Modality mode, const LossOptions& opt,
                               const NoiseConfig& noise = NoiseConfig::clean_config()) {
    check(!utt.transcript.empty(), "sequence_loss: empty transcript");
    check((opt.sampling_prob <= 0.0 && opt.dropout <= 0.0) || opt.rng != nullptr,
          "sequence_loss: sampling/dropout require an RNG");
    const auto inputs = prepare_inputs(params.config, utt, mode, noise);

    Tape<Real> t;
    const int windows = t.input("video_windows", inputs.video_windows);
    const int audio = t.input("audio", inputs.audio);
    const auto venc = graph::build_watch(t, params, windows, opt.dropout, opt.rng);
    const auto aenc = graph::build_listen(t, params, audio, opt.dropout, opt.rng);

    auto state = graph::initial_spell_state(t, params, venc.state, aenc.state);
    const int att_dim_zero_v = t.constant(NDArray<Real>({params.config.watch_hidden}, Real(0)));
    const int att_dim_zero_a = t.constant(NDArray<Real>({params.config.listen_hidden}, Real(0)));
    int ctx_v = att_dim_zero_v, ctx_a = att_dim_zero_a;

    const std::vector<int> chars = params.vocab.char_ids(utt.transcript);
    std::vector<int> targets = chars;
    targets.push_back(params.vocab.eos());

    int prev_token = params.vocab.sos();
    std::vector<int> step_losses;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        auto step = graph::build_spell_step(t, params, state, ctx_v, ctx_a, prev_token, venc, aenc,
                                            opt.dropout, opt.rng);
        step_losses.push_back(
            t.cross_entropy(step.logits, targets[k], static_cast<Real>(opt.label_smoothing)));
        state = step.layers;
        ctx_v = step.ctx_v;
        ctx_a = step.ctx_a;
        // scheduled sampling: with probability p the next step conditions on
        // a token drawn from this step's predicted distribution
        prev_token = targets[k];
        if (opt.sampling_prob > 0.0 && opt.rng->bernoulli(opt.sampling_prob)) {
            const auto& dist = t.value(t.softmax(step.logits));
            double u = opt.rng->uniform();
            int sampled = static_cast<int>(dist.size()) - 1;
            for (std::int64_t i = 0; i < dist.size(); ++i) {
                u -= static_cast<double>(dist[i]);
                if (u <= 0.0) {
                    sampled = static_cast<int>(i);
                    break;
                }
            }
            prev_token = sampled;
        }
    }

    int total = step_losses.front();
    for (std::size_t k = 1; k < step_losses.size(); ++k) total = t.add(total, step_losses[k]);
    const int loss = t.scale(total, static_cast<Real>(1.0 / static_cast<double>(step_losses.size())));
    t.mark_output("loss", loss);

    LossResult<Real> out;
    out.loss = t.value(loss)[0];
    check(std::isfinite(static_cast<double>(out.loss)), "sequence_loss: loss is not finite");
    if (opt.compute_grads) {
        t.backward(loss);
        for (const auto& [name, g] : t.param_grads()) out.gradients.emplace(name, *g);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Encoder pass evaluated once per utterance; plain arrays shared by every
// decode step and every beam hypothesis.
template <typename Real>
struct EncodedUtterance {
    NDArray<Real> v_outputs, v_proj, s_v;
    NDArray<Real> a_outputs, a_proj, s_a;
};

template <typename Real>
EncodedUtterance<Real> encode_utterance(const ModelParams<Real>& params, const Utterance<Real>& utt,
                                        Modality mode,
                                        const NoiseConfig& noise = NoiseConfig::clean_config()) {
    const auto inputs = prepare_inputs(params.config, utt, mode, noise);
    Tape<Real> t;
    const auto venc = graph::build_watch(t, params, t.constant(inputs.video_windows), 0.0, nullptr);
    const auto aenc = graph::build_listen(t, params, t.constant(inputs.audio), 0.0, nullptr);
    return {t.value(venc.outputs), t.value(venc.proj), t.value(venc.state),
            t.value(aenc.outputs), t.value(aenc.proj), t.value(aenc.state)};
}

template <typename Real>
struct DecoderState {
    std::vector<std::pair<NDArray<Real>, NDArray<Real>>> layers;  // (h, c) per spell layer
    NDArray<Real> ctx_v, ctx_a;
    int prev_token = -1;
};

template <typename Real>
DecoderState<Real> initial_decoder_state(const ModelParams<Real>& params,
                                         const EncodedUtterance<Real>& enc) {
    DecoderState<Real> s;
    NDArray<Real> h0({params.config.spell_hidden()});
    const int la = params.config.listen_hidden;
    std::copy(enc.s_a.data(), enc.s_a.data() + la, h0.data());
    std::copy(enc.s_v.data(), enc.s_v.data() + params.config.watch_hidden, h0.data() + la);
    s.layers.emplace_back(std::move(h0), NDArray<Real>({params.config.spell_hidden()}, Real(0)));
    for (int l = 1; l < params.config.spell_layers; ++l)
        s.layers.emplace_back(NDArray<Real>({params.config.spell_hidden()}, Real(0)),
                              NDArray<Real>({params.config.spell_hidden()}, Real(0)));
    s.ctx_v = NDArray<Real>({params.config.watch_hidden}, Real(0));
    s.ctx_a = NDArray<Real>({params.config.listen_hidden}, Real(0));
    s.prev_token = params.vocab.sos();
    return s;
}

template <typename Real>
struct SpellStepResult {
    NDArray<Real> distribution;  // probabilities over the vocabulary
    std::vector<double> log_probs;
    DecoderState<Real> next;
    NDArray<Real> alpha_v, alpha_a;
};

template <typename Real>
SpellStepResult<Real> spell_step(const ModelParams<Real>& params, const EncodedUtterance<Real>& enc,
                                 const DecoderState<Real>& state) {
    check(state.layers.size() == params.spell.size(), "spell_step: malformed decoder state");
    Tape<Real> t;
    graph::EncoderNodes<Real> venc{t.constant(enc.v_outputs), t.constant(enc.v_proj), -1,
                                   enc.v_outputs.dim(0)};
    graph::EncoderNodes<Real> aenc{t.constant(enc.a_outputs), t.constant(enc.a_proj), -1,
                                   enc.a_outputs.dim(0)};
    std::vector<LstmStepNodes<Real>> prev;
    for (const auto& [h, c] : state.layers) prev.push_back({t.constant(h), t.constant(c)});
    auto step = graph::build_spell_step(t, params, prev, t.constant(state.ctx_v), t.constant(state.ctx_a),
                                        state.prev_token, venc, aenc, 0.0, nullptr);

    SpellStepResult<Real> out;
    out.distribution = t.value(t.softmax(step.logits));
    const auto& z = t.value(step.logits);
    double mx = static_cast<double>(z[0]);
    for (std::int64_t i = 1; i < z.size(); ++i) mx = std::max(mx, static_cast<double>(z[i]));
    double norm = 0.0;
    for (std::int64_t i = 0; i < z.size(); ++i) norm += std::exp(static_cast<double>(z[i]) - mx);
    const double lse = mx + std::log(norm);
    out.log_probs.resize(static_cast<std::size_t>(z.size()));
    for (std::int64_t i = 0; i < z.size(); ++i)
        out.log_probs[static_cast<std::size_t>(i)] = static_cast<double>(z[i]) - lse;

    out.next.layers.reserve(step.layers.size());
    for (const auto& l : step.layers) out.next.layers.emplace_back(t.value(l.h), t.value(l.c));
    out.next.ctx_v = t.value(step.ctx_v);
    out.next.ctx_a = t.value(step.ctx_a);
    out.alpha_v = t.value(step.alpha_v);
    out.alpha_a = t.value(step.alpha_a);
    return out;
}

// Sum over steps of log P(token_k | prefix), recomputed step by step — the
// independent scoring route used to validate beam hypothesis scores.
template <typename Real>
double teacher_forced_logprob(const ModelParams<Real>& params, const EncodedUtterance<Real>& enc,
                              const std::vector<int>& tokens, bool include_eos) {
    DecoderState<Real> state = initial_decoder_state(params, enc);
    double total = 0.0;
    for (int tok : tokens) {
        auto step = spell_step(params, enc, state);
        total += step.log_probs[static_cast<std::size_t>(tok)];
        state = std::move(step.next);
        state.prev_token = tok;
    }
    if (include_eos) {
        auto step = spell_step(params, enc, state);
        total += step.log_probs[static_cast<std::size_t>(params.vocab.eos())];
    }
    return total;
}

}  // namespace wlas
