#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wlas/tape.hpp"

namespace wlas {

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

// Gate equations, with peephole terms on all three gates:
//   i = sigmoid(W_xi x + W_hi h + W_ci c      + b_i)
//   f = sigmoid(W_xf x + W_hf h + W_cf c      + b_f)
//   c_t = f * c + i * tanh(W_xc x + W_hc h + b_c)
//   o = sigmoid(W_xo x + W_ho h + W_co c_t    + b_o)   (peephole on the new cell)
//   h_t = o * tanh(c_t)
template <typename Real>
struct LstmLayerParams {
    NDArray<Real> w_xi, w_hi, w_ci, b_i;
    NDArray<Real> w_xf, w_hf, w_cf, b_f;
    NDArray<Real> w_xo, w_ho, w_co, b_o;
    NDArray<Real> w_xc, w_hc, b_c;
    int input_size = 0;
    int hidden_size = 0;

    static LstmLayerParams sized(int input, int hidden) {
        LstmLayerParams p;
        p.input_size = input;
        p.hidden_size = hidden;
        auto xm = [&] { return NDArray<Real>({hidden, input}); };
        auto hm = [&] { return NDArray<Real>({hidden, hidden}); };
        auto bv = [&] { return NDArray<Real>({hidden}); };
        p.w_xi = xm(); p.w_hi = hm(); p.w_ci = hm(); p.b_i = bv();
        p.w_xf = xm(); p.w_hf = hm(); p.w_cf = hm(); p.b_f = bv();
        p.w_xo = xm(); p.w_ho = hm(); p.w_co = hm(); p.b_o = bv();
        p.w_xc = xm(); p.w_hc = hm(); p.b_c = bv();
        return p;
    }

    std::vector<std::pair<std::string, NDArray<Real>*>> fields(const std::string& prefix) {
        return {{prefix + ".w_xi", &w_xi}, {prefix + ".w_hi", &w_hi}, {prefix + ".w_ci", &w_ci},
                {prefix + ".b_i", &b_i},   {prefix + ".w_xf", &w_xf}, {prefix + ".w_hf", &w_hf},
                {prefix + ".w_cf", &w_cf}, {prefix + ".b_f", &b_f},   {prefix + ".w_xo", &w_xo},
                {prefix + ".w_ho", &w_ho}, {prefix + ".w_co", &w_co}, {prefix + ".b_o", &b_o},
                {prefix + ".w_xc", &w_xc}, {prefix + ".w_hc", &w_hc}, {prefix + ".b_c", &b_c}};
    }
};

template <typename Real>
struct LstmStepNodes {
    int h = -1;
    int c = -1;
};

template <typename Real>
LstmStepNodes<Real> lstm_step_nodes(Tape<Real>& t, const std::string& prefix,
                                    const LstmLayerParams<Real>& p, int x,
                                    const LstmStepNodes<Real>& prev) {
    auto P = [&](const char* field, const NDArray<Real>& a) { return t.param(prefix + field, a); };
    const int i_gate = t.sigmoid(t.add(t.add(t.matmul(P(".w_xi", p.w_xi), x), t.matmul(P(".w_hi", p.w_hi), prev.h)),
                                       t.add(t.matmul(P(".w_ci", p.w_ci), prev.c), P(".b_i", p.b_i))));
    const int f_gate = t.sigmoid(t.add(t.add(t.matmul(P(".w_xf", p.w_xf), x), t.matmul(P(".w_hf", p.w_hf), prev.h)),
                                       t.add(t.matmul(P(".w_cf", p.w_cf), prev.c), P(".b_f", p.b_f))));
    const int candidate = t.tanh(t.add(t.add(t.matmul(P(".w_xc", p.w_xc), x), t.matmul(P(".w_hc", p.w_hc), prev.h)),
                                       P(".b_c", p.b_c)));
    const int c_t = t.add(t.mul(f_gate, prev.c), t.mul(i_gate, candidate));
    const int o_gate = t.sigmoid(t.add(t.add(t.matmul(P(".w_xo", p.w_xo), x), t.matmul(P(".w_ho", p.w_ho), prev.h)),
                                       t.add(t.matmul(P(".w_co", p.w_co), c_t), P(".b_o", p.b_o))));
    return {t.mul(o_gate, t.tanh(c_t)), c_t};
}

// Plain-array single step.
template <typename Real>
std::pair<NDArray<Real>, NDArray<Real>> lstm_step(const NDArray<Real>& x, const NDArray<Real>& h_prev,
                                                  const NDArray<Real>& c_prev,
                                                  const LstmLayerParams<Real>& p) {
    check(x.rank() == 1 && x.dim(0) == p.input_size,
          "lstm_step: input size mismatch, expected " + std::to_string(p.input_size));
    check(h_prev.rank() == 1 && h_prev.dim(0) == p.hidden_size &&
          c_prev.rank() == 1 && c_prev.dim(0) == p.hidden_size,
          "lstm_step: state size mismatch, expected " + std::to_string(p.hidden_size));
    Tape<Real> t;
    LstmStepNodes<Real> prev{t.constant(h_prev), t.constant(c_prev)};
    auto out = lstm_step_nodes(t, "lstm", p, t.constant(x), prev);
    return {t.value(out.h), t.value(out.c)};
}

// ---------------------------------------------------------------------------
// Convolutional image encoder
// ---------------------------------------------------------------------------

struct ConvLayerSpec {
    enum class Kind { Conv, Pool } kind = Kind::Conv;
    int filters = 0;  // conv only
    int support = 3;
    int stride = 1;
    int pad = 0;
};

// Layer list of a preset; spatial sizes follow from standard convolution
// arithmetic. The "paper" preset maps a 120x120 5-frame window to a
// 512-dimensional vector through the conv1..pool5 + fc6 chain.
struct ConvPreset {
    std::string name;
    int input_size = 0;      // square input, pixels
    int input_channels = 5;  // stacked grayscale frames
    std::vector<ConvLayerSpec> layers;
    int fc_out = 0;

    static ConvPreset paper() {
        ConvPreset p;
        p.name = "paper";
        p.input_size = 120;
        p.fc_out = 512;
        using K = ConvLayerSpec::Kind;
        p.layers = {
            {K::Conv, 96, 3, 1, 0},   // 120 -> 118
            {K::Pool, 0, 3, 2, 0},    // -> 58
            {K::Conv, 256, 3, 2, 1},  // -> 29
            {K::Pool, 0, 3, 2, 0},    // -> 14
            {K::Conv, 512, 3, 1, 1},  // -> 14
            {K::Conv, 512, 3, 1, 1},  // -> 14
            {K::Conv, 512, 3, 1, 1},  // -> 14
            {K::Pool, 0, 3, 2, 0},    // -> 6; fc6 consumes 512*6*6
        };
        return p;
    }

    static ConvPreset tiny(int input_size, int out_dim, int c1 = 8, int c2 = 16) {
        ConvPreset p;
        p.name = "tiny";
        p.input_size = input_size;
        p.fc_out = out_dim;
        using K = ConvLayerSpec::Kind;
        p.layers = {
            {K::Conv, c1, 3, 2, 1},
            {K::Pool, 0, 2, 2, 0},
            {K::Conv, c2, 3, 2, 1},
        };
        return p;
    }

    // (channels, spatial) after each layer; validates the geometry.
    std::vector<std::pair<int, int>> trace() const {
        std::vector<std::pair<int, int>> shapes{{input_channels, input_size}};
        for (const auto& l : layers) {
            auto [c, s] = shapes.back();
            const int out_s = (s + 2 * l.pad - l.support) / l.stride + 1;
            check(out_s > 0, "ConvPreset '" + name + "': layer shrinks input below 1 pixel");
            shapes.emplace_back(l.kind == ConvLayerSpec::Kind::Conv ? l.filters : c, out_s);
        }
        return shapes;
    }

    int fc_in() const {
        auto [c, s] = trace().back();
        return c * s * s;
    }
};

template <typename Real>
struct ConvParams {
    ConvPreset preset;
    std::vector<NDArray<Real>> weights;  // per conv layer: (OC, C, K, K)
    std::vector<NDArray<Real>> biases;   // per conv layer: (OC)
    NDArray<Real> fc_w;                  // (fc_out, fc_in)
    NDArray<Real> fc_b;                  // (fc_out)

    static ConvParams sized(const ConvPreset& preset) {
        ConvParams p;
        p.preset = preset;
        auto shapes = preset.trace();
        int idx = 0;
        for (const auto& l : preset.layers) {
            const int in_c = shapes[static_cast<std::size_t>(idx)].first;
            ++idx;
            if (l.kind != ConvLayerSpec::Kind::Conv) continue;
            p.weights.push_back(NDArray<Real>({l.filters, in_c, l.support, l.support}));
            p.biases.push_back(NDArray<Real>({l.filters}));
        }
        p.fc_w = NDArray<Real>({preset.fc_out, preset.fc_in()});
        p.fc_b = NDArray<Real>({preset.fc_out});
        return p;
    }

    std::vector<std::pair<std::string, NDArray<Real>*>> fields(const std::string& prefix) {
        std::vector<std::pair<std::string, NDArray<Real>*>> out;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out.emplace_back(prefix + ".conv" + std::to_string(i) + ".w", &weights[i]);
            out.emplace_back(prefix + ".conv" + std::to_string(i) + ".b", &biases[i]);
        }
        out.emplace_back(prefix + ".fc.w", &fc_w);
        out.emplace_back(prefix + ".fc.b", &fc_b);
        return out;
    }
};

// window node: (5, H, W). Returns the fc feature vector node.
template <typename Real>
int conv_encode_nodes(Tape<Real>& t, const std::string& prefix, const ConvParams<Real>& p, int window) {
    const auto& win = t.value(window);
    check(win.rank() == 3 && win.dim(0) == p.preset.input_channels &&
              win.dim(1) == p.preset.input_size && win.dim(2) == p.preset.input_size,
          "conv_encode: window shape " + win.shape_str() + " does not match preset '" + p.preset.name +
              "' (expects " + std::to_string(p.preset.input_channels) + "x" +
              std::to_string(p.preset.input_size) + "x" + std::to_string(p.preset.input_size) + ")");
    int cur = window;
    std::size_t conv_idx = 0;
    for (const auto& l : p.preset.layers) {
        if (l.kind == ConvLayerSpec::Kind::Conv) {
            const int w = t.param(prefix + ".conv" + std::to_string(conv_idx) + ".w", p.weights[conv_idx]);
            const int b = t.param(prefix + ".conv" + std::to_string(conv_idx) + ".b", p.biases[conv_idx]);
            cur = t.relu(t.conv2d(cur, w, b, l.stride, l.pad));
            ++conv_idx;
        } else {
            cur = t.maxpool2d(cur, l.support, l.stride);
        }
    }
    cur = t.reshape(cur, {p.preset.fc_in()});
    return t.add(t.matmul(t.param(prefix + ".fc.w", p.fc_w), cur), t.param(prefix + ".fc.b", p.fc_b));
}

// Plain-array variant (the public conv_encode operation).
template <typename Real>
NDArray<Real> conv_encode(const NDArray<Real>& window, const ConvParams<Real>& p) {
    Tape<Real> t;
    return t.value(conv_encode_nodes(t, "conv", p, t.constant(window)));
}

// ---------------------------------------------------------------------------
// Additive attention
// ---------------------------------------------------------------------------

// score_i = w . tanh(W q + V o_i + b); alpha = softmax(scores);
// context = sum_i alpha_i o_i. V is stored (H_enc, A) so encoder outputs are
// projected by right-multiplication.
template <typename Real>
struct AttentionParams {
    NDArray<Real> query_w;  // (A, S)
    NDArray<Real> enc_v;    // (H_enc, A)
    NDArray<Real> score_w;  // (A)
    NDArray<Real> bias;     // (A)

    static AttentionParams sized(int att_dim, int query_dim, int enc_dim) {
        AttentionParams p;
        p.query_w = NDArray<Real>({att_dim, query_dim});
        p.enc_v = NDArray<Real>({enc_dim, att_dim});
        p.score_w = NDArray<Real>({att_dim});
        p.bias = NDArray<Real>({att_dim});
        return p;
    }

    std::vector<std::pair<std::string, NDArray<Real>*>> fields(const std::string& prefix) {
        return {{prefix + ".query_w", &query_w},
                {prefix + ".enc_v", &enc_v},
                {prefix + ".score_w", &score_w},
                {prefix + ".bias", &bias}};
    }
};

template <typename Real>
struct AttendNodes {
    int alpha = -1;
    int context = -1;
};

// enc_proj = enc_outputs * V, computed once per utterance and shared across
// decode steps.
template <typename Real>
int attention_projection_nodes(Tape<Real>& t, const std::string& prefix,
                               const AttentionParams<Real>& p, int enc_outputs) {
    return t.matmul(enc_outputs, t.param(prefix + ".enc_v", p.enc_v));
}

template <typename Real>
AttendNodes<Real> attend_nodes(Tape<Real>& t, const std::string& prefix, const AttentionParams<Real>& p,
                               int query, int enc_outputs, int enc_proj) {
    const int q = t.add(t.matmul(t.param(prefix + ".query_w", p.query_w), query),
                        t.param(prefix + ".bias", p.bias));
    const int scores = t.matmul(t.tanh(t.add_rowvec(enc_proj, q)), t.param(prefix + ".score_w", p.score_w));
    const int alpha = t.softmax(scores);
    const int context = t.matmul(alpha, enc_outputs);
    return {alpha, context};
}

// Public attend operation over plain arrays. encoder_outputs: (T, H_enc).
template <typename Real>
std::pair<NDArray<Real>, NDArray<Real>> attend(const NDArray<Real>& query,
                                               const NDArray<Real>& encoder_outputs,
                                               const AttentionParams<Real>& p) {
    check(encoder_outputs.rank() == 2 && encoder_outputs.dim(0) > 0,
          "attend: encoder outputs must be a nonempty (T, H) matrix");
    Tape<Real> t;
    const int enc = t.constant(encoder_outputs);
    const int proj = attention_projection_nodes(t, "attn", p, enc);
    auto nodes = attend_nodes(t, "attn", p, t.constant(query), enc, proj);
    return {t.value(nodes.alpha), t.value(nodes.context)};
}

}  // namespace wlas
