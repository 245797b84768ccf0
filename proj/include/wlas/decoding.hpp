#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "wlas/model.hpp"

namespace wlas {

// Inference over a trained model: breadth-limited best-first beam search and
// its width-1 special case. Log-probabilities are accumulated in log space
// throughout.

template <typename Real>
struct Hypothesis {
    std::vector<int> tokens;  // emitted characters, [sos]/[eos] excluded
    double log_prob = 0.0;    // includes the [eos] step once finished
    DecoderState<Real> state;
    bool finished = false;
};

struct DecodeOptions {
    int beam_width = 4;
    int max_length = 100;  // emission steps, so transcripts are clipped to 100 chars
    bool length_normalize = false;  // off per the reference decoding setup
};

namespace detail {

inline double hyp_sort_key(double log_prob, std::size_t len, bool normalize) {
    return normalize ? log_prob / static_cast<double>(std::max<std::size_t>(1, len + 1)) : log_prob;
}

}  // namespace detail

// At every step each live hypothesis is expanded with every vocabulary token
// ([sos]/[pad] excluded, [eos] finishes) and only the `width` most probable
// by total log-probability are kept. Finished hypotheses occupy beam slots
// until termination. Returns the kept beam sorted best-first.
template <typename Real>
std::vector<Hypothesis<Real>> beam_search(const ModelParams<Real>& params,
                                          const EncodedUtterance<Real>& enc,
                                          const DecodeOptions& opt = {}) {
    check(opt.beam_width >= 1, "beam_search: width must be at least 1");
    const int vocab = params.vocab.size();
    const int eos = params.vocab.eos();
    const int sos = params.vocab.sos();
    const int pad = params.vocab.pad();

    std::vector<Hypothesis<Real>> beam;
    Hypothesis<Real> root;
    root.state = initial_decoder_state(params, enc);
    beam.push_back(std::move(root));

    for (int step = 0; step < opt.max_length; ++step) {
        bool any_live = false;
        for (const auto& h : beam)
            if (!h.finished) any_live = true;
        if (!any_live) break;

        std::vector<Hypothesis<Real>> pool;
        for (auto& h : beam) {
            if (h.finished) {
                pool.push_back(std::move(h));
                continue;
            }
            const auto out = spell_step(params, enc, h.state);
            for (int tok = 0; tok < vocab; ++tok) {
                if (tok == sos || tok == pad) continue;
                Hypothesis<Real> next;
                next.log_prob = h.log_prob + out.log_probs[static_cast<std::size_t>(tok)];
                if (tok == eos) {
                    next.tokens = h.tokens;
                    next.finished = true;
                } else {
                    next.tokens = h.tokens;
                    next.tokens.push_back(tok);
                    next.state = out.next;
                    next.state.prev_token = tok;
                }
                pool.push_back(std::move(next));
            }
        }
        std::stable_sort(pool.begin(), pool.end(), [&](const auto& a, const auto& b) {
            return detail::hyp_sort_key(a.log_prob, a.tokens.size(), opt.length_normalize) >
                   detail::hyp_sort_key(b.log_prob, b.tokens.size(), opt.length_normalize);
        });
        if (static_cast<int>(pool.size()) > opt.beam_width) pool.resize(static_cast<std::size_t>(opt.beam_width));
        beam = std::move(pool);
    }
    return beam;
}

template <typename Real>
struct GreedyResult {
    std::string transcript;
    std::vector<int> tokens;
    double log_prob = 0.0;
    bool finished = false;
    NDArray<Real> alpha_video;  // (steps, T_v)
    NDArray<Real> alpha_audio;  // (steps, T_a)
};

// Argmax decoding; ties resolve to the lowest vocabulary index. Also returns
// the per-step attention matrices for alignment visualization.
template <typename Real>
GreedyResult<Real> greedy_decode(const ModelParams<Real>& params, const EncodedUtterance<Real>& enc,
                                 int max_length = 100) {
    const int eos = params.vocab.eos();
    const int sos = params.vocab.sos();
    const int pad = params.vocab.pad();
    DecoderState<Real> state = initial_decoder_state(params, enc);
    GreedyResult<Real> out;
    std::vector<NDArray<Real>> av_rows, aa_rows;
    for (int step = 0; step < max_length; ++step) {
        const auto res = spell_step(params, enc, state);
        av_rows.push_back(res.alpha_v);
        aa_rows.push_back(res.alpha_a);
        int best = -1;
        for (int tok = 0; tok < params.vocab.size(); ++tok) {
            if (tok == sos || tok == pad) continue;
            if (best < 0 || res.log_probs[static_cast<std::size_t>(tok)] >
                                res.log_probs[static_cast<std::size_t>(best)])
                best = tok;
        }
        out.log_prob += res.log_probs[static_cast<std::size_t>(best)];
        if (best == eos) {
            out.finished = true;
            break;
        }
        out.tokens.push_back(best);
        state = res.next;
        state.prev_token = best;
    }
    out.transcript = params.vocab.decode(out.tokens);

    const int steps = static_cast<int>(av_rows.size());
    out.alpha_video = NDArray<Real>({steps, av_rows[0].dim(0)});
    out.alpha_audio = NDArray<Real>({steps, aa_rows[0].dim(0)});
    for (int s = 0; s < steps; ++s) {
        std::copy(av_rows[static_cast<std::size_t>(s)].data(),
                  av_rows[static_cast<std::size_t>(s)].data() + av_rows[0].dim(0),
                  out.alpha_video.data() + static_cast<std::int64_t>(s) * av_rows[0].dim(0));
        std::copy(aa_rows[static_cast<std::size_t>(s)].data(),
                  aa_rows[static_cast<std::size_t>(s)].data() + aa_rows[0].dim(0),
                  out.alpha_audio.data() + static_cast<std::int64_t>(s) * aa_rows[0].dim(0));
    }
    return out;
}

// Whole-utterance convenience wrappers.

template <typename Real>
struct DecodeOutput {
    std::string transcript;
    double log_prob = 0.0;
    std::vector<std::pair<std::string, double>> n_best;  // sorted best-first, no duplicates
};

template <typename Real>
DecodeOutput<Real> beam_decode(const ModelParams<Real>& params, const Utterance<Real>& utt,
                               Modality mode, const DecodeOptions& opt = {},
                               const NoiseConfig& noise = NoiseConfig::clean_config()) {
    const auto enc = encode_utterance(params, utt, mode, noise);
    const auto beam = beam_search(params, enc, opt);
    DecodeOutput<Real> out;
    check(!beam.empty(), "beam_decode: empty beam");
    out.transcript = params.vocab.decode(beam.front().tokens);
    out.log_prob = beam.front().log_prob;
    for (const auto& h : beam) out.n_best.emplace_back(params.vocab.decode(h.tokens), h.log_prob);
    return out;
}

}  // namespace wlas
