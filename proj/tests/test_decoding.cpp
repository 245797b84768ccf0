#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wlas/decoding.hpp"

using namespace wlas;

namespace {

ModelConfig nano_config() {
    ModelConfig c;
    c.video_height = c.video_width = 8;
    c.conv_preset = "tiny";
    c.conv_channels1 = 2;
    c.conv_channels2 = 3;
    c.conv_out = 6;
    c.watch_hidden = c.listen_hidden = 4;
    c.attention_dim = 5;
    c.embed_dim = 4;
    c.mlp_hidden = 6;
    c.dropout = 0.0;
    return c;
}

CharVocabulary beam_vocab() { return CharVocabulary({"A", "B", "[sos]", "[eos]"}); }

template <typename Real>
Utterance<Real> nano_utterance(std::uint64_t seed) {
    Utterance<Real> u;
    Rng rng(seed);
    u.id = "nano";
    u.transcript = "AB";
    u.has_video = true;
    u.video = NDArray<Real>({7, 8, 8});
    for (std::int64_t i = 0; i < u.video.size(); ++i) u.video[i] = static_cast<Real>(rng.uniform());
    u.audio = NDArray<Real>({12, 13});
    for (std::int64_t i = 0; i < u.audio.size(); ++i)
        u.audio[i] = static_cast<Real>(rng.uniform(-1.0, 1.0));
    u.char_frames = {3, 4};
    return u;
}

struct Candidate {
    std::vector<int> tokens;
    double score = 0.0;
    bool finished = false;
};

// Exhaustive enumeration of every terminal decode of at most `max_len`
// emission steps, scored by the independent teacher-forced recomputation.
std::vector<Candidate> enumerate_candidates(const ModelParams<double>& params,
                                            const EncodedUtterance<double>& enc, int max_len) {
    const std::vector<int> alphabet{params.vocab.id_of("A"), params.vocab.id_of("B")};
    std::vector<std::vector<int>> prefixes{{}};
    std::vector<Candidate> out;
    for (int len = 0; len <= max_len; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& p : prefixes) {
            if (static_cast<int>(p.size()) != len) continue;
            if (len < max_len) {
                // finished here: the [eos] emission occupies step len+1
                Candidate c;
                c.tokens = p;
                c.finished = true;
                c.score = teacher_forced_logprob(params, enc, p, true);
                out.push_back(std::move(c));
                for (int a : alphabet) {
                    auto q = p;
                    q.push_back(a);
                    next.push_back(std::move(q));
                }
            } else {
                Candidate c;  // hit the cap unfinished
                c.tokens = p;
                c.finished = false;
                c.score = teacher_forced_logprob(params, enc, p, false);
                out.push_back(std::move(c));
            }
        }
        for (auto& q : next) prefixes.push_back(std::move(q));
    }
    return out;
}

}  // namespace

TEST_CASE("beam width 64 matches exhaustive enumeration on random tiny models") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto params = ModelParams<double>::init(nano_config(), beam_vocab(), seed * 131);
        auto utt = nano_utterance<double>(seed);
        auto enc = encode_utterance(params, utt, Modality::Both);

        DecodeOptions opt;
        opt.beam_width = 64;
        opt.max_length = 3;
        auto beam = beam_search(params, enc, opt);
        REQUIRE(!beam.empty());

        auto cands = enumerate_candidates(params, enc, 3);
        const auto best =
            std::max_element(cands.begin(), cands.end(),
                             [](const Candidate& a, const Candidate& b) { return a.score < b.score; });
        CHECK(beam.front().tokens == best->tokens);
        CHECK(beam.front().finished == best->finished);
        CHECK(beam.front().log_prob == doctest::Approx(best->score).epsilon(1e-9));
        // every candidate is representable: beam of width 64 holds them all
        CHECK(beam.size() == cands.size());
    }
}

TEST_CASE("width 1 equals greedy") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        auto params = ModelParams<double>::init(nano_config(), beam_vocab(), seed * 977);
        auto utt = nano_utterance<double>(seed + 50);
        auto enc = encode_utterance(params, utt, Modality::Both);
        DecodeOptions opt;
        opt.beam_width = 1;
        opt.max_length = 6;
        auto beam = beam_search(params, enc, opt);
        auto greedy = greedy_decode(params, enc, 6);
        REQUIRE(beam.size() == 1);
        CHECK(beam.front().tokens == greedy.tokens);
        CHECK(beam.front().log_prob == doctest::Approx(greedy.log_prob).epsilon(1e-12));
    }
}

TEST_CASE("beam scores equal teacher-forced recomputation") {
    auto params = ModelParams<double>::init(nano_config(), beam_vocab(), 4242);
    auto utt = nano_utterance<double>(9);
    auto enc = encode_utterance(params, utt, Modality::Both);
    DecodeOptions opt;
    opt.beam_width = 4;
    opt.max_length = 5;
    auto beam = beam_search(params, enc, opt);
    for (const auto& h : beam) {
        const double recomputed = teacher_forced_logprob(params, enc, h.tokens, h.finished);
        CHECK(std::abs(h.log_prob - recomputed) < 1e-6);
    }
    // sorted, no duplicates
    for (std::size_t i = 1; i < beam.size(); ++i) {
        CHECK(beam[i - 1].log_prob >= beam[i].log_prob);
        CHECK(beam[i - 1].tokens != beam[i].tokens);
    }
    // the best beam hypothesis scores at least as well as greedy
    auto greedy = greedy_decode(params, enc, 5);
    CHECK(beam.front().log_prob >= greedy.log_prob - 1e-12);
}

TEST_CASE("rigged eos emits the empty transcript") {
    auto params = ModelParams<double>::init(nano_config(), beam_vocab(), 7);
    params.mlp_w2.fill(0.0);
    params.mlp_b2.fill(0.0);
    params.mlp_b2[params.vocab.eos()] = 50.0;
    auto utt = nano_utterance<double>(3);
    auto enc = encode_utterance(params, utt, Modality::Both);
    auto greedy = greedy_decode(params, enc);
    CHECK(greedy.transcript.empty());
    CHECK(greedy.finished);
    auto beam = beam_search(params, enc, DecodeOptions{});
    CHECK(params.vocab.decode(beam.front().tokens).empty());
}

TEST_CASE("attention matrices have (steps, encoder steps) shape") {
    auto params = ModelParams<double>::init(nano_config(), beam_vocab(), 17);
    auto utt = nano_utterance<double>(21);
    auto enc = encode_utterance(params, utt, Modality::Both);
    auto greedy = greedy_decode(params, enc, 4);
    const int steps = greedy.alpha_video.dim(0);
    CHECK(steps >= 1);
    CHECK(greedy.alpha_video.dim(1) == utt.video.dim(0) - 4);
    CHECK(greedy.alpha_audio.dim(1) == utt.audio.dim(0));
    // rows are probability vectors
    for (int s = 0; s < steps; ++s) {
        double total = 0.0;
        for (int i = 0; i < greedy.alpha_audio.dim(1); ++i) total += greedy.alpha_audio.at(s, i);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("argmax ties resolve to the lowest vocabulary index") {
    auto params = ModelParams<double>::init(nano_config(), beam_vocab(), 30);
    // identical logits everywhere: every step ties across {A, B, [eos]}
    params.mlp_w2.fill(0.0);
    params.mlp_b2.fill(0.0);
    auto utt = nano_utterance<double>(31);
    auto enc = encode_utterance(params, utt, Modality::Both);
    auto greedy = greedy_decode(params, enc, 3);
    CHECK_FALSE(greedy.finished);  // A (index 0) beats [eos] on ties
    CHECK(greedy.tokens == std::vector<int>{0, 0, 0});

    DecodeOptions opt;
    opt.beam_width = 1;
    opt.max_length = 3;
    auto beam = beam_search(params, enc, opt);
    CHECK(beam.front().tokens == greedy.tokens);
}

TEST_CASE("invalid width errors") {
    auto params = ModelParams<double>::init(nano_config(), beam_vocab(), 3);
    auto utt = nano_utterance<double>(3);
    auto enc = encode_utterance(params, utt, Modality::Both);
    DecodeOptions opt;
    opt.beam_width = 0;
    CHECK_THROWS(beam_search(params, enc, opt));
}
