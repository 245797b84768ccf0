#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wlas/corpus.hpp"
#include "wlas/model.hpp"
#include "wlas/training.hpp"

namespace wlas {

// Declarative run configuration: one self-describing file drives every
// command; flags override. Unknown keys are rejected up front, before any
// work starts.

struct DecodeConfig {
    int beam_width = 4;
    int max_length = 100;
    bool length_normalize = false;

    ordered_json to_json() const {
        return {{"beam_width", beam_width},
                {"max_length", max_length},
                {"length_normalize", length_normalize}};
    }
};

struct EvalConfig {
    int beam_width = 4;
    std::vector<std::string> modes{"both", "audio", "lips"};
    std::vector<std::string> snrs{"clean", "10dB", "0dB"};
    int limit = -1;  // utterances per condition; negative = whole split
    std::uint64_t noise_seed = 77;

    ordered_json to_json() const {
        return {{"beam_width", beam_width},
                {"modes", modes},
                {"snrs", snrs},
                {"limit", limit},
                {"noise_seed", noise_seed}};
    }
};

struct RunConfig {
    std::string data_dir;  // resolved against WLAS_DATA_DIR / "data" when empty
    std::string out_dir = "runs";
    std::uint64_t seed = 1;
    DatasetConfig corpus;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;
    EvalConfig eval;

    std::string resolved_data_dir() const {
        if (!data_dir.empty()) return data_dir;
        if (const char* env = std::getenv("WLAS_DATA_DIR"); env != nullptr && *env != '\0')
            return env;
        return "data";
    }

    ordered_json to_json() const {
        ordered_json j;
        j["data_dir"] = data_dir;
        j["out_dir"] = out_dir;
        j["seed"] = seed;
        j["corpus"] = corpus.to_json();
        j["model"] = model.to_json();
        j["train"] = train.to_json();
        j["decode"] = decode.to_json();
        j["eval"] = eval.to_json();
        return j;
    }

    static RunConfig from_json(const ordered_json& j);
    static RunConfig from_file(const std::string& path);
};

namespace detail {

inline void reject_unknown(const ordered_json& j, const std::set<std::string>& allowed,
                           const std::string& context) {
    check(j.is_object(), "RunConfig: section '" + context + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            fail("RunConfig: unknown key '" + it.key() + "' in " + context);
}

template <typename T>
void maybe(const ordered_json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const ordered_json& j) {
    using detail::maybe;
    RunConfig c;
    detail::reject_unknown(
        j, {"data_dir", "out_dir", "seed", "corpus", "model", "train", "decode", "eval"}, "(root)");
    maybe(j, "data_dir", c.data_dir);
    maybe(j, "out_dir", c.out_dir);
    maybe(j, "seed", c.seed);

    if (j.contains("corpus")) {
        const auto& s = j.at("corpus");
        detail::reject_unknown(s,
                               {"train", "val", "test", "audio_only", "seed", "strict_paper_vocab",
                                "synth"},
                               "corpus");
        maybe(s, "train", c.corpus.train);
        maybe(s, "val", c.corpus.val);
        maybe(s, "test", c.corpus.test);
        maybe(s, "audio_only", c.corpus.audio_only);
        maybe(s, "seed", c.corpus.seed);
        maybe(s, "strict_paper_vocab", c.corpus.strict_paper_vocab);
        if (s.contains("synth")) {
            const auto& y = s.at("synth");
            detail::reject_unknown(y,
                                   {"video_height", "video_width", "frames_per_char",
                                    "duration_jitter", "video_jitter", "audio_jitter",
                                    "video_crossfade", "waveform_audio", "sample_rate_hz",
                                    "pattern_seed"},
                                   "corpus.synth");
            maybe(y, "video_height", c.corpus.synth.video_height);
            maybe(y, "video_width", c.corpus.synth.video_width);
            maybe(y, "frames_per_char", c.corpus.synth.frames_per_char);
            maybe(y, "duration_jitter", c.corpus.synth.duration_jitter);
            maybe(y, "video_jitter", c.corpus.synth.video_jitter);
            maybe(y, "audio_jitter", c.corpus.synth.audio_jitter);
            maybe(y, "video_crossfade", c.corpus.synth.video_crossfade);
            maybe(y, "waveform_audio", c.corpus.synth.waveform_audio);
            maybe(y, "sample_rate_hz", c.corpus.synth.sample_rate_hz);
            maybe(y, "pattern_seed", c.corpus.synth.pattern_seed);
        }
    }

    if (j.contains("model")) {
        const auto& s = j.at("model");
        detail::reject_unknown(s,
                               {"preset", "video_height", "video_width", "conv_preset",
                                "conv_channels1", "conv_channels2", "conv_out", "watch_layers",
                                "watch_hidden", "listen_layers", "listen_hidden", "spell_layers",
                                "attention_dim", "embed_dim", "mlp_hidden", "audio_dim", "dropout",
                                "label_smoothing", "init_range", "max_decode_len"},
                               "model");
        if (s.contains("preset")) {
            const std::string preset = s.at("preset").get<std::string>();
            if (preset == "paper")
                c.model = ModelConfig::paper();
            else if (preset == "desk")
                c.model = ModelConfig::desk();
            else
                fail("RunConfig: unknown model preset '" + preset + "' (expected desk|paper)");
        }
        maybe(s, "video_height", c.model.video_height);
        maybe(s, "video_width", c.model.video_width);
        maybe(s, "conv_preset", c.model.conv_preset);
        maybe(s, "conv_channels1", c.model.conv_channels1);
        maybe(s, "conv_channels2", c.model.conv_channels2);
        maybe(s, "conv_out", c.model.conv_out);
        maybe(s, "watch_layers", c.model.watch_layers);
        maybe(s, "watch_hidden", c.model.watch_hidden);
        maybe(s, "listen_layers", c.model.listen_layers);
        maybe(s, "listen_hidden", c.model.listen_hidden);
        maybe(s, "spell_layers", c.model.spell_layers);
        maybe(s, "attention_dim", c.model.attention_dim);
        maybe(s, "embed_dim", c.model.embed_dim);
        maybe(s, "mlp_hidden", c.model.mlp_hidden);
        maybe(s, "audio_dim", c.model.audio_dim);
        maybe(s, "dropout", c.model.dropout);
        maybe(s, "label_smoothing", c.model.label_smoothing);
        maybe(s, "init_range", c.model.init_range);
        maybe(s, "max_decode_len", c.model.max_decode_len);
    }

    if (j.contains("train")) {
        const auto& s = j.at("train");
        detail::reject_unknown(s,
                               {"mode", "batch_size", "learning_rate", "decay", "lr_patience",
                                "stop_patience", "val_interval", "val_utterances", "max_iterations",
                                "clip_norm", "min_delta_rel", "curriculum", "sampling", "noise_mix",
                                "seed", "target_val_cer"},
                               "train");
        maybe(s, "mode", c.train.mode);
        maybe(s, "batch_size", c.train.batch_size);
        maybe(s, "learning_rate", c.train.learning_rate);
        maybe(s, "decay", c.train.decay);
        maybe(s, "lr_patience", c.train.lr_patience);
        maybe(s, "stop_patience", c.train.stop_patience);
        maybe(s, "val_interval", c.train.val_interval);
        maybe(s, "val_utterances", c.train.val_utterances);
        maybe(s, "max_iterations", c.train.max_iterations);
        maybe(s, "clip_norm", c.train.clip_norm);
        maybe(s, "min_delta_rel", c.train.min_delta_rel);
        maybe(s, "seed", c.train.seed);
        maybe(s, "target_val_cer", c.train.target_val_cer);
        if (s.contains("curriculum")) {
            const auto& y = s.at("curriculum");
            detail::reject_unknown(y, {"start_words", "full_words", "patience", "min_delta_rel"},
                                   "train.curriculum");
            maybe(y, "start_words", c.train.curriculum.start_words);
            maybe(y, "full_words", c.train.curriculum.full_words);
            maybe(y, "patience", c.train.curriculum.patience);
            maybe(y, "min_delta_rel", c.train.curriculum.min_delta_rel);
        }
        if (s.contains("sampling")) {
            const auto& y = s.at("sampling");
            detail::reject_unknown(y, {"steps", "iters_per_step", "cap"}, "train.sampling");
            maybe(y, "steps", c.train.sampling.steps);
            maybe(y, "iters_per_step", c.train.sampling.iters_per_step);
            maybe(y, "cap", c.train.sampling.cap);
        }
        if (s.contains("noise_mix")) {
            const auto& y = s.at("noise_mix");
            detail::reject_unknown(y, {"clean", "10dB", "0dB"}, "train.noise_mix");
            maybe(y, "clean", c.train.noise_clean);
            maybe(y, "10dB", c.train.noise_10db);
            maybe(y, "0dB", c.train.noise_0db);
        }
    }

    if (j.contains("decode")) {
        const auto& s = j.at("decode");
        detail::reject_unknown(s, {"beam_width", "max_length", "length_normalize"}, "decode");
        maybe(s, "beam_width", c.decode.beam_width);
        maybe(s, "max_length", c.decode.max_length);
        maybe(s, "length_normalize", c.decode.length_normalize);
    }

    if (j.contains("eval")) {
        const auto& s = j.at("eval");
        detail::reject_unknown(s, {"beam_width", "modes", "snrs", "limit", "noise_seed"}, "eval");
        maybe(s, "beam_width", c.eval.beam_width);
        maybe(s, "modes", c.eval.modes);
        maybe(s, "snrs", c.eval.snrs);
        maybe(s, "limit", c.eval.limit);
        maybe(s, "noise_seed", c.eval.noise_seed);
    }

    // cross-field validation
    check(c.train.batch_size > 0, "RunConfig: train.batch_size must be positive");
    check(c.train.learning_rate > 0.0 && c.train.learning_rate <= 1.0,
          "RunConfig: train.learning_rate must be in (0, 1]");
    check(c.train.decay > 0.0 && c.train.decay <= 1.0, "RunConfig: train.decay must be in (0, 1]");
    check(c.train.lr_patience > 0, "RunConfig: train.lr_patience must be positive");
    check(c.train.stop_patience >= 0, "RunConfig: train.stop_patience must be non-negative");
    check(c.decode.beam_width >= 1, "RunConfig: decode.beam_width must be at least 1");
    check(c.model.video_height == c.corpus.synth.video_height &&
              c.model.video_width == c.corpus.synth.video_width,
          "RunConfig: model video geometry must match corpus.synth geometry");
    for (const auto& m : c.eval.modes) modality_from_name(m);
    for (const auto& s : c.eval.snrs)
        check(s == "clean" || s == "10dB" || s == "0dB",
              "RunConfig: eval.snrs entries must be clean|10dB|0dB");
    return c;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "RunConfig: cannot open " + path);
    ordered_json j = ordered_json::parse(is);
    return from_json(j);
}

inline NoiseConfig snr_to_noise(const std::string& tag, std::uint64_t seed) {
    if (tag == "clean") return NoiseConfig::clean_config();
    if (tag == "10dB") return NoiseConfig::at_snr(10.0, seed);
    if (tag == "0dB") return NoiseConfig::at_snr(0.0, seed);
    fail("unknown SNR tag '" + tag + "'");
}

}  // namespace wlas
