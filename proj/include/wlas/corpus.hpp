#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wlas/array_io.hpp"
#include "wlas/features.hpp"
#include "wlas/ndarray.hpp"

namespace wlas {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Character vocabulary
// ---------------------------------------------------------------------------

// The standard output token set: letters, digits, six punctuation marks and
// the [sos]/[eos]/[pad] specials (45 tokens). That list has no word
// delimiter, so the default mode inserts an explicit space token (46); strict
// 45-token mode instead maps space onto a substitute character.
class CharVocabulary {
  public:
    static constexpr const char* kSos = "[sos]";
    static constexpr const char* kEos = "[eos]";
    static constexpr const char* kPad = "[pad]";

    static CharVocabulary standard(bool strict_paper = false, char space_substitute = ':') {
        std::vector<std::string> toks;
        for (char c = 'A'; c <= 'Z'; ++c) toks.emplace_back(1, c);
        for (char c = '0'; c <= '9'; ++c) toks.emplace_back(1, c);
        for (char c : {',', '.', '!', '?', ':', '\''}) toks.emplace_back(1, c);
        if (!strict_paper) toks.emplace_back(1, ' ');
        toks.emplace_back(kSos);
        toks.emplace_back(kEos);
        toks.emplace_back(kPad);
        CharVocabulary v(std::move(toks));
        v.strict_paper_ = strict_paper;
        v.space_substitute_ = space_substitute;
        if (strict_paper)
            check(v.id_of(std::string(1, space_substitute)) >= 0,
                  "CharVocabulary: space substitute not in token set");
        return v;
    }

    // Arbitrary token lists (used by small test configurations and when
    // loading checkpoints). Specials must be present.
    explicit CharVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            check(!index_.count(tokens_[i]), "CharVocabulary: duplicate token '" + tokens_[i] + "'");
            index_[tokens_[i]] = static_cast<int>(i);
        }
        sos_ = require(kSos);
        eos_ = require(kEos);
        pad_ = id_of(kPad);  // optional in custom token sets; standard sets carry it
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int sos() const { return sos_; }
    int eos() const { return eos_; }
    int pad() const { return pad_; }
    bool strict_paper() const { return strict_paper_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? -1 : it->second;
    }

    // Character ids for `text` (uppercased), without [sos]/[eos].
    std::vector<int> char_ids(const std::string& text) const {
        const std::string up = to_upper(text);
        std::vector<int> out;
        out.reserve(up.size());
        for (char c : up) {
            char mapped = c;
            if (strict_paper_ && c == ' ') mapped = space_substitute_;
            const int id = id_of(std::string(1, mapped));
            if (id < 0) fail("CharVocabulary: cannot encode character '" + std::string(1, c) + "'");
            out.push_back(id);
        }
        return out;
    }

    // [sos] t1 ... tn [eos]; [pad] is reserved for batch alignment only.
    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out{sos_};
        for (int id : char_ids(text)) out.push_back(id);
        out.push_back(eos_);
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            check(id >= 0 && id < size(), "CharVocabulary::decode: id out of range");
            if (id == sos_ || id == eos_ || id == pad_) continue;
            const std::string& tok = tokens_[static_cast<std::size_t>(id)];
            if (strict_paper_ && tok.size() == 1 && tok[0] == space_substitute_)
                out += ' ';
            else
                out += tok;
        }
        return out;
    }

  private:
    int require(const char* tok) const {
        const int id = id_of(tok);
        check(id >= 0, std::string("CharVocabulary: missing required token ") + tok);
        return id;
    }

  public:
    char space_substitute() const { return space_substitute_; }

    // Reconstruction from serialized form.
    static CharVocabulary restore(std::vector<std::string> tokens, bool strict_paper,
                                  char space_substitute) {
        CharVocabulary v(std::move(tokens));
        v.strict_paper_ = strict_paper;
        v.space_substitute_ = space_substitute;
        return v;
    }

  private:

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int sos_ = -1, eos_ = -1, pad_ = -1;
    bool strict_paper_ = false;
    char space_substitute_ = ':';
};

// ---------------------------------------------------------------------------
// GRID sentence grammar
// ---------------------------------------------------------------------------

// Six-slot fixed grammar: verb + color + preposition + letter + digit +
// adverb, one word drawn per category in that order.
struct GridGrammar {
    std::vector<std::string> verbs{"BIN", "LAY", "PLACE", "SET"};
    std::vector<std::string> colors{"BLUE", "GREEN", "RED", "WHITE"};
    std::vector<std::string> prepositions{"AT", "BY", "IN", "WITH"};
    std::vector<std::string> letters = letters_without_w();
    std::vector<std::string> digits{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
    std::vector<std::string> adverbs{"AGAIN", "NOW", "PLEASE", "SOON"};

    static std::vector<std::string> letters_without_w() {
        std::vector<std::string> out;
        for (char c = 'A'; c <= 'Z'; ++c)
            if (c != 'W') out.emplace_back(1, c);
        return out;
    }

    std::uint64_t total_sentences() const {
        return static_cast<std::uint64_t>(verbs.size()) * colors.size() * prepositions.size() *
               letters.size() * digits.size() * adverbs.size();
    }

    std::string sentence_at(std::uint64_t index) const {
        check(index < total_sentences(), "GridGrammar: sentence index out of range");
        const std::vector<const std::vector<std::string>*> cats{&verbs,   &colors, &prepositions,
                                                                &letters, &digits, &adverbs};
        std::vector<std::string> words(cats.size());
        for (int i = static_cast<int>(cats.size()) - 1; i >= 0; --i) {
            const auto& cat = *cats[static_cast<std::size_t>(i)];
            words[static_cast<std::size_t>(i)] = cat[index % cat.size()];
            index /= cat.size();
        }
        std::string out;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) out += ' ';
            out += words[i];
        }
        return out;
    }

    std::string generate_sentence(Rng& rng) const {
        return sentence_at(rng.next_u64() % total_sentences());
    }
};

// ---------------------------------------------------------------------------
// Procedural character patterns
// ---------------------------------------------------------------------------

struct SynthesisConfig {
    int video_height = 32;
    int video_width = 32;
    int frames_per_char = 3;   // d: video frames per character (audio gets 4d)
    int duration_jitter = 1;   // per-character duration drawn from [d-j, d+j]
    double video_jitter = 0.05;
    double audio_jitter = 0.03;
    // visual coarticulation: boundary frames blend the neighbouring
    // characters' patterns, so the lip stream is genuinely harder to read
    // than the audio stream
    bool video_crossfade = true;
    bool waveform_audio = false;  // synthesize a waveform and run the MFCC chain
    int sample_rate_hz = 16000;
    std::uint64_t pattern_seed = 1234;
};

// One fixed spatial pattern and one fixed 13-dim audio signature per
// vocabulary token, drawn with a rejection loop so every pair stays far
// apart relative to the jitter sigma.
class CharPatternBank {
  public:
    CharPatternBank(const CharVocabulary& vocab, const SynthesisConfig& cfg) : cfg_(cfg) {
        Rng rng(cfg.pattern_seed);
        const int n = vocab.size();
        for (int id = 0; id < n; ++id) {
            video_.push_back(draw_video_pattern(rng));
            audio_.push_back(draw_audio_signature(rng));
            wave_freqs_.push_back({rng.uniform(300.0, 3200.0), rng.uniform(300.0, 3200.0)});
        }
    }

    const NDArray<double>& video_pattern(int id) const { return video_[static_cast<std::size_t>(id)]; }
    const std::vector<double>& audio_signature(int id) const { return audio_[static_cast<std::size_t>(id)]; }
    const std::pair<double, double>& wave_freqs(int id) const { return wave_freqs_[static_cast<std::size_t>(id)]; }

    static double rms_distance(const NDArray<double>& a, const NDArray<double>& b) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(acc / static_cast<double>(a.size()));
    }

    static double rms_distance(const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(acc / static_cast<double>(a.size()));
    }

  private:
    // Margins sit above 5x the jitter sigma so the injectivity invariant
    // holds by construction for any configured jitter.
    NDArray<double> draw_video_pattern(Rng& rng) {
        const int h = cfg_.video_height, w = cfg_.video_width;
        const double margin = std::max(0.15, 5.1 * cfg_.video_jitter);
        for (int attempt = 0; attempt < 2000; ++attempt) {
            // a handful of soft blobs, stretched to full [0,1] contrast
            NDArray<double> p({h, w}, 0.0);
            for (int blob = 0; blob < 4; ++blob) {
                const double cy = rng.uniform(0.15, 0.85) * h;
                const double cx = rng.uniform(0.15, 0.85) * w;
                const double sy = rng.uniform(0.08, 0.25) * h;
                const double sx = rng.uniform(0.08, 0.25) * w;
                const double amp = rng.uniform(0.4, 1.0);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        p.at(y, x) += amp * std::exp(-0.5 * ((y - cy) * (y - cy) / (sy * sy) +
                                                             (x - cx) * (x - cx) / (sx * sx)));
            }
            double mx = 0.0, mn = p[0];
            for (std::int64_t i = 0; i < p.size(); ++i) {
                mx = std::max(mx, p[i]);
                mn = std::min(mn, p[i]);
            }
            for (std::int64_t i = 0; i < p.size(); ++i) p[i] = (p[i] - mn) / (mx - mn);
            bool ok = true;
            for (const auto& q : video_)
                if (rms_distance(p, q) < margin) ok = false;
            if (ok) return p;
        }
        fail("CharPatternBank: could not draw a distinct video pattern at margin");
    }

    std::vector<double> draw_audio_signature(Rng& rng) {
        const double margin = std::max(0.4, 5.1 * cfg_.audio_jitter);
        for (int attempt = 0; attempt < 2000; ++attempt) {
            std::vector<double> s(13);
            for (double& v : s) v = rng.uniform(-1.0, 1.0);
            bool ok = true;
            for (const auto& q : audio_)
                if (rms_distance(s, q) < margin) ok = false;
            if (ok) return s;
        }
        fail("CharPatternBank: could not draw a distinct audio signature at margin");
    }

    SynthesisConfig cfg_;
    std::vector<NDArray<double>> video_;
    std::vector<std::vector<double>> audio_;
    std::vector<std::pair<double, double>> wave_freqs_;
};

// ---------------------------------------------------------------------------
// Utterances
// ---------------------------------------------------------------------------

template <typename Real>
struct Utterance {
    std::string id;
    std::string transcript;
    bool has_video = false;
    NDArray<Real> video;  // (T_v, H, W), 25 Hz
    NDArray<Real> audio;  // (T_a, 13), 100 Hz
    std::vector<int> char_frames;  // video frames per transcript character
    std::string split;
    std::string snr_tag = "clean";

    int video_frames() const { return has_video ? video.dim(0) : 0; }
    int audio_frames() const { return audio.dim(0); }
};

// Renders a transcript into paired video frames and audio features: each
// character holds its pattern for a jittered number of video frames and
// exactly 4x that many audio frames, plus per-element Gaussian jitter.
template <typename Real>
Utterance<Real> synthesize_utterance(const std::string& transcript, const CharVocabulary& vocab,
                                     const CharPatternBank& bank, const SynthesisConfig& cfg,
                                     std::uint64_t seed, bool audio_only = false) {
    check(transcript.size() <= 100, "synthesize_utterance: transcript longer than 100 characters");
    const std::vector<int> ids = vocab.char_ids(transcript);
    check(!ids.empty(), "synthesize_utterance: empty transcript");
    Rng rng(seed);

    std::vector<int> char_frames;
    char_frames.reserve(ids.size());
    int total_v = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int k = cfg.frames_per_char;
        if (cfg.duration_jitter > 0)
            k += rng.uniform_int(2 * cfg.duration_jitter + 1) - cfg.duration_jitter;
        k = std::max(1, k);
        char_frames.push_back(k);
        total_v += k;
    }

    Utterance<Real> u;
    u.transcript = to_upper(transcript);
    u.char_frames = char_frames;

    const int h = cfg.video_height, w = cfg.video_width;
    if (!audio_only) {
        u.has_video = true;
        u.video = NDArray<Real>({total_v, h, w});
        int t = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const NDArray<double>& pat = bank.video_pattern(ids[i]);
            const NDArray<double>* prev = i > 0 ? &bank.video_pattern(ids[i - 1]) : nullptr;
            const NDArray<double>* next = i + 1 < ids.size() ? &bank.video_pattern(ids[i + 1]) : nullptr;
            for (int f = 0; f < char_frames[i]; ++f, ++t) {
                // coarticulation: boundary frames carry half the neighbour
                const NDArray<double>* blend = nullptr;
                if (cfg.video_crossfade) {
                    if (char_frames[i] == 1)
                        blend = prev != nullptr ? prev : next;
                    else if (f == 0)
                        blend = prev;
                    else if (f == char_frames[i] - 1)
                        blend = next;
                }
                for (int p = 0; p < h * w; ++p) {
                    double base = blend != nullptr ? 0.5 * (pat[p] + (*blend)[p]) : pat[p];
                    double v = base + cfg.video_jitter * rng.gaussian();
                    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                    u.video[static_cast<std::int64_t>(t) * h * w + p] = static_cast<Real>(v);
                }
            }
        }
    }

    if (cfg.waveform_audio) {
        // Per character: 4k hops of a two-tone segment; the (window-hop)
        // tail pad makes the MFCC frame count exactly 4 * total_v.
        const int sr = cfg.sample_rate_hz;
        const int hop = static_cast<int>(std::lround(0.010 * sr));
        const int win = static_cast<int>(std::lround(0.025 * sr));
        std::vector<double> wave;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto [f1, f2] = bank.wave_freqs(ids[i]);
            const int samples = 4 * char_frames[i] * hop;
            for (int s = 0; s < samples; ++s) {
                const double tt = static_cast<double>(s) / sr;
                double v = 0.45 * std::sin(2.0 * 3.14159265358979323846 * f1 * tt) +
                           0.35 * std::sin(2.0 * 3.14159265358979323846 * f2 * tt);
                v += cfg.audio_jitter * rng.gaussian();
                wave.push_back(v);
            }
        }
        wave.resize(wave.size() + static_cast<std::size_t>(win - hop), 0.0);
        u.audio = compute_mfcc<Real>(wave, sr).frames;
    } else {
        u.audio = NDArray<Real>({4 * total_v, 13});
        int t = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& sig = bank.audio_signature(ids[i]);
            for (int f = 0; f < 4 * char_frames[i]; ++f, ++t)
                for (int c = 0; c < 13; ++c)
                    u.audio.at(t, c) = static_cast<Real>(sig[static_cast<std::size_t>(c)] +
                                                         cfg.audio_jitter * rng.gaussian());
        }
    }
    return u;
}

template <typename Real>
struct Corpus {
    CharVocabulary vocab = CharVocabulary::standard();
    std::vector<Utterance<Real>> utterances;
    int max_words = 6;
};

// ---------------------------------------------------------------------------
// Dataset build / manifest
// ---------------------------------------------------------------------------

struct DatasetConfig {
    int train = 200;
    int val = 20;
    int test = 20;
    int audio_only = 100;
    std::uint64_t seed = 1;
    bool strict_paper_vocab = false;
    SynthesisConfig synth;

    ordered_json to_json() const {
        ordered_json j;
        j["train"] = train;
        j["val"] = val;
        j["test"] = test;
        j["audio_only"] = audio_only;
        j["seed"] = seed;
        j["strict_paper_vocab"] = strict_paper_vocab;
        j["synth"] = {{"video_height", synth.video_height},
                      {"video_width", synth.video_width},
                      {"frames_per_char", synth.frames_per_char},
                      {"duration_jitter", synth.duration_jitter},
                      {"video_jitter", synth.video_jitter},
                      {"audio_jitter", synth.audio_jitter},
                      {"video_crossfade", synth.video_crossfade},
                      {"waveform_audio", synth.waveform_audio},
                      {"sample_rate_hz", synth.sample_rate_hz},
                      {"pattern_seed", synth.pattern_seed}};
        return j;
    }

    static DatasetConfig from_json(const ordered_json& j) {
        DatasetConfig c;
        c.train = j.at("train").get<int>();
        c.val = j.at("val").get<int>();
        c.test = j.at("test").get<int>();
        c.audio_only = j.at("audio_only").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.strict_paper_vocab = j.at("strict_paper_vocab").get<bool>();
        const auto& s = j.at("synth");
        c.synth.video_height = s.at("video_height").get<int>();
        c.synth.video_width = s.at("video_width").get<int>();
        c.synth.frames_per_char = s.at("frames_per_char").get<int>();
        c.synth.duration_jitter = s.at("duration_jitter").get<int>();
        c.synth.video_jitter = s.at("video_jitter").get<double>();
        c.synth.audio_jitter = s.at("audio_jitter").get<double>();
        c.synth.video_crossfade = s.at("video_crossfade").get<bool>();
        c.synth.waveform_audio = s.at("waveform_audio").get<bool>();
        c.synth.sample_rate_hz = s.at("sample_rate_hz").get<int>();
        c.synth.pattern_seed = s.at("pattern_seed").get<std::uint64_t>();
        return c;
    }
};

struct ManifestRecord {
    std::string id;
    std::string transcript;
    std::string video_path;  // empty for audio-only
    std::string video_checksum;
    std::string audio_path;
    std::string audio_checksum;
    std::vector<int> char_frames;
};

struct DatasetManifest {
    int version = 1;
    DatasetConfig config;
    std::vector<std::string> vocabulary;
    std::map<std::string, std::vector<ManifestRecord>> splits;  // train/val/test/audio_only
    ordered_json coverage;

    ordered_json to_json() const {
        ordered_json j;
        j["format"] = "wlas-dataset";
        j["version"] = version;
        j["config"] = config.to_json();
        j["vocabulary"] = vocabulary;
        ordered_json sp;
        for (const char* name : {"train", "val", "test", "audio_only"}) {
            auto it = splits.find(name);
            ordered_json arr = ordered_json::array();
            if (it != splits.end())
                for (const auto& r : it->second) {
                    ordered_json rec;
                    rec["id"] = r.id;
                    rec["transcript"] = r.transcript;
                    if (r.video_path.empty()) {
                        rec["video_path"] = nullptr;
                        rec["video_checksum"] = nullptr;
                    } else {
                        rec["video_path"] = r.video_path;
                        rec["video_checksum"] = r.video_checksum;
                    }
                    rec["audio_path"] = r.audio_path;
                    rec["audio_checksum"] = r.audio_checksum;
                    rec["char_frames"] = r.char_frames;
                    arr.push_back(std::move(rec));
                }
            sp[name] = std::move(arr);
        }
        j["splits"] = std::move(sp);
        j["coverage"] = coverage;
        return j;
    }

    static DatasetManifest from_json(const ordered_json& j) {
        check(j.at("format") == "wlas-dataset", "DatasetManifest: unexpected format tag");
        DatasetManifest m;
        m.version = j.at("version").get<int>();
        m.config = DatasetConfig::from_json(j.at("config"));
        m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
            std::vector<ManifestRecord> recs;
            for (const auto& rj : it.value()) {
                ManifestRecord r;
                r.id = rj.at("id").get<std::string>();
                r.transcript = rj.at("transcript").get<std::string>();
                if (!rj.at("video_path").is_null()) {
                    r.video_path = rj.at("video_path").get<std::string>();
                    r.video_checksum = rj.at("video_checksum").get<std::string>();
                }
                r.audio_path = rj.at("audio_path").get<std::string>();
                r.audio_checksum = rj.at("audio_checksum").get<std::string>();
                r.char_frames = rj.at("char_frames").get<std::vector<int>>();
                recs.push_back(std::move(r));
            }
            m.splits[it.key()] = std::move(recs);
        }
        m.coverage = j.at("coverage");
        return m;
    }
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    check(os.good(), "save_manifest: cannot open " + path);
    os << m.to_json().dump(2) << "\n";
    check(os.good(), "save_manifest: write failed");
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "load_manifest: cannot open " + path);
    ordered_json j = ordered_json::parse(is);
    return DatasetManifest::from_json(j);
}

namespace detail {

// First `n` entries of a seeded Fisher-Yates shuffle over [0, total).
inline std::vector<std::uint64_t> draw_distinct(std::uint64_t total, std::size_t n, Rng& rng) {
    std::vector<std::uint64_t> pool(total);
    for (std::uint64_t i = 0; i < total; ++i) pool[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (total - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

inline ordered_json coverage_report(const std::map<std::string, std::vector<ManifestRecord>>& splits) {
    std::map<std::string, std::map<std::string, int>> word_counts;
    for (const auto& [name, recs] : splits)
        for (const auto& r : recs)
            for (const auto& w : split_words(r.transcript)) word_counts[name][w]++;
    ordered_json cov;
    const auto& train_words = word_counts["train"];
    for (const char* name : {"train", "val", "test", "audio_only"}) {
        const auto& words = word_counts[name];
        int in_train = 0;
        for (const auto& [w, c] : words)
            if (train_words.count(w)) ++in_train;
        cov[name] = {{"utterances", splits.count(name) ? splits.at(name).size() : 0},
                     {"word_vocab", words.size()},
                     {"words_in_train_vocab", in_train}};
    }
    return cov;
}

}  // namespace detail

// Builds the synthetic dataset on disk: disjoint sentence splits, payload
// arrays, checksummed manifest. Split sizes are validated before anything is
// written.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& dir) {
    GridGrammar grammar;
    const std::uint64_t total = grammar.total_sentences();
    const std::uint64_t want = static_cast<std::uint64_t>(cfg.train) + cfg.val + cfg.test + cfg.audio_only;
    check(cfg.train > 0 && cfg.val >= 0 && cfg.test >= 0 && cfg.audio_only >= 0,
          "build_dataset: split sizes must be non-negative with train > 0");
    check(want <= total, "build_dataset: requested " + std::to_string(want) + " sentences but only " +
                             std::to_string(total) + " distinct ones exist; splits would overlap");

    const CharVocabulary vocab = CharVocabulary::standard(cfg.strict_paper_vocab);
    const CharPatternBank bank(vocab, cfg.synth);

    Rng rng(cfg.seed);
    const auto picks = detail::draw_distinct(total, static_cast<std::size_t>(want), rng);

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "payload");

    DatasetManifest m;
    m.config = cfg;
    m.vocabulary = vocab.tokens();

    std::size_t cursor = 0;
    const std::vector<std::pair<std::string, int>> plan{
        {"train", cfg.train}, {"val", cfg.val}, {"test", cfg.test}, {"audio_only", cfg.audio_only}};
    for (const auto& [split, count] : plan) {
        std::vector<ManifestRecord> recs;
        for (int i = 0; i < count; ++i) {
            const std::string id = split + "-" + std::to_string(i);
            const std::string sentence = grammar.sentence_at(picks[cursor++]);
            const bool audio_only = split == "audio_only";
            auto u = synthesize_utterance<float>(sentence, vocab, bank, cfg.synth,
                                                 derive_seed(cfg.seed, id), audio_only);
            ManifestRecord r;
            r.id = id;
            r.transcript = u.transcript;
            r.char_frames = u.char_frames;
            r.audio_path = "payload/" + id + ".audio.arr";
            save_array(dir + "/" + r.audio_path, u.audio, ArrayDtype::F32);
            r.audio_checksum = to_hex(file_checksum(dir + "/" + r.audio_path));
            if (!audio_only) {
                r.video_path = "payload/" + id + ".video.arr";
                save_array(dir + "/" + r.video_path, u.video, ArrayDtype::U8);
                r.video_checksum = to_hex(file_checksum(dir + "/" + r.video_path));
            }
            recs.push_back(std::move(r));
        }
        m.splits[split] = std::move(recs);
    }
    m.coverage = detail::coverage_report(m.splits);
    save_manifest(m, dir + "/manifest.json");
    return m;
}

template <typename Real>
Utterance<Real> load_utterance(const DatasetManifest& m, const std::string& dir,
                               const ManifestRecord& r, const std::string& split,
                               bool verify_checksum = false) {
    Utterance<Real> u;
    u.id = r.id;
    u.transcript = r.transcript;
    u.char_frames = r.char_frames;
    u.split = split;
    if (verify_checksum)
        check(to_hex(file_checksum(dir + "/" + r.audio_path)) == r.audio_checksum,
              "load_utterance: audio checksum mismatch for " + r.id);
    u.audio = load_array<Real>(dir + "/" + r.audio_path);
    if (!r.video_path.empty()) {
        if (verify_checksum)
            check(to_hex(file_checksum(dir + "/" + r.video_path)) == r.video_checksum,
                  "load_utterance: video checksum mismatch for " + r.id);
        u.video = load_array<Real>(dir + "/" + r.video_path);
        u.has_video = true;
    }
    (void)m;
    return u;
}

template <typename Real>
Corpus<Real> load_split(const DatasetManifest& m, const std::string& dir, const std::string& split,
                        bool verify_checksum = false) {
    Corpus<Real> c;
    c.vocab = CharVocabulary(m.vocabulary);
    auto it = m.splits.find(split);
    check(it != m.splits.end(), "load_split: manifest has no split '" + split + "'");
    for (const auto& r : it->second)
        c.utterances.push_back(load_utterance<Real>(m, dir, r, split, verify_checksum));
    return c;
}

// In-memory corpus, used by tests and the overfit checks.
template <typename Real>
Corpus<Real> synthesize_corpus(int count, const SynthesisConfig& synth, std::uint64_t seed,
                               bool audio_only = false, bool strict_paper_vocab = false) {
    Corpus<Real> c;
    c.vocab = CharVocabulary::standard(strict_paper_vocab);
    const CharPatternBank bank(c.vocab, synth);
    GridGrammar grammar;
    Rng rng(seed);
    const auto picks = detail::draw_distinct(grammar.total_sentences(), static_cast<std::size_t>(count), rng);
    for (int i = 0; i < count; ++i) {
        const std::string id = (audio_only ? std::string("audio_only-") : std::string("mem-")) + std::to_string(i);
        auto u = synthesize_utterance<Real>(grammar.sentence_at(picks[static_cast<std::size_t>(i)]),
                                            c.vocab, bank, synth, derive_seed(seed, id), audio_only);
        u.id = id;
        c.utterances.push_back(std::move(u));
    }
    return c;
}

}  // namespace wlas
