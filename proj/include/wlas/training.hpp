#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "wlas/checkpoint.hpp"
#include "wlas/decoding.hpp"
#include "wlas/metrics.hpp"
#include "wlas/model.hpp"

namespace wlas {

// ---------------------------------------------------------------------------
// Plateau detection
// ---------------------------------------------------------------------------

// A plateau fires when the best-so-far loss has not been beaten by at least
// min_delta_rel (relative) for `patience` consecutive observations. The
// window resets after each event; the best does not.
class PlateauDetector {
  public:
    PlateauDetector(int patience = 200, double min_delta_rel = 1e-4)
        : patience_(patience), min_delta_rel_(min_delta_rel) {}

    bool observe(double loss) {
        if (!std::isfinite(best_) || loss < best_ - min_delta_rel_ * std::abs(best_)) {
            best_ = loss;
            since_best_ = 0;
            return false;
        }
        ++since_best_;
        if (since_best_ >= patience_) {
            since_best_ = 0;
            return true;
        }
        return false;
    }

    void reset() {
        best_ = std::numeric_limits<double>::infinity();
        since_best_ = 0;
    }

    ordered_json to_json() const {
        return {{"patience", patience_},
                {"min_delta_rel", min_delta_rel_},
                {"best", std::isfinite(best_) ? ordered_json(best_) : ordered_json(nullptr)},
                {"since_best", since_best_}};
    }

    static PlateauDetector from_json(const ordered_json& j) {
        PlateauDetector d(j.at("patience").get<int>(), j.at("min_delta_rel").get<double>());
        d.best_ = j.at("best").is_null() ? std::numeric_limits<double>::infinity()
                                         : j.at("best").get<double>();
        d.since_best_ = j.at("since_best").get<int>();
        return d;
    }

  private:
    int patience_;
    double min_delta_rel_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_best_ = 0;
};

// ---------------------------------------------------------------------------
// Curriculum over target length
// ---------------------------------------------------------------------------

struct CurriculumConfig {
    int start_words = 1;
    int full_words = 6;  // sentence length of the grammar
    int patience = 100;
    double min_delta_rel = 1e-4;
};

// Target length starts at one word and grows by one word whenever the
// training loss plateaus; never decreases.
class CurriculumState {
  public:
    explicit CurriculumState(const CurriculumConfig& cfg = {})
        : cfg_(cfg), length_(cfg.start_words), detector_(cfg.patience, cfg.min_delta_rel) {}

    int max_length_words() const { return length_; }
    bool at_full_sentence() const { return length_ >= cfg_.full_words; }
    int iters_at_full() const { return iters_at_full_; }
    const CurriculumConfig& config() const { return cfg_; }

    void observe(double train_loss) {
        if (at_full_sentence()) {
            ++iters_at_full_;
            return;
        }
        if (detector_.observe(train_loss)) {
            ++length_;
            detector_.reset();  // the task just changed
        }
    }

    ordered_json to_json() const {
        return {{"start_words", cfg_.start_words},
                {"full_words", cfg_.full_words},
                {"patience", cfg_.patience},
                {"min_delta_rel", cfg_.min_delta_rel},
                {"length", length_},
                {"iters_at_full", iters_at_full_},
                {"detector", detector_.to_json()}};
    }

    static CurriculumState from_json(const ordered_json& j) {
        CurriculumConfig cfg;
        cfg.start_words = j.at("start_words").get<int>();
        cfg.full_words = j.at("full_words").get<int>();
        cfg.patience = j.at("patience").get<int>();
        cfg.min_delta_rel = j.at("min_delta_rel").get<double>();
        CurriculumState s(cfg);
        s.length_ = j.at("length").get<int>();
        s.iters_at_full_ = j.at("iters_at_full").get<int>();
        s.detector_ = PlateauDetector::from_json(j.at("detector"));
        return s;
    }

  private:
    CurriculumConfig cfg_;
    int length_ = 1;
    int iters_at_full_ = 0;
    PlateauDetector detector_;
};

// Pure-function view: feed the yet-unseen tail of a loss history.
inline CurriculumState curriculum_next(CurriculumState state, const std::vector<double>& recent_losses) {
    check(!recent_losses.empty(), "curriculum_next: history must be nonempty");
    for (double l : recent_losses) state.observe(l);
    return state;
}

// ---------------------------------------------------------------------------
// Scheduled sampling ramp
// ---------------------------------------------------------------------------

struct SamplingConfig {
    int steps = 5;            // equal increments up to the cap
    int iters_per_step = 100;
    double cap = 0.25;        // training is unstable above this
};

// Zero through the word-level curriculum stages; once full sentences are
// reached, steps linearly up to the cap.
inline double sampling_probability(const CurriculumState& state, const SamplingConfig& cfg) {
    if (!state.at_full_sentence()) return 0.0;
    const int steps_done = std::min(cfg.steps, state.iters_at_full() / cfg.iters_per_step);
    return cfg.cap * static_cast<double>(steps_done) / static_cast<double>(cfg.steps);
}

// ---------------------------------------------------------------------------
// Modality selection and noise mix
// ---------------------------------------------------------------------------

inline Modality select_modality(Rng& rng) {
    switch (rng.uniform_int(3)) {
        case 0: return Modality::Audio;
        case 1: return Modality::Lips;
        default: return Modality::Both;
    }
}

// Deterministic largest-deficit scheduler: realized fractions track the
// configured mix within one example at all times.
class NoiseMixScheduler {
  public:
    struct Entry {
        std::string label;  // "clean", "10dB", "0dB"
        double fraction;
        std::int64_t count = 0;
    };

    NoiseMixScheduler(double clean, double db10, double db0) {
        const double total = clean + db10 + db0;
        check(total > 0, "NoiseMixScheduler: mix fractions must sum to a positive value");
        entries_ = {{"clean", clean / total, 0}, {"10dB", db10 / total, 0}, {"0dB", db0 / total, 0}};
    }

    const std::string& next() {
        std::size_t best = 0;
        double best_deficit = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const double deficit =
                entries_[i].fraction * static_cast<double>(total_ + 1) - static_cast<double>(entries_[i].count);
            if (deficit > best_deficit + 1e-15) {
                best_deficit = deficit;
                best = i;
            }
        }
        ++entries_[best].count;
        ++total_;
        return entries_[best].label;
    }

    NoiseConfig config_for(const std::string& label, std::uint64_t seed) const {
        if (label == "clean") return NoiseConfig::clean_config();
        if (label == "10dB") return NoiseConfig::at_snr(10.0, seed);
        if (label == "0dB") return NoiseConfig::at_snr(0.0, seed);
        fail("NoiseMixScheduler: unknown label " + label);
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::int64_t total() const { return total_; }

    ordered_json to_json() const {
        ordered_json arr = ordered_json::array();
        for (const auto& e : entries_)
            arr.push_back({{"label", e.label}, {"fraction", e.fraction}, {"count", e.count}});
        return {{"entries", arr}, {"total", total_}};
    }

    static NoiseMixScheduler from_json(const ordered_json& j) {
        NoiseMixScheduler s(1, 1, 1);
        s.entries_.clear();
        for (const auto& e : j.at("entries"))
            s.entries_.push_back({e.at("label").get<std::string>(), e.at("fraction").get<double>(),
                                  e.at("count").get<std::int64_t>()});
        s.total_ = j.at("total").get<std::int64_t>();
        return s;
    }

  private:
    std::vector<Entry> entries_;
    std::int64_t total_ = 0;
};

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

// p <- p - lr * g, with optional global-norm clipping.
template <typename Real>
void sgd_update(ModelParams<Real>& params, const std::unordered_map<std::string, NDArray<Real>>& grads,
                double lr, double clip_norm = 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (std::int64_t i = 0; i < g.size(); ++i) {
            const double v = static_cast<double>(g[i]);
            if (!std::isfinite(v)) fail("sgd_update: non-finite gradient for parameter '" + name + "'");
            sq += v * v;
        }
    }
    double scale = 1.0;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(sq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }
    for (auto& [name, arr] : params.fields()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const auto& g = it->second;
        check(g.same_shape(*arr), "sgd_update: gradient shape mismatch for '" + name + "'");
        for (std::int64_t i = 0; i < g.size(); ++i)
            (*arr)[i] -= static_cast<Real>(lr * scale * static_cast<double>(g[i]));
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

// lr decreases by 10% every time the training loss plateaus.
class LrSchedule {
  public:
    LrSchedule(double initial_lr = 0.1, double decay = 0.9, int patience = 200,
               double min_delta_rel = 1e-4)
        : lr_(initial_lr), decay_(decay), detector_(patience, min_delta_rel) {}

    double lr() const { return lr_; }

    bool observe(double loss) {
        if (detector_.observe(loss)) {
            lr_ *= decay_;
            return true;
        }
        return false;
    }

    ordered_json to_json() const {
        return {{"lr", lr_}, {"decay", decay_}, {"detector", detector_.to_json()}};
    }

    static LrSchedule from_json(const ordered_json& j) {
        LrSchedule s(j.at("lr").get<double>(), j.at("decay").get<double>());
        s.detector_ = PlateauDetector::from_json(j.at("detector"));
        return s;
    }

  private:
    double lr_;
    double decay_;
    PlateauDetector detector_;
};

// ---------------------------------------------------------------------------
// Curriculum cutting
// ---------------------------------------------------------------------------

// Word-aligned sub-sequence of at most max_words, cut at character/frame
// boundaries (audio rows are exactly 4x the video frames throughout). The
// video range is widened to at least 5 frames so a conv window exists.
template <typename Real>
Utterance<Real> cut_for_curriculum(const Utterance<Real>& utt, int max_words, Rng& rng) {
    const auto words = split_words(utt.transcript);
    if (static_cast<int>(words.size()) <= max_words) return utt;

    const int start_word = rng.uniform_int(static_cast<int>(words.size()) - max_words + 1);
    // character spans of each word
    std::vector<std::pair<int, int>> spans;
    int pos = 0;
    for (const auto& w : words) {
        while (pos < static_cast<int>(utt.transcript.size()) && utt.transcript[static_cast<std::size_t>(pos)] == ' ')
            ++pos;
        spans.emplace_back(pos, pos + static_cast<int>(w.size()));
        pos += static_cast<int>(w.size());
    }
    const int char_begin = spans[static_cast<std::size_t>(start_word)].first;
    const int char_end = spans[static_cast<std::size_t>(start_word + max_words - 1)].second;

    std::vector<int> prefix{0};
    for (int k : utt.char_frames) prefix.push_back(prefix.back() + k);
    const int total_frames = prefix.back();
    int vb = prefix[static_cast<std::size_t>(char_begin)];
    int ve = prefix[static_cast<std::size_t>(char_end)];
    check(total_frames >= 5, "cut_for_curriculum: utterance shorter than one video window");
    while (ve - vb < 5) {  // widen inside the utterance
        if (vb > 0)
            --vb;
        else
            ++ve;
    }

    Utterance<Real> cut;
    cut.id = utt.id + "#w" + std::to_string(start_word) + "-" + std::to_string(max_words);
    cut.transcript = utt.transcript.substr(static_cast<std::size_t>(char_begin),
                                           static_cast<std::size_t>(char_end - char_begin));
    cut.split = utt.split;
    cut.char_frames.assign(utt.char_frames.begin() + char_begin, utt.char_frames.begin() + char_end);
    if (utt.has_video) {
        const int hw = utt.video.dim(1) * utt.video.dim(2);
        cut.has_video = true;
        cut.video = NDArray<Real>({ve - vb, utt.video.dim(1), utt.video.dim(2)});
        std::copy(utt.video.data() + static_cast<std::int64_t>(vb) * hw,
                  utt.video.data() + static_cast<std::int64_t>(ve) * hw, cut.video.data());
    }
    const int ab = 4 * vb, ae = 4 * ve;
    check(ae <= utt.audio.dim(0), "cut_for_curriculum: audio/video frame accounting mismatch");
    cut.audio = NDArray<Real>({ae - ab, utt.audio.dim(1)});
    std::copy(utt.audio.data() + static_cast<std::int64_t>(ab) * utt.audio.dim(1),
              utt.audio.data() + static_cast<std::int64_t>(ae) * utt.audio.dim(1), cut.audio.data());
    return cut;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string mode = "wlas";  // was (lips only) | las (audio only) | wlas
    int batch_size = 64;
    double learning_rate = 0.1;
    double decay = 0.9;
    int lr_patience = 200;    // paper-scale value: 2000
    int stop_patience = 500;  // paper-scale value: 5000
    int val_interval = 50;
    int val_utterances = 32;  // greedy-decoded per validation round
    int max_iterations = 20000;
    double clip_norm = 5.0;
    double min_delta_rel = 1e-4;
    CurriculumConfig curriculum;
    SamplingConfig sampling;
    double noise_clean = 1.0 / 3.0, noise_10db = 1.0 / 3.0, noise_0db = 1.0 / 3.0;
    std::uint64_t seed = 1;
    double target_val_cer = -1.0;  // early exit when reached; negative disables

    ordered_json to_json() const {
        return {{"mode", mode},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"decay", decay},
                {"lr_patience", lr_patience},
                {"stop_patience", stop_patience},
                {"val_interval", val_interval},
                {"val_utterances", val_utterances},
                {"max_iterations", max_iterations},
                {"clip_norm", clip_norm},
                {"min_delta_rel", min_delta_rel},
                {"curriculum",
                 {{"start_words", curriculum.start_words},
                  {"full_words", curriculum.full_words},
                  {"patience", curriculum.patience},
                  {"min_delta_rel", curriculum.min_delta_rel}}},
                {"sampling",
                 {{"steps", sampling.steps},
                  {"iters_per_step", sampling.iters_per_step},
                  {"cap", sampling.cap}}},
                {"noise_mix", {{"clean", noise_clean}, {"10dB", noise_10db}, {"0dB", noise_0db}}},
                {"seed", seed},
                {"target_val_cer", target_val_cer}};
    }

    static TrainConfig from_json(const ordered_json& j) {
        TrainConfig c;
        c.mode = j.at("mode").get<std::string>();
        c.batch_size = j.at("batch_size").get<int>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.decay = j.at("decay").get<double>();
        c.lr_patience = j.at("lr_patience").get<int>();
        c.stop_patience = j.at("stop_patience").get<int>();
        c.val_interval = j.at("val_interval").get<int>();
        c.val_utterances = j.at("val_utterances").get<int>();
        c.max_iterations = j.at("max_iterations").get<int>();
        c.clip_norm = j.at("clip_norm").get<double>();
        c.min_delta_rel = j.at("min_delta_rel").get<double>();
        const auto& cu = j.at("curriculum");
        c.curriculum.start_words = cu.at("start_words").get<int>();
        c.curriculum.full_words = cu.at("full_words").get<int>();
        c.curriculum.patience = cu.at("patience").get<int>();
        c.curriculum.min_delta_rel = cu.at("min_delta_rel").get<double>();
        const auto& sa = j.at("sampling");
        c.sampling.steps = sa.at("steps").get<int>();
        c.sampling.iters_per_step = sa.at("iters_per_step").get<int>();
        c.sampling.cap = sa.at("cap").get<double>();
        const auto& nm = j.at("noise_mix");
        c.noise_clean = nm.at("clean").get<double>();
        c.noise_10db = nm.at("10dB").get<double>();
        c.noise_0db = nm.at("0dB").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.target_val_cer = j.at("target_val_cer").get<double>();
        return c;
    }

    Modality train_modality(Rng& rng) const {
        if (mode == "was") return Modality::Lips;
        if (mode == "las") return Modality::Audio;
        check(mode == "wlas", "TrainConfig: unknown mode '" + mode + "'");
        return select_modality(rng);
    }

    Modality eval_modality() const {
        if (mode == "was") return Modality::Lips;
        if (mode == "las") return Modality::Audio;
        return Modality::Both;
    }
};

struct RunLogEntry {
    int iter = 0;
    double loss = 0.0;
    double lr = 0.0;
    int curriculum_len = 0;
    double sampling_p = 0.0;
    std::optional<double> val_cer, val_wer;

    ordered_json to_json() const {
        ordered_json j{{"iter", iter},
                       {"loss", loss},
                       {"lr", lr},
                       {"curriculum_len", curriculum_len},
                       {"sampling_p", sampling_p}};
        if (val_cer) j["val_cer"] = *val_cer;
        if (val_wer) j["val_wer"] = *val_wer;
        return j;
    }
};

// Append-only, monotone iteration index; emitted as line-delimited JSON.
struct RunLog {
    std::vector<RunLogEntry> entries;

    void append(RunLogEntry e) {
        check(entries.empty() || e.iter > entries.back().iter, "RunLog: iteration index must increase");
        entries.push_back(std::move(e));
    }

    void write(const std::string& path, const ordered_json& config_echo) const {
        std::ofstream os(path, std::ios::trunc);
        check(os.good(), "RunLog: cannot open " + path);
        os << ordered_json{{"config", config_echo}}.dump() << "\n";
        for (const auto& e : entries) os << e.to_json().dump() << "\n";
        check(os.good(), "RunLog: write failed");
    }
};

// Mutable loop state, serialized into checkpoints so training resumes
// exactly where it stopped.
struct TrainerState {
    int iter = 0;
    LrSchedule lr_schedule;
    CurriculumState curriculum;
    NoiseMixScheduler noise{1, 1, 1};
    std::string rng_state;
    double best_val_cer = std::numeric_limits<double>::infinity();
    int best_iter = 0;
    bool any_validation = false;

    ordered_json to_json() const {
        return {{"iter", iter},
                {"lr_schedule", lr_schedule.to_json()},
                {"curriculum", curriculum.to_json()},
                {"noise", noise.to_json()},
                {"rng_state", rng_state},
                {"best_val_cer",
                 std::isfinite(best_val_cer) ? ordered_json(best_val_cer) : ordered_json(nullptr)},
                {"best_iter", best_iter},
                {"any_validation", any_validation}};
    }

    static TrainerState from_json(const ordered_json& j) {
        TrainerState s;
        s.iter = j.at("iter").get<int>();
        s.lr_schedule = LrSchedule::from_json(j.at("lr_schedule"));
        s.curriculum = CurriculumState::from_json(j.at("curriculum"));
        s.noise = NoiseMixScheduler::from_json(j.at("noise"));
        s.rng_state = j.at("rng_state").get<std::string>();
        s.best_val_cer = j.at("best_val_cer").is_null() ? std::numeric_limits<double>::infinity()
                                                        : j.at("best_val_cer").get<double>();
        s.best_iter = j.at("best_iter").get<int>();
        s.any_validation = j.at("any_validation").get<bool>();
        return s;
    }
};

template <typename Real>
struct TrainResult {
    ModelParams<Real> best_params;
    ModelParams<Real> last_params;
    TrainerState state;
    RunLog log;
    double best_val_cer = std::numeric_limits<double>::infinity();
    int iterations_run = 0;
};

template <typename Real>
CorpusMetrics evaluate_greedy(const ModelParams<Real>& params, const Corpus<Real>& corpus,
                              Modality mode, int limit = -1,
                              const NoiseConfig& noise = NoiseConfig::clean_config()) {
    std::vector<std::pair<std::string, std::string>> pairs;
    const int n = limit < 0 ? static_cast<int>(corpus.utterances.size())
                            : std::min<int>(limit, static_cast<int>(corpus.utterances.size()));
    check(n > 0, "evaluate_greedy: no utterances");
    for (int i = 0; i < n; ++i) {
        const auto& u = corpus.utterances[static_cast<std::size_t>(i)];
        NoiseConfig nc = noise;
        if (!nc.clean) nc.seed = derive_seed(nc.seed, u.id);
        const auto enc = encode_utterance(params, u, mode, nc);
        auto g = greedy_decode(params, enc, params.config.max_decode_len);
        pairs.emplace_back(u.transcript, g.transcript);
    }
    return corpus_metrics(pairs);
}

// The full training strategy: curriculum sampling, per-example modality
// selection with audio-only supplementary data, SNR noise mixing, scheduled
// sampling, SGD with plateau decay, and validation-based stopping. The best
// validation checkpoint is retained.
template <typename Real>
TrainResult<Real> train(const TrainConfig& cfg, const Corpus<Real>& train_corpus,
                        const Corpus<Real>& val_corpus, const Corpus<Real>& audio_only_corpus,
                        ModelParams<Real> params, std::optional<TrainerState> resume = std::nullopt,
                        const std::function<void(int, const RunLogEntry&)>& on_log = nullptr) {
    check(!train_corpus.utterances.empty(), "train: training corpus is empty");
    check(!val_corpus.utterances.empty(), "train: validation corpus is empty");

    TrainerState st;
    Rng rng(cfg.seed);
    if (resume) {
        st = *resume;
        rng.load_state(st.rng_state);
    } else {
        st.lr_schedule = LrSchedule(cfg.learning_rate, cfg.decay, cfg.lr_patience, cfg.min_delta_rel);
        st.curriculum = CurriculumState(cfg.curriculum);
        st.noise = NoiseMixScheduler(cfg.noise_clean, cfg.noise_10db, cfg.noise_0db);
    }

    TrainResult<Real> out;
    out.best_params = params;

    const Corpus<Real>& audio_pool =
        audio_only_corpus.utterances.empty() ? train_corpus : audio_only_corpus;

    for (int iter = st.iter + 1; iter <= cfg.max_iterations; ++iter) {
        const double samp_p = sampling_probability(st.curriculum, cfg.sampling);
        std::unordered_map<std::string, NDArray<Real>> grad_sum;
        double loss_sum = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Modality mode = cfg.train_modality(rng);
            const Corpus<Real>& pool = mode == Modality::Audio ? audio_pool : train_corpus;
            const auto& base =
                pool.utterances[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.utterances.size())))];
            const auto cut = cut_for_curriculum(base, st.curriculum.max_length_words(), rng);

            NoiseConfig noise = NoiseConfig::clean_config();
            if (mode != Modality::Lips) noise = st.noise.config_for(st.noise.next(), rng.next_u64());

            LossOptions opt;
            opt.sampling_prob = samp_p;
            opt.label_smoothing = params.config.label_smoothing;
            opt.dropout = params.config.dropout;
            opt.rng = &rng;
            opt.compute_grads = true;
            LossResult<Real> res;
            try {
                res = sequence_loss(params, cut, mode, opt, noise);
            } catch (const std::exception& e) {
                fail("train: aborting at iteration " + std::to_string(iter) + " on '" + cut.id +
                     "': " + e.what());
            }
            loss_sum += static_cast<double>(res.loss);
            for (auto& [name, g] : res.gradients) {
                auto it = grad_sum.find(name);
                if (it == grad_sum.end())
                    grad_sum.emplace(name, std::move(g));
                else
                    it->second.add_in_place(g);
            }
        }
        const Real inv_batch = static_cast<Real>(1.0 / cfg.batch_size);
        for (auto& [name, g] : grad_sum)
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= inv_batch;

        sgd_update(params, grad_sum, st.lr_schedule.lr(), cfg.clip_norm);

        const double mean_loss = loss_sum / cfg.batch_size;
        st.lr_schedule.observe(mean_loss);
        st.curriculum.observe(mean_loss);
        st.iter = iter;

        RunLogEntry entry;
        entry.iter = iter;
        entry.loss = mean_loss;
        entry.lr = st.lr_schedule.lr();
        entry.curriculum_len = st.curriculum.max_length_words();
        entry.sampling_p = samp_p;

        bool stop = false;
        if (cfg.val_interval > 0 && iter % cfg.val_interval == 0) {
            const auto vm = evaluate_greedy(params, val_corpus, cfg.eval_modality(), cfg.val_utterances);
            entry.val_cer = vm.cer;
            entry.val_wer = vm.wer;
            st.any_validation = true;
            if (vm.cer < st.best_val_cer - 1e-12) {
                st.best_val_cer = vm.cer;
                st.best_iter = iter;
                out.best_params = params;
            }
            if (cfg.target_val_cer >= 0.0 && st.best_val_cer <= cfg.target_val_cer) stop = true;
            if (iter - st.best_iter >= cfg.stop_patience) stop = true;
        }
        if (on_log) on_log(iter, entry);
        out.log.append(std::move(entry));
        if (stop) break;
    }

    st.rng_state = rng.save_state();
    out.state = st;
    out.last_params = std::move(params);
    out.best_val_cer = st.best_val_cer;
    out.iterations_run = st.iter;
    if (!st.any_validation) out.best_params = out.last_params;
    return out;
}

}  // namespace wlas
