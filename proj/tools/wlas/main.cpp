// Command-line entry points: dataset generation, training, evaluation,
// decoding, and the beam-width sweep. One config file drives everything;
// flags win over config values.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "wlas/checkpoint.hpp"
#include "wlas/decoding.hpp"
#include "wlas/run_config.hpp"
#include "wlas/training.hpp"

namespace fs = std::filesystem;
using namespace wlas;

using Real = float;  // 64-bit is reserved for gradient-check tests

namespace {

struct CommonFlags {
    std::string config_path;
    std::string data_dir;
    std::string run_dir;
    std::int64_t seed = -1;
    bool force = false;
};

RunConfig load_config(const CommonFlags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : RunConfig::from_file(f.config_path);
    if (!f.data_dir.empty()) cfg.data_dir = f.data_dir;
    if (f.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(f.seed);
        cfg.corpus.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
    }
    return cfg;
}

std::string default_run_dir(const RunConfig& cfg) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::ostringstream os;
    os << cfg.out_dir << "/" << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << "-s" << cfg.seed;
    return os.str();
}

std::string prepare_run_dir(const RunConfig& cfg, const CommonFlags& f) {
    const std::string dir = f.run_dir.empty() ? default_run_dir(cfg) : f.run_dir;
    if (fs::exists(dir) && !fs::is_empty(dir) && !f.force)
        fail("run directory '" + dir + "' exists and is not empty (use --force to overwrite)");
    fs::create_directories(dir);
    return dir;
}

DatasetManifest require_manifest(const RunConfig& cfg) {
    const std::string dir = cfg.resolved_data_dir();
    const std::string path = dir + "/manifest.json";
    check(fs::exists(path), "dataset not found at '" + path + "' (run `wlas generate` first)");
    return load_manifest(path);
}

void check_vocab_match(const ModelParams<Real>& params, const DatasetManifest& manifest) {
    check(params.vocab.tokens() == manifest.vocabulary,
          "vocabulary mismatch between checkpoint and dataset");
}

double utterance_seconds(const Utterance<Real>& u) {
    return u.has_video ? u.video.dim(0) / 25.0 : u.audio.dim(0) / 100.0;
}

// ---- generate -------------------------------------------------------------

int cmd_generate(const CommonFlags& f) {
    RunConfig cfg = load_config(f);
    const std::string dir = cfg.resolved_data_dir();
    if (fs::exists(dir + "/manifest.json") && !f.force)
        fail("dataset already exists at '" + dir + "' (use --force to regenerate)");
    const auto manifest = build_dataset(cfg.corpus, dir);
    std::size_t files = 0;
    for (const auto& [name, recs] : manifest.splits) files += recs.size();
    std::cout << "wrote " << dir << "/manifest.json with " << files << " utterances across "
              << manifest.splits.size() << " sections\n";
    return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const CommonFlags& f, const std::string& mode_flag, int iterations_flag,
              const std::string& resume_path) {
    RunConfig cfg = load_config(f);
    if (!mode_flag.empty()) cfg.train.mode = mode_flag;
    if (iterations_flag > 0) cfg.train.max_iterations = iterations_flag;
    cfg.train.eval_modality();  // validates the mode string

    const auto manifest = require_manifest(cfg);
    const std::string data_dir = cfg.resolved_data_dir();
    auto train_split = load_split<Real>(manifest, data_dir, "train");
    auto val_split = load_split<Real>(manifest, data_dir, "val");
    Corpus<Real> audio_only{train_split.vocab, {}};
    if (manifest.splits.count("audio_only") && !manifest.splits.at("audio_only").empty())
        audio_only = load_split<Real>(manifest, data_dir, "audio_only");

    const std::string run_dir = prepare_run_dir(cfg, f);

    ModelParams<Real> params;
    std::optional<TrainerState> resume;
    if (!resume_path.empty()) {
        auto ckpt = load_checkpoint<Real>(resume_path);
        check(!ckpt.trainer_state.is_null(),
              "checkpoint '" + resume_path + "' carries no trainer state; cannot resume");
        params = std::move(ckpt.params);
        check_vocab_match(params, manifest);
        resume = TrainerState::from_json(ckpt.trainer_state);
        std::cout << "resuming from " << resume_path << " at iteration " << resume->iter << "\n";
    } else {
        params = ModelParams<Real>::init(cfg.model, train_split.vocab, cfg.seed);
    }

    std::cout << "training mode=" << cfg.train.mode << " on " << train_split.utterances.size()
              << " utterances (" << params.parameter_count() << " parameters)\n";
    auto result = train(cfg.train, train_split, val_split, audio_only, std::move(params), resume,
                        [](int iter, const RunLogEntry& e) {
                            if (e.val_cer)
                                std::cout << "iter " << iter << " loss " << e.loss << " val_cer "
                                          << *e.val_cer << " val_wer " << *e.val_wer << "\n";
                        });

    const auto echo = cfg.to_json();
    result.log.write(run_dir + "/runlog.jsonl", echo);
    save_checkpoint(run_dir + "/best.ckpt", result.best_params, nullptr, echo);
    save_checkpoint(run_dir + "/last.ckpt", result.last_params, result.state.to_json(), echo);
    std::cout << "ran " << result.iterations_run << " iterations; best val CER "
              << result.best_val_cer << "\nwrote " << run_dir << "/{runlog.jsonl,best.ckpt,last.ckpt}\n";
    return 0;
}

// ---- evaluate ---------------------------------------------------------------

struct ConditionResult {
    std::string mode, snr;
    CorpusMetrics metrics;
};

std::vector<ConditionResult> run_conditions(const ModelParams<Real>& params,
                                            const Corpus<Real>& test, const EvalConfig& eval,
                                            const DecodeConfig& dec) {
    std::vector<ConditionResult> out;
    const int limit = eval.limit < 0 ? static_cast<int>(test.utterances.size())
                                     : std::min<int>(eval.limit, static_cast<int>(test.utterances.size()));
    for (const auto& mode_name : eval.modes)
        for (const auto& snr : eval.snrs) {
            const Modality mode = modality_from_name(mode_name);
            // noise on a zeroed audio stream is meaningless; skip those cells
            if (mode == Modality::Lips && snr != "clean") continue;
            std::vector<std::pair<std::string, std::string>> pairs;
            for (int i = 0; i < limit; ++i) {
                const auto& u = test.utterances[static_cast<std::size_t>(i)];
                DecodeOptions opt;
                opt.beam_width = eval.beam_width > 0 ? eval.beam_width : dec.beam_width;
                opt.max_length = dec.max_length;
                opt.length_normalize = dec.length_normalize;
                const auto noise = snr_to_noise(snr, derive_seed(eval.noise_seed, u.id));
                auto res = beam_decode(params, u, mode, opt, noise);
                pairs.emplace_back(u.transcript, res.transcript);
            }
            out.push_back({mode_name, snr, corpus_metrics(pairs)});
        }
    return out;
}

void print_report(std::ostream& os, const std::vector<ConditionResult>& rows) {
    os << std::left << std::setw(8) << "mode" << std::setw(8) << "snr" << std::right << std::setw(9)
       << "CER%" << std::setw(9) << "WER%" << std::setw(9) << "BLEU" << "\n";
    os << std::string(43, '-') << "\n";
    for (const auto& r : rows)
        os << std::left << std::setw(8) << r.mode << std::setw(8) << r.snr << std::right << std::fixed
           << std::setprecision(2) << std::setw(8) << 100.0 * r.metrics.cer << "%" << std::setw(8)
           << 100.0 * r.metrics.wer << "%" << std::setprecision(3) << std::setw(9) << r.metrics.bleu
           << "\n";
}

int cmd_evaluate(const CommonFlags& f, const std::string& ckpt_path, int beam_width_flag) {
    RunConfig cfg = load_config(f);
    if (beam_width_flag > 0) cfg.eval.beam_width = beam_width_flag;
    const auto manifest = require_manifest(cfg);
    auto ckpt = load_checkpoint<Real>(ckpt_path);
    check_vocab_match(ckpt.params, manifest);
    auto test = load_split<Real>(manifest, cfg.resolved_data_dir(), "test");
    check(!test.utterances.empty(), "evaluate: test split is empty");

    const auto rows = run_conditions(ckpt.params, test, cfg.eval, cfg.decode);
    print_report(std::cout, rows);

    const std::string run_dir = prepare_run_dir(cfg, f);
    std::ofstream txt(run_dir + "/report.txt");
    print_report(txt, rows);
    ordered_json jr;
    jr["config"] = cfg.to_json();
    jr["checkpoint"] = ckpt_path;
    jr["conditions"] = ordered_json::array();
    for (const auto& r : rows)
        jr["conditions"].push_back({{"mode", r.mode},
                                    {"snr", r.snr},
                                    {"cer", r.metrics.cer},
                                    {"wer", r.metrics.wer},
                                    {"bleu", r.metrics.bleu},
                                    {"mean_sentence_bleu", r.metrics.mean_sentence_bleu},
                                    {"utterances", r.metrics.utterances}});
    std::ofstream(run_dir + "/report.json") << jr.dump(2) << "\n";
    std::cout << "wrote " << run_dir << "/{report.txt,report.json}\n";
    return 0;
}

// ---- decode -----------------------------------------------------------------

int cmd_decode(const CommonFlags& f, const std::string& ckpt_path, std::vector<std::string> ids,
               int beam_width_flag, const std::string& mode_name, bool dump_attention) {
    RunConfig cfg = load_config(f);
    if (beam_width_flag > 0) cfg.decode.beam_width = beam_width_flag;
    const auto manifest = require_manifest(cfg);
    auto ckpt = load_checkpoint<Real>(ckpt_path);
    check_vocab_match(ckpt.params, manifest);
    const Modality mode = modality_from_name(mode_name);
    const std::string data_dir = cfg.resolved_data_dir();

    // resolve ids (default: the whole test split)
    std::vector<std::pair<std::string, ManifestRecord>> records;
    if (ids.empty()) {
        for (const auto& r : manifest.splits.at("test")) records.emplace_back("test", r);
    } else {
        for (const auto& want : ids) {
            bool found = false;
            for (const auto& [split, recs] : manifest.splits)
                for (const auto& r : recs)
                    if (r.id == want) {
                        records.emplace_back(split, r);
                        found = true;
                    }
            if (!found) fail("unknown utterance id '" + want + "'");
        }
    }

    const std::string run_dir = prepare_run_dir(cfg, f);
    std::ofstream out(run_dir + "/decodes.jsonl");
    out << ordered_json{{"config", cfg.to_json()}, {"checkpoint", ckpt_path}}.dump() << "\n";

    double audio_visual_seconds = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& [split, rec] : records) {
        const auto utt = load_utterance<Real>(manifest, data_dir, rec, split);
        audio_visual_seconds += utterance_seconds(utt);
        DecodeOptions opt;
        opt.beam_width = cfg.decode.beam_width;
        opt.max_length = cfg.decode.max_length;
        opt.length_normalize = cfg.decode.length_normalize;
        auto res = beam_decode(ckpt.params, utt, mode, opt);
        ordered_json rec_j{{"id", rec.id},
                           {"reference", utt.transcript},
                           {"hypothesis", res.transcript},
                           {"score", res.log_prob},
                           {"cer", cer(utt.transcript, res.transcript)},
                           {"wer", wer(utt.transcript, res.transcript)}};
        if (dump_attention) {
            const auto enc = encode_utterance(ckpt.params, utt, mode);
            auto g = greedy_decode(ckpt.params, enc, cfg.decode.max_length);
            const std::string va = run_dir + "/" + rec.id + ".attn_video.pgm";
            const std::string aa = run_dir + "/" + rec.id + ".attn_audio.pgm";
            save_pgm(va, g.alpha_video);
            save_pgm(aa, g.alpha_audio);
            rec_j["attention_video"] = va;
            rec_j["attention_audio"] = aa;
        }
        out << rec_j.dump() << "\n";
        std::cout << rec.id << "  ref='" << utt.transcript << "'  hyp='" << res.transcript
                  << "'  logp=" << res.log_prob << "\n";
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "decoded " << records.size() << " utterances (" << audio_visual_seconds
              << " s of input) in " << wall << " s: " << audio_visual_seconds / wall
              << "x real time\nwrote " << run_dir << "/decodes.jsonl\n";
    return 0;
}

// ---- sweep-beam ---------------------------------------------------------------

int cmd_sweep_beam(const CommonFlags& f, const std::string& ckpt_path, std::vector<int> widths,
                   const std::string& mode_name) {
    RunConfig cfg = load_config(f);
    if (widths.empty()) widths = {1, 2, 4, 8};
    const auto manifest = require_manifest(cfg);
    auto ckpt = load_checkpoint<Real>(ckpt_path);
    check_vocab_match(ckpt.params, manifest);
    auto test = load_split<Real>(manifest, cfg.resolved_data_dir(), "test");
    const Modality mode = modality_from_name(mode_name);
    const int limit = cfg.eval.limit < 0 ? static_cast<int>(test.utterances.size())
                                         : std::min<int>(cfg.eval.limit,
                                                         static_cast<int>(test.utterances.size()));
    check(limit > 0, "sweep-beam: test split is empty");

    const std::string run_dir = prepare_run_dir(cfg, f);
    std::ofstream tsv(run_dir + "/beam_sweep.tsv");
    tsv << "width\twer\tcer\tmean_logp\n";
    ordered_json jr;
    jr["config"] = cfg.to_json();
    jr["checkpoint"] = ckpt_path;
    jr["points"] = ordered_json::array();
    std::cout << "width    WER%     CER%   mean logp\n";
    for (int w : widths) {
        std::vector<std::pair<std::string, std::string>> pairs;
        double logp_sum = 0.0;
        for (int i = 0; i < limit; ++i) {
            const auto& u = test.utterances[static_cast<std::size_t>(i)];
            DecodeOptions opt;
            opt.beam_width = w;
            opt.max_length = cfg.decode.max_length;
            auto res = beam_decode(ckpt.params, u, mode, opt);
            pairs.emplace_back(u.transcript, res.transcript);
            logp_sum += res.log_prob;
        }
        const auto m = corpus_metrics(pairs);
        const double mean_logp = logp_sum / limit;
        tsv << w << "\t" << m.wer << "\t" << m.cer << "\t" << mean_logp << "\n";
        jr["points"].push_back({{"width", w}, {"wer", m.wer}, {"cer", m.cer}, {"mean_logp", mean_logp}});
        std::cout << std::left << std::setw(6) << w << std::right << std::fixed << std::setprecision(2)
                  << std::setw(7) << 100.0 * m.wer << "%" << std::setw(8) << 100.0 * m.cer << "%"
                  << std::setprecision(4) << std::setw(12) << mean_logp << "\n";
    }
    std::ofstream(run_dir + "/beam_sweep.json") << jr.dump(2) << "\n";
    std::cout << "wrote " << run_dir << "/{beam_sweep.tsv,beam_sweep.json}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"watch-listen-attend-spell audio-visual transcriber"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config_path, "run configuration file (JSON)");
        sub->add_option("--data-dir", flags.data_dir, "dataset directory (overrides config and WLAS_DATA_DIR)");
        sub->add_option("--run-dir", flags.run_dir, "output directory (default: <out_dir>/<timestamp>-s<seed>)");
        sub->add_option("--seed", flags.seed, "override all seeds");
        sub->add_flag("--force", flags.force, "overwrite existing outputs");
    };

    auto* gen = app.add_subcommand("generate", "synthesize the dataset");
    add_common(gen);

    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr);
    std::string mode_flag, resume_path;
    int iterations_flag = -1;
    tr->add_option("--mode", mode_flag, "was|las|wlas");
    tr->add_option("--iterations", iterations_flag, "max training iterations");
    tr->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* ev = app.add_subcommand("evaluate", "report CER/WER/BLEU per mode and SNR");
    add_common(ev);
    std::string ckpt_eval;
    int beam_eval = -1;
    ev->add_option("--checkpoint", ckpt_eval, "trained checkpoint")->required();
    ev->add_option("--beam-width", beam_eval, "beam width");

    auto* de = app.add_subcommand("decode", "decode utterances");
    add_common(de);
    std::string ckpt_dec, dec_mode = "both";
    std::vector<std::string> ids;
    int beam_dec = -1;
    bool dump_attention = false;
    de->add_option("--checkpoint", ckpt_dec, "trained checkpoint")->required();
    de->add_option("--ids", ids, "utterance ids (default: whole test split)");
    de->add_option("--mode", dec_mode, "audio|lips|both");
    de->add_option("--beam-width", beam_dec, "beam width");
    de->add_flag("--dump-attention", dump_attention, "write attention matrices as PGM images");

    auto* sw = app.add_subcommand("sweep-beam", "WER as a function of beam width");
    add_common(sw);
    std::string ckpt_sweep, sweep_mode = "lips";
    std::vector<int> widths;
    sw->add_option("--checkpoint", ckpt_sweep, "trained checkpoint")->required();
    sw->add_option("--widths", widths, "beam widths to sweep");
    sw->add_option("--mode", sweep_mode, "audio|lips|both (default lips, the width-study setup)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(flags);
        if (tr->parsed()) return cmd_train(flags, mode_flag, iterations_flag, resume_path);
        if (ev->parsed()) return cmd_evaluate(flags, ckpt_eval, beam_eval);
        if (de->parsed()) return cmd_decode(flags, ckpt_dec, ids, beam_dec, dec_mode, dump_attention);
        if (sw->parsed()) return cmd_sweep_beam(flags, ckpt_sweep, widths, sweep_mode);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
