#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "wlas/run_config.hpp"

// End-to-end command tests against the built binary (path injected by CMake).

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const std::string kBin = WLAS_BIN;

struct CmdResult {
    int exit_code;
    std::string output;
};

CmdResult run(const std::string& args) {
    const std::string out_file = (fs::temp_directory_path() / "wlas_cli_out.txt").string();
    const int rc = std::system((kBin + " " + args + " > " + out_file + " 2>&1").c_str());
    std::ifstream is(out_file);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return {WEXITSTATUS(rc), text};
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::string base_dir() { return (fs::temp_directory_path() / "wlas_cli_test").string(); }

std::string write_config() {
    const std::string dir = base_dir();
    ordered_json cfg{
        {"data_dir", dir + "/data"},
        {"out_dir", dir + "/runs"},
        {"seed", 5},
        {"corpus",
         {{"train", 8},
          {"val", 2},
          {"test", 2},
          {"audio_only", 2},
          {"synth", {{"video_height", 12}, {"video_width", 12}, {"frames_per_char", 2}}}}},
        {"model",
         {{"video_height", 12},
          {"video_width", 12},
          {"conv_out", 12},
          {"watch_hidden", 12},
          {"listen_hidden", 12},
          {"attention_dim", 12},
          {"embed_dim", 6},
          {"mlp_hidden", 24},
          {"dropout", 0.0}}},
        {"train",
         {{"batch_size", 2},
          {"max_iterations", 20},
          {"val_interval", 10},
          {"val_utterances", 2},
          {"learning_rate", 0.3},
          {"curriculum", {{"patience", 8}}}}},
        {"eval", {{"beam_width", 2}, {"limit", 2}}}};
    fs::create_directories(dir);
    const std::string path = dir + "/cfg.json";
    std::ofstream(path) << cfg.dump(2);
    return path;
}

}  // namespace

TEST_CASE("cli end to end") {
    const std::string dir = base_dir();
    fs::remove_all(dir);
    const std::string cfg = write_config();

    // ---- generate ----
    auto g = run("generate --config " + cfg);
    CHECK(g.exit_code == 0);
    CHECK(fs::exists(dir + "/data/manifest.json"));

    // refuses to overwrite without --force
    auto g2 = run("generate --config " + cfg);
    CHECK(g2.exit_code != 0);

    // idempotent regeneration: identical manifest bytes
    const std::string manifest_bytes = file_bytes(dir + "/data/manifest.json");
    auto g3 = run("generate --config " + cfg + " --force");
    CHECK(g3.exit_code == 0);
    CHECK(file_bytes(dir + "/data/manifest.json") == manifest_bytes);

    // ---- train ----
    auto t = run("train --config " + cfg + " --run-dir " + dir + "/runs/t1");
    CHECK(t.exit_code == 0);
    CHECK(fs::exists(dir + "/runs/t1/best.ckpt"));
    CHECK(fs::exists(dir + "/runs/t1/last.ckpt"));
    CHECK(fs::exists(dir + "/runs/t1/runlog.jsonl"));

    // run log: first line is the config echo, then one record per iteration
    {
        std::ifstream is(dir + "/runs/t1/runlog.jsonl");
        std::string line;
        REQUIRE(std::getline(is, line));
        auto j = ordered_json::parse(line);
        CHECK(j.contains("config"));
        CHECK(j.at("config").at("seed") == 5);
        int count = 0, last_iter = 0;
        while (std::getline(is, line)) {
            auto e = ordered_json::parse(line);
            CHECK(e.at("iter").get<int>() > last_iter);
            last_iter = e.at("iter").get<int>();
            ++count;
        }
        CHECK(count == 20);
    }

    // determinism: identical seeds and config give an identical run log
    auto t2 = run("train --config " + cfg + " --run-dir " + dir + "/runs/t2");
    CHECK(t2.exit_code == 0);
    CHECK(file_bytes(dir + "/runs/t1/runlog.jsonl") == file_bytes(dir + "/runs/t2/runlog.jsonl"));
    CHECK(file_bytes(dir + "/runs/t1/best.ckpt") == file_bytes(dir + "/runs/t2/best.ckpt"));

    // refuses to reuse a non-empty run dir without --force
    auto t3 = run("train --config " + cfg + " --run-dir " + dir + "/runs/t1");
    CHECK(t3.exit_code != 0);

    // resume continues from the saved iteration
    auto tr = run("train --config " + cfg + " --run-dir " + dir + "/runs/t4 --resume " + dir +
                  "/runs/t1/last.ckpt --iterations 22");
    CHECK(tr.exit_code == 0);
    CHECK(tr.output.find("resuming") != std::string::npos);
    {
        std::ifstream is(dir + "/runs/t4/runlog.jsonl");
        std::string line;
        std::getline(is, line);  // config echo
        int count = 0;
        int first_iter = -1;
        while (std::getline(is, line)) {
            auto e = ordered_json::parse(line);
            if (first_iter < 0) first_iter = e.at("iter").get<int>();
            ++count;
        }
        CHECK(first_iter == 21);
        CHECK(count == 2);
    }

    // ---- evaluate ----
    auto ev = run("evaluate --config " + cfg + " --checkpoint " + dir +
                  "/runs/t1/best.ckpt --run-dir " + dir + "/runs/e1");
    CHECK(ev.exit_code == 0);
    CHECK(fs::exists(dir + "/runs/e1/report.txt"));
    {
        std::ifstream is(dir + "/runs/e1/report.json");
        auto j = ordered_json::parse(is);
        CHECK(j.contains("config"));
        // 3 modes x 3 snrs minus the meaningless lips+noise cells
        CHECK(j.at("conditions").size() == 7);
    }

    // ---- decode ----
    auto de = run("decode --config " + cfg + " --checkpoint " + dir +
                  "/runs/t1/best.ckpt --ids test-0 --dump-attention --run-dir " + dir + "/runs/d1");
    CHECK(de.exit_code == 0);
    // throughput is reported and beats the input's real-time duration
    {
        const auto pos = de.output.find("x real time");
        REQUIRE(pos != std::string::npos);
        auto start = de.output.rfind(' ', pos);
        start = de.output.rfind(' ', start - 1);
        const double factor = std::stod(de.output.substr(start + 1));
        CHECK(factor > 1.0);
    }
    CHECK(fs::exists(dir + "/runs/d1/decodes.jsonl"));
    CHECK(fs::exists(dir + "/runs/d1/test-0.attn_video.pgm"));
    CHECK(fs::exists(dir + "/runs/d1/test-0.attn_audio.pgm"));
    {
        std::ifstream is(dir + "/runs/d1/test-0.attn_video.pgm");
        std::string magic;
        is >> magic;
        CHECK(magic == "P5");
    }

    auto bad_id = run("decode --config " + cfg + " --checkpoint " + dir +
                      "/runs/t1/best.ckpt --ids nope-99 --run-dir " + dir + "/runs/d2 --force");
    CHECK(bad_id.exit_code != 0);
    CHECK(bad_id.output.find("unknown utterance id") != std::string::npos);

    // ---- sweep-beam ----
    auto sw = run("sweep-beam --config " + cfg + " --checkpoint " + dir +
                  "/runs/t1/best.ckpt --widths 1 2 --run-dir " + dir + "/runs/s1");
    CHECK(sw.exit_code == 0);
    CHECK(fs::exists(dir + "/runs/s1/beam_sweep.tsv"));
    {
        std::ifstream is(dir + "/runs/s1/beam_sweep.json");
        auto j = ordered_json::parse(is);
        CHECK(j.at("points").size() == 2);
        CHECK(j.at("points").at(0).at("width") == 1);
    }

    fs::remove_all(dir);
}

TEST_CASE("config validation") {
    const std::string dir = base_dir() + "_cfg";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // unknown keys are rejected
    std::ofstream(dir + "/bad.json") << R"({"seed": 1, "nonsense_key": true})";
    auto r = run("generate --config " + dir + "/bad.json");
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("unknown key") != std::string::npos);

    std::ofstream(dir + "/bad2.json") << R"({"train": {"learning_rate": 7.0}})";
    auto r2 = run("generate --config " + dir + "/bad2.json");
    CHECK(r2.exit_code != 0);

    // invalid split sizes: nonzero exit, no partial dataset files
    std::ofstream(dir + "/bad3.json")
        << ordered_json{{"data_dir", dir + "/data3"},
                        {"corpus", {{"train", 64000}, {"val", 1}}}}
               .dump();
    auto r3 = run("generate --config " + dir + "/bad3.json");
    CHECK(r3.exit_code != 0);
    CHECK_FALSE(fs::exists(dir + "/data3"));

    // missing dataset: train refuses
    std::ofstream(dir + "/ok.json") << ordered_json{{"data_dir", dir + "/nodata"}}.dump();
    auto r4 = run("train --config " + dir + "/ok.json --run-dir " + dir + "/r");
    CHECK(r4.exit_code != 0);
    CHECK(r4.output.find("dataset not found") != std::string::npos);

    fs::remove_all(dir);
}

TEST_CASE("env var supplies the default data dir") {
    const std::string dir = base_dir() + "_env";
    fs::remove_all(dir);
    fs::create_directories(dir);
    setenv("WLAS_DATA_DIR", (dir + "/envdata").c_str(), 1);
    std::ofstream(dir + "/cfg.json") << ordered_json{
        {"corpus",
         {{"train", 2},
          {"val", 1},
          {"test", 1},
          {"audio_only", 1},
          {"synth", {{"video_height", 12}, {"video_width", 12}, {"frames_per_char", 2}}}}},
        {"model", {{"video_height", 12}, {"video_width", 12}}}}.dump();
    auto r = run("generate --config " + dir + "/cfg.json");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir + "/envdata/manifest.json"));
    unsetenv("WLAS_DATA_DIR");
    fs::remove_all(dir);
}
