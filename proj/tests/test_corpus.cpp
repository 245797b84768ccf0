#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "wlas/corpus.hpp"

using namespace wlas;

TEST_CASE("vocabulary layout") {
    const auto v = CharVocabulary::standard();
    CHECK(v.size() == 46);
    CHECK(v.id_of("A") == 0);
    CHECK(v.id_of("Z") == 25);
    CHECK(v.id_of("0") == 26);
    CHECK(v.id_of(" ") >= 0);
    CHECK(v.sos() >= 0);
    CHECK(v.eos() >= 0);
    CHECK(v.pad() == v.size() - 1);

    const auto strict = CharVocabulary::standard(true);
    CHECK(strict.size() == 45);
    CHECK(strict.id_of(" ") == -1);
    // space is mapped onto a substitute and round-trips through decode
    auto ids = strict.char_ids("AB C");
    CHECK(strict.decode(ids) == "AB C");
}

TEST_CASE("encode_transcript") {
    const auto v = CharVocabulary::standard();
    auto ids = v.encode("AB");
    REQUIRE(ids.size() == 4);
    CHECK(ids.front() == v.sos());
    CHECK(ids[1] == v.id_of("A"));
    CHECK(ids[2] == v.id_of("B"));
    CHECK(ids.back() == v.eos());

    CHECK(v.encode("ab") == v.encode("AB"));
    CHECK_THROWS_WITH_AS(v.encode("\xCE\xA9"), doctest::Contains("cannot encode"), std::runtime_error);
}

TEST_CASE("grid grammar") {
    GridGrammar g;
    CHECK(g.total_sentences() == 64000);

    Rng rng(3);
    const std::string s = g.generate_sentence(rng);
    const auto words = split_words(s);
    REQUIRE(words.size() == 6);
    auto contains = [](const std::vector<std::string>& cat, const std::string& w) {
        return std::find(cat.begin(), cat.end(), w) != cat.end();
    };
    CHECK(contains(g.verbs, words[0]));
    CHECK(contains(g.colors, words[1]));
    CHECK(contains(g.prepositions, words[2]));
    CHECK(contains(g.letters, words[3]));
    CHECK(contains(g.digits, words[4]));
    CHECK(contains(g.adverbs, words[5]));

    Rng r1(7), r2(7);
    CHECK(g.generate_sentence(r1) == g.generate_sentence(r2));

    // sentence_at enumerates without collision at the edges
    CHECK(g.sentence_at(0) != g.sentence_at(1));
    CHECK_THROWS(g.sentence_at(64000));
}

TEST_CASE("synthesize_utterance durations and determinism") {
    const auto vocab = CharVocabulary::standard();
    SynthesisConfig cfg;
    cfg.video_height = 16;
    cfg.video_width = 16;
    const CharPatternBank bank(vocab, cfg);

    SUBCASE("duration arithmetic, no jitter") {
        SynthesisConfig c2 = cfg;
        c2.duration_jitter = 0;
        auto u = synthesize_utterance<double>("BIN BLUE AT A 1 NOW", vocab, bank, c2, 5);
        const int chars = 19;
        CHECK(u.video.dim(0) == chars * 3);
        CHECK(u.audio.dim(0) == 4 * chars * 3);
        CHECK(u.audio.dim(1) == 13);
        CHECK(static_cast<int>(u.char_frames.size()) == chars);
    }
    SUBCASE("audio is 4x video with jitter too") {
        auto u = synthesize_utterance<double>("PLACE RED BY X 7 SOON", vocab, bank, cfg, 5);
        CHECK(u.audio.dim(0) == 4 * u.video.dim(0));
        int total = 0;
        for (int k : u.char_frames) total += k;
        CHECK(total == u.video.dim(0));
    }
    SUBCASE("determinism per seed") {
        SynthesisConfig c2 = cfg;
        c2.video_jitter = 0.0;
        c2.audio_jitter = 0.0;
        auto a = synthesize_utterance<double>("SET GREEN IN B 2 AGAIN", vocab, bank, c2, 9);
        auto b = synthesize_utterance<double>("SET GREEN IN B 2 AGAIN", vocab, bank, c2, 9);
        CHECK(a.video.vec() == b.video.vec());
        CHECK(a.audio.vec() == b.audio.vec());
    }
    SUBCASE("audio-only mode omits video") {
        auto u = synthesize_utterance<double>("LAY WHITE WITH C 3 PLEASE", vocab, bank, cfg, 5, true);
        CHECK_FALSE(u.has_video);
        CHECK(u.audio.dim(0) > 0);
    }
    SUBCASE("out-of-vocabulary character errors") {
        CHECK_THROWS(synthesize_utterance<double>("B&D", vocab, bank, cfg, 5));
    }
}

TEST_CASE("character pattern injectivity") {
    const auto vocab = CharVocabulary::standard();
    SynthesisConfig cfg;  // default jitters: video 0.08, audio 0.03
    const CharPatternBank bank(vocab, cfg);
    for (int a = 0; a < vocab.size(); ++a)
        for (int b = a + 1; b < vocab.size(); ++b) {
            CHECK(CharPatternBank::rms_distance(bank.video_pattern(a), bank.video_pattern(b)) >
                  5.0 * cfg.video_jitter);
            CHECK(CharPatternBank::rms_distance(bank.audio_signature(a), bank.audio_signature(b)) >
                  5.0 * cfg.audio_jitter);
        }
}

TEST_CASE("waveform audio mode keeps the 4x frame ratio") {
    const auto vocab = CharVocabulary::standard();
    SynthesisConfig cfg;
    cfg.video_height = 8;
    cfg.video_width = 8;
    cfg.waveform_audio = true;
    const CharPatternBank bank(vocab, cfg);
    auto u = synthesize_utterance<double>("BIN RED AT F 4 NOW", vocab, bank, cfg, 11);
    CHECK(u.audio.dim(0) == 4 * u.video.dim(0));
    CHECK(u.audio.dim(1) == 13);
}

TEST_CASE("build_dataset") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "wlas_corpus_test").string();
    fs::remove_all(dir);

    DatasetConfig cfg;
    cfg.train = 12;
    cfg.val = 3;
    cfg.test = 3;
    cfg.audio_only = 5;
    cfg.synth.video_height = 12;
    cfg.synth.video_width = 12;

    auto m = build_dataset(cfg, dir);

    SUBCASE("manifest sections and counts") {
        CHECK(m.splits.at("train").size() == 12);
        CHECK(m.splits.at("val").size() == 3);
        CHECK(m.splits.at("test").size() == 3);
        CHECK(m.splits.at("audio_only").size() == 5);
        for (const auto& r : m.splits.at("audio_only")) CHECK(r.video_path.empty());
    }

    SUBCASE("splits disjoint by sentence") {
        std::set<std::string> seen;
        for (const auto& [name, recs] : m.splits)
            for (const auto& r : recs) {
                CHECK_FALSE(seen.count(r.transcript));
                seen.insert(r.transcript);
            }
    }

    SUBCASE("regeneration with the same seed gives identical checksums") {
        const std::string dir2 = dir + "_again";
        fs::remove_all(dir2);
        auto m2 = build_dataset(cfg, dir2);
        for (const auto& [name, recs] : m.splits) {
            const auto& recs2 = m2.splits.at(name);
            REQUIRE(recs.size() == recs2.size());
            for (std::size_t i = 0; i < recs.size(); ++i) {
                CHECK(recs[i].audio_checksum == recs2[i].audio_checksum);
                CHECK(recs[i].video_checksum == recs2[i].video_checksum);
            }
        }
        fs::remove_all(dir2);
    }

    SUBCASE("manifest round-trip is byte-identical") {
        auto loaded = load_manifest(dir + "/manifest.json");
        const std::string again = dir + "/manifest_rt.json";
        save_manifest(loaded, again);
        std::ifstream a(dir + "/manifest.json"), b(again);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }

    SUBCASE("payload round-trip and checksum verification") {
        auto c = load_split<float>(m, dir, "train", true);
        CHECK(c.utterances.size() == 12);
        CHECK(c.utterances[0].has_video);
        CHECK(c.utterances[0].audio.dim(1) == 13);
        CHECK(c.vocab.size() == 46);
    }

    SUBCASE("coverage report counts test words found in train") {
        // independent recomputation
        std::set<std::string> train_words;
        for (const auto& r : m.splits.at("train"))
            for (const auto& w : split_words(r.transcript)) train_words.insert(w);
        std::set<std::string> test_words;
        int in_train = 0;
        for (const auto& r : m.splits.at("test"))
            for (const auto& w : split_words(r.transcript)) test_words.insert(w);
        for (const auto& w : test_words)
            if (train_words.count(w)) ++in_train;
        CHECK(m.coverage.at("test").at("word_vocab").get<int>() == static_cast<int>(test_words.size()));
        CHECK(m.coverage.at("test").at("words_in_train_vocab").get<int>() == in_train);
    }

    SUBCASE("oversized split request errors before writing") {
        DatasetConfig bad = cfg;
        bad.train = 64000;
        bad.val = 1;
        CHECK_THROWS_WITH_AS(build_dataset(bad, dir + "_bad"), doctest::Contains("overlap"),
                             std::runtime_error);
        CHECK_FALSE(fs::exists(dir + "_bad"));
    }

    fs::remove_all(dir);
}

TEST_CASE("array file round trip") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "wlas_arr_test.arr").string();
    Rng rng(2);
    NDArray<double> a({3, 5});
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-2.0, 2.0);
    save_array(path, a, ArrayDtype::F64);
    auto b = load_array<double>(path);
    CHECK(a.shape() == b.shape());
    CHECK(a.vec() == b.vec());
    fs::remove(path);
}
