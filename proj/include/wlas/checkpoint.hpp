#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "wlas/model.hpp"

namespace wlas {

// Versioned checkpoint container: a JSON header (config echo, vocabulary,
// named array table, optional trainer state) followed by the raw
// little-endian parameter arrays in header order. Save -> load -> save is
// byte-identical.

namespace detail {

constexpr char kCkptMagic[8] = {'W', 'L', 'A', 'S', 'C', 'K', 'P', 'T'};

template <typename Real>
const char* dtype_tag() {
    if constexpr (std::is_same_v<Real, float>) return "f32";
    else return "f64";
}

}  // namespace detail

template <typename Real>
struct Checkpoint {
    ModelParams<Real> params;
    ordered_json trainer_state;  // null unless saved mid-training
    ordered_json run_config;     // caller-supplied echo, null when absent
};

template <typename Real>
void save_checkpoint(const std::string& path, const ModelParams<Real>& params,
                     const ordered_json& trainer_state = nullptr,
                     const ordered_json& run_config = nullptr) {
    ordered_json header;
    header["format"] = "wlas-checkpoint";
    header["version"] = 1;
    header["dtype"] = detail::dtype_tag<Real>();
    header["model_config"] = params.config.to_json();
    header["vocabulary"] = params.vocab.tokens();
    header["vocab_strict_paper"] = params.vocab.strict_paper();
    header["vocab_space_substitute"] = std::string(1, params.vocab.space_substitute());
    ordered_json arrays = ordered_json::array();
    for (const auto& [name, arr] : params.fields())
        arrays.push_back(ordered_json{{"name", name}, {"shape", arr->shape()}});
    header["arrays"] = std::move(arrays);
    header["trainer_state"] = trainer_state;
    header["run_config"] = run_config;

    const std::string header_str = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check(os.good(), "save_checkpoint: cannot open " + path);
    os.write(detail::kCkptMagic, 8);
    const std::uint32_t container_version = 1;
    os.write(reinterpret_cast<const char*>(&container_version), 4);
    const std::uint64_t hlen = header_str.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, arr] : params.fields())
        os.write(reinterpret_cast<const char*>(arr->data()),
                 static_cast<std::streamsize>(static_cast<std::size_t>(arr->size()) * sizeof(Real)));
    check(os.good(), "save_checkpoint: write failed for " + path);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    check(is.good() && std::memcmp(magic, detail::kCkptMagic, 8) == 0,
          "load_checkpoint: not a checkpoint file: " + path);
    std::uint32_t container_version = 0;
    is.read(reinterpret_cast<char*>(&container_version), 4);
    check(container_version == 1, "load_checkpoint: unsupported container version");
    std::uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    std::string header_str(hlen, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(hlen));
    check(is.good(), "load_checkpoint: truncated header");
    const ordered_json header = ordered_json::parse(header_str);
    check(header.at("format") == "wlas-checkpoint", "load_checkpoint: unexpected format tag");
    check(header.at("dtype").get<std::string>() == detail::dtype_tag<Real>(),
          "load_checkpoint: dtype mismatch (file is " + header.at("dtype").get<std::string>() +
              ", model instantiated as " + detail::dtype_tag<Real>() + ")");

    Checkpoint<Real> out;
    const auto cfg = ModelConfig::from_json(header.at("model_config"));
    const auto vocab = CharVocabulary::restore(
        header.at("vocabulary").get<std::vector<std::string>>(),
        header.at("vocab_strict_paper").get<bool>(),
        header.at("vocab_space_substitute").get<std::string>().at(0));
    out.params = ModelParams<Real>::sized(cfg, vocab);
    auto fields = out.params.fields();
    const auto& arrays = header.at("arrays");
    check(arrays.size() == fields.size(), "load_checkpoint: array table size mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto& entry = arrays.at(i);
        check(entry.at("name").get<std::string>() == fields[i].first,
              "load_checkpoint: array order mismatch at '" + fields[i].first + "'");
        check(entry.at("shape").get<std::vector<int>>() == fields[i].second->shape(),
              "load_checkpoint: shape mismatch for '" + fields[i].first + "'");
        is.read(reinterpret_cast<char*>(fields[i].second->data()),
                static_cast<std::streamsize>(static_cast<std::size_t>(fields[i].second->size()) *
                                             sizeof(Real)));
    }
    check(is.good(), "load_checkpoint: truncated arrays");
    out.trainer_state = header.at("trainer_state");
    out.run_config = header.at("run_config");
    return out;
}

}  // namespace wlas
