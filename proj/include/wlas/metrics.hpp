#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wlas/common.hpp"

namespace wlas {

// Evaluation metrics: minimal edit alignment, error rates (S+D+I)/N, and
// unigram BLEU with brevity penalty. Text is case-folded to uppercase before
// scoring to match the training vocabulary.

struct EditAlignment {
    int substitutions = 0;
    int deletions = 0;
    int insertions = 0;
    int reference_length = 0;

    int total_errors() const { return substitutions + deletions + insertions; }
    double error_rate() const {
        return static_cast<double>(total_errors()) / static_cast<double>(reference_length);
    }
};

// Unit-cost dynamic-programming alignment. On cost ties the backtrace
// prefers substitution (or match), then deletion, then insertion.
inline EditAlignment align(const std::vector<std::string>& reference,
                           const std::vector<std::string>& hypothesis) {
    check(!reference.empty(), "align: reference must be nonempty");
    const int n = static_cast<int>(reference.size());
    const int m = static_cast<int>(hypothesis.size());
    std::vector<std::vector<int>> d(static_cast<std::size_t>(n + 1),
                                    std::vector<int>(static_cast<std::size_t>(m + 1), 0));
    for (int i = 0; i <= n; ++i) d[static_cast<std::size_t>(i)][0] = i;
    for (int j = 0; j <= m; ++j) d[0][static_cast<std::size_t>(j)] = j;
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= m; ++j) {
            const int sub = d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)] +
                            (reference[static_cast<std::size_t>(i - 1)] ==
                                     hypothesis[static_cast<std::size_t>(j - 1)]
                                 ? 0
                                 : 1);
            const int del = d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)] + 1;
            const int ins = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)] + 1;
            d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::min({sub, del, ins});
        }

    EditAlignment a;
    a.reference_length = n;
    int i = n, j = m;
    while (i > 0 || j > 0) {
        const int cur = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (i > 0 && j > 0) {
            const bool match = reference[static_cast<std::size_t>(i - 1)] ==
                               hypothesis[static_cast<std::size_t>(j - 1)];
            const int diag = d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
            if (cur == diag + (match ? 0 : 1)) {
                if (!match) ++a.substitutions;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && cur == d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)] + 1) {
            ++a.deletions;
            --i;
            continue;
        }
        ++a.insertions;
        --j;
    }
    return a;
}

inline std::vector<std::string> char_tokens(const std::string& text) {
    std::vector<std::string> out;
    out.reserve(text.size());
    for (char c : text) out.emplace_back(1, c);
    return out;
}

// Word error rate: whitespace tokens.
inline double wer(const std::string& reference, const std::string& hypothesis) {
    const auto ref = split_words(to_upper(reference));
    check(!ref.empty(), "wer: empty reference");
    return align(ref, split_words(to_upper(hypothesis))).error_rate();
}

// Character error rate: per-character tokens, spaces included.
inline double cer(const std::string& reference, const std::string& hypothesis) {
    const auto ref = char_tokens(to_upper(reference));
    check(!ref.empty(), "cer: empty reference");
    return align(ref, char_tokens(to_upper(hypothesis))).error_rate();
}

// Clipped unigram precision times the brevity penalty
// exp(min(0, 1 - |ref| / |hyp|)), over word tokens.
inline double unigram_bleu(const std::string& reference, const std::string& hypothesis) {
    const auto ref = split_words(to_upper(reference));
    check(!ref.empty(), "unigram_bleu: empty reference");
    const auto hyp = split_words(to_upper(hypothesis));
    if (hyp.empty()) return 0.0;
    std::map<std::string, int> ref_counts;
    for (const auto& w : ref) ref_counts[w]++;
    int clipped = 0;
    std::map<std::string, int> used;
    for (const auto& w : hyp) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && used[w] < it->second) {
            ++clipped;
            ++used[w];
        }
    }
    const double precision = static_cast<double>(clipped) / static_cast<double>(hyp.size());
    const double bp =
        std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
    return precision * bp;
}

// Corpus-level micro-average: total errors over total reference tokens.
struct CorpusMetrics {
    double cer = 0.0;
    double wer = 0.0;
    double bleu = 0.0;           // corpus-level (micro) unigram BLEU
    double mean_sentence_bleu = 0.0;
    int utterances = 0;
};

inline CorpusMetrics corpus_metrics(const std::vector<std::pair<std::string, std::string>>& ref_hyp) {
    check(!ref_hyp.empty(), "corpus_metrics: no pairs");
    std::int64_t char_err = 0, char_n = 0, word_err = 0, word_n = 0;
    std::int64_t clipped_total = 0, hyp_len_total = 0, ref_len_total = 0;
    double bleu_sum = 0.0;
    for (const auto& [ref_raw, hyp_raw] : ref_hyp) {
        const std::string ref = to_upper(ref_raw), hyp = to_upper(hyp_raw);
        const auto ca = align(char_tokens(ref), char_tokens(hyp));
        char_err += ca.total_errors();
        char_n += ca.reference_length;
        const auto ref_words = split_words(ref);
        const auto hyp_words = split_words(hyp);
        const auto wa = align(ref_words, hyp_words);
        word_err += wa.total_errors();
        word_n += wa.reference_length;
        bleu_sum += unigram_bleu(ref, hyp);

        std::map<std::string, int> rc;
        for (const auto& w : ref_words) rc[w]++;
        std::map<std::string, int> used;
        for (const auto& w : hyp_words) {
            auto it = rc.find(w);
            if (it != rc.end() && used[w] < it->second) {
                ++clipped_total;
                ++used[w];
            }
        }
        hyp_len_total += static_cast<std::int64_t>(hyp_words.size());
        ref_len_total += static_cast<std::int64_t>(ref_words.size());
    }
    CorpusMetrics m;
    m.utterances = static_cast<int>(ref_hyp.size());
    m.cer = static_cast<double>(char_err) / static_cast<double>(char_n);
    m.wer = static_cast<double>(word_err) / static_cast<double>(word_n);
    if (hyp_len_total > 0) {
        const double precision = static_cast<double>(clipped_total) / static_cast<double>(hyp_len_total);
        const double bp = std::exp(std::min(
            0.0, 1.0 - static_cast<double>(ref_len_total) / static_cast<double>(hyp_len_total)));
        m.bleu = precision * bp;
    }
    m.mean_sentence_bleu = bleu_sum / static_cast<double>(ref_hyp.size());
    return m;
}

}  // namespace wlas
