#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace otlm {

// ---------------------------------------------------------------------------
// Text side: whitespace tokenization, vocabulary, id encoding
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr std::int32_t pad_id = 0;
    static constexpr std::int32_t unk_id = 1;
    static constexpr std::int32_t eos_id = 2;

    std::vector<std::string> id_to_token;                    // reserved ids 0..2 first
    std::unordered_map<std::string, std::int32_t> token_to_id;
    std::size_t min_count = 1;
    bool lowercase = false;

    std::size_t size() const { return id_to_token.size(); }
    std::int32_t lookup(const std::string& token) const;     // unk for unknown
    const std::string& token(std::int32_t id) const;
    std::vector<std::string> payload_tokens() const;         // ids >= 3 in order

    static Vocab from_payload(const std::vector<std::string>& tokens, bool lowercase);
    void write_tsv(const std::string& path) const;
};

std::vector<std::string> tokenize_ws(const std::string& line);

// Frequency-descending then lexicographic id order; tokens under min_count
// map to unk. Lines are whitespace-tokenized, optionally lowercased.
Vocab build_vocab(const std::vector<std::string>& lines, std::size_t min_count,
                  bool lowercase = false);

struct TokenizedCorpus {
    std::vector<std::vector<std::int32_t>> sentences; // each terminated by eos
    Vocab vocab;
};

// Blank lines are skipped; unknown tokens map to unk; eos appended.
TokenizedCorpus encode(const std::vector<std::string>& lines, const Vocab& vocab);
std::string decode(const std::vector<std::int32_t>& ids, const Vocab& vocab);

std::vector<std::string> read_lines(const std::string& path);

// ---------------------------------------------------------------------------
// Treebank side: PTB s-expressions -> unlabeled gold spans
// ---------------------------------------------------------------------------

using Span = std::pair<std::size_t, std::size_t>; // inclusive word indices, end > start

struct LabeledSpan {
    std::size_t start;
    std::size_t end;
    std::string label;
};

struct GoldTree {
    std::vector<std::string> tokens;  // punctuation removed
    std::vector<LabeledSpan> spans;   // width >= 2, whole-sentence excluded
    std::set<Span> span_set() const;
};

struct PtbOptions {
    bool strip_dollar = false; // "$" kept as a word by default
};

// Removes -NONE- traces and punctuation leaves, collapses childless nodes,
// extracts spans. nullopt = nothing left after stripping ("skip" sentinel).
// Unbalanced input raises Error with the byte offset.
std::optional<GoldTree> parse_ptb(const std::string& text, const PtbOptions& opts = {});

// Whole file, any whitespace layout, several trees; skip sentinels dropped.
std::vector<GoldTree> read_ptb_file(const std::string& path, const PtbOptions& opts = {});

// Sentences with at most max_len words after stripping.
std::vector<GoldTree> wsj10_filter(std::vector<GoldTree> trees, std::size_t max_len = 10);

} // namespace otlm
