#include "otlm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "otlm/error.hpp"

namespace otlm {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace {

const char* kReserved[3] = {"<pad>", "<unk>", "<eos>"};

std::string lowercased(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

std::int32_t Vocab::lookup(const std::string& token) const {
    const auto it = token_to_id.find(lowercase ? lowercased(token) : token);
    return it == token_to_id.end() ? unk_id : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token.size())
        fail("vocab: id " + std::to_string(id) + " out of range [0," + std::to_string(id_to_token.size()) + ")");
    return id_to_token[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::payload_tokens() const {
    return std::vector<std::string>(id_to_token.begin() + 3, id_to_token.end());
}

Vocab Vocab::from_payload(const std::vector<std::string>& tokens, bool lowercase) {
    Vocab v;
    v.lowercase = lowercase;
    v.id_to_token = {kReserved[0], kReserved[1], kReserved[2]};
    v.id_to_token.insert(v.id_to_token.end(), tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = static_cast<std::int32_t>(i);
    return v;
}

void Vocab::write_tsv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write vocab file: " + path);
    for (std::size_t i = 0; i < id_to_token.size(); ++i)
        out << id_to_token[i] << '\t' << i << '\n';
    if (!out) fail("write failure on vocab file: " + path);
}

std::vector<std::string> tokenize_ws(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

Vocab build_vocab(const std::vector<std::string>& lines, std::size_t min_count, bool lowercase) {
    if (min_count < 1) fail("build_vocab: min_count must be >= 1");
    std::map<std::string, std::size_t> counts;
    bool any = false;
    for (const auto& line : lines) {
        for (auto& tok : tokenize_ws(line)) {
            counts[lowercase ? lowercased(tok) : tok] += 1;
            any = true;
        }
    }
    if (!any) fail("build_vocab: no tokens in input");

    std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> payload;
    for (const auto& [tok, count] : ordered)
        if (count >= min_count) payload.push_back(tok);

    Vocab v = Vocab::from_payload(payload, lowercase);
    v.min_count = min_count;
    return v;
}

TokenizedCorpus encode(const std::vector<std::string>& lines, const Vocab& vocab) {
    TokenizedCorpus corpus;
    corpus.vocab = vocab;
    for (const auto& line : lines) {
        const auto tokens = tokenize_ws(line);
        if (tokens.empty()) continue;
        std::vector<std::int32_t> ids;
        ids.reserve(tokens.size() + 1);
        for (const auto& tok : tokens) ids.push_back(vocab.lookup(tok));
        ids.push_back(Vocab::eos_id);
        corpus.sentences.push_back(std::move(ids));
    }
    return corpus;
}

std::string decode(const std::vector<std::int32_t>& ids, const Vocab& vocab) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id == Vocab::eos_id || id == Vocab::pad_id) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// ---------------------------------------------------------------------------
// PTB parsing
// ---------------------------------------------------------------------------

namespace {

struct PtbNode {
    std::string label;
    std::string word; // non-empty iff leaf
    std::vector<PtbNode> children;
    bool is_leaf() const { return !word.empty(); }
};

struct SexprLexer {
    const std::string& text;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    bool done() {
        skip_ws();
        return pos >= text.size();
    }
    char peek() {
        skip_ws();
        return text[pos];
    }
    std::string atom() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
               text[pos] != '(' && text[pos] != ')')
            ++pos;
        return text.substr(start, pos - start);
    }
};

PtbNode parse_node(SexprLexer& lex) {
    if (lex.done() || lex.peek() != '(')
        fail("treebank parse error at byte " + std::to_string(lex.pos) + ": expected '('");
    ++lex.pos; // consume '('

    PtbNode node;
    if (!lex.done() && lex.peek() != '(' && lex.peek() != ')') node.label = lex.atom();

    while (true) {
        if (lex.done())
            fail("treebank parse error at byte " + std::to_string(lex.pos) + ": unbalanced parentheses");
        const char c = lex.peek();
        if (c == ')') {
            ++lex.pos;
            break;
        }
        if (c == '(') {
            node.children.push_back(parse_node(lex));
        } else {
            // A bare atom under a labeled node: this is a leaf (POS word).
            if (!node.children.empty() || !node.word.empty())
                fail("treebank parse error at byte " + std::to_string(lex.pos) +
                     ": unexpected token after children");
            node.word = lex.atom();
        }
    }
    if (node.word.empty() && node.children.empty())
        fail("treebank parse error at byte " + std::to_string(lex.pos) + ": empty node");
    return node;
}

bool is_punct_tag(const std::string& tag, const PtbOptions& opts) {
    if (tag == "." || tag == "," || tag == ":" || tag == "``" || tag == "''" || tag == "-LRB-" ||
        tag == "-RRB-" || tag == "#")
        return true;
    if (opts.strip_dollar && tag == "$") return true;
    return false;
}

// Remove traces and punctuation leaves; drop nodes left childless.
std::optional<PtbNode> strip_node(const PtbNode& node, const PtbOptions& opts) {
    if (node.is_leaf()) {
        if (node.label == "-NONE-" || is_punct_tag(node.label, opts)) return std::nullopt;
        return node;
    }
    PtbNode out;
    out.label = node.label;
    for (const auto& child : node.children) {
        if (auto kept = strip_node(child, opts)) out.children.push_back(std::move(*kept));
    }
    if (out.children.empty()) return std::nullopt;
    return out;
}

void collect_tokens(const PtbNode& node, std::vector<std::string>& tokens) {
    if (node.is_leaf()) {
        tokens.push_back(node.word);
        return;
    }
    for (const auto& child : node.children) collect_tokens(child, tokens);
}

// Returns (start, end) inclusive of this subtree; appends evaluable spans.
std::pair<std::size_t, std::size_t> collect_spans(const PtbNode& node, std::size_t& cursor,
                                                  std::size_t n_words,
                                                  std::vector<LabeledSpan>& spans,
                                                  std::set<Span>& seen) {
    if (node.is_leaf()) {
        const std::size_t idx = cursor++;
        return {idx, idx};
    }
    std::size_t start = cursor, end = cursor;
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        const auto [s, e] = collect_spans(node.children[i], cursor, n_words, spans, seen);
        if (i == 0) start = s;
        end = e;
    }
    const bool whole_sentence = start == 0 && end + 1 == n_words;
    if (end > start && !whole_sentence && seen.insert({start, end}).second)
        spans.push_back({start, end, node.label});
    return {start, end};
}

} // namespace

std::optional<GoldTree> parse_ptb(const std::string& text, const PtbOptions& opts) {
    SexprLexer lex{text};
    PtbNode root = parse_node(lex);
    if (!lex.done())
        fail("treebank parse error at byte " + std::to_string(lex.pos) + ": trailing content after tree");

    auto stripped = strip_node(root, opts);
    if (!stripped) return std::nullopt;

    // Unwrap label-less wrappers like the PTB file-level "( ... )".
    while (!stripped->is_leaf() && stripped->label.empty() && stripped->children.size() == 1)
        *stripped = stripped->children[0];

    GoldTree tree;
    collect_tokens(*stripped, tree.tokens);
    if (tree.tokens.empty()) return std::nullopt;
    std::size_t cursor = 0;
    std::set<Span> seen;
    collect_spans(*stripped, cursor, tree.tokens.size(), tree.spans, seen);
    return tree;
}

std::vector<GoldTree> read_ptb_file(const std::string& path, const PtbOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read treebank file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    std::vector<GoldTree> trees;
    SexprLexer lex{text};
    while (!lex.done()) {
        const std::size_t start = lex.pos;
        PtbNode node = parse_node(lex);
        (void)node;
        const std::string one = text.substr(start, lex.pos - start);
        if (auto tree = parse_ptb(one, opts)) trees.push_back(std::move(*tree));
    }
    return trees;
}

std::vector<GoldTree> wsj10_filter(std::vector<GoldTree> trees, std::size_t max_len) {
    std::vector<GoldTree> kept;
    for (auto& t : trees)
        if (t.tokens.size() <= max_len) kept.push_back(std::move(t));
    return kept;
}

std::set<Span> GoldTree::span_set() const {
    std::set<Span> out;
    for (const auto& s : spans) out.insert({s.start, s.end});
    return out;
}

} // namespace otlm
