// otlm: train an ordered-attention language model, induce constituency trees
// from its forget gates, and score them against treebank gold parses.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "otlm/eval.hpp"
#include "otlm/gradcheck.hpp"
#include "otlm/model.hpp"
#include "otlm/training.hpp"
#include "otlm/tree.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

[[noreturn]] void user_error(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    std::exit(kExitUser);
}

otlm::Vocab vocab_from_checkpoint(const otlm::Checkpoint& ckpt, bool lowercase) {
    if (ckpt.vocab_tokens.empty() && ckpt.weights.config.vocab_size > 3)
        user_error("checkpoint has no embedded vocabulary; re-train to produce one");
    return otlm::Vocab::from_payload(ckpt.vocab_tokens, lowercase);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string config;
    std::string out;
};

int cmd_train(const TrainArgs& args) {
    otlm::KvMap kv;
    std::vector<std::string> corpus_lines;
    otlm::ModelConfig model_cfg;
    otlm::TrainConfig train_cfg;
    std::size_t min_count = 1;
    bool lowercase = false;
    std::string precision_name = "wide";

    try {
        kv = otlm::read_kv_file(args.config);
        std::vector<std::string> allowed = otlm::ModelConfig::keys();
        for (const auto& k : otlm::TrainConfig::keys()) allowed.push_back(k);
        allowed.push_back("min_count");
        allowed.push_back("lowercase");
        allowed.push_back("precision");
        otlm::reject_unknown_keys(kv, allowed);

        model_cfg = otlm::ModelConfig::from_kv(kv);
        train_cfg = otlm::TrainConfig::from_kv(kv);
        train_cfg.validate();
        min_count = static_cast<std::size_t>(otlm::kv_int(kv, "min_count", 1));
        lowercase = otlm::kv_bool(kv, "lowercase", false);
        precision_name = kv.count("precision") ? kv.at("precision") : "wide";
        if (precision_name != "wide" && precision_name != "narrow")
            otlm::fail("config key \"precision\": must be wide or narrow");

        corpus_lines = otlm::read_lines(args.corpus);
    } catch (const std::exception& e) {
        user_error(e.what());
    }

    try {
        otlm::set_precision(precision_name == "narrow" ? otlm::Precision::narrow
                                                       : otlm::Precision::wide);
        otlm::Vocab vocab = otlm::build_vocab(corpus_lines, min_count, lowercase);
        otlm::TokenizedCorpus corpus = otlm::encode(corpus_lines, vocab);
        if (model_cfg.vocab_size == 0) model_cfg.vocab_size = vocab.size();

        fs::create_directories(args.out);
        const std::string vocab_path = (fs::path(args.out) / "vocab.tsv").string();
        const std::string metrics_path = (fs::path(args.out) / "metrics.jsonl").string();
        const std::string manifest_path = (fs::path(args.out) / "manifest.json").string();
        const std::string resolved_path = (fs::path(args.out) / "config.resolved").string();
        const std::string checkpoint_path = (fs::path(args.out) / "checkpoint.otlm").string();
        vocab.write_tsv(vocab_path);

        otlm::KvMap resolved = model_cfg.to_kv();
        for (const auto& [k, v] : train_cfg.to_kv()) resolved[k] = v;
        resolved["min_count"] = std::to_string(min_count);
        resolved["lowercase"] = lowercase ? "true" : "false";
        resolved["precision"] = precision_name;
        {
            std::ofstream out(resolved_path, std::ios::binary | std::ios::trunc);
            out << otlm::serialize_kv(resolved);
        }

        ordered_json manifest;
        manifest["tool_version"] = kToolVersion;
        manifest["seed"] = train_cfg.seed;
        manifest["started_at"] = timestamp_utc();
        manifest["finished_at"] = nullptr;
        manifest["corpus"] = args.corpus;
        manifest["config_file"] = args.config;
        manifest["config"] = ordered_json::object();
        for (const auto& [k, v] : resolved) manifest["config"][k] = v;
        manifest["outputs"] = {{"checkpoint", checkpoint_path},
                               {"metrics", metrics_path},
                               {"vocab", vocab_path},
                               {"config_resolved", resolved_path}};
        {
            std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
            out << manifest.dump(2) << "\n";
        }

        const std::string final_path = otlm::train(corpus, model_cfg, train_cfg, args.out);

        manifest["finished_at"] = timestamp_utc();
        manifest["outputs"]["checkpoint"] = final_path;
        {
            std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
            out << manifest.dump(2) << "\n";
        }
        std::cerr << "training complete; final checkpoint: " << final_path << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

struct ParseArgs {
    std::string model;
    std::string input;
    std::string output;
    std::string distances;
    int layer = -1;
    std::string agg = "mean";
};

int cmd_parse(const ParseArgs& args) {
    otlm::Checkpoint ckpt;
    std::vector<std::string> lines;
    try {
        ckpt = otlm::load_checkpoint(args.model);
        lines = otlm::read_lines(args.input);
        if (args.agg != "mean" && args.agg != "max")
            otlm::fail("--agg must be mean or max, got \"" + args.agg + "\"");
    } catch (const std::exception& e) {
        user_error(e.what());
    }

    try {
        const bool lowercase = ckpt.vocab_lowercase;
        otlm::Vocab vocab = vocab_from_checkpoint(ckpt, lowercase);
        const std::size_t layer = args.layer >= 0 ? static_cast<std::size_t>(args.layer)
                                                  : ckpt.weights.config.n_layers / 2;
        if (layer >= ckpt.weights.config.n_layers)
            user_error("--layer " + std::to_string(layer) + " out of range [0," +
                       std::to_string(ckpt.weights.config.n_layers) + ")");
        const otlm::HeadAgg agg =
            args.agg == "mean" ? otlm::HeadAgg::mean_heads : otlm::HeadAgg::max_heads;

        std::ofstream out(args.output, std::ios::binary | std::ios::trunc);
        if (!out) user_error("cannot write output file: " + args.output);
        std::ofstream dist_out;
        if (!args.distances.empty()) {
            dist_out.open(args.distances, std::ios::binary | std::ios::trunc);
            if (!dist_out) user_error("cannot write distances file: " + args.distances);
        }

        std::size_t skipped = 0, lineno = 0;
        for (const auto& line : lines) {
            ++lineno;
            const auto tokens = otlm::tokenize_ws(line);
            if (tokens.empty()) continue;
            if (tokens.size() > ckpt.weights.config.max_seq_len) {
                std::cerr << "warning: line " << lineno << " has " << tokens.size()
                          << " tokens (max_seq_len " << ckpt.weights.config.max_seq_len
                          << "); skipped\n";
                ++skipped;
                continue;
            }
            if (tokens.size() == 1) {
                out << tokens[0] << "\n";
                if (dist_out.is_open()) dist_out << "\n";
                continue;
            }
            std::vector<std::int32_t> ids;
            ids.reserve(tokens.size());
            for (const auto& tok : tokens) ids.push_back(vocab.lookup(tok));
            otlm::ForwardTrace trace = otlm::lm_forward(ids, ckpt.weights, true);
            otlm::DistanceSequence d = otlm::gate_distances(trace, layer, agg);
            otlm::BinaryParseTree tree = otlm::greedy_tree(tokens.size(), d);
            out << otlm::tree_to_string(tree, tokens) << "\n";
            if (dist_out.is_open()) {
                for (std::size_t i = 0; i < d.values.size(); ++i) {
                    if (i) dist_out << '\t';
                    dist_out << otlm::format_double(d.values[i]);
                }
                dist_out << "\n";
            }
        }
        if (skipped > 0) std::cerr << "skipped " << skipped << " overlong line(s)\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

// ---------------------------------------------------------------------------
// eval-f1 / baseline
// ---------------------------------------------------------------------------

ordered_json report_to_json(const otlm::F1Report& report) {
    ordered_json j;
    j["micro_precision"] = report.micro_precision;
    j["micro_recall"] = report.micro_recall;
    j["micro_f1"] = report.micro_f1;
    j["macro_f1"] = report.macro_f1;
    j["n_sentences"] = report.n_sentences;
    j["n_pred_spans"] = report.n_pred_spans;
    j["n_gold_spans"] = report.n_gold_spans;
    j["n_matched"] = report.n_matched;
    j["n_skipped_no_gold_spans"] = report.n_skipped_no_gold_spans;
    ordered_json per;
    for (const auto& s : report.per_sentence)
        per.push_back({{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}});
    j["per_sentence"] = per;
    return j;
}

struct EvalArgs {
    std::string pred;
    std::string gold;
    std::size_t max_len = 10;
    bool strip_dollar = false;
};

int cmd_eval_f1(const EvalArgs& args) {
    try {
        otlm::PtbOptions opts;
        opts.strip_dollar = args.strip_dollar;
        auto gold = otlm::wsj10_filter(otlm::read_ptb_file(args.gold, opts), args.max_len);

        std::vector<otlm::BracketedSentence> preds;
        for (const auto& line : otlm::read_lines(args.pred)) {
            if (otlm::tokenize_ws(line).empty()) continue;
            preds.push_back(otlm::read_bracketed_line(line));
        }
        if (preds.size() != gold.size())
            otlm::fail("prediction/gold sentence counts differ: " + std::to_string(preds.size()) +
                       " predictions vs " + std::to_string(gold.size()) + " gold trees after filtering");

        std::vector<otlm::EvalPair> pairs;
        pairs.reserve(gold.size());
        for (std::size_t i = 0; i < gold.size(); ++i)
            pairs.push_back({preds[i].tokens, preds[i].spans, gold[i].tokens, gold[i].span_set()});

        const otlm::F1Report report = otlm::corpus_f1(pairs);
        ordered_json j = report_to_json(report);
        j["config"] = {{"pred", args.pred},
                       {"gold", args.gold},
                       {"max_len", args.max_len},
                       {"strip_dollar", args.strip_dollar}};
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUser;
    }
}

struct BaselineArgs {
    std::string gold;
    std::string strategy;
    std::uint64_t seed = 0;
    std::size_t max_len = 10;
    bool strip_dollar = false;
};

int cmd_baseline(const BaselineArgs& args) {
    otlm::BaselineStrategy strategy;
    std::vector<otlm::GoldTree> gold;
    try {
        strategy = otlm::baseline_from_name(args.strategy);
        otlm::PtbOptions opts;
        opts.strip_dollar = args.strip_dollar;
        gold = otlm::wsj10_filter(otlm::read_ptb_file(args.gold, opts), args.max_len);
        if (gold.empty()) otlm::fail("no gold sentences after filtering");
    } catch (const std::exception& e) {
        user_error(e.what());
    }

    try {
        otlm::Rng rng(args.seed);
        std::vector<otlm::EvalPair> pairs;
        pairs.reserve(gold.size());
        for (const auto& g : gold) {
            otlm::BinaryParseTree tree = otlm::baseline_tree(strategy, g.tokens.size(), &rng);
            pairs.push_back({g.tokens, otlm::tree_to_brackets(tree), g.tokens, g.span_set()});
        }
        const otlm::F1Report report = otlm::corpus_f1(pairs);
        ordered_json j = report_to_json(report);
        j["config"] = {{"gold", args.gold},
                       {"strategy", args.strategy},
                       {"seed", args.seed},
                       {"max_len", args.max_len},
                       {"strip_dollar", args.strip_dollar}};
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

// ---------------------------------------------------------------------------
// gradcheck / inspect-gates / dump-tokens
// ---------------------------------------------------------------------------

int cmd_gradcheck() {
    try {
        const bool ok = otlm::report_gradcheck_suite(std::cout);
        std::cout << (ok ? "gradcheck: all checks passed" : "gradcheck: FAILURES above") << "\n";
        return ok ? kExitOk : kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

struct InspectArgs {
    std::string model;
    std::string input;
};

int cmd_inspect_gates(const InspectArgs& args) {
    otlm::Checkpoint ckpt;
    std::vector<std::string> lines;
    try {
        ckpt = otlm::load_checkpoint(args.model);
        lines = otlm::read_lines(args.input);
    } catch (const std::exception& e) {
        user_error(e.what());
    }

    try {
        otlm::Vocab vocab = vocab_from_checkpoint(ckpt, ckpt.vocab_lowercase);
        ordered_json out = ordered_json::array();
        std::size_t lineno = 0;
        for (const auto& line : lines) {
            ++lineno;
            const auto tokens = otlm::tokenize_ws(line);
            if (tokens.empty()) continue;
            if (tokens.size() > ckpt.weights.config.max_seq_len) {
                std::cerr << "warning: line " << lineno << " overlong; skipped\n";
                continue;
            }
            std::vector<std::int32_t> ids;
            for (const auto& tok : tokens) ids.push_back(vocab.lookup(tok));
            otlm::ForwardTrace trace = otlm::lm_forward(ids, ckpt.weights, true);

            ordered_json sent;
            sent["line"] = lineno;
            sent["tokens"] = tokens;
            ordered_json layers = ordered_json::array();
            for (std::size_t li = 0; li < trace.per_layer.size(); ++li) {
                const auto& gates = trace.per_layer[li];
                const std::size_t t_len = gates.input_gates.dim(0);
                const std::size_t n_heads = gates.input_gates.dim(1);
                const std::size_t gate_dim = gates.input_gates.dim(2);
                ordered_json jl;
                jl["layer"] = li;
                auto dump3 = [&](const otlm::Tensor& t) {
                    ordered_json a = ordered_json::array();
                    for (std::size_t p = 0; p < t_len; ++p) {
                        ordered_json heads = ordered_json::array();
                        for (std::size_t h = 0; h < n_heads; ++h) {
                            ordered_json gate = ordered_json::array();
                            for (std::size_t k = 0; k < gate_dim; ++k)
                                gate.push_back(t.values()[(p * n_heads + h) * gate_dim + k]);
                            heads.push_back(gate);
                        }
                        a.push_back(heads);
                    }
                    return a;
                };
                jl["input_gates"] = dump3(gates.input_gates);
                jl["forget_gates"] = dump3(gates.forget_gates);
                ordered_json attn = ordered_json::array();
                for (std::size_t h = 0; h < n_heads; ++h) {
                    ordered_json rows = ordered_json::array();
                    for (std::size_t t = 0; t < t_len; ++t) {
                        ordered_json row = ordered_json::array();
                        for (std::size_t j = 0; j < t_len; ++j)
                            row.push_back(
                                gates.attn_weights.values()[(h * t_len + t) * t_len + j]);
                        rows.push_back(row);
                    }
                    attn.push_back(rows);
                }
                jl["attn_weights"] = attn;
                layers.push_back(jl);
            }
            sent["layers"] = layers;
            out.push_back(sent);
        }
        std::cout << out.dump(2) << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

struct DumpArgs {
    std::string gold;
    std::string output;
    std::size_t max_len = 10;
    bool strip_dollar = false;
};

int cmd_dump_tokens(const DumpArgs& args) {
    try {
        otlm::PtbOptions opts;
        opts.strip_dollar = args.strip_dollar;
        auto gold = otlm::wsj10_filter(otlm::read_ptb_file(args.gold, opts), args.max_len);
        std::ofstream out(args.output, std::ios::binary | std::ios::trunc);
        if (!out) otlm::fail("cannot write output file: " + args.output);
        for (const auto& tree : gold) {
            for (std::size_t i = 0; i < tree.tokens.size(); ++i) {
                if (i) out << ' ';
                out << tree.tokens[i];
            }
            out << '\n';
        }
        std::cerr << "wrote " << gold.size() << " sentences\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUser;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ordered-attention language model and unsupervised parser"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train on a text corpus");
    train->add_option("--corpus", train_args.corpus, "text file, one sentence per line")->required();
    train->add_option("--config", train_args.config, "key=value config file")->required();
    train->add_option("--out", train_args.out, "output directory")->required();

    ParseArgs parse_args;
    auto* parse = app.add_subcommand("parse", "induce trees from forget gates");
    parse->add_option("--model", parse_args.model, "checkpoint file")->required();
    parse->add_option("--input", parse_args.input, "tokenized sentences, one per line")->required();
    parse->add_option("--layer", parse_args.layer, "layer to read gates from (default: middle)");
    parse->add_option("--agg", parse_args.agg, "head aggregation: mean|max");
    parse->add_option("--output", parse_args.output, "bracketed trees output")->required();
    parse->add_option("--distances", parse_args.distances, "optional raw distance sidecar file");

    EvalArgs eval_args;
    auto* evalf1 = app.add_subcommand("eval-f1", "score predicted trees against gold");
    evalf1->add_option("--pred", eval_args.pred, "bracketed tree lines")->required();
    evalf1->add_option("--gold", eval_args.gold, "PTB gold file")->required();
    evalf1->add_option("--max-len", eval_args.max_len, "gold length filter (default 10)");
    evalf1->add_flag("--strip-dollar", eval_args.strip_dollar, "also strip $ leaves");

    BaselineArgs base_args;
    auto* baseline = app.add_subcommand("baseline", "score a deterministic baseline");
    baseline->add_option("--gold", base_args.gold, "PTB gold file")->required();
    baseline
        ->add_option("--strategy", base_args.strategy,
                     "right_branching|left_branching|balanced|random")
        ->required();
    baseline->add_option("--seed", base_args.seed, "seed for the random strategy");
    baseline->add_option("--max-len", base_args.max_len, "gold length filter (default 10)");
    baseline->add_flag("--strip-dollar", base_args.strip_dollar, "also strip $ leaves");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect-gates", "dump gate activations as JSON");
    inspect->add_option("--model", inspect_args.model, "checkpoint file")->required();
    inspect->add_option("--input", inspect_args.input, "tokenized sentences")->required();

    DumpArgs dump_args;
    auto* dump = app.add_subcommand("dump-tokens", "extract stripped gold sentences as text");
    dump->add_option("--gold", dump_args.gold, "PTB gold file")->required();
    dump->add_option("--output", dump_args.output, "text output path")->required();
    dump->add_option("--max-len", dump_args.max_len, "length filter (default 10)");
    dump->add_flag("--strip-dollar", dump_args.strip_dollar, "also strip $ leaves");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUser;
    }

    if (train->parsed()) return cmd_train(train_args);
    if (parse->parsed()) return cmd_parse(parse_args);
    if (evalf1->parsed()) return cmd_eval_f1(eval_args);
    if (baseline->parsed()) return cmd_baseline(base_args);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (inspect->parsed()) return cmd_inspect_gates(inspect_args);
    if (dump->parsed()) return cmd_dump_tokens(dump_args);
    return kExitUser;
}
