// Command-line front end. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "autoret/commands.hpp"
#include "autoret/error.hpp"

namespace fs = std::filesystem;
using namespace autoret;

namespace {

ReportFormat parse_format(const std::string& s) {
    if (s == "table") {
        return ReportFormat::table;
    }
    if (s == "json") {
        return ReportFormat::json;
    }
    throw UsageError("--format must be table or json");
}

RunConfig load(const std::string& path) {
    auto config = load_run_config(path);
    apply_env_overrides(config);
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dense retriever trained by distilling a question-likelihood teacher"};
    app.require_subcommand(1);
    std::string config_path;

    auto* synth = app.add_subcommand("synth", "write a seeded synthetic corpus");
    SynthConfig sc;
    std::string synth_out = "synth";
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();
    synth->add_option("--seed", sc.seed)->capture_default_str();
    synth->add_option("--passages", sc.passages)->capture_default_str();
    synth->add_option("--vocab", sc.vocab)->capture_default_str();
    synth->add_option("--passage-len", sc.passage_len)->capture_default_str();
    synth->add_option("--train", sc.train_questions)->capture_default_str();
    synth->add_option("--dev", sc.dev_questions)->capture_default_str();
    synth->add_option("--question-len", sc.question_len)->capture_default_str();
    synth->add_option("--zipf", sc.zipf_exponent)->capture_default_str();

    auto* vocab = app.add_subcommand("build-vocab", "build the vocabulary (optionally segmenting articles)");
    vocab->add_option("--config", config_path)->required();
    std::optional<std::string> articles;
    std::size_t window = 100;
    vocab->add_option("--articles", articles, "JSONL articles to split into passages");
    vocab->add_option("--window", window, "words per passage when segmenting")->capture_default_str();

    auto* index = app.add_subcommand("build-index", "encode the corpus with the initial passage tower");
    index->add_option("--config", config_path)->required();

    auto* train = app.add_subcommand("train", "distill the teacher into the retriever");
    train->add_option("--config", config_path)->required();
    std::optional<std::string> resume, ablation;
    std::optional<std::uint64_t> stop_at;
    std::optional<std::size_t> limit;
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_option("--stop-at", stop_at, "stop after this global step");
    train->add_option("--train-questions-limit", limit, "subsample the training questions");
    train->add_option("--ablation", ablation, "candidate mode, e.g. topk:8, mix:1,1,30, uniform:32, inbatch:1,1");

    auto* eval = app.add_subcommand("eval", "report top-K accuracy for a checkpoint");
    eval->add_option("--config", config_path)->required();
    std::optional<std::string> eval_ckpt, eval_questions, eval_qrels;
    std::string baseline, format = "table", name = "eval";
    eval->add_option("--checkpoint", eval_ckpt, "defaults to the run's best checkpoint");
    eval->add_option("--questions", eval_questions, "defaults to the dev questions");
    eval->add_option("--qrels", eval_qrels, "graded qrels TSV; adds nDCG@10 and Recall@100");
    eval->add_option("--baseline", baseline, "bm25")->check(CLI::IsMember({"bm25"}));
    eval->add_option("--format", format)->capture_default_str();
    eval->add_option("--name", name, "report file stem")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate", "compare candidate-set constructions");
    ablate->add_option("--config", config_path)->required();
    std::vector<std::string> modes;
    ablate->add_option("--mode", modes, "candidate mode; repeatable");
    ablate->add_option("--format", format)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            cmd_synth(sc, synth_out, std::cout);
        } else if (vocab->parsed()) {
            std::optional<fs::path> a;
            if (articles) {
                a = *articles;
            }
            cmd_build_vocab(load(config_path), a, window, std::cout);
        } else if (index->parsed()) {
            cmd_build_index(load(config_path), std::cout);
        } else if (train->parsed()) {
            auto config = load(config_path);
            if (limit) {
                config.train_questions_limit = *limit;
            }
            if (ablation) {
                config.trainer.candidates = CandidateMode::parse(*ablation);
            }
            config.validate();
            TrainOptions opts;
            if (resume) {
                opts.resume = *resume;
            }
            opts.stop_at = stop_at;
            cmd_train(config, opts, std::cout, std::cerr);
        } else if (eval->parsed()) {
            EvalOptions opts;
            if (eval_ckpt) {
                opts.checkpoint = *eval_ckpt;
            }
            if (eval_questions) {
                opts.questions = *eval_questions;
            }
            if (eval_qrels) {
                opts.qrels = *eval_qrels;
            }
            opts.bm25 = baseline == "bm25";
            opts.format = parse_format(format);
            opts.name = name;
            cmd_eval(load(config_path), opts, std::cout, std::cerr);
        } else if (ablate->parsed()) {
            AblateOptions opts{modes, parse_format(format)};
            cmd_ablate(load(config_path), opts, std::cout, std::cerr);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
