#include "autoret/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <ostream>
#include <sstream>

#include "autoret/error.hpp"
#include "autoret/rng.hpp"

namespace autoret {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace layout {
fs::path vocab(const RunConfig& c) { return c.run_dir / "vocab.txt"; }
fs::path passages(const RunConfig& c) { return c.passages.empty() ? c.run_dir / "passages.jsonl" : c.passages; }
fs::path index(const RunConfig& c) { return c.run_dir / "index.bin"; }
fs::path steps(const RunConfig& c) { return c.run_dir / "steps.jsonl"; }

fs::path checkpoint(const RunConfig& c, std::uint64_t step) {
    char name[64];
    std::snprintf(name, sizeof name, "step-%08llu.ckpt", static_cast<unsigned long long>(step));
    return c.run_dir / "checkpoints" / name;
}

fs::path checkpoint_index(const RunConfig& c, std::uint64_t step) {
    auto p = checkpoint(c, step);
    p.replace_extension(".index");
    return p;
}

fs::path best(const RunConfig& c) { return c.run_dir / "checkpoints" / "best.ckpt"; }
fs::path manifest(const RunConfig& c, const std::string& command) {
    return c.run_dir / "manifests" / (command + ".json");
}
fs::path reports(const RunConfig& c) { return c.run_dir / "reports"; }
} // namespace layout

void apply_env_overrides(RunConfig& config) {
    auto take = [](const char* name, fs::path& target) {
        if (const char* v = std::getenv(name); v != nullptr && *v != '\0') {
            target = v;
        }
    };
    take("AUTORET_RUN_DIR", config.run_dir);
    take("AUTORET_PASSAGES", config.passages);
    take("AUTORET_TRAIN_QUESTIONS", config.train_questions);
    take("AUTORET_DEV_QUESTIONS", config.dev_questions);
    take("AUTORET_DEV_QRELS", config.dev_qrels);
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash_string(bytes)));
    return hex;
}

namespace {

void write_manifest(const RunConfig& config, const std::string& command, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs, ordered_json extra = ordered_json::object()) {
    ordered_json m;
    m["command"] = command;
    m["seed"] = config.seed;
    m["inputs"] = ordered_json::array();
    for (const auto& p : inputs) {
        m["inputs"].push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
    }
    m["outputs"] = ordered_json::array();
    for (const auto& p : outputs) {
        m["outputs"].push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
    }
    m["config"] = to_json(config);
    for (auto& [k, v] : extra.items()) {
        m[k] = v;
    }
    const auto path = layout::manifest(config, command);
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << m.dump(2) << '\n';
    if (!out) {
        throw Error("cannot write manifest " + path.string());
    }
}

template <typename Record>
std::vector<Record> accept(IngestResult<Record> result, const fs::path& path, std::ostream& log) {
    for (const auto& r : result.rejected) {
        log << path.string() << ":" << r.line << ": skipped: " << r.message << '\n';
    }
    if (result.records.empty()) {
        throw Error("no usable records in " + path.string());
    }
    return std::move(result.records);
}

// Missing inputs are usage errors naming the config key or flag.
void require(const fs::path& path, const std::string& key) {
    if (path.empty()) {
        throw UsageError(key + " is not set");
    }
    if (!fs::exists(path)) {
        throw UsageError(key + ": no such file " + path.string());
    }
}

std::vector<Article> read_articles(const fs::path& path, std::ostream& log) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<Article> articles;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
            !j.contains("text") || !j["text"].is_string()) {
            log << path.string() << ":" << n << ": skipped: expected {\"id\",\"title\"?,\"text\"}\n";
            continue;
        }
        articles.push_back({j["id"].get<std::string>(), j.value("title", std::string()), j["text"].get<std::string>()});
    }
    return articles;
}

TrainerConfig trainer_config(const RunConfig& config, const Vocabulary& vocab) {
    auto t = config.trainer;
    t.dims.vocab = vocab.size();
    t.seed = config.seed;
    return t;
}

std::vector<std::size_t> eval_depths(const RunConfig& config, std::size_t corpus_size) {
    std::vector<std::size_t> ks;
    for (auto k : config.eval_ks) {
        ks.push_back(std::min(k, corpus_size));
    }
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
}

std::vector<std::pair<std::string, double>> topk_row(const std::map<std::size_t, double>& acc,
                                                     std::span<const std::size_t> requested) {
    std::vector<std::pair<std::string, double>> row;
    for (auto k : requested) {
        auto it = acc.upper_bound(k);
        // Requested depths beyond the corpus report the full-corpus value.
        row.emplace_back(topk_column(k), std::prev(it)->second);
    }
    return row;
}

void truncate_steps(const fs::path& path, std::uint64_t last_step) {
    if (!fs::exists(path)) {
        return;
    }
    std::ifstream in(path);
    std::vector<std::string> keep;
    std::string line;
    while (std::getline(in, line)) {
        auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("step", std::uint64_t{0}) <= last_step) {
            keep.push_back(line);
        }
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) {
        out << l << '\n';
    }
}

} // namespace

Workspace load_workspace(const RunConfig& config, std::ostream& log, bool need_train) {
    Workspace ws;
    const auto vocab_path = layout::vocab(config);
    if (!fs::exists(vocab_path)) {
        throw UsageError("vocabulary not found at " + vocab_path.string() + "; run build-vocab first");
    }
    ws.vocab = Vocabulary::load(vocab_path);
    const auto passages = layout::passages(config);
    require(passages, "passages");
    ws.passages = accept(ingest_passages(passages, ws.vocab), passages, log);
    if (need_train) {
        require(config.train_questions, "train_questions");
        ws.train = accept(ingest_questions(config.train_questions, ws.vocab), config.train_questions, log);
        if (config.train_questions_limit) {
            const auto limit = *config.train_questions_limit;
            if (limit == 0 || limit > ws.train.size()) {
                throw UsageError("--train-questions-limit must be between 1 and " + std::to_string(ws.train.size()));
            }
            ws.train = limit_questions(std::move(ws.train), *config.train_questions_limit, config.seed);
        }
    }
    if (!config.dev_questions.empty()) {
        require(config.dev_questions, "dev_questions");
        ws.dev = accept(ingest_questions(config.dev_questions, ws.vocab), config.dev_questions, log);
        ws.dev_qrels = QrelSet::from_questions(ws.dev);
    }
    return ws;
}

std::vector<Question> limit_questions(std::vector<Question> questions, std::size_t limit, std::uint64_t seed) {
    if (limit >= questions.size()) {
        return questions;
    }
    std::vector<std::size_t> order(questions.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x6c696d6974ULL));
    shuffle(order.begin(), order.end(), rng);
    order.resize(limit);
    std::sort(order.begin(), order.end());
    std::vector<Question> out;
    out.reserve(limit);
    for (auto i : order) {
        out.push_back(std::move(questions[i]));
    }
    return out;
}

TrainOutcome train_in_memory(const TrainerConfig& config, const Workspace& ws, Teacher& teacher,
                             std::optional<std::uint64_t> init_seed) {
    TrainerState state{init_params<float>(config.dims, init_seed.value_or(config.seed)), AdamState<float>::zeros(config.dims), 0};
    Trainer trainer(config, ws.passages, ws.train, teacher, std::move(state));
    trainer.set_dev(ws.dev, ws.dev_qrels);
    TrainOutcome outcome;
    outcome.best_params = trainer.state().params;
    Trainer::Hooks hooks;
    hooks.on_checkpoint = [&](const Trainer& t) {
        auto best = best_dev_point(t.dev_history());
        if (best && best->step == t.state().step) {
            outcome.best_params = t.state().params;
        }
    };
    trainer.run(hooks);
    outcome.final_state = trainer.state();
    outcome.history = trainer.dev_history();
    if (ws.dev.empty()) {
        outcome.best_params = outcome.final_state.params;
    }
    return outcome;
}

std::map<std::size_t, double> evaluate_params(const EncoderParams<float>& params, const Workspace& ws,
                                              std::span<const Question> questions, std::span<const std::size_t> ks,
                                              std::size_t num_shards) {
    auto index = build_index(ws.passages, params, num_shards);
    const auto depth = std::min(ks.back(), ws.passages.size());
    auto run = retrieve(questions, ws.passages, params, index, depth);
    return topk_accuracy(run, QrelSet::from_questions(questions), ws.passages, ks);
}

// ---- commands ---------------------------------------------------------------

void cmd_synth(const SynthConfig& config, const fs::path& out_dir, std::ostream& out) {
    config.validate();
    auto data = generate_synthetic(config);
    fs::create_directories(out_dir);
    write_synthetic(out_dir, data);
    out << "wrote " << data.passages.size() << " passages, " << data.train.size() << " train and "
        << data.dev.size() << " dev questions to " << out_dir.string() << '\n';
}

void cmd_build_vocab(const RunConfig& config, const std::optional<fs::path>& articles, std::size_t window,
                     std::ostream& out) {
    fs::create_directories(config.run_dir);
    std::vector<fs::path> inputs;
    auto passages = layout::passages(config);
    if (articles) {
        require(*articles, "--articles");
        std::vector<Passage> segments;
        for (const auto& a : read_articles(*articles, out)) {
            auto s = segment_document(a, window);
            std::move(s.begin(), s.end(), std::back_inserter(segments));
        }
        if (segments.empty()) {
            throw Error("no usable articles in " + articles->string());
        }
        passages = config.run_dir / "passages.jsonl";
        write_passages(passages, segments);
        inputs.push_back(*articles);
        out << "segmented " << segments.size() << " passages into " << passages.string() << '\n';
    } else {
        require(passages, "passages");
        inputs.push_back(passages);
    }
    auto vocab = build_vocabulary(passages, config.vocab_min_count);
    vocab.save(layout::vocab(config));
    std::vector<fs::path> outputs{layout::vocab(config)};
    if (articles) {
        outputs.push_back(passages);
    }
    write_manifest(config, "build-vocab", inputs, outputs, {{"vocab_size", vocab.size()}, {"window", window}});
    out << "vocabulary of " << vocab.size() << " tokens written to " << layout::vocab(config).string() << '\n';
}

void cmd_build_index(const RunConfig& config, std::ostream& out) {
    auto ws = load_workspace(config, out, false);
    auto t = trainer_config(config, ws.vocab);
    auto params = init_params<float>(t.dims, config.seed);
    auto index = build_index(ws.passages, params, t.num_shards);
    index.save(layout::index(config));
    write_manifest(config, "build-index", {layout::vocab(config), layout::passages(config)}, {layout::index(config)},
                   {{"rows", index.size()}, {"dim", index.dim()}, {"num_shards", index.shards().size()}});
    out << "indexed " << index.size() << " passages in " << index.shards().size() << " shard(s) at "
        << layout::index(config).string() << '\n';
}

void cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& out, std::ostream& log) {
    auto ws = load_workspace(config, log);
    auto t = trainer_config(config, ws.vocab);
    const auto config_json = to_json(config).dump();

    TrainerState state;
    std::optional<EmbeddingIndex> index;
    std::vector<DevPoint> history;
    if (options.resume) {
        auto ckpt = load_checkpoint(*options.resume);
        if (ckpt.state.params.dims() != t.dims) {
            throw Error("checkpoint dimensions do not match the configured encoder and vocabulary");
        }
        state = std::move(ckpt.state);
        history = std::move(ckpt.dev_history);
        auto stale = options.resume->parent_path() / layout::checkpoint_index(config, state.step).filename();
        if (fs::exists(stale)) {
            index = EmbeddingIndex::load(stale);
        } else {
            index = build_index(ws.passages, state.params, t.num_shards, ckpt.index_version);
        }
        truncate_steps(layout::steps(config), state.step);
        log << "resuming at step " << state.step << " from " << options.resume->string() << '\n';
    } else {
        state = {init_params<float>(t.dims, config.seed), AdamState<float>::zeros(t.dims), 0};
        if (fs::exists(layout::index(config))) {
            auto built = EmbeddingIndex::load(layout::index(config));
            if (built.size() == ws.passages.size() && built.dim() == t.dims.d_out) {
                index = std::move(built);
            }
        }
        fs::create_directories(config.run_dir);
        std::ofstream(layout::steps(config), std::ios::trunc);
    }

    auto teacher = make_teacher(config.teacher, ws.vocab.size());
    Trainer trainer(t, ws.passages, ws.train, *teacher, std::move(state), std::move(index));
    trainer.set_dev(ws.dev, ws.dev_qrels);
    trainer.set_dev_history(std::move(history));

    fs::create_directories(layout::checkpoint(config, 0).parent_path());
    std::ofstream steps(layout::steps(config), std::ios::app);
    auto save = [&](const Trainer& tr) {
        Checkpoint ckpt;
        ckpt.config_json = config_json;
        ckpt.state = tr.state();
        ckpt.index_version = tr.index()->version();
        ckpt.dev_history = tr.dev_history();
        const auto path = layout::checkpoint(config, ckpt.state.step);
        save_checkpoint(path, ckpt);
        tr.index()->save(layout::checkpoint_index(config, ckpt.state.step));
        auto best = best_dev_point(ckpt.dev_history);
        if (best && best->step == ckpt.state.step) {
            fs::copy_file(path, layout::best(config), fs::copy_options::overwrite_existing);
        }
        return path;
    };

    Trainer::Hooks hooks;
    hooks.on_step = [&](const StepReport& r) {
        const auto line = r.to_json();
        steps << line << '\n' << std::flush;
        out << line << '\n';
    };
    hooks.on_checkpoint = [&](const Trainer& tr) {
        auto path = save(tr);
        std::ostringstream msg;
        msg << "checkpoint " << path.string();
        if (!tr.dev_history().empty()) {
            msg << " dev top-" << t.selection_k << " " << std::fixed << std::setprecision(4)
                << tr.dev_history().back().metric;
        }
        log << msg.str() << '\n';
    };

    try {
        trainer.run(hooks, options.stop_at);
    } catch (const Error& e) {
        // Persist the last completed step so the run can resume from it.
        if (trainer.state().step > 0) {
            auto path = save(trainer);
            log << "saved " << path.string() << " after failure\n";
        }
        throw;
    }
    if (trainer.state().step < t.total_steps && trainer.state().step % t.checkpoint_every != 0) {
        auto path = save(trainer);
        log << "stopped at step " << trainer.state().step << "; checkpoint " << path.string() << '\n';
    }
    if (!fs::exists(layout::best(config)) && trainer.state().step == t.total_steps) {
        fs::copy_file(layout::checkpoint(config, trainer.state().step), layout::best(config),
                      fs::copy_options::overwrite_existing);
    }
    write_manifest(config, "train", {layout::vocab(config), layout::passages(config), config.train_questions}, {},
                   {{"final_step", trainer.state().step}, {"train_questions_used", ws.train.size()}});
}

void cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream& out, std::ostream& log) {
    auto ws = load_workspace(config, log, false);
    std::vector<Question> questions;
    fs::path questions_path = options.questions.value_or(config.dev_questions);
    require(questions_path, "--questions");
    questions = accept(ingest_questions(questions_path, ws.vocab), questions_path, log);
    const auto qrels = QrelSet::from_questions(questions);
    const auto ks = eval_depths(config, ws.passages.size());

    std::optional<QrelSet> graded;
    if (options.qrels) {
        require(*options.qrels, "--qrels");
        graded = QrelSet::load_graded(*options.qrels);
    }
    const std::size_t depth = std::min(std::max<std::size_t>(ks.back(), graded ? 100 : 0), ws.passages.size());

    Report report;
    report.title = "Retrieval accuracy on " + questions_path.filename().string();
    report.meta["questions"] = std::to_string(questions.size());
    report.meta["passages"] = std::to_string(ws.passages.size());
    fs::create_directories(layout::reports(config));

    auto add = [&](const std::string& label, const RetrievalRun& run, const std::string& run_name) {
        auto row = topk_row(topk_accuracy(run, qrels, ws.passages, ks), config.eval_ks);
        if (graded) {
            auto n = ndcg_at_k(run, *graded, 10);
            auto r = recall_at_k(run, *graded, 100);
            row.emplace_back("nDCG@10", n.value);
            row.emplace_back("Recall@100", r.value);
            if (n.excluded > 0) {
                log << label << ": " << n.excluded << " question(s) without relevant ids excluded\n";
            }
        }
        report.add_row(label, row);
        write_run(layout::reports(config) / (options.name + "-" + run_name + ".run.jsonl"), run);
    };

    if (options.bm25) {
        Bm25Index bm25(ws.passages);
        add("BM25", retrieve_bm25(questions, ws.passages, bm25, depth), "bm25");
    }
    if (!options.bm25 || options.checkpoint) {
        const auto ckpt_path = options.checkpoint.value_or(layout::best(config));
        require(ckpt_path, "--checkpoint");
        auto ckpt = load_checkpoint(ckpt_path);
        const auto dims = ckpt.state.params.dims();
        if (dims.vocab != ws.vocab.size()) {
            throw Error("checkpoint vocabulary size " + std::to_string(dims.vocab) + " does not match vocabulary of " +
                        std::to_string(ws.vocab.size()));
        }
        auto index = build_index(ws.passages, ckpt.state.params, config.trainer.num_shards);
        auto run = retrieve(questions, ws.passages, ckpt.state.params, index, depth);
        run.checkpoint_step = ckpt.state.step;
        run.index_version = index.version();
        add("Dense (step " + std::to_string(ckpt.state.step) + ")", run, "dense");
    }

    const auto ext = options.format == ReportFormat::json ? ".json" : ".txt";
    emit_report(report, options.format, layout::reports(config) / (options.name + ext));
    out << render_report(report, options.format);
}

void cmd_ablate(const RunConfig& config, const AblateOptions& options, std::ostream& out, std::ostream& log) {
    auto ws = load_workspace(config, log);
    if (ws.dev.empty()) {
        throw UsageError("ablate needs dev questions");
    }
    const auto k = config.trainer.candidates.k;
    auto modes = options.modes;
    if (modes.empty()) {
        modes = {"uniform:" + std::to_string(k), "mix:1,0," + std::to_string(k - 1), "topk:" + std::to_string(k)};
    }
    const auto ks = eval_depths(config, ws.passages.size());
    auto teacher = make_teacher(config.teacher, ws.vocab.size());

    Report report;
    report.title = "Candidate-set ablation";
    report.meta["steps"] = std::to_string(config.trainer.total_steps);
    report.meta["seed"] = std::to_string(config.seed);
    for (const auto& m : modes) {
        auto t = trainer_config(config, ws.vocab);
        t.candidates = CandidateMode::parse(m);
        log << "training with " << t.candidates.str() << '\n';
        auto outcome = train_in_memory(t, ws, *teacher);
        auto acc = evaluate_params(outcome.best_params, ws, ws.dev, ks, t.num_shards);
        report.add_row(t.candidates.str(), topk_row(acc, config.eval_ks));
    }
    fs::create_directories(layout::reports(config));
    const auto ext = options.format == ReportFormat::json ? ".json" : ".txt";
    emit_report(report, options.format, layout::reports(config) / (std::string("ablation") + ext));
    out << render_report(report, options.format);
}

} // namespace autoret
