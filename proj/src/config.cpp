#include "autoret/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "autoret/error.hpp"

namespace autoret {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw UsageError("unknown config key \"" + where + key + "\"");
        }
    }
}

template <typename T>
T get(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) {
        return fallback;
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw UsageError(std::string("config key \"") + key + "\" has the wrong type");
    }
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback) {
    auto it = j.find(key);
    if (it == j.end()) {
        return fallback;
    }
    if (!it->is_number_unsigned()) {
        throw UsageError(std::string("config key \"") + key + "\" must be a non-negative integer");
    }
    return it->get<std::size_t>();
}

std::filesystem::path get_path(const json& j, const char* key, const std::filesystem::path& base,
                               const std::filesystem::path& fallback = {}) {
    auto raw = get<std::string>(j, key, fallback.string());
    if (raw.empty()) {
        return {};
    }
    std::filesystem::path p(raw);
    return p.is_absolute() || base.empty() ? p : base / p;
}

} // namespace

void RunConfig::validate() const {
    trainer.validate();
    teacher.validate();
    if (eval_ks.empty() || !std::is_sorted(eval_ks.begin(), eval_ks.end()) || eval_ks.front() == 0) {
        throw UsageError("eval_ks must be a non-empty ascending list of positive integers");
    }
    if (train_questions_limit && *train_questions_limit == 0) {
        throw UsageError("train_questions_limit must be positive");
    }
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) {
        throw UsageError("config must be a JSON object");
    }
    reject_unknown(j,
                   {"seed", "run_dir", "passages", "train_questions", "dev_questions", "dev_qrels", "vocab_min_count",
                    "encoder", "tau", "k", "ablation", "batch_size", "peak_lr", "warmup_steps", "total_steps",
                    "refresh_every", "checkpoint_every", "dropout", "num_shards", "workers", "selection_k", "eval_ks",
                    "train_questions_limit", "teacher"},
                   "");
    RunConfig c;
    if (!j.contains("seed") || !j["seed"].is_number_unsigned()) {
        throw UsageError("config needs a non-negative integer \"seed\"");
    }
    c.seed = j["seed"].get<std::uint64_t>();
    c.run_dir = get_path(j, "run_dir", base_dir, "run");
    c.passages = get_path(j, "passages", base_dir);
    c.train_questions = get_path(j, "train_questions", base_dir);
    c.dev_questions = get_path(j, "dev_questions", base_dir);
    c.dev_qrels = get_path(j, "dev_qrels", base_dir);
    c.vocab_min_count = get_count(j, "vocab_min_count", 1);

    auto& t = c.trainer;
    t.seed = c.seed;
    if (auto it = j.find("encoder"); it != j.end()) {
        if (!it->is_object()) {
            throw UsageError("config key \"encoder\" must be an object");
        }
        reject_unknown(*it, {"d_emb", "d_hidden", "d_out"}, "encoder.");
        t.dims.d_emb = get_count(*it, "d_emb", t.dims.d_emb);
        t.dims.d_hidden = get_count(*it, "d_hidden", t.dims.d_hidden);
        t.dims.d_out = get_count(*it, "d_out", t.dims.d_out);
    }
    t.tau = get<double>(j, "tau", t.tau);
    const auto k = get_count(j, "k", 8);
    t.candidates = j.contains("ablation") ? CandidateMode::parse(get<std::string>(j, "ablation", ""))
                                          : CandidateMode::topk(k);
    t.batch_size = get_count(j, "batch_size", t.batch_size);
    t.peak_lr = get<double>(j, "peak_lr", t.peak_lr);
    t.warmup_steps = get_count(j, "warmup_steps", t.warmup_steps);
    t.total_steps = get_count(j, "total_steps", t.total_steps);
    t.refresh_every = get_count(j, "refresh_every", t.refresh_every);
    t.checkpoint_every = get_count(j, "checkpoint_every", t.checkpoint_every);
    t.dropout = get<double>(j, "dropout", t.dropout);
    t.num_shards = get_count(j, "num_shards", t.num_shards);
    t.workers = get_count(j, "workers", t.workers);
    t.selection_k = get_count(j, "selection_k", t.selection_k);
    c.eval_ks = get<std::vector<std::size_t>>(j, "eval_ks", c.eval_ks);
    if (j.contains("train_questions_limit")) {
        c.train_questions_limit = get_count(j, "train_questions_limit", 0);
    }

    if (auto it = j.find("teacher"); it != j.end()) {
        if (!it->is_object()) {
            throw UsageError("config key \"teacher\" must be an object");
        }
        reject_unknown(*it, {"kind", "alpha", "command", "timeout_ms", "max_in_flight"}, "teacher.");
        auto kind = get<std::string>(*it, "kind", "toy");
        if (kind == "toy") {
            c.teacher.kind = TeacherKind::toy;
        } else if (kind == "external") {
            c.teacher.kind = TeacherKind::external;
        } else {
            throw UsageError("teacher.kind must be \"toy\" or \"external\"");
        }
        c.teacher.alpha = get<double>(*it, "alpha", c.teacher.alpha);
        c.teacher.command = get<std::vector<std::string>>(*it, "command", {});
        c.teacher.timeout_ms = get<int>(*it, "timeout_ms", c.teacher.timeout_ms);
        c.teacher.max_in_flight = get_count(*it, "max_in_flight", c.teacher.max_in_flight);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config " + path.string());
    }
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw UsageError("config " + path.string() + " is not valid JSON");
    }
    return parse_run_config(j, path.parent_path());
}

json to_json(const RunConfig& c) {
    const auto& t = c.trainer;
    json j;
    j["seed"] = c.seed;
    j["run_dir"] = c.run_dir.string();
    j["passages"] = c.passages.string();
    j["train_questions"] = c.train_questions.string();
    j["dev_questions"] = c.dev_questions.string();
    j["dev_qrels"] = c.dev_qrels.string();
    j["vocab_min_count"] = c.vocab_min_count;
    j["encoder"] = {{"d_emb", t.dims.d_emb}, {"d_hidden", t.dims.d_hidden}, {"d_out", t.dims.d_out}};
    j["tau"] = t.tau;
    j["k"] = t.candidates.k;
    j["ablation"] = t.candidates.str();
    j["batch_size"] = t.batch_size;
    j["peak_lr"] = t.peak_lr;
    j["warmup_steps"] = t.warmup_steps;
    j["total_steps"] = t.total_steps;
    j["refresh_every"] = t.refresh_every;
    j["checkpoint_every"] = t.checkpoint_every;
    j["dropout"] = t.dropout;
    j["num_shards"] = t.num_shards;
    j["workers"] = t.workers;
    j["selection_k"] = t.selection_k;
    j["eval_ks"] = c.eval_ks;
    if (c.train_questions_limit) {
        j["train_questions_limit"] = *c.train_questions_limit;
    }
    json teacher;
    if (c.teacher.kind == TeacherKind::toy) {
        teacher = {{"kind", "toy"}, {"alpha", c.teacher.alpha}};
    } else {
        teacher = {{"kind", "external"},
                   {"command", c.teacher.command},
                   {"timeout_ms", c.teacher.timeout_ms},
                   {"max_in_flight", c.teacher.max_in_flight}};
    }
    j["teacher"] = teacher;
    return j;
}

} // namespace autoret
