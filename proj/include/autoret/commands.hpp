#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoret/checkpoint.hpp"
#include "autoret/config.hpp"
#include "autoret/eval.hpp"
#include "autoret/synth.hpp"

namespace autoret {

// Files under the run directory.
namespace layout {
std::filesystem::path vocab(const RunConfig& c);
std::filesystem::path passages(const RunConfig& c); // config path, else <run>/passages.jsonl
std::filesystem::path index(const RunConfig& c);
std::filesystem::path steps(const RunConfig& c);
std::filesystem::path checkpoint(const RunConfig& c, std::uint64_t step);
std::filesystem::path checkpoint_index(const RunConfig& c, std::uint64_t step);
std::filesystem::path best(const RunConfig& c);
std::filesystem::path manifest(const RunConfig& c, const std::string& command);
std::filesystem::path reports(const RunConfig& c);
} // namespace layout

/// Overrides path settings from AUTORET_RUN_DIR, AUTORET_PASSAGES,
/// AUTORET_TRAIN_QUESTIONS, AUTORET_DEV_QUESTIONS and AUTORET_DEV_QRELS.
void apply_env_overrides(RunConfig& config);

/// FNV-1a over the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Everything tokenized against the run vocabulary.
struct Workspace {
    Vocabulary vocab;
    std::vector<Passage> passages;
    std::vector<Question> train;
    std::vector<Question> dev;
    QrelSet dev_qrels; // from the dev questions' answers or gold ids
};

/// Loads the vocabulary and every configured input. Rejected records are
/// reported on `log`; a file with no usable records is an error.
Workspace load_workspace(const RunConfig& config, std::ostream& log, bool need_train = true);

/// Seeded subsample of the training questions, order preserved.
std::vector<Question> limit_questions(std::vector<Question> questions, std::size_t limit, std::uint64_t seed);

/// Best-by-dev parameters alongside the final state.
struct TrainOutcome {
    TrainerState final_state;
    EncoderParams<float> best_params;
    std::vector<DevPoint> history;
};

/// Trains from a fresh seeded initialization without touching disk. The
/// initialization seed defaults to `config.seed`.
TrainOutcome train_in_memory(const TrainerConfig& config, const Workspace& ws, Teacher& teacher,
                             std::optional<std::uint64_t> init_seed = std::nullopt);

/// Top-K accuracy rows for `params` over `questions`.
std::map<std::size_t, double> evaluate_params(const EncoderParams<float>& params, const Workspace& ws,
                                              std::span<const Question> questions, std::span<const std::size_t> ks,
                                              std::size_t num_shards = 1);

// ---- commands ---------------------------------------------------------------

void cmd_synth(const SynthConfig& config, const std::filesystem::path& out_dir, std::ostream& out);

void cmd_build_vocab(const RunConfig& config, const std::optional<std::filesystem::path>& articles,
                     std::size_t window, std::ostream& out);

void cmd_build_index(const RunConfig& config, std::ostream& out);

struct TrainOptions {
    std::optional<std::filesystem::path> resume;
    std::optional<std::uint64_t> stop_at; // leave early with a checkpoint, as if interrupted
};

void cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& out, std::ostream& log);

struct EvalOptions {
    std::optional<std::filesystem::path> checkpoint; // default: best checkpoint of the run
    std::optional<std::filesystem::path> questions;  // default: dev questions
    std::optional<std::filesystem::path> qrels;      // graded qrels for nDCG@10 / Recall@100
    bool bm25 = false;
    ReportFormat format = ReportFormat::table;
    std::string name = "eval";
};

void cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream& out, std::ostream& log);

struct AblateOptions {
    std::vector<std::string> modes; // default: uniform:K, mix:1,0,K-1, topk:K
    ReportFormat format = ReportFormat::table;
};

void cmd_ablate(const RunConfig& config, const AblateOptions& options, std::ostream& out, std::ostream& log);

} // namespace autoret
