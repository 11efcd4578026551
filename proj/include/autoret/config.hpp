#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autoret/teacher.hpp"
#include "autoret/trainer.hpp"

namespace autoret {

/// Validated configuration shared by every command. Loaded from a JSON
/// object; unknown keys are rejected and `seed` is mandatory.
///
/// Keys (defaults in brackets):
///   seed                 integer, required
///   run_dir              output directory ["run"]
///   passages             passage file
///   train_questions      training question file
///   dev_questions        dev question file
///   dev_qrels            graded qrels TSV for dev (optional)
///   vocab_min_count      [1]
///   encoder              {"d_emb": 64, "d_hidden": 64, "d_out": 64}
///   tau                  [1.0]
///   k                    candidates per question [8]
///   ablation             candidate mode, e.g. "mix:1,1,30" [topk:<k>]
///   batch_size           [16]
///   peak_lr              [2e-5]
///   warmup_steps         [0]
///   total_steps          [1000]
///   refresh_every        [500]
///   checkpoint_every     [500]
///   dropout              [0.1]
///   num_shards           [1]
///   workers              [1]
///   selection_k          dev metric cut-off for model selection [20]
///   eval_ks              [[1, 5, 20, 100]]
///   train_questions_limit  sample this many training questions (optional)
///   teacher              {"kind": "toy", "alpha": 1.0} or
///                        {"kind": "external", "command": [...], "timeout_ms": 30000, "max_in_flight": 8}
///
/// Relative paths resolve against `base_dir`.
struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path run_dir = "run";
    std::filesystem::path passages;
    std::filesystem::path train_questions;
    std::filesystem::path dev_questions;
    std::filesystem::path dev_qrels;
    std::size_t vocab_min_count = 1;
    TrainerConfig trainer;
    TeacherConfig teacher;
    std::vector<std::size_t> eval_ks{1, 5, 20, 100};
    std::optional<std::size_t> train_questions_limit;

    void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON form; parse_run_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& config);

} // namespace autoret
