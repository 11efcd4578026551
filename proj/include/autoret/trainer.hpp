#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "autoret/corpus.hpp"
#include "autoret/encoder.hpp"
#include "autoret/eval.hpp"
#include "autoret/index.hpp"
#include "autoret/optim.hpp"
#include "autoret/teacher.hpp"

namespace autoret {

/// How the candidate set Z for a question is formed.
///   topk(K)        retrieve K passages from the (stale) index
///   mix(P, N, U)   P gold passages, N BM25 hard negatives, U uniform draws
///   inbatch(P, N)  union of every batch question's mix(P, N, 0) passages
struct CandidateMode {
    enum class Kind { topk, mix, in_batch };

    Kind kind = Kind::topk;
    std::size_t k = 8;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t uniform = 0;

    static CandidateMode topk(std::size_t k) { return {Kind::topk, k, 0, 0, 0}; }
    static CandidateMode mix(std::size_t p, std::size_t n, std::size_t u) { return {Kind::mix, p + n + u, p, n, u}; }
    static CandidateMode in_batch(std::size_t p, std::size_t n) { return {Kind::in_batch, p + n, p, n, 0}; }

    /// "topk:8", "mix:1,1,30", "uniform:32" (= mix:0,0,32), "inbatch:1,1".
    static CandidateMode parse(std::string_view text);
    [[nodiscard]] std::string str() const;
    [[nodiscard]] bool needs_gold() const { return kind != Kind::topk && (positives > 0 || negatives > 0); }

    friend bool operator==(const CandidateMode&, const CandidateMode&) = default;
};

struct TrainerConfig {
    EncoderDims dims;
    double tau = 1.0;
    std::size_t batch_size = 16;
    CandidateMode candidates = CandidateMode::topk(8);
    double peak_lr = 2e-5;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 1000;
    std::uint64_t refresh_every = 500;
    std::uint64_t checkpoint_every = 500;
    double dropout = 0.1;
    std::uint64_t seed = 0;
    std::size_t num_shards = 1;
    std::size_t workers = 1;
    std::size_t selection_k = 20;
    AdamConfig adam;

    void validate() const;
};

/// Parameters, optimizer moments and the global step.
struct TrainerState {
    EncoderParams<float> params;
    AdamState<float> adam;
    std::uint64_t step = 0;

    friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

/// One question's candidates and the quantities derived from them.
struct CandidateSet {
    std::string question_id;
    std::vector<std::size_t> passages;
    std::vector<double> stale_scores;
    std::vector<double> fresh_scores;
    std::vector<double> teacher_log_probs;
    std::vector<double> student;
    std::vector<double> teacher;
};

struct StepReport {
    std::uint64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    std::uint64_t index_version = 0;
    double ms = 0.0;
    bool skipped = false;

    /// {"step","loss","lr","grad_norm","index_version","ms"}
    [[nodiscard]] std::string to_json() const;
};

/// Read-only context candidate composition draws on.
struct CandidateContext {
    std::span<const Passage> corpus;
    const EmbeddingIndex* index = nullptr;
    const Bm25Index* bm25 = nullptr;
    const std::unordered_map<std::string, std::size_t>* ids = nullptr;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

/// Candidate passage positions for each batch question. `query_embeddings`
/// are the current question-encoder outputs used for top-K retrieval.
std::vector<std::vector<std::size_t>> compose_candidates(std::span<const Question* const> batch,
                                                         std::span<const VectorXf> query_embeddings,
                                                         const CandidateMode& mode, const CandidateContext& ctx);

/// Retrieve, fresh-score, teacher-score, distill and apply one Adam update.
/// Teacher failures are retried once before propagating.
StepReport train_step(std::span<const Question* const> batch, TrainerState& state, const TrainerConfig& config,
                      const CandidateContext& ctx, Teacher& teacher, std::vector<CandidateSet>* trace = nullptr);

struct DevPoint {
    std::uint64_t step = 0;
    double metric = 0.0;

    friend bool operator==(const DevPoint&, const DevPoint&) = default;
};

/// Step with the highest dev metric; the earliest wins ties.
std::optional<DevPoint> best_dev_point(std::span<const DevPoint> history);

/// Encodes all questions with the current question tower and ranks passages
/// against `index`, keeping the top `depth` per question.
RetrievalRun retrieve(std::span<const Question> questions, std::span<const Passage> corpus,
                      const EncoderParams<float>& params, const EmbeddingIndex& index, std::size_t depth);

RetrievalRun retrieve_bm25(std::span<const Question> questions, std::span<const Passage> corpus,
                           const Bm25Index& bm25, std::size_t depth);

/// Owns the loop around train_step: batch order, index refresh, periodic
/// dev evaluation and checkpoints.
class Trainer {
  public:
    struct Hooks {
        std::function<void(const StepReport&)> on_step;
        /// Called every checkpoint_every steps after dev evaluation.
        std::function<void(const Trainer&)> on_checkpoint;
    };

    Trainer(TrainerConfig config, std::span<const Passage> corpus, std::vector<Question> train_questions,
            Teacher& teacher, TrainerState state, std::optional<EmbeddingIndex> index = std::nullopt);

    void set_dev(std::vector<Question> dev, QrelSet qrels);

    /// Runs until `config.total_steps` steps have completed, or until the
    /// global step reaches `stop_at` if that comes first.
    void run(const Hooks& hooks = {}, std::optional<std::uint64_t> stop_at = std::nullopt);
    StepReport step();

    /// Top-`selection_k` dev accuracy on a freshly built index.
    double evaluate_dev() const;

    /// Batch of training-question positions for a 0-based step; epochs are
    /// seeded permutations so any step can be recomputed after a resume.
    [[nodiscard]] std::vector<std::size_t> batch_for_step(std::uint64_t step) const;

    void refresh();

    [[nodiscard]] const TrainerConfig& config() const { return config_; }
    [[nodiscard]] const TrainerState& state() const { return state_; }
    [[nodiscard]] TrainerState& state() { return state_; }
    [[nodiscard]] std::shared_ptr<const EmbeddingIndex> index() const { return index_.snapshot(); }
    [[nodiscard]] const std::vector<DevPoint>& dev_history() const { return dev_history_; }
    void set_dev_history(std::vector<DevPoint> history) { dev_history_ = std::move(history); }

  private:
    TrainerConfig config_;
    std::span<const Passage> corpus_;
    std::vector<Question> train_;
    Teacher& teacher_;
    TrainerState state_;
    IndexHandle index_;
    std::unordered_map<std::string, std::size_t> ids_;
    std::unique_ptr<Bm25Index> bm25_;
    std::vector<Question> dev_;
    QrelSet dev_qrels_;
    std::vector<DevPoint> dev_history_;
};

} // namespace autoret
