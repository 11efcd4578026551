#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "autoret/corpus.hpp"

namespace autoret {

// ---- answer matching -------------------------------------------------------

/// Lowercased words with punctuation removed.
std::vector<std::string> normalize_answer_words(std::string_view text);

/// True iff some answer, normalized, occurs as a contiguous word sequence of
/// the normalized passage text. Titles are not searched.
bool contains_answer(const Passage& passage, std::span<const std::string> answers);

// ---- runs and relevance judgments -----------------------------------------

struct RankedPassage {
    std::string pid;
    double score = 0.0;
};

struct QuestionRanking {
    std::string qid;
    std::vector<RankedPassage> ranking;
};

/// Per-question rankings ordered by (score desc, pid asc), no duplicate pids.
struct RetrievalRun {
    std::vector<QuestionRanking> questions;
    std::uint64_t checkpoint_step = 0;
    std::uint64_t index_version = 0;

    void validate() const;
};

/// Sorts a ranking into canonical (score desc, pid asc) order.
void canonicalize(std::vector<RankedPassage>& ranking);

void write_run(const std::filesystem::path& path, const RetrievalRun& run);
RetrievalRun read_run(const std::filesystem::path& path);

/// Either answer strings (matched against passage text) or graded relevant
/// passage ids, per question.
class QrelSet {
  public:
    struct Judgment {
        std::vector<std::string> answers;
        std::map<std::string, int> grades; // pid -> grade > 0
    };

    void add_answers(const std::string& qid, std::vector<std::string> answers);
    void add_grade(const std::string& qid, const std::string& pid, int grade);

    /// Answer-mode judgments for questions with answers, gold-passage
    /// judgments (grade 1) for the rest.
    static QrelSet from_questions(std::span<const Question> questions);
    /// TSV lines "qid \t pid \t grade".
    static QrelSet load_graded(const std::filesystem::path& path);

    [[nodiscard]] const Judgment* find(const std::string& qid) const;
    [[nodiscard]] std::size_t size() const { return judgments_.size(); }

  private:
    std::map<std::string, Judgment> judgments_;
};

/// Decides whether a retrieved passage answers the question: graded pids when
/// present, otherwise answer-span matching against the passage text.
class RelevanceOracle {
  public:
    RelevanceOracle(const QrelSet& qrels, std::span<const Passage> corpus);

    [[nodiscard]] bool is_hit(const QrelSet::Judgment& judgment, const std::string& pid) const;

  private:
    std::span<const Passage> corpus_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// ---- metrics ---------------------------------------------------------------

/// Fraction of questions with at least one hit in the top K, for each K.
/// Throws listing every run question absent from `qrels`.
std::map<std::size_t, double> topk_accuracy(const RetrievalRun& run, const QrelSet& qrels,
                                            std::span<const Passage> corpus, std::span<const std::size_t> ks);

struct GradedMetric {
    double value = 0.0;
    std::size_t evaluated = 0;
    std::size_t excluded = 0; // questions with no relevant ids
};

/// Fraction of relevant ids within the top K, macro-averaged.
GradedMetric recall_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k);

/// nDCG with linear gains and log2 discount over the top `k` (default 10).
GradedMetric ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k = 10);

// ---- BM25 ------------------------------------------------------------------

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Okapi BM25 over title and text tokens, with
/// idf = ln((N - df + 0.5) / (df + 0.5) + 1).
class Bm25Index {
  public:
    Bm25Index(std::span<const Passage> passages, Bm25Params params = {});

    /// Top `k` passage positions; ties by ascending passage id string so the
    /// result does not depend on corpus order. Duplicate query terms count once.
    [[nodiscard]] std::vector<std::pair<std::size_t, double>> rank(std::span<const TokenId> query,
                                                                   std::size_t k) const;

    [[nodiscard]] double score(std::span<const TokenId> query, std::size_t passage) const;

  private:
    struct Posting {
        std::size_t passage;
        std::uint32_t tf;
    };

    [[nodiscard]] double idf(std::size_t df) const;

    Bm25Params params_;
    std::span<const Passage> passages_;
    std::vector<std::uint32_t> lengths_;
    double avg_length_ = 0.0;
    std::unordered_map<TokenId, std::vector<Posting>> postings_;
};

// ---- reports ---------------------------------------------------------------

/// Named metrics in a fixed column order plus free-form metadata.
struct Report {
    std::string title;
    std::vector<std::string> row_labels;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows; // rows[r][c]
    std::map<std::string, std::string> meta;

    /// Columns are added in first-seen order; absent cells render as "-".
    void add_row(const std::string& label, const std::vector<std::pair<std::string, double>>& values);
};

inline constexpr int kReportSchemaVersion = 1;

/// Column label for a top-K accuracy, e.g. "Top-20".
std::string topk_column(std::size_t k);

enum class ReportFormat { table, json };

std::string render_report(const Report& report, ReportFormat format);
void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path);

} // namespace autoret
