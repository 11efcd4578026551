#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "autoret/corpus.hpp"

namespace autoret {

/// Mean token log-probability (nats) of a question given one candidate.
struct RelevanceScore {
    std::size_t passage = 0;
    double value = 0.0;
};

enum class TeacherKind { toy, external };

struct TeacherConfig {
    TeacherKind kind = TeacherKind::toy;
    /// Copy-smoothing for the toy teacher; must be positive.
    double alpha = 1.0;
    /// argv of the external scorer; it speaks the line protocol on stdio.
    std::vector<std::string> command;
    int timeout_ms = 30000;
    std::size_t max_in_flight = 8;

    void validate() const;
};

/// Instruction appended after title and text when a language model scores a
/// question against a passage. The external scorer owns the prompt layout.
inline constexpr std::string_view kInstructionSuffix = "Please write a question based on this passage.";

/// log[(count(token in passage) + alpha) / (|passage| + alpha * vocab_size)].
/// `prefix` is accepted for parity with autoregressive scorers; the toy model
/// ignores it.
double toy_token_logprob(TokenId token, std::span<const TokenId> prefix, std::span<const TokenId> passage_tokens,
                         double alpha, std::size_t vocab_size);

/// Mean of toy_token_logprob over the question tokens, each conditioned on
/// its prefix.
double toy_relevance(std::span<const TokenId> question, std::span<const TokenId> passage_tokens, double alpha,
                     std::size_t vocab_size);

/// Title followed by text, the passage view a scorer conditions on.
TokenSeq teacher_passage_tokens(const Passage& passage);

/// One question and its candidates. `key` identifies the request across
/// retries: (question id, index version, step).
struct ScoringRequest {
    const Question* question = nullptr;
    std::vector<const Passage*> passages;
    std::string key;
};

/// Frozen relevance scorer. Implementations never change model state.
class Teacher {
  public:
    virtual ~Teacher() = default;

    /// One score vector per request, one entry per passage, in order. A
    /// failure for any request fails the whole call.
    virtual std::vector<std::vector<double>> score_batch(std::span<const ScoringRequest> requests) = 0;
};

class ToyTeacher final : public Teacher {
  public:
    ToyTeacher(double alpha, std::size_t vocab_size);

    std::vector<std::vector<double>> score_batch(std::span<const ScoringRequest> requests) override;

    [[nodiscard]] double relevance(const Question& question, const Passage& passage) const;

  private:
    double alpha_;
    std::size_t vocab_size_;
};

/// Client for a scorer subprocess speaking newline-delimited JSON:
///   request {"v":1,"qid":..,"question":..,"passages":[{"id","title","text"}]}
///   reply   {"v":1,"qid":..,"scores":[..]}
/// Replies may come back in any order and are matched by qid. Requests are
/// pipelined up to `max_in_flight`. Unreachable or slow scorers raise
/// TeacherUnavailable (the process is restarted on the next call); replies
/// that break the protocol raise ProtocolError.
class ExternalTeacher final : public Teacher {
  public:
    explicit ExternalTeacher(TeacherConfig config);
    ~ExternalTeacher() override;

    ExternalTeacher(const ExternalTeacher&) = delete;
    ExternalTeacher& operator=(const ExternalTeacher&) = delete;

    std::vector<std::vector<double>> score_batch(std::span<const ScoringRequest> requests) override;

  private:
    struct Process;

    void ensure_started();
    void stop();
    void send_line(const std::string& line);
    std::string read_line(std::int64_t deadline_ms);

    TeacherConfig config_;
    std::unique_ptr<Process> process_;
    std::string read_buffer_;
    std::map<std::string, std::vector<double>> completed_;
};

std::unique_ptr<Teacher> make_teacher(const TeacherConfig& config, std::size_t vocab_size);

/// Scores each candidate; order preserved. Throws on an empty candidate list.
std::vector<RelevanceScore> score_candidates(const Question& question, std::span<const std::size_t> candidates,
                                             std::span<const Passage> corpus, Teacher& teacher);

namespace protocol {

inline constexpr int kVersion = 1;

nlohmann::ordered_json make_request(const Question& question, std::span<const Passage* const> passages);

/// Validates one reply object and returns its scores. Throws ProtocolError.
struct Reply {
    std::string qid;
    std::vector<double> scores;
};
Reply parse_reply(std::string_view line);

} // namespace protocol

} // namespace autoret
