#include "autoret/teacher.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "autoret/error.hpp"

namespace autoret {

void TeacherConfig::validate() const {
    if (kind == TeacherKind::toy && !(alpha > 0.0 && std::isfinite(alpha))) {
        throw UsageError("toy teacher alpha must be positive");
    }
    if (kind == TeacherKind::external && command.empty()) {
        throw UsageError("external teacher needs a command");
    }
    if (timeout_ms <= 0 || max_in_flight == 0) {
        throw UsageError("teacher timeout and max_in_flight must be positive");
    }
}

double toy_token_logprob(TokenId token, std::span<const TokenId> /*prefix*/, std::span<const TokenId> passage_tokens,
                         double alpha, std::size_t vocab_size) {
    const auto count = static_cast<double>(std::count(passage_tokens.begin(), passage_tokens.end(), token));
    return std::log((count + alpha) / (static_cast<double>(passage_tokens.size()) + alpha * static_cast<double>(vocab_size)));
}

double toy_relevance(std::span<const TokenId> question, std::span<const TokenId> passage_tokens, double alpha,
                     std::size_t vocab_size) {
    if (question.empty()) {
        throw Error("cannot score an empty question");
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < question.size(); ++t) {
        sum += toy_token_logprob(question[t], question.first(t), passage_tokens, alpha, vocab_size);
    }
    return sum / static_cast<double>(question.size());
}

TokenSeq teacher_passage_tokens(const Passage& passage) {
    TokenSeq seq = passage.title_tokens;
    seq.insert(seq.end(), passage.text_tokens.begin(), passage.text_tokens.end());
    return seq;
}

ToyTeacher::ToyTeacher(double alpha, std::size_t vocab_size) : alpha_(alpha), vocab_size_(vocab_size) {
    if (!(alpha > 0.0)) {
        throw Error("toy teacher alpha must be positive");
    }
}

double ToyTeacher::relevance(const Question& question, const Passage& passage) const {
    return toy_relevance(question.tokens, teacher_passage_tokens(passage), alpha_, vocab_size_);
}

std::vector<std::vector<double>> ToyTeacher::score_batch(std::span<const ScoringRequest> requests) {
    std::vector<std::vector<double>> out;
    out.reserve(requests.size());
    for (const auto& req : requests) {
        std::vector<double> scores;
        scores.reserve(req.passages.size());
        for (const Passage* p : req.passages) {
            scores.push_back(relevance(*req.question, *p));
        }
        out.push_back(std::move(scores));
    }
    return out;
}

std::unique_ptr<Teacher> make_teacher(const TeacherConfig& config, std::size_t vocab_size) {
    config.validate();
    if (config.kind == TeacherKind::toy) {
        return std::make_unique<ToyTeacher>(config.alpha, vocab_size);
    }
    return std::make_unique<ExternalTeacher>(config);
}

std::vector<RelevanceScore> score_candidates(const Question& question, std::span<const std::size_t> candidates,
                                             std::span<const Passage> corpus, Teacher& teacher) {
    if (candidates.empty()) {
        throw Error("no candidates to score for question \"" + question.id + "\"");
    }
    ScoringRequest req{&question, {}, question.id};
    for (std::size_t c : candidates) {
        req.passages.push_back(&corpus[c]);
    }
    auto scores = teacher.score_batch(std::span<const ScoringRequest>(&req, 1)).at(0);
    std::vector<RelevanceScore> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out.push_back({candidates[i], scores.at(i)});
    }
    return out;
}

namespace protocol {

nlohmann::ordered_json make_request(const Question& question, std::span<const Passage* const> passages) {
    nlohmann::ordered_json req;
    req["v"] = kVersion;
    req["qid"] = question.id;
    req["question"] = question.text;
    auto list = nlohmann::ordered_json::array();
    for (const Passage* p : passages) {
        list.push_back(nlohmann::ordered_json{{"id", p->id}, {"title", p->title}, {"text", p->text}});
    }
    req["passages"] = std::move(list);
    return req;
}

Reply parse_reply(std::string_view line) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ProtocolError("teacher reply is not a JSON object");
    }
    auto v = j.find("v");
    if (v == j.end() || !v->is_number_integer() || v->get<int>() != kVersion) {
        throw ProtocolError("teacher reply has missing or unsupported protocol version");
    }
    auto qid = j.find("qid");
    if (qid == j.end() || !qid->is_string()) {
        throw ProtocolError("teacher reply is missing qid");
    }
    if (auto err = j.find("error"); err != j.end()) {
        throw ProtocolError("teacher reported an error for \"" + qid->get<std::string>() + "\": " + err->dump());
    }
    auto scores = j.find("scores");
    if (scores == j.end() || !scores->is_array()) {
        throw ProtocolError("teacher reply is missing scores");
    }
    Reply reply{qid->get<std::string>(), {}};
    for (const auto& s : *scores) {
        if (!s.is_number()) {
            throw ProtocolError("teacher score is not a number");
        }
        double value = s.get<double>();
        if (!std::isfinite(value) || value > 0.0) {
            throw ProtocolError("teacher score must be a finite log-probability");
        }
        reply.scores.push_back(value);
    }
    return reply;
}

} // namespace protocol

// ---------------------------------------------------------------------------

struct ExternalTeacher::Process {
    pid_t pid = -1;
    int to_child = -1;
    int from_child = -1;
};

namespace {

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

} // namespace

ExternalTeacher::ExternalTeacher(TeacherConfig config) : config_(std::move(config)) {
    config_.validate();
    std::signal(SIGPIPE, SIG_IGN);
}

ExternalTeacher::~ExternalTeacher() { stop(); }

void ExternalTeacher::ensure_started() {
    if (process_) {
        return;
    }
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0) {
        throw TeacherUnavailable(std::string("pipe: ") + std::strerror(errno));
    }
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw TeacherUnavailable(std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> argv;
    for (auto& arg : config_.command) {
        argv.push_back(arg.data());
    }
    argv.push_back(nullptr);

    pid_t pid = fork();
    if (pid < 0) {
        throw TeacherUnavailable(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execvp(argv[0], argv.data());
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
    fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
    process_ = std::make_unique<Process>(Process{pid, in_pipe[1], out_pipe[0]});
    read_buffer_.clear();
}

void ExternalTeacher::stop() {
    if (!process_) {
        return;
    }
    close(process_->to_child);
    close(process_->from_child);
    kill(process_->pid, SIGTERM);
    waitpid(process_->pid, nullptr, 0);
    process_.reset();
    read_buffer_.clear();
}

void ExternalTeacher::send_line(const std::string& line) {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
        auto n = write(process_->to_child, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw TeacherUnavailable(std::string("teacher write failed: ") + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

std::string ExternalTeacher::read_line(std::int64_t deadline_ms) {
    for (;;) {
        if (auto nl = read_buffer_.find('\n'); nl != std::string::npos) {
            std::string line = read_buffer_.substr(0, nl);
            read_buffer_.erase(0, nl + 1);
            return line;
        }
        auto remaining = deadline_ms - now_ms();
        if (remaining <= 0) {
            throw TeacherUnavailable("teacher timed out");
        }
        pollfd pfd{process_->from_child, POLLIN, 0};
        int rc = poll(&pfd, 1, static_cast<int>(remaining));
        if (rc < 0 && errno == EINTR) {
            continue;
        }
        if (rc == 0) {
            throw TeacherUnavailable("teacher timed out");
        }
        char buf[4096];
        auto n = read(process_->from_child, buf, sizeof(buf));
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            throw TeacherUnavailable("teacher closed its output");
        }
        read_buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

std::vector<std::vector<double>> ExternalTeacher::score_batch(std::span<const ScoringRequest> requests) {
    // Requests completed by an earlier, partially failed call are reused.
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (!completed_.contains(requests[i].key)) {
            pending.push_back(i);
        }
    }
    try {
        if (!pending.empty()) {
            ensure_started();
        }
        std::map<std::string, std::size_t> in_flight; // qid -> request position
        std::size_t next = 0;
        const auto deadline = now_ms() + config_.timeout_ms;
        while (next < pending.size() || !in_flight.empty()) {
            while (next < pending.size() && in_flight.size() < config_.max_in_flight) {
                const auto& req = requests[pending[next]];
                if (in_flight.contains(req.question->id)) {
                    break;
                }
                send_line(protocol::make_request(*req.question, req.passages).dump());
                in_flight.emplace(req.question->id, pending[next]);
                ++next;
            }
            auto reply = protocol::parse_reply(read_line(deadline));
            auto it = in_flight.find(reply.qid);
            if (it == in_flight.end()) {
                throw ProtocolError("teacher replied for unknown qid \"" + reply.qid + "\"");
            }
            const auto& req = requests[it->second];
            if (reply.scores.size() != req.passages.size()) {
                throw ProtocolError("teacher returned " + std::to_string(reply.scores.size()) + " scores for " +
                                    std::to_string(req.passages.size()) + " passages");
            }
            completed_[req.key] = std::move(reply.scores);
            in_flight.erase(it);
        }
    } catch (const Error&) {
        // Unknown state on the pipe; start clean next time.
        stop();
        throw;
    }
    std::vector<std::vector<double>> out;
    out.reserve(requests.size());
    for (const auto& req : requests) {
        out.push_back(completed_.at(req.key));
    }
    for (const auto& req : requests) {
        completed_.erase(req.key);
    }
    return out;
}

} // namespace autoret
