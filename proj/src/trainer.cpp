#include "autoret/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <future>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "autoret/distill.hpp"
#include "autoret/error.hpp"
#include "autoret/rng.hpp"

namespace autoret {

namespace {

std::vector<std::size_t> parse_counts(std::string_view text) {
    std::vector<std::size_t> out;
    while (!text.empty()) {
        auto comma = text.find(',');
        auto field = text.substr(0, comma);
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
            throw UsageError("bad count \"" + std::string(field) + "\" in candidate mode");
        }
        out.push_back(v);
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    }
    return out;
}

} // namespace

CandidateMode CandidateMode::parse(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw UsageError("candidate mode \"" + std::string(text) + "\" must look like kind:counts");
    }
    auto kind = text.substr(0, colon);
    auto counts = parse_counts(text.substr(colon + 1));
    CandidateMode mode;
    if (kind == "topk" && counts.size() == 1) {
        mode = topk(counts[0]);
    } else if (kind == "mix" && counts.size() == 3) {
        mode = mix(counts[0], counts[1], counts[2]);
    } else if (kind == "uniform" && counts.size() == 1) {
        mode = mix(0, 0, counts[0]);
    } else if (kind == "inbatch" && counts.size() == 2) {
        mode = in_batch(counts[0], counts[1]);
    } else {
        throw UsageError("unknown candidate mode \"" + std::string(text) + "\"");
    }
    if (mode.k == 0) {
        throw UsageError("candidate mode \"" + std::string(text) + "\" selects no passages");
    }
    return mode;
}

std::string CandidateMode::str() const {
    switch (kind) {
    case Kind::topk:
        return "topk:" + std::to_string(k);
    case Kind::mix:
        return "mix:" + std::to_string(positives) + "," + std::to_string(negatives) + "," + std::to_string(uniform);
    case Kind::in_batch:
        return "inbatch:" + std::to_string(positives) + "," + std::to_string(negatives);
    }
    return {};
}

void TrainerConfig::validate() const {
    if (!(tau > 0.0)) {
        throw UsageError("tau must be positive");
    }
    if (batch_size == 0 || candidates.k == 0) {
        throw UsageError("batch_size and K must be at least 1");
    }
    if (warmup_steps > total_steps) {
        throw UsageError("warmup_steps exceeds total_steps");
    }
    if (refresh_every == 0 || checkpoint_every == 0) {
        throw UsageError("refresh and checkpoint cadences must be at least 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw UsageError("dropout must lie in [0, 1)");
    }
    if (num_shards == 0 || workers == 0) {
        throw UsageError("num_shards and workers must be at least 1");
    }
    if (!(peak_lr >= 0.0)) {
        throw UsageError("peak_lr must be non-negative");
    }
    if (dims.d_emb == 0 || dims.d_hidden == 0 || dims.d_out == 0) {
        throw UsageError("encoder dimensions must be positive");
    }
}

std::string StepReport::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["loss"] = loss;
    j["lr"] = lr;
    j["grad_norm"] = grad_norm;
    j["index_version"] = index_version;
    j["ms"] = ms;
    if (skipped) {
        j["skipped"] = true;
    }
    return j.dump();
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t question_seed(std::uint64_t seed, std::uint64_t step, const std::string& qid) {
    return mix_seed(mix_seed(seed, step), hash_string(qid));
}

std::vector<std::size_t> gold_positions(const Question& q, const CandidateContext& ctx) {
    std::vector<std::size_t> out;
    for (const auto& pid : q.gold) {
        auto it = ctx.ids->find(pid);
        if (it == ctx.ids->end()) {
            throw Error("question \"" + q.id + "\" names unknown gold passage \"" + pid + "\"");
        }
        out.push_back(it->second);
    }
    return out;
}

// P gold passages then N best BM25 non-gold passages, then U uniform draws
// without replacement from whatever is left.
std::vector<std::size_t> mix_candidates(const Question& q, const CandidateMode& mode, const CandidateContext& ctx) {
    const auto m = ctx.corpus.size();
    if (mode.needs_gold() && q.gold.empty()) {
        throw Error("candidate mode " + mode.str() + " needs gold passages but question \"" + q.id + "\" has none");
    }
    if (mode.positives + mode.negatives + mode.uniform > m) {
        throw Error("candidate mode " + mode.str() + " asks for more passages than the corpus holds");
    }
    std::vector<std::size_t> chosen;
    std::unordered_set<std::size_t> used;
    const auto gold = mode.needs_gold() ? gold_positions(q, ctx) : std::vector<std::size_t>{};
    for (std::size_t i = 0; i < std::min(mode.positives, gold.size()); ++i) {
        if (used.insert(gold[i]).second) {
            chosen.push_back(gold[i]);
        }
    }
    if (mode.negatives > 0) {
        if (ctx.bm25 == nullptr) {
            throw Error("hard negatives need a BM25 index");
        }
        std::unordered_set<std::size_t> gold_set(gold.begin(), gold.end());
        std::size_t taken = 0;
        for (auto [pos, score] : ctx.bm25->rank(q.tokens, mode.negatives + gold.size())) {
            if (taken == mode.negatives) {
                break;
            }
            if (!gold_set.contains(pos) && used.insert(pos).second) {
                chosen.push_back(pos);
                ++taken;
            }
        }
    }
    if (mode.uniform > 0) {
        std::mt19937_64 rng(mix_seed(question_seed(ctx.seed, ctx.step, q.id), 0x756e69));
        std::size_t taken = 0;
        while (taken < mode.uniform && used.size() < m) {
            auto pos = static_cast<std::size_t>(uniform_index(rng, m));
            if (used.insert(pos).second) {
                chosen.push_back(pos);
                ++taken;
            }
        }
    }
    return chosen;
}

} // namespace

std::vector<std::vector<std::size_t>> compose_candidates(std::span<const Question* const> batch,
                                                         std::span<const VectorXf> query_embeddings,
                                                         const CandidateMode& mode, const CandidateContext& ctx) {
    std::vector<std::vector<std::size_t>> out(batch.size());
    switch (mode.kind) {
    case CandidateMode::Kind::topk:
        if (ctx.index == nullptr) {
            throw Error("top-K candidates need an index");
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            for (const auto& hit : ctx.index->search(query_embeddings[i], mode.k)) {
                out[i].push_back(hit.passage);
            }
        }
        break;
    case CandidateMode::Kind::mix:
        for (std::size_t i = 0; i < batch.size(); ++i) {
            out[i] = mix_candidates(*batch[i], mode, ctx);
        }
        break;
    case CandidateMode::Kind::in_batch: {
        auto per_question = CandidateMode::mix(mode.positives, mode.negatives, 0);
        std::vector<std::size_t> pooled;
        std::unordered_set<std::size_t> seen;
        for (const Question* q : batch) {
            for (auto pos : mix_candidates(*q, per_question, ctx)) {
                if (seen.insert(pos).second) {
                    pooled.push_back(pos);
                }
            }
        }
        std::fill(out.begin(), out.end(), pooled);
        break;
    }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::vector<double> to_std(const Vector<T>& v) {
    return {v.data(), v.data() + v.size()};
}

std::vector<std::vector<double>> score_with_retry(Teacher& teacher, std::span<const ScoringRequest> requests) {
    try {
        return teacher.score_batch(requests);
    } catch (const Error&) {
        return teacher.score_batch(requests);
    }
}

} // namespace

StepReport train_step(std::span<const Question* const> batch, TrainerState& state, const TrainerConfig& config,
                      const CandidateContext& ctx, Teacher& teacher, std::vector<CandidateSet>* trace) {
    if (batch.empty()) {
        throw Error("empty training batch");
    }
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t step = state.step + 1;
    CandidateContext step_ctx = ctx;
    step_ctx.step = step;

    // Step 1: retrieve with the current question tower against stale rows.
    std::vector<VectorXf> queries;
    queries.reserve(batch.size());
    for (const Question* q : batch) {
        queries.push_back(encode<float>(q->tokens, Side::question, state.params));
    }
    auto candidates = compose_candidates(batch, queries, config.candidates, step_ctx);

    // Step 3: teacher relevance for every candidate, one request per question.
    std::vector<ScoringRequest> requests;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ScoringRequest req{batch[i], {}, batch[i]->id + "|" + std::to_string(ctx.index ? ctx.index->version() : 0) +
                                             "|" + std::to_string(step)};
        for (auto pos : candidates[i]) {
            req.passages.push_back(&ctx.corpus[pos]);
        }
        requests.push_back(std::move(req));
    }
    const auto teacher_scores = score_with_retry(teacher, requests);

    // Steps 2 and 4: fresh scores, both distributions, KL and its gradient.
    const auto dims = state.params.dims();
    const std::size_t workers = std::min(config.workers, batch.size());
    std::vector<GradientBuffer<float>> grads(workers, GradientBuffer<float>::zeros(dims));
    std::vector<double> losses(batch.size(), 0.0);
    std::vector<DistillOutcome<float>> outcomes(batch.size());
    const auto weight = 1.0F / static_cast<float>(batch.size());

    auto run_question = [&](std::size_t i, GradientBuffer<float>& g) {
        const Question& q = *batch[i];
        const auto qseed = question_seed(config.seed, step, q.id);
        DistillInstance<float> inst;
        inst.question = q.tokens;
        inst.teacher_log_probs.resize(static_cast<Eigen::Index>(candidates[i].size()));
        for (std::size_t c = 0; c < candidates[i].size(); ++c) {
            const auto pos = candidates[i][c];
            inst.candidates.push_back(ctx.corpus[pos].encoder_input());
            inst.teacher_log_probs(static_cast<Eigen::Index>(c)) = static_cast<float>(teacher_scores[i].at(c));
            if (config.dropout > 0.0) {
                inst.candidate_dropout.push_back(DropoutSpec::training(mix_seed(qseed, pos + 1), config.dropout));
            }
        }
        if (config.dropout > 0.0) {
            inst.question_dropout = DropoutSpec::training(qseed, config.dropout);
        }
        outcomes[i] = distill_objective<float>(inst, state.params, static_cast<float>(config.tau), weight, &g);
        losses[i] = outcomes[i].loss;
    };

    if (workers <= 1) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            run_question(i, grads[0]);
        }
    } else {
        // Contiguous chunks per worker; buffers are summed in worker order.
        std::vector<std::future<void>> jobs;
        const std::size_t chunk = (batch.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            jobs.push_back(std::async(std::launch::async, [&, w] {
                for (std::size_t i = w * chunk; i < std::min(batch.size(), (w + 1) * chunk); ++i) {
                    run_question(i, grads[w]);
                }
            }));
        }
        for (auto& j : jobs) {
            j.get();
        }
        for (std::size_t w = 1; w < workers; ++w) {
            zip_tensors(grads[0], grads[w], [](auto& a, const auto& b) { a += b; });
        }
    }

    StepReport report;
    report.step = step;
    report.loss = 0.0;
    for (double l : losses) {
        report.loss += l;
    }
    report.loss /= static_cast<double>(batch.size());
    report.grad_norm = std::sqrt(squared_norm(grads[0]));
    report.lr = lr_at(step, config.warmup_steps, config.total_steps, config.peak_lr);
    report.index_version = ctx.index ? ctx.index->version() : 0;
    report.skipped = !adam_update(state.params, grads[0], state.adam, report.lr, config.adam);
    state.step = step;

    if (trace != nullptr) {
        trace->clear();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            CandidateSet set;
            set.question_id = batch[i]->id;
            set.passages = candidates[i];
            for (auto pos : candidates[i]) {
                set.stale_scores.push_back(ctx.index ? static_cast<double>(ctx.index->row(pos).dot(queries[i])) : 0.0);
            }
            set.fresh_scores = to_std(outcomes[i].fresh_scores);
            set.teacher_log_probs = teacher_scores[i];
            set.student = to_std(outcomes[i].student);
            set.teacher = to_std(outcomes[i].teacher);
            trace->push_back(std::move(set));
        }
    }
    report.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::optional<DevPoint> best_dev_point(std::span<const DevPoint> history) {
    std::optional<DevPoint> best;
    for (const auto& p : history) {
        if (!best || p.metric > best->metric) {
            best = p;
        }
    }
    return best;
}

RetrievalRun retrieve(std::span<const Question> questions, std::span<const Passage> corpus,
                      const EncoderParams<float>& params, const EmbeddingIndex& index, std::size_t depth) {
    RetrievalRun run;
    run.index_version = index.version();
    depth = std::min(depth, index.size());
    for (const auto& q : questions) {
        QuestionRanking ranking{q.id, {}};
        for (const auto& hit : index.search(encode<float>(q.tokens, Side::question, params), depth)) {
            ranking.ranking.push_back({corpus[hit.passage].id, hit.score});
        }
        canonicalize(ranking.ranking);
        run.questions.push_back(std::move(ranking));
    }
    return run;
}

RetrievalRun retrieve_bm25(std::span<const Question> questions, std::span<const Passage> corpus,
                           const Bm25Index& bm25, std::size_t depth) {
    RetrievalRun run;
    for (const auto& q : questions) {
        QuestionRanking ranking{q.id, {}};
        for (auto [pos, score] : bm25.rank(q.tokens, depth)) {
            ranking.ranking.push_back({corpus[pos].id, score});
        }
        canonicalize(ranking.ranking);
        run.questions.push_back(std::move(ranking));
    }
    return run;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainerConfig config, std::span<const Passage> corpus, std::vector<Question> train_questions,
                 Teacher& teacher, TrainerState state, std::optional<EmbeddingIndex> index)
    : config_(std::move(config)), corpus_(corpus), train_(std::move(train_questions)), teacher_(teacher),
      state_(std::move(state)), ids_(index_by_id(corpus)) {
    config_.validate();
    if (train_.empty()) {
        throw Error("no training questions");
    }
    if (state_.params.dims() != config_.dims) {
        throw Error("encoder parameters do not match the configured dimensions");
    }
    if (config_.candidates.kind == CandidateMode::Kind::topk && config_.candidates.k > corpus_.size()) {
        throw Error("K exceeds the number of passages");
    }
    if (index) {
        if (index->size() != corpus_.size() || index->dim() != config_.dims.d_out) {
            throw Error("index does not match the corpus or encoder dimensions");
        }
        index_.publish(std::move(*index));
    } else {
        index_.publish(build_index(corpus_, state_.params, config_.num_shards));
    }
    if (config_.candidates.negatives > 0) {
        bm25_ = std::make_unique<Bm25Index>(corpus_);
    }
}

void Trainer::set_dev(std::vector<Question> dev, QrelSet qrels) {
    dev_ = std::move(dev);
    dev_qrels_ = std::move(qrels);
}

std::vector<std::size_t> Trainer::batch_for_step(std::uint64_t step) const {
    const std::size_t n = train_.size();
    std::vector<std::size_t> batch;
    std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::size_t> order(n);
    for (std::size_t b = 0; b < config_.batch_size; ++b) {
        const std::uint64_t pos = step * config_.batch_size + b;
        const std::uint64_t epoch = pos / n;
        if (epoch != cached_epoch) {
            for (std::size_t i = 0; i < n; ++i) {
                order[i] = i;
            }
            std::mt19937_64 rng(mix_seed(config_.seed, 0x65706f6368ULL + epoch));
            shuffle(order.begin(), order.end(), rng);
            cached_epoch = epoch;
        }
        batch.push_back(order[pos % n]);
    }
    return batch;
}

StepReport Trainer::step() {
    auto snapshot = index_.snapshot();
    std::vector<const Question*> batch;
    for (auto i : batch_for_step(state_.step)) {
        batch.push_back(&train_[i]);
    }
    CandidateContext ctx{corpus_, snapshot.get(), bm25_.get(), &ids_, config_.seed, state_.step};
    auto report = train_step(batch, state_, config_, ctx, teacher_);
    if (state_.step % config_.refresh_every == 0) {
        refresh();
    }
    return report;
}

void Trainer::refresh() {
    auto current = index_.snapshot();
    index_.publish(refresh_index(corpus_, state_.params, *current));
}

double Trainer::evaluate_dev() const {
    if (dev_.empty()) {
        return 0.0;
    }
    auto fresh = build_index(corpus_, state_.params, config_.num_shards);
    const std::size_t k = std::min(config_.selection_k, corpus_.size());
    auto run = retrieve(dev_, corpus_, state_.params, fresh, k);
    const std::size_t ks[] = {k};
    return topk_accuracy(run, dev_qrels_, corpus_, ks).at(k);
}

void Trainer::run(const Hooks& hooks, std::optional<std::uint64_t> stop_at) {
    const auto end = std::min(config_.total_steps, stop_at.value_or(config_.total_steps));
    while (state_.step < end) {
        auto report = step();
        if (hooks.on_step) {
            hooks.on_step(report);
        }
        if (state_.step % config_.checkpoint_every == 0 || state_.step == config_.total_steps) {
            if (!dev_.empty()) {
                dev_history_.push_back({state_.step, evaluate_dev()});
            }
            if (hooks.on_checkpoint) {
                hooks.on_checkpoint(*this);
            }
        }
    }
}

} // namespace autoret
