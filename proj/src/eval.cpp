#include "autoret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "autoret/error.hpp"

namespace autoret {

std::vector<std::string> normalize_answer_words(std::string_view text) { return split_words(text); }

namespace {

bool contains_sequence(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) {
        return false;
    }
    return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

} // namespace

bool contains_answer(const Passage& passage, std::span<const std::string> answers) {
    auto words = normalize_answer_words(passage.text);
    for (const auto& answer : answers) {
        if (contains_sequence(words, normalize_answer_words(answer))) {
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------

void canonicalize(std::vector<RankedPassage>& ranking) {
    std::sort(ranking.begin(), ranking.end(), [](const RankedPassage& a, const RankedPassage& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.pid < b.pid;
    });
}

void RetrievalRun::validate() const {
    for (const auto& q : questions) {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < q.ranking.size(); ++i) {
            const auto& r = q.ranking[i];
            if (!seen.insert(r.pid).second) {
                throw FormatError("run for \"" + q.qid + "\" lists \"" + r.pid + "\" twice");
            }
            if (i > 0) {
                const auto& prev = q.ranking[i - 1];
                if (prev.score < r.score || (prev.score == r.score && prev.pid > r.pid)) {
                    throw FormatError("run for \"" + q.qid + "\" is not ordered by (score desc, id asc)");
                }
            }
        }
    }
}

void write_run(const std::filesystem::path& path, const RetrievalRun& run) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& q : run.questions) {
        nlohmann::ordered_json j;
        j["qid"] = q.qid;
        j["checkpoint_step"] = run.checkpoint_step;
        j["index_version"] = run.index_version;
        auto ranking = nlohmann::ordered_json::array();
        for (const auto& r : q.ranking) {
            ranking.push_back(nlohmann::ordered_json{{"pid", r.pid}, {"score", r.score}});
        }
        j["ranking"] = std::move(ranking);
        out << j.dump() << '\n';
    }
}

RetrievalRun read_run(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    RetrievalRun run;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            QuestionRanking q;
            q.qid = j.at("qid").get<std::string>();
            run.checkpoint_step = j.value("checkpoint_step", std::uint64_t{0});
            run.index_version = j.value("index_version", std::uint64_t{0});
            for (const auto& r : j.at("ranking")) {
                q.ranking.push_back({r.at("pid").get<std::string>(), r.at("score").get<double>()});
            }
            run.questions.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    run.validate();
    return run;
}

void QrelSet::add_answers(const std::string& qid, std::vector<std::string> answers) {
    auto& j = judgments_[qid];
    j.answers.insert(j.answers.end(), std::make_move_iterator(answers.begin()), std::make_move_iterator(answers.end()));
}

void QrelSet::add_grade(const std::string& qid, const std::string& pid, int grade) {
    auto& j = judgments_[qid];
    if (grade > 0) {
        j.grades[pid] = grade;
    }
}

QrelSet QrelSet::from_questions(std::span<const Question> questions) {
    QrelSet qrels;
    for (const auto& q : questions) {
        if (!q.answers.empty()) {
            qrels.add_answers(q.id, q.answers);
        } else {
            qrels.judgments_[q.id];
            for (const auto& pid : q.gold) {
                qrels.add_grade(q.id, pid, 1);
            }
        }
    }
    return qrels;
}

QrelSet QrelSet::load_graded(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    QrelSet qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string qid;
        std::string pid;
        std::string grade;
        if (!std::getline(fields, qid, '\t') || !std::getline(fields, pid, '\t') || !std::getline(fields, grade)) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected qid<TAB>pid<TAB>grade");
        }
        try {
            qrels.judgments_[qid];
            qrels.add_grade(qid, pid, std::stoi(grade));
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad grade \"" + grade + "\"");
        }
    }
    return qrels;
}

const QrelSet::Judgment* QrelSet::find(const std::string& qid) const {
    auto it = judgments_.find(qid);
    return it == judgments_.end() ? nullptr : &it->second;
}

RelevanceOracle::RelevanceOracle(const QrelSet& /*qrels*/, std::span<const Passage> corpus)
    : corpus_(corpus), by_id_(index_by_id(corpus)) {}

bool RelevanceOracle::is_hit(const QrelSet::Judgment& judgment, const std::string& pid) const {
    if (!judgment.grades.empty()) {
        return judgment.grades.contains(pid);
    }
    if (judgment.answers.empty()) {
        return false;
    }
    auto it = by_id_.find(pid);
    if (it == by_id_.end()) {
        throw Error("run references unknown passage \"" + pid + "\"");
    }
    return contains_answer(corpus_[it->second], judgment.answers);
}

// ---------------------------------------------------------------------------

namespace {

void require_judged(const RetrievalRun& run, const QrelSet& qrels) {
    std::string missing;
    for (const auto& q : run.questions) {
        if (qrels.find(q.qid) == nullptr) {
            missing += (missing.empty() ? "" : ", ") + q.qid;
        }
    }
    if (!missing.empty()) {
        throw Error("questions missing from relevance judgments: " + missing);
    }
}

} // namespace

std::map<std::size_t, double> topk_accuracy(const RetrievalRun& run, const QrelSet& qrels,
                                            std::span<const Passage> corpus, std::span<const std::size_t> ks) {
    if (!std::is_sorted(ks.begin(), ks.end())) {
        throw Error("cut-offs must be sorted ascending");
    }
    require_judged(run, qrels);
    RelevanceOracle oracle(qrels, corpus);
    std::map<std::size_t, double> hits;
    for (auto k : ks) {
        hits[k] = 0.0;
    }
    if (run.questions.empty()) {
        return hits;
    }
    const std::size_t max_k = ks.empty() ? 0 : ks.back();
    for (const auto& q : run.questions) {
        if (q.ranking.size() < max_k) {
            throw Error("ranking for \"" + q.qid + "\" is shorter than " + std::to_string(max_k));
        }
        const auto* judgment = qrels.find(q.qid);
        // Rank of the first hit, or max_k when none.
        std::size_t first = max_k;
        for (std::size_t r = 0; r < max_k; ++r) {
            if (oracle.is_hit(*judgment, q.ranking[r].pid)) {
                first = r;
                break;
            }
        }
        for (auto k : ks) {
            if (first < k) {
                hits[k] += 1.0;
            }
        }
    }
    for (auto& [k, v] : hits) {
        v /= static_cast<double>(run.questions.size());
    }
    return hits;
}

GradedMetric recall_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    require_judged(run, qrels);
    GradedMetric m;
    double total = 0.0;
    for (const auto& q : run.questions) {
        const auto& grades = qrels.find(q.qid)->grades;
        if (grades.empty()) {
            ++m.excluded;
            continue;
        }
        std::size_t found = 0;
        for (std::size_t r = 0; r < std::min(k, q.ranking.size()); ++r) {
            found += grades.contains(q.ranking[r].pid) ? 1 : 0;
        }
        total += static_cast<double>(found) / static_cast<double>(grades.size());
        ++m.evaluated;
    }
    m.value = m.evaluated == 0 ? 0.0 : total / static_cast<double>(m.evaluated);
    return m;
}

GradedMetric ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    require_judged(run, qrels);
    GradedMetric m;
    double total = 0.0;
    for (const auto& q : run.questions) {
        const auto& grades = qrels.find(q.qid)->grades;
        if (grades.empty()) {
            ++m.excluded;
            continue;
        }
        double dcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, q.ranking.size()); ++r) {
            auto it = grades.find(q.ranking[r].pid);
            if (it != grades.end()) {
                dcg += static_cast<double>(it->second) / std::log2(static_cast<double>(r) + 2.0);
            }
        }
        std::vector<int> ideal;
        for (const auto& [pid, g] : grades) {
            ideal.push_back(g);
        }
        std::sort(ideal.rbegin(), ideal.rend());
        double idcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) {
            idcg += static_cast<double>(ideal[r]) / std::log2(static_cast<double>(r) + 2.0);
        }
        total += dcg / idcg;
        ++m.evaluated;
    }
    m.value = m.evaluated == 0 ? 0.0 : total / static_cast<double>(m.evaluated);
    return m;
}

// ---------------------------------------------------------------------------

Bm25Index::Bm25Index(std::span<const Passage> passages, Bm25Params params) : params_(params), passages_(passages) {
    lengths_.reserve(passages.size());
    double total = 0.0;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        std::map<TokenId, std::uint32_t> tf;
        for (const auto* seq : {&passages[i].title_tokens, &passages[i].text_tokens}) {
            for (TokenId t : *seq) {
                ++tf[t];
            }
        }
        const auto len = static_cast<std::uint32_t>(passages[i].title_tokens.size() + passages[i].text_tokens.size());
        lengths_.push_back(len);
        total += len;
        for (auto [t, n] : tf) {
            postings_[t].push_back({i, n});
        }
    }
    avg_length_ = passages.empty() ? 0.0 : total / static_cast<double>(passages.size());
}

double Bm25Index::idf(std::size_t df) const {
    const auto n = static_cast<double>(passages_.size());
    const auto d = static_cast<double>(df);
    return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
}

namespace {

std::vector<TokenId> distinct_terms(std::span<const TokenId> query) {
    std::vector<TokenId> terms(query.begin(), query.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

} // namespace

std::vector<std::pair<std::size_t, double>> Bm25Index::rank(std::span<const TokenId> query, std::size_t k) const {
    std::vector<double> scores(passages_.size(), 0.0);
    for (TokenId term : distinct_terms(query)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const double w = idf(it->second.size());
        for (const auto& post : it->second) {
            const double tf = post.tf;
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[post.passage] / avg_length_);
            scores[post.passage] += w * tf * (params_.k1 + 1.0) / (tf + norm);
        }
    }
    std::vector<std::pair<std::size_t, double>> ranked;
    ranked.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ranked.emplace_back(i, scores[i]);
    }
    auto before = [&](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return passages_[a.first].id < passages_[b.first].id;
    };
    k = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), before);
    ranked.resize(k);
    return ranked;
}

double Bm25Index::score(std::span<const TokenId> query, std::size_t passage) const {
    double s = 0.0;
    for (TokenId term : distinct_terms(query)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        for (const auto& post : it->second) {
            if (post.passage == passage) {
                const double tf = post.tf;
                const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[passage] / avg_length_);
                s += idf(it->second.size()) * tf * (params_.k1 + 1.0) / (tf + norm);
            }
        }
    }
    return s;
}

// ---------------------------------------------------------------------------

void Report::add_row(const std::string& label, const std::vector<std::pair<std::string, double>>& values) {
    for (const auto& [name, v] : values) {
        if (std::find(columns.begin(), columns.end(), name) == columns.end()) {
            columns.push_back(name);
            for (auto& row : rows) {
                row.push_back(std::numeric_limits<double>::quiet_NaN());
            }
        }
    }
    std::vector<double> row(columns.size(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& [name, v] : values) {
        auto c = static_cast<std::size_t>(std::find(columns.begin(), columns.end(), name) - columns.begin());
        row[c] = v;
    }
    row_labels.push_back(label);
    rows.push_back(std::move(row));
}

std::string topk_column(std::size_t k) { return "Top-" + std::to_string(k); }

namespace {

std::string render_table(const Report& report) {
    std::size_t label_width = 4;
    for (const auto& l : report.row_labels) {
        label_width = std::max(label_width, l.size());
    }
    std::ostringstream out;
    if (!report.title.empty()) {
        out << report.title << '\n';
    }
    for (const auto& [k, v] : report.meta) {
        out << "# " << k << ": " << v << '\n';
    }
    out << std::left << std::setw(static_cast<int>(label_width)) << "" ;
    for (const auto& c : report.columns) {
        out << " | " << std::right << std::setw(static_cast<int>(std::max<std::size_t>(c.size(), 6))) << c;
    }
    out << '\n';
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        out << std::left << std::setw(static_cast<int>(label_width)) << report.row_labels[r];
        for (std::size_t c = 0; c < report.columns.size(); ++c) {
            const auto width = static_cast<int>(std::max<std::size_t>(report.columns[c].size(), 6));
            out << " | " << std::right << std::setw(width);
            const double v = report.rows[r][c];
            if (std::isnan(v)) {
                out << "-";
            } else {
                std::ostringstream cell;
                cell << std::fixed << std::setprecision(1) << 100.0 * v;
                out << cell.str();
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string render_json(const Report& report) {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["title"] = report.title;
    j["meta"] = report.meta;
    j["columns"] = report.columns;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        nlohmann::ordered_json row;
        row["label"] = report.row_labels[r];
        nlohmann::ordered_json values = nlohmann::ordered_json::object();
        for (std::size_t c = 0; c < report.columns.size(); ++c) {
            const double v = report.rows[r][c];
            values[report.columns[c]] = std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
        }
        row["metrics"] = std::move(values);
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

} // namespace

std::string render_report(const Report& report, ReportFormat format) {
    return format == ReportFormat::table ? render_table(report) : render_json(report);
}

void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write report to " + path.string());
    }
    out << render_report(report, format);
    if (!out) {
        throw Error("failed writing report to " + path.string());
    }
}

} // namespace autoret
