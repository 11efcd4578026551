#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "autoret/error.hpp"
#include "autoret/eval.hpp"
#include "support.hpp"

using namespace autoret;

namespace {

Passage text_passage(std::string id, std::string text, std::string title = "") {
    Passage p;
    p.id = std::move(id);
    p.title = std::move(title);
    p.text = std::move(text);
    return p;
}

Passage token_passage(std::string id, TokenSeq tokens) {
    Passage p;
    p.id = std::move(id);
    p.text_tokens = std::move(tokens);
    return p;
}

// Ranking "p0".."p{n-1}" with strictly decreasing scores.
QuestionRanking ranked(std::string qid, std::vector<std::string> pids) {
    QuestionRanking q{std::move(qid), {}};
    double s = 0.0;
    for (auto& pid : pids) {
        q.ranking.push_back({std::move(pid), s});
        s -= 1.0;
    }
    return q;
}

std::vector<std::string> filler(std::size_t n, const std::string& prefix = "x") {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(prefix + std::to_string(i));
    }
    return out;
}

} // namespace

TEST_CASE("answer matching") {
    auto p = text_passage("p", "The museum is located in Arlington, Texas.", "Bowling");
    std::vector<std::string> a{"Arlington"};
    CHECK(contains_answer(p, a));
    std::vector<std::string> lower{"arlington"};
    CHECK(contains_answer(text_passage("p", "Arlington,"), lower));
    std::vector<std::string> part{"ton"};
    CHECK_FALSE(contains_answer(text_passage("p", "Arlington"), part));
    std::vector<std::string> phrase{"ARLINGTON   texas!"};
    CHECK(contains_answer(p, phrase));
    std::vector<std::string> reversed{"texas arlington"};
    CHECK_FALSE(contains_answer(p, reversed));
    std::vector<std::string> title{"bowling"};
    CHECK_FALSE(contains_answer(p, title));
    std::vector<std::string> any{"nowhere", "museum"};
    CHECK(contains_answer(p, any));
    CHECK(normalize_answer_words("  Hello,  World! ") == std::vector<std::string>{"hello", "world"});
}

TEST_CASE("top-K accuracy examples") {
    // Gold-id judgments, so no passage text is needed.
    QrelSet qrels;
    qrels.add_grade("a", "gold", 1);
    qrels.add_grade("b", "gold", 1);
    RetrievalRun run;
    auto ra = filler(100);
    ra[2] = "gold";
    auto rb = filler(100);
    rb[49] = "gold";
    run.questions = {ranked("a", ra), ranked("b", rb)};
    std::vector<std::size_t> ks{20, 100};
    auto acc = topk_accuracy(run, qrels, {}, ks);
    CHECK(acc.at(20) == doctest::Approx(0.5));
    CHECK(acc.at(100) == doctest::Approx(1.0));

    auto all = filler(100);
    all[0] = "gold";
    run.questions = {ranked("a", all), ranked("b", all)};
    for (auto [k, v] : topk_accuracy(run, qrels, {}, ks)) {
        CHECK(v == 1.0);
    }
    run.questions = {ranked("a", filler(100)), ranked("b", filler(100))};
    for (auto [k, v] : topk_accuracy(run, qrels, {}, ks)) {
        CHECK(v == 0.0);
    }

    run.questions.push_back(ranked("stray", filler(100)));
    try {
        (void)topk_accuracy(run, qrels, {}, ks);
        FAIL("missing judgment accepted");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("stray") != std::string::npos);
    }
    run.questions.pop_back();
    std::vector<std::size_t> unsorted{100, 20};
    CHECK_THROWS(topk_accuracy(run, qrels, {}, unsorted));
    std::vector<std::size_t> too_deep{101};
    CHECK_THROWS(topk_accuracy(run, qrels, {}, too_deep));
}

TEST_CASE("top-K accuracy in answer mode matches a direct scan") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> words{"red", "green", "blue", "gold", "grey", "pink"};
    std::vector<Passage> corpus;
    for (int i = 0; i < 30; ++i) {
        std::string text;
        for (int w = 0; w < 4; ++w) {
            text += words[rng() % words.size()] + " ";
        }
        corpus.push_back(text_passage("p" + std::to_string(i), text));
    }
    for (int trial = 0; trial < 20; ++trial) {
        QrelSet qrels;
        RetrievalRun run;
        std::vector<std::vector<std::string>> answers;
        for (int q = 0; q < 8; ++q) {
            std::vector<std::string> ans{words[rng() % words.size()] + " " + words[rng() % words.size()]};
            qrels.add_answers("q" + std::to_string(q), ans);
            answers.push_back(ans);
            std::vector<std::string> pids;
            for (const auto& p : corpus) {
                pids.push_back(p.id);
            }
            std::shuffle(pids.begin(), pids.end(), rng);
            pids.resize(10);
            run.questions.push_back(ranked("q" + std::to_string(q), pids));
        }
        std::vector<std::size_t> ks{1, 3, 5, 10};
        auto acc = topk_accuracy(run, qrels, corpus, ks);
        double prev = 0.0;
        for (auto k : ks) {
            // Direct scan: substring search on space-padded text.
            int hits = 0;
            for (std::size_t q = 0; q < run.questions.size(); ++q) {
                bool hit = false;
                for (std::size_t r = 0; r < k; ++r) {
                    const auto& pid = run.questions[q].ranking[r].pid;
                    const auto& text = corpus[std::stoul(pid.substr(1))].text;
                    hit = hit || (" " + text).find(" " + answers[q][0] + " ") != std::string::npos;
                }
                hits += hit ? 1 : 0;
            }
            CHECK(acc.at(k) == doctest::Approx(hits / 8.0));
            CHECK(acc.at(k) >= prev);
            prev = acc.at(k);
        }
    }
}

TEST_CASE("graded metrics") {
    QrelSet qrels;
    qrels.add_grade("q", "rel", 1);
    RetrievalRun run;
    auto r = filler(100);
    r[0] = "rel";
    run.questions = {ranked("q", r)};
    CHECK(ndcg_at_k(run, qrels).value == doctest::Approx(1.0));
    std::swap(r[0], r[1]);
    run.questions = {ranked("q", r)};
    CHECK(ndcg_at_k(run, qrels).value == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(ndcg_at_k(run, qrels).value == doctest::Approx(0.6309).epsilon(1e-4));

    QrelSet two;
    two.add_grade("q", "rel", 1);
    two.add_grade("q", "missing", 1);
    auto rec = recall_at_k(run, two, 100);
    CHECK(rec.value == doctest::Approx(0.5));
    CHECK(rec.evaluated == 1);

    QrelSet graded;
    graded.add_grade("q", "a", 3);
    graded.add_grade("q", "b", 1);
    run.questions = {ranked("q", {"a", "b", "c"})};
    CHECK(ndcg_at_k(run, graded).value == doctest::Approx(1.0));
    run.questions = {ranked("q", {"b", "a", "c"})};
    const double dcg = 1.0 + 3.0 / std::log2(3.0);
    const double ideal = 3.0 + 1.0 / std::log2(3.0);
    CHECK(ndcg_at_k(run, graded).value == doctest::Approx(dcg / ideal));
    CHECK(ndcg_at_k(run, graded).value < 1.0);

    // Answer-only questions carry no relevant ids and are excluded.
    QrelSet mixed;
    mixed.add_grade("q", "a", 1);
    mixed.add_answers("r", {"x"});
    run.questions = {ranked("q", {"a", "b"}), ranked("r", {"a", "b"})};
    auto n = ndcg_at_k(run, mixed);
    CHECK(n.value == doctest::Approx(1.0));
    CHECK(n.evaluated == 1);
    CHECK(n.excluded == 1);
}

TEST_CASE("ndcg stays in [0, 1]") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        QrelSet q;
        auto pids = filler(20, "p");
        for (int i = 0; i < 5; ++i) {
            q.add_grade("q", pids[rng() % 20], 1 + static_cast<int>(rng() % 3));
        }
        std::shuffle(pids.begin(), pids.end(), rng);
        RetrievalRun run;
        run.questions = {ranked("q", pids)};
        auto v = ndcg_at_k(run, q).value;
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
    }
}

TEST_CASE("bm25") {
    std::vector<Passage> two{token_passage("a", {7}), token_passage("b", {8})};
    Bm25Index bm(two);
    TokenSeq q{7};
    CHECK(bm.score(q, 0) == doctest::Approx(0.6931).epsilon(1e-4));
    CHECK(bm.score(q, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bm.score(q, 1) == 0.0);

    TokenSeq absent{99};
    for (auto [pos, s] : bm.rank(absent, 2)) {
        CHECK(s == 0.0);
    }
    // Ties fall back to the passage id.
    auto tied = bm.rank(absent, 2);
    CHECK(two[tied[0].first].id == "a");

    std::vector<Passage> tf{token_passage("a", {7, 3, 4}), token_passage("b", {7, 7, 4}),
                            token_passage("c", {5, 6, 4})};
    Bm25Index tfi(tf);
    CHECK(tfi.score(q, 1) > tfi.score(q, 0));
    TokenSeq dup{7, 7};
    CHECK(tfi.score(dup, 0) == tfi.score(q, 0));
}

TEST_CASE("bm25 does not depend on file order") {
    std::mt19937_64 rng(4);
    auto corpus = testing::random_passages(rng, 60, 12, 40);
    auto shuffled = corpus;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    Bm25Index a(corpus);
    Bm25Index b(shuffled);
    for (int t = 0; t < 20; ++t) {
        auto q = testing::random_tokens(rng, 4, 40);
        auto ra = a.rank(q, 15);
        auto rb = b.rank(q, 15);
        REQUIRE(ra.size() == rb.size());
        for (std::size_t i = 0; i < ra.size(); ++i) {
            CHECK(corpus[ra[i].first].id == shuffled[rb[i].first].id);
            CHECK(ra[i].second == doctest::Approx(rb[i].second).epsilon(1e-12));
        }
        CHECK(a.rank(q, 15) == ra);
    }
}

TEST_CASE("reports") {
    Report r;
    r.title = "dev";
    r.add_row("dense", {{topk_column(20), 0.5}, {topk_column(100), 0.8}});
    r.add_row("bm25", {{topk_column(100), 0.9}});
    CHECK(r.columns == std::vector<std::string>{"Top-20", "Top-100"});
    auto table = render_report(r, ReportFormat::table);
    CHECK(table.find("Top-20") < table.find("Top-100"));
    CHECK(table.find("50.0") != std::string::npos);
    CHECK(table.find("80.0") != std::string::npos);
    CHECK(table.find("-") != std::string::npos);

    auto j = nlohmann::json::parse(render_report(r, ReportFormat::json));
    CHECK(j["schema_version"] == kReportSchemaVersion);
    CHECK(j["columns"][0] == "Top-20");
    CHECK(j["rows"][0]["metrics"]["Top-100"] == 0.8);
    CHECK(j["rows"][1]["metrics"]["Top-20"].is_null());

    testing::TempDir dir("report");
    emit_report(r, ReportFormat::json, dir / "a.json");
    emit_report(r, ReportFormat::json, dir / "b.json");
    CHECK(testing::read_file(dir / "a.json") == testing::read_file(dir / "b.json"));
    CHECK_THROWS_AS(emit_report(r, ReportFormat::table, dir / "no" / "such" / "dir.txt"), Error);
}

TEST_CASE("run files") {
    testing::TempDir dir("run");
    RetrievalRun run;
    run.checkpoint_step = 42;
    run.index_version = 3;
    run.questions = {{"q1", {{"b", 2.5}, {"a", 1.0}, {"c", 1.0}}}, {"q2", {}}};
    run.validate();
    write_run(dir / "r.jsonl", run);
    auto back = read_run(dir / "r.jsonl");
    CHECK(back.checkpoint_step == 42);
    CHECK(back.index_version == 3);
    REQUIRE(back.questions.size() == 2);
    CHECK(back.questions[0].ranking[2].pid == "c");
    CHECK(back.questions[0].ranking[0].score == 2.5);

    std::vector<RankedPassage> messy{{"c", 1.0}, {"a", 1.0}, {"b", 2.0}};
    canonicalize(messy);
    CHECK(messy[0].pid == "b");
    CHECK(messy[1].pid == "a");
    RetrievalRun bad;
    bad.questions = {{"q", {{"a", 1.0}, {"b", 2.0}}}};
    CHECK_THROWS_AS(bad.validate(), FormatError);
    bad.questions = {{"q", {{"a", 1.0}, {"a", 0.5}}}};
    CHECK_THROWS_AS(bad.validate(), FormatError);
}
