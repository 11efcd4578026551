#include <doctest.h>

#include <sstream>

#include "autoret/encoder.hpp"
#include "support.hpp"

using namespace autoret;

namespace {

const EncoderDims kSmall{7, 4, 5, 3};

} // namespace

TEST_CASE("zero parameters encode to zero") {
    auto p = EncoderParams<double>::zeros(kSmall);
    TokenSeq t{1, 2, 3};
    CHECK(encode<double>(t, Side::question, p).isZero(0));
    CHECK(encode<double>(t, Side::passage, p).isZero(0));
}

TEST_CASE("single token pools to its embedding row") {
    auto p = testing::random_params<double>(kSmall, 1);
    TokenSeq t{5};
    auto act = forward<double>(t, Side::question, p);
    CHECK(act.pooled == p.question.embeddings.row(5).transpose());
}

TEST_CASE("encode rejects empty and out-of-range input") {
    auto p = testing::random_params<double>(kSmall, 1);
    CHECK_THROWS_AS(encode<double>(TokenSeq{}, Side::question, p), Error);
    CHECK_THROWS_AS(encode<double>(TokenSeq{7}, Side::question, p), Error);
    CHECK_THROWS_AS(encode<double>(TokenSeq{-1}, Side::passage, p), Error);
}

TEST_CASE("dropout is seeded and eval mode is deterministic") {
    auto p = testing::random_params<float>({50, 32, 8, 4}, 2);
    TokenSeq t{4, 9, 11};
    auto a = encode<float>(t, Side::question, p, DropoutSpec::training(42));
    auto b = encode<float>(t, Side::question, p, DropoutSpec::training(42));
    CHECK(a == b);
    auto e1 = encode<float>(t, Side::question, p);
    auto e2 = encode<float>(t, Side::question, p);
    CHECK(e1 == e2);
    auto act = forward<float>(t, Side::question, p, DropoutSpec::training(42));
    CHECK(act.mask.size() == 32);
    CHECK((act.mask.array() == 0).any());
}

TEST_CASE("score_pair") {
    Eigen::Vector2d a(1, 0), b(0, 1), c(1, 2), d(3, 4);
    CHECK(score_pair(a, b) == 0.0);
    CHECK(score_pair(c, d) == 11.0);
    std::mt19937_64 rng(5);
    Eigen::VectorXd x(6), y(6);
    for (int i = 0; i < 6; ++i) {
        x(i) = uniform(rng, -1, 1);
        y(i) = uniform(rng, -1, 1);
    }
    CHECK(score_pair(x, y) == score_pair(y, x));
    Eigen::VectorXd two = Eigen::VectorXd::Ones(2), three = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(score_pair(two, three), Error);
}

TEST_CASE("backward: zero upstream, last bias, missing cache") {
    auto p = testing::random_params<double>(kSmall, 3);
    TokenSeq t{1, 4};
    auto act = forward<double>(t, Side::passage, p);
    auto g = GradientBuffer<double>::zeros(kSmall);
    backward(act, Eigen::Vector3d::Zero(), p, g);
    CHECK(squared_norm(g) == 0.0);

    Eigen::Vector3d up(0.5, -1.0, 2.0);
    backward(act, up, p, g);
    CHECK(g.passage.b2 == up);
    CHECK(g.question.b2.isZero(0));

    Activation<double> empty;
    CHECK_THROWS_AS(backward(empty, up, p, g), Error);
}

TEST_CASE("backward matches finite differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = testing::random_params<double>(kSmall, 100 + trial);
        const Side side = trial % 2 ? Side::passage : Side::question;
        auto tokens = testing::random_tokens(rng, 1 + trial % 4, kSmall.vocab);
        const auto drop = trial % 3 == 0 ? DropoutSpec::training(trial, 0.3) : DropoutSpec::eval();
        Eigen::Vector3d c(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));

        auto g = GradientBuffer<double>::zeros(kSmall);
        backward(forward<double>(tokens, side, p, drop), c, p, g);
        auto loss = [&] { return c.dot(encode<double>(tokens, side, p, drop)); };
        CHECK(testing::max_fd_error(p, g, loss) < 1e-4);
    }
}

TEST_CASE("towers are independent") {
    auto p = testing::random_params<double>(kSmall, 4);
    TokenSeq t{2, 3, 6};
    auto passage_before = encode<double>(t, Side::passage, p);
    TowerParams<double>::visit(p.question, [](auto& m) { m.array() += 0.25; });
    CHECK(encode<double>(t, Side::passage, p) == passage_before);
    auto question_before = encode<double>(t, Side::question, p);
    TowerParams<double>::visit(p.passage, [](auto& m) { m.array() -= 0.5; });
    CHECK(encode<double>(t, Side::question, p) == question_before);
}

TEST_CASE("initialization ranges") {
    EncoderDims dims{30, 16, 12, 8};
    auto p = init_params<float>(dims, 9);
    CHECK(p == init_params<float>(dims, 9));
    CHECK_FALSE(p == init_params<float>(dims, 10));
    CHECK(p.question.embeddings.cwiseAbs().maxCoeff() <= 0.1F);
    const float l1 = std::sqrt(6.0F / (16 + 12));
    CHECK(p.question.w1.cwiseAbs().maxCoeff() <= l1);
    CHECK(p.passage.b1.isZero(0));
    CHECK(p.passage.b2.isZero(0));
    CHECK_FALSE(p.question.embeddings == p.passage.embeddings);
}

TEST_CASE("parameter serialization round-trips bitwise") {
    auto p = init_params<float>({25, 6, 5, 4}, 12);
    std::stringstream buf;
    write_params(buf, p);
    auto q = read_params(buf);
    CHECK(q == p);

    std::stringstream again;
    write_params(again, q);
    std::stringstream first;
    write_params(first, p);
    CHECK(again.str() == first.str());

    std::string bytes = first.str();
    bytes[0] = 9;
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(read_params(bad), FormatError);
}
