#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>

#include "autoret/corpus.hpp"
#include "autoret/error.hpp"
#include "autoret/linalg.hpp"
#include "autoret/rng.hpp"

namespace autoret {

enum class Side { question, passage };

inline const char* to_string(Side side) { return side == Side::question ? "question" : "passage"; }

struct EncoderDims {
    std::size_t vocab = 0;
    std::size_t d_emb = 64;
    std::size_t d_hidden = 64;
    std::size_t d_out = 64;

    friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// One tower of the dual encoder: embedding bag, affine, tanh, affine.
template <typename Scalar>
struct TowerParams {
    Matrix<Scalar> embeddings; // vocab x d_emb
    Matrix<Scalar> w1;         // d_emb x d_hidden
    Vector<Scalar> b1;         // d_hidden
    Matrix<Scalar> w2;         // d_hidden x d_out
    Vector<Scalar> b2;         // d_out

    static TowerParams zeros(const EncoderDims& dims) {
        auto n = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
        return {Matrix<Scalar>::Zero(n(dims.vocab), n(dims.d_emb)), Matrix<Scalar>::Zero(n(dims.d_emb), n(dims.d_hidden)),
                Vector<Scalar>::Zero(n(dims.d_hidden)), Matrix<Scalar>::Zero(n(dims.d_hidden), n(dims.d_out)),
                Vector<Scalar>::Zero(n(dims.d_out))};
    }

    [[nodiscard]] EncoderDims dims() const {
        return {static_cast<std::size_t>(embeddings.rows()), static_cast<std::size_t>(embeddings.cols()),
                static_cast<std::size_t>(w1.cols()), static_cast<std::size_t>(w2.cols())};
    }

    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn) {
        fn(self.embeddings);
        fn(self.w1);
        fn(self.b1);
        fn(self.w2);
        fn(self.b2);
    }

    template <typename Other>
    TowerParams<Other> cast() const {
        return {embeddings.template cast<Other>(), w1.template cast<Other>(), b1.template cast<Other>(),
                w2.template cast<Other>(), b2.template cast<Other>()};
    }

    friend bool operator==(const TowerParams& a, const TowerParams& b) {
        auto same = [](const auto& x, const auto& y) {
            return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        };
        return same(a.embeddings, b.embeddings) && same(a.w1, b.w1) && same(a.b1, b.b1) && same(a.w2, b.w2) &&
               same(a.b2, b.b2);
    }
};

/// Question tower and passage tower. The two share nothing. The same type
/// doubles as the gradient buffer and as Adam moment storage.
template <typename Scalar>
struct EncoderParams {
    TowerParams<Scalar> question;
    TowerParams<Scalar> passage;

    static EncoderParams zeros(const EncoderDims& dims) {
        return {TowerParams<Scalar>::zeros(dims), TowerParams<Scalar>::zeros(dims)};
    }

    [[nodiscard]] EncoderDims dims() const { return question.dims(); }

    TowerParams<Scalar>& tower(Side side) { return side == Side::question ? question : passage; }
    const TowerParams<Scalar>& tower(Side side) const { return side == Side::question ? question : passage; }

    void set_zero() {
        for_each_tensor(*this, [](auto& t) { t.setZero(); });
    }

    template <typename Other>
    EncoderParams<Other> cast() const {
        return {question.template cast<Other>(), passage.template cast<Other>()};
    }

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

template <typename Scalar>
using GradientBuffer = EncoderParams<Scalar>;

/// Calls fn on every tensor, question tower first, in a fixed order.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
    using Tower = std::remove_cvref_t<decltype(params.question)>;
    Tower::visit(params.question, fn);
    Tower::visit(params.passage, fn);
}

/// Pairwise walk over two congruent parameter sets.
template <typename A, typename B, typename Fn>
void zip_tensors(A& a, B& b, Fn&& fn) {
    auto zip_tower = [&](auto& ta, auto& tb) {
        fn(ta.embeddings, tb.embeddings);
        fn(ta.w1, tb.w1);
        fn(ta.b1, tb.b1);
        fn(ta.w2, tb.w2);
        fn(ta.b2, tb.b2);
    };
    zip_tower(a.question, b.question);
    zip_tower(a.passage, b.passage);
}

template <typename Scalar>
std::size_t parameter_count(const EncoderParams<Scalar>& params) {
    std::size_t n = 0;
    for_each_tensor(params, [&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

template <typename Scalar>
bool all_finite(const EncoderParams<Scalar>& params) {
    bool ok = true;
    for_each_tensor(params, [&](const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

template <typename Scalar>
double squared_norm(const EncoderParams<Scalar>& params) {
    double s = 0.0;
    for_each_tensor(params, [&](const auto& t) { s += static_cast<double>(t.squaredNorm()); });
    return s;
}

/// Embeddings uniform in [-0.1, 0.1], projections Xavier-uniform, biases zero.
/// Each tower draws from its own stream derived from `seed`.
template <typename Scalar>
EncoderParams<Scalar> init_params(const EncoderDims& dims, std::uint64_t seed) {
    auto params = EncoderParams<Scalar>::zeros(dims);
    auto fill = [](auto& m, std::mt19937_64& rng, double limit) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                m(i, j) = static_cast<Scalar>(uniform(rng, -limit, limit));
            }
        }
    };
    for (Side side : {Side::question, Side::passage}) {
        std::mt19937_64 rng(mix_seed(seed, side == Side::question ? 1 : 2));
        auto& t = params.tower(side);
        fill(t.embeddings, rng, 0.1);
        fill(t.w1, rng, std::sqrt(6.0 / static_cast<double>(dims.d_emb + dims.d_hidden)));
        fill(t.w2, rng, std::sqrt(6.0 / static_cast<double>(dims.d_hidden + dims.d_out)));
    }
    return params;
}

/// Dropout on the pooled vector. In eval mode nothing is dropped; in train
/// mode the mask is a pure function of `seed`.
struct DropoutSpec {
    bool train = false;
    std::uint64_t seed = 0;
    double rate = 0.1;

    static DropoutSpec eval() { return {}; }
    static DropoutSpec training(std::uint64_t seed, double rate = 0.1) { return {true, seed, rate}; }
};

/// Forward activations kept for the backward pass.
template <typename Scalar>
struct Activation {
    Side side = Side::question;
    TokenSeq tokens;
    Vector<Scalar> mask;   // keep/(1-rate) factors; empty in eval mode
    Vector<Scalar> pooled; // after dropout
    Vector<Scalar> hidden; // tanh output
    Embedding<Scalar> output;

    [[nodiscard]] bool valid() const { return !tokens.empty() && output.size() > 0; }
};

namespace detail {

template <typename Scalar>
void check_tokens(std::span<const TokenId> tokens, const TowerParams<Scalar>& tower) {
    if (tokens.empty()) {
        throw Error("cannot encode an empty token sequence");
    }
    for (TokenId t : tokens) {
        if (t < 0 || t >= tower.embeddings.rows()) {
            throw Error("token id " + std::to_string(t) + " out of range for vocabulary of " +
                        std::to_string(tower.embeddings.rows()));
        }
    }
}

template <typename Scalar>
Vector<Scalar> dropout_mask(Eigen::Index n, const DropoutSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    Vector<Scalar> mask(n);
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - spec.rate));
    for (Eigen::Index i = 0; i < n; ++i) {
        mask(i) = uniform01(rng) < spec.rate ? Scalar(0) : keep;
    }
    return mask;
}

} // namespace detail

template <typename Scalar>
Activation<Scalar> forward(std::span<const TokenId> tokens, Side side, const EncoderParams<Scalar>& params,
                           const DropoutSpec& dropout = DropoutSpec::eval()) {
    const auto& tower = params.tower(side);
    detail::check_tokens(tokens, tower);

    Activation<Scalar> act;
    act.side = side;
    act.tokens.assign(tokens.begin(), tokens.end());
    act.pooled = Vector<Scalar>::Zero(tower.embeddings.cols());
    for (TokenId t : tokens) {
        act.pooled += tower.embeddings.row(t).transpose();
    }
    act.pooled /= static_cast<Scalar>(tokens.size());
    if (dropout.train && dropout.rate > 0.0) {
        act.mask = detail::dropout_mask<Scalar>(act.pooled.size(), dropout);
        act.pooled = act.pooled.cwiseProduct(act.mask);
    }
    act.hidden = (tower.w1.transpose() * act.pooled + tower.b1).array().tanh().matrix();
    act.output = tower.w2.transpose() * act.hidden + tower.b2;
    return act;
}

template <typename Scalar>
Embedding<Scalar> encode(std::span<const TokenId> tokens, Side side, const EncoderParams<Scalar>& params,
                         const DropoutSpec& dropout = DropoutSpec::eval()) {
    return forward(tokens, side, params, dropout).output;
}

template <typename Scalar>
Embedding<Scalar> encode_passage(const Passage& passage, const EncoderParams<Scalar>& params,
                                 const DropoutSpec& dropout = DropoutSpec::eval()) {
    return encode<Scalar>(passage.encoder_input(), Side::passage, params, dropout);
}

/// Retrieval score: inner product of question and passage embeddings.
template <typename A, typename B>
auto score_pair(const Eigen::MatrixBase<A>& q_emb, const Eigen::MatrixBase<B>& p_emb) {
    if (q_emb.size() != p_emb.size()) {
        throw Error("embedding dimension mismatch: " + std::to_string(q_emb.size()) + " vs " +
                    std::to_string(p_emb.size()));
    }
    return q_emb.dot(p_emb);
}

/// Accumulates d(upstream . output)/d(params) into `grads` for the tower that
/// produced `act`.
template <typename Scalar, typename Derived>
void backward(const Activation<Scalar>& act, const Eigen::MatrixBase<Derived>& upstream,
              const EncoderParams<Scalar>& params, GradientBuffer<Scalar>& grads) {
    if (!act.valid()) {
        throw Error("backward called without a forward cache");
    }
    const auto& tower = params.tower(act.side);
    auto& g = grads.tower(act.side);
    if (upstream.size() != act.output.size() || g.dims() != tower.dims()) {
        throw Error("backward: shape mismatch");
    }
    if (upstream.isZero(0)) {
        return;
    }
    Vector<Scalar> up = upstream;
    g.b2 += up;
    g.w2.noalias() += act.hidden * up.transpose();
    Vector<Scalar> pre = (tower.w2 * up).cwiseProduct((Scalar(1) - act.hidden.array().square()).matrix());
    g.b1 += pre;
    g.w1.noalias() += act.pooled * pre.transpose();
    Vector<Scalar> d_pooled = tower.w1 * pre;
    if (act.mask.size() > 0) {
        d_pooled = d_pooled.cwiseProduct(act.mask);
    }
    d_pooled /= static_cast<Scalar>(act.tokens.size());
    for (TokenId t : act.tokens) {
        g.embeddings.row(t) += d_pooled.transpose();
    }
}

/// Parameter file body: format version, (vocab, d_emb, d_hidden, d_out), then
/// every tensor as little-endian float32 in `for_each_tensor` order.
void write_params(std::ostream& out, const EncoderParams<float>& params);
EncoderParams<float> read_params(std::istream& in);

inline constexpr std::uint32_t kParamsFormatVersion = 1;

} // namespace autoret
