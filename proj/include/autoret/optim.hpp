#pragma once

#include <cmath>
#include <cstdint>

#include "autoret/encoder.hpp"
#include "autoret/error.hpp"

namespace autoret {

/// Linear warmup from 0 to `peak`, then linear decay to 0 at `total_steps`.
inline double lr_at(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double peak) {
    if (warmup_steps > total_steps) {
        throw Error("warmup_steps exceeds total_steps");
    }
    if (step >= total_steps) {
        return step == total_steps && warmup_steps == total_steps ? peak : 0.0;
    }
    if (step < warmup_steps) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
    EncoderParams<Scalar> first;
    EncoderParams<Scalar> second;
    std::uint64_t steps = 0;   // updates applied; drives bias correction
    std::uint64_t skipped = 0; // updates refused for non-finite gradients

    static AdamState zeros(const EncoderDims& dims) {
        return {EncoderParams<Scalar>::zeros(dims), EncoderParams<Scalar>::zeros(dims), 0, 0};
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam. Returns false, leaving everything untouched except
/// the skip counter, when any gradient entry is non-finite.
template <typename Scalar>
bool adam_update(EncoderParams<Scalar>& params, const GradientBuffer<Scalar>& grads, AdamState<Scalar>& state,
                 double lr, const AdamConfig& cfg = {}) {
    if (!all_finite(grads)) {
        ++state.skipped;
        return false;
    }
    ++state.steps;
    const double t = static_cast<double>(state.steps);
    const auto b1 = static_cast<Scalar>(cfg.beta1);
    const auto b2 = static_cast<Scalar>(cfg.beta2);
    const auto step_size = static_cast<Scalar>(lr / (1.0 - std::pow(cfg.beta1, t)));
    const auto second_correction = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
    const auto eps = static_cast<Scalar>(cfg.epsilon);

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
        p.array() -= step_size * m.array() / ((v.array() / second_correction).sqrt() + eps);
    };
    auto update_tower = [&](TowerParams<Scalar>& p, const TowerParams<Scalar>& g, TowerParams<Scalar>& m,
                            TowerParams<Scalar>& v) {
        update(p.embeddings, g.embeddings, m.embeddings, v.embeddings);
        update(p.w1, g.w1, m.w1, v.w1);
        update(p.b1, g.b1, m.b1, v.b1);
        update(p.w2, g.w2, m.w2, v.w2);
        update(p.b2, g.b2, m.b2, v.b2);
    };
    update_tower(params.question, grads.question, state.first.question, state.second.question);
    update_tower(params.passage, grads.passage, state.first.passage, state.second.passage);
    return true;
}

} // namespace autoret
