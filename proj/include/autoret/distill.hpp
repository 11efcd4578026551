#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "autoret/corpus.hpp"
#include "autoret/encoder.hpp"
#include "autoret/error.hpp"
#include "autoret/linalg.hpp"

namespace autoret {

namespace detail {

template <typename Derived>
auto stable_softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    if (logits.size() == 0) {
        throw Error("softmax over an empty vector");
    }
    if (!logits.allFinite()) {
        throw Error("softmax input must be finite");
    }
    Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return Vector<Scalar>(e / e.sum());
}

} // namespace detail

/// softmax(fresh_scores / tau) over the retrieved candidates.
template <typename Derived>
auto student_distribution(const Eigen::MatrixBase<Derived>& fresh_scores, typename Derived::Scalar tau) {
    if (!(tau > 0)) {
        throw Error("temperature must be positive");
    }
    return detail::stable_softmax(fresh_scores / tau);
}

/// softmax of the teacher's mean log-probabilities. Shift invariant.
template <typename Derived>
auto teacher_distribution(const Eigen::MatrixBase<Derived>& log_probs) {
    return detail::stable_softmax(log_probs);
}

template <typename Scalar>
struct KlResult {
    Scalar loss = 0;
    Vector<Scalar> grad; // d loss / d fresh_scores
};

/// KL(teacher || student) with 0 log 0 = 0, and its gradient with respect to
/// the fresh scores behind a softmax(scores / tau) student:
/// (student - teacher) / tau.
template <typename Scalar>
KlResult<Scalar> kl_loss_and_grad(const Vector<Scalar>& teacher, const Vector<Scalar>& student, Scalar tau) {
    if (teacher.size() != student.size() || teacher.size() == 0) {
        throw Error("KL inputs must be non-empty and the same length");
    }
    KlResult<Scalar> out;
    for (Eigen::Index i = 0; i < teacher.size(); ++i) {
        if (teacher(i) <= 0) {
            continue;
        }
        if (student(i) <= 0) {
            throw Error("KL divergence is infinite: student assigns zero mass where teacher does not");
        }
        out.loss += teacher(i) * (std::log(teacher(i)) - std::log(student(i)));
    }
    out.grad = (student - teacher) / tau;
    return out;
}

template <typename Derived>
double entropy(const Eigen::MatrixBase<Derived>& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) > 0) {
            h -= static_cast<double>(p(i)) * std::log(static_cast<double>(p(i)));
        }
    }
    return h;
}

/// Everything needed to score one question against a fixed candidate set.
/// Candidate selection happened upstream and is not differentiated.
template <typename Scalar>
struct DistillInstance {
    TokenSeq question;
    std::vector<TokenSeq> candidates;  // passage encoder inputs
    Vector<Scalar> teacher_log_probs;  // one per candidate
    DropoutSpec question_dropout;
    std::vector<DropoutSpec> candidate_dropout; // empty: eval mode
};

template <typename Scalar>
struct DistillOutcome {
    Scalar loss = 0;
    Vector<Scalar> fresh_scores;
    Vector<Scalar> student;
    Vector<Scalar> teacher;
};

/// Fresh-encodes the question and candidates, forms both distributions and
/// returns the KL loss. When `grads` is given, accumulates
/// weight * d loss / d params into it through the fresh scores.
template <typename Scalar>
DistillOutcome<Scalar> distill_objective(const DistillInstance<Scalar>& inst, const EncoderParams<Scalar>& params,
                                         Scalar tau, Scalar weight = 1, GradientBuffer<Scalar>* grads = nullptr) {
    const auto k = inst.candidates.size();
    if (k == 0 || static_cast<std::size_t>(inst.teacher_log_probs.size()) != k) {
        throw Error("candidate and teacher score counts differ");
    }
    auto q_act = forward<Scalar>(inst.question, Side::question, params, inst.question_dropout);
    std::vector<Activation<Scalar>> p_acts;
    p_acts.reserve(k);
    DistillOutcome<Scalar> out;
    out.fresh_scores.resize(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        const auto& drop = inst.candidate_dropout.empty() ? DropoutSpec::eval() : inst.candidate_dropout.at(i);
        p_acts.push_back(forward<Scalar>(inst.candidates[i], Side::passage, params, drop));
        out.fresh_scores(static_cast<Eigen::Index>(i)) = score_pair(q_act.output, p_acts.back().output);
    }
    out.student = student_distribution(out.fresh_scores, tau);
    out.teacher = teacher_distribution(inst.teacher_log_probs);
    auto kl = kl_loss_and_grad<Scalar>(out.teacher, out.student, tau);
    out.loss = kl.loss;
    if (grads != nullptr) {
        Vector<Scalar> d_scores = weight * kl.grad;
        Vector<Scalar> d_question = Vector<Scalar>::Zero(q_act.output.size());
        for (std::size_t i = 0; i < k; ++i) {
            const Scalar g = d_scores(static_cast<Eigen::Index>(i));
            d_question += g * p_acts[i].output;
            backward(p_acts[i], (g * q_act.output).eval(), params, *grads);
        }
        backward(q_act, d_question, params, *grads);
    }
    return out;
}

} // namespace autoret
