#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msnet/error.hpp"

namespace msnet {

enum class DiagnosisLabel : int { COVID = 0, CAP = 1, NORMAL = 2 };

inline constexpr int kNumClasses = 3;

inline const char* to_string(DiagnosisLabel label) {
    switch (label) {
        case DiagnosisLabel::COVID: return "COVID";
        case DiagnosisLabel::CAP: return "CAP";
        case DiagnosisLabel::NORMAL: return "NORMAL";
    }
    return "?";
}

// Per-class multipliers on the loss. Balanced weighting uses N / (K * n_c);
// a class absent from training gets weight 0 and therefore never contributes
// loss or gradient.
struct ClassWeights {
    std::array<double, 3> w = {1.0, 1.0, 1.0};

    static ClassWeights uniform() { return {}; }

    double operator[](DiagnosisLabel label) const { return w[static_cast<std::size_t>(label)]; }
};

inline ClassWeights class_weights_from_counts(const std::array<std::int64_t, 3>& counts) {
    std::int64_t total = 0;
    int present = 0;
    for (std::int64_t c : counts) {
        if (c < 0) {
            throw Error(ErrorKind::InvalidArgument, "class counts must be non-negative");
        }
        total += c;
        present += c > 0 ? 1 : 0;
    }
    if (total == 0) {
        throw Error(ErrorKind::InvalidArgument, "all class counts are zero");
    }
    // Zero-count classes drop out of both the weights and the divisor, so a
    // two-class dataset still averages to weight one across present classes.
    ClassWeights cw;
    for (std::size_t c = 0; c < 3; ++c) {
        cw.w[c] = counts[c] == 0 ? 0.0
                                 : static_cast<double>(total) /
                                       (static_cast<double>(present) *
                                        static_cast<double>(counts[c]));
    }
    return cw;
}

// Max-shifted softmax: exact for uniform logits and overflow-free for large
// ones.
inline std::array<double, 3> softmax(const std::array<double, 3>& logits) {
    double max_logit = logits[0];
    for (double v : logits) {
        max_logit = std::max(max_logit, v);
    }
    std::array<double, 3> out{};
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

namespace detail {
inline std::size_t checked_label_index(DiagnosisLabel label) {
    const int idx = static_cast<int>(label);
    if (idx < 0 || idx >= kNumClasses) {
        throw Error(ErrorKind::InvalidArgument, "label index " + std::to_string(idx) +
                                                    " outside [0, " +
                                                    std::to_string(kNumClasses) + ")");
    }
    return static_cast<std::size_t>(idx);
}
}  // namespace detail

// loss = -w[label] * log(probs[label]); the log argument is clamped at 1e-12,
// which is inactive for any well-formed distribution.
inline double weighted_cce(const std::array<double, 3>& probs, DiagnosisLabel label,
                           const ClassWeights& weights) {
    const std::size_t idx = detail::checked_label_index(label);
    const double p = std::max(probs[idx], 1e-12);
    return -weights.w[idx] * std::log(p);
}

// d(loss)/d(logits) for weighted_cce(softmax(logits), label):
// w[label] * (probs - onehot(label)).
inline std::array<double, 3> cce_grad_logits(const std::array<double, 3>& probs,
                                             DiagnosisLabel label, const ClassWeights& weights) {
    const std::size_t idx = detail::checked_label_index(label);
    std::array<double, 3> g = probs;
    g[idx] -= 1.0;
    for (double& v : g) {
        v *= weights.w[idx];
    }
    return g;
}

// Adam with the standard bias-corrected update; only the learning rate is a
// tuning knob, the moment decay rates and epsilon stay at their usual values.
struct AdamState {
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double lr = 1e-4;

    AdamState() = default;
    AdamState(std::size_t n_params, double learning_rate)
        : m(n_params, 0.0), v(n_params, 0.0), lr(learning_rate) {
        if (!(learning_rate >= 0.0)) {
            throw Error(ErrorKind::InvalidArgument, "learning rate must be non-negative");
        }
    }
};

inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw Error(ErrorKind::ShapeMismatch, "adam_step length mismatch");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

}  // namespace msnet
