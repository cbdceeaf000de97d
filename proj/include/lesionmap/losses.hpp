#pragma once

#include <cmath>

#include "lesionmap/nn/network.hpp"

namespace lesionmap {

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before taking logs.
inline constexpr double kProbEps = 1e-7;

template <class T>
T clamp_prob(T p) {
    const T lo = static_cast<T>(kProbEps);
    const T hi = T(1) - static_cast<T>(kProbEps);
    return p < lo ? lo : (p > hi ? hi : p);
}

// Binary cross-entropy for a single prediction, computed in double so the
// reference values hold at any scalar precision.
template <class T>
T bce(T p, int t) {
    if (t != 0 && t != 1) throw ContractError("bce: target must be 0 or 1");
    const double pc = clamp_prob(static_cast<double>(p));
    const double v = t == 1 ? -std::log(pc) : -std::log(1.0 - pc);
    return static_cast<T>(v);
}

// d bce / d p. Zero in the clamped regions, matching the value computation
// exactly (finite differences of the loss agree with this everywhere).
template <class T>
T bce_grad(T p, int t) {
    const double pd = static_cast<double>(p);
    if (pd < kProbEps || pd > 1.0 - kProbEps) return T(0);
    const double g = t == 1 ? -1.0 / pd : 1.0 / (1.0 - pd);
    return static_cast<T>(g);
}

template <class T>
struct LossValue {
    T total = T(0);
    T diagnostic = T(0);
    T lesion = T(0);
};

template <class T>
T diagnostic_loss(const Prediction<T>& record, int d) {
    return bce(record.diagnosis_prob, d);
}

// Mean BCE over the lesion vector.
template <class T>
T lesion_loss(const Prediction<T>& record, const std::vector<int>& l) {
    if (!record.has_lesions())
        throw ContractError("lesion_loss: record has no lesion outputs");
    if (static_cast<int>(l.size()) != record.lesion_probs.cols())
        throw ContractError("lesion_loss: label length mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < l.size(); ++i)
        acc += static_cast<double>(bce(static_cast<double>(record.lesion_probs(
                                           static_cast<int>(i))),
                                       l[i]));
    return static_cast<T>(acc / static_cast<double>(l.size()));
}

// Direct sum of the diagnostic and lesion parts; no weighting coefficients.
template <class T>
LossValue<T> combined_loss(const Prediction<T>& record, int d,
                           const std::vector<int>& l) {
    LossValue<T> out;
    out.diagnostic = diagnostic_loss(record, d);
    out.lesion = lesion_loss(record, l);
    out.total = out.diagnostic + out.lesion;
    return out;
}

// The baseline objective coincides with the diagnostic loss.
template <class T>
T baseline_loss(const Prediction<T>& record, int d) {
    return diagnostic_loss(record, d);
}

// Gradients of the per-sample loss w.r.t. the pre-sigmoid outputs, chaining
// clamp and sigmoid: dL/dz = dL/dp_clamped * 1{inside clamp} * p(1-p).
template <class T>
struct LossGrad {
    nn::Vec<T> dlesion_logits;  // empty when no lesion term
    T ddiag_logit = T(0);
};

template <class T>
T diag_logit_grad(const Prediction<T>& record, int d) {
    const T p = record.diagnosis_prob;
    return bce_grad(p, d) * p * (T(1) - p);
}

template <class T>
LossGrad<T> combined_loss_grad(const Prediction<T>& record, int d,
                               const std::vector<int>& l) {
    LossGrad<T> g;
    g.ddiag_logit = diag_logit_grad(record, d);
    g.dlesion_logits.setZero(record.lesion_probs.cols());
    const T n = static_cast<T>(l.size());
    for (int i = 0; i < record.lesion_probs.cols(); ++i) {
        const T p = record.lesion_probs(i);
        g.dlesion_logits(i) =
            bce_grad(p, l[static_cast<std::size_t>(i)]) * p * (T(1) - p) / n;
    }
    return g;
}

template <class T>
LossGrad<T> baseline_loss_grad(const Prediction<T>& record, int d) {
    LossGrad<T> g;
    g.ddiag_logit = diag_logit_grad(record, d);
    return g;
}

}  // namespace lesionmap
