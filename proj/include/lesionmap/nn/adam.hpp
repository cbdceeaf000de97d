#pragma once

#include <map>
#include <string>

#include "lesionmap/nn/tensor.hpp"

namespace lesionmap {

struct AdamConfig {
    double alpha = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (alpha <= 0) throw ContractError("adam: alpha must be positive");
        if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            throw ContractError("adam: decay rates must lie in (0,1)");
    }
};

// Adam with bias correction and a constant step size. Moment estimates are
// keyed by parameter name so they can travel inside checkpoints.
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg.validate(); }

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return t_; }

    // grad_scale folds the batch-mean reduction into the raw accumulated
    // gradients (grad holds a sum over the batch; scale is 1/batch).
    void step(const std::vector<nn::ParamRef<T>>& params, double grad_scale) {
        ++t_;
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
        const T lr = static_cast<T>(cfg_.alpha);
        const T eps = static_cast<T>(cfg_.eps);
        const T scale = static_cast<T>(grad_scale);
        for (const auto& p : params) {
            auto& m = moment1_[p.name];
            auto& v = moment2_[p.name];
            if (m.size() == 0) {
                m.setZero(p.value->rows(), p.value->cols());
                v.setZero(p.value->rows(), p.value->cols());
            }
            for (Eigen::Index i = 0; i < p.value->size(); ++i) {
                const T g = p.grad->data()[i] * scale;
                T& mi = m.data()[i];
                T& vi = v.data()[i];
                mi = b1 * mi + (T(1) - b1) * g;
                vi = b2 * vi + (T(1) - b2) * g * g;
                const T mhat = mi / bc1;
                const T vhat = vi / bc2;
                p.value->data()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    std::map<std::string, nn::Mat<T>>& moment1() { return moment1_; }
    std::map<std::string, nn::Mat<T>>& moment2() { return moment2_; }
    const std::map<std::string, nn::Mat<T>>& moment1() const { return moment1_; }
    const std::map<std::string, nn::Mat<T>>& moment2() const { return moment2_; }
    void set_step_count(long t) { t_ = t; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, nn::Mat<T>> moment1_;
    std::map<std::string, nn::Mat<T>> moment2_;
};

}  // namespace lesionmap
