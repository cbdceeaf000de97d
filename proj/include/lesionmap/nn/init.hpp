#pragma once

#include <cmath>

#include "lesionmap/nn/network.hpp"

namespace lesionmap {

enum class InitSource { kRandom, kPretrainedTrunk, kCheckpoint };

inline std::string init_source_name(InitSource s) {
    switch (s) {
        case InitSource::kRandom: return "random";
        case InitSource::kPretrainedTrunk: return "pretrained-trunk";
        case InitSource::kCheckpoint: return "checkpoint";
    }
    return "?";
}

inline InitSource init_source_from_name(const std::string& s) {
    if (s == "random") return InitSource::kRandom;
    if (s == "pretrained-trunk") return InitSource::kPretrainedTrunk;
    if (s == "checkpoint") return InitSource::kCheckpoint;
    throw ContractError("unknown init source '" + s + "'");
}

// Uniform draw in [-sqrt(6/fan_in), +sqrt(6/fan_in)], row-major fill order.
template <class T>
void he_uniform_fill(nn::Mat<T>& m, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(uniform_real(rng, -bound, bound));
}

// Random initialization of every layer: weights he-uniform over their
// fan-in, biases zero. The draw order is fixed (trunk convs in order, then
// head / aggregator / classifier), so a fixed seed gives identical layers.
template <class T>
void init_random(Network<T>& net, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& conv : net.trunk().convs()) {
        auto ps = conv.params();
        he_uniform_fill(*ps[0].value, conv.fan_in(), rng);
        ps[1].value->setZero();
    }
    if (auto* head = net.head()) {
        auto ps = head->params();
        he_uniform_fill(*ps[0].value, head->fan_in(), rng);
        ps[1].value->setZero();
    }
    if (auto* fc = net.fc_aggregator()) {
        auto ps = fc->params();
        he_uniform_fill(*ps[0].value, fc->fan_in(), rng);
        ps[1].value->setZero();
    }
    for (auto& p : net.params()) {
        if (p.name.rfind("classifier.", 0) != 0) continue;
        if (p.name.find(".weight") != std::string::npos) {
            const int fan_in = static_cast<int>(p.value->rows());
            he_uniform_fill(*p.value, fan_in, rng);
        } else {
            p.value->setZero();
        }
    }
}

}  // namespace lesionmap
