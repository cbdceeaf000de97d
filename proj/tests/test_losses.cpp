#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lesionmap/losses.hpp"

using namespace lesionmap;
using Catch::Matchers::WithinAbs;

namespace {

Prediction<double> lesion_prediction(const std::vector<double>& probs) {
    Prediction<double> p;
    p.lesion_probs.resize(static_cast<Eigen::Index>(probs.size()));
    p.lesion_logits.resize(static_cast<Eigen::Index>(probs.size()));
    for (std::size_t i = 0; i < probs.size(); ++i) {
        p.lesion_probs(static_cast<Eigen::Index>(i)) = probs[i];
        // consistent pre-sigmoid value, clamped away from 0/1 for the logit
        const double pc = std::min(1.0 - 1e-12, std::max(1e-12, probs[i]));
        p.lesion_logits(static_cast<Eigen::Index>(i)) = std::log(pc / (1.0 - pc));
    }
    return p;
}

}  // namespace

TEST_CASE("binary cross-entropy reference values") {
    REQUIRE_THAT(bce(0.5, 1), WithinAbs(0.693147, 1e-6));
    REQUIRE_THAT(bce(0.5, 0), WithinAbs(0.693147, 1e-6));
    REQUIRE(bce(1.0, 1) >= 0.0);
    REQUIRE(bce(1.0, 1) <= 1.2e-7);
    REQUIRE(bce(0.0, 0) <= 1.2e-7);
    REQUIRE_THAT(bce(0.9, 0), WithinAbs(2.302585, 1e-6));
    REQUIRE_THAT(bce(0.9, 1), WithinAbs(-std::log(0.9), 1e-12));
    // the clamp caps the loss for confident mistakes
    REQUIRE_THAT(bce(0.0, 1), WithinAbs(-std::log(1e-7), 1e-9));
    REQUIRE_THROWS_AS(bce(0.5, 2), ContractError);
    REQUIRE_THROWS_AS(bce(0.5, -1), ContractError);
}

TEST_CASE("bce is non-negative on random inputs") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double p = uniform_unit(rng);
        REQUIRE(bce(p, 1) >= 0.0);
        REQUIRE(bce(p, 0) >= 0.0);
    }
}

TEST_CASE("bce gradient matches finite differences of the loss") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double p = uniform_real(rng, 0.01, 0.99);
        const double h = 1e-7;
        for (int t : {0, 1}) {
            const double fd = (bce(p + h, t) - bce(p - h, t)) / (2 * h);
            REQUIRE_THAT(bce_grad(p, t), WithinAbs(fd, 1e-4));
        }
    }
    // flat inside the clamped regions, matching the value computation
    REQUIRE(bce_grad(1.0, 1) == 0.0);
    REQUIRE(bce_grad(0.0, 0) == 0.0);
    REQUIRE(bce_grad(1.0 - 1e-9, 0) == 0.0);
}

TEST_CASE("diagnostic loss scores the diagnosis probability") {
    Prediction<double> p;
    p.diagnosis_prob = 0.73;
    REQUIRE_THAT(diagnostic_loss(p, 1), WithinAbs(0.314711, 1e-6));
    REQUIRE_THAT(baseline_loss(p, 1), WithinAbs(0.314711, 1e-6));
    p.diagnosis_prob = 0.5;
    REQUIRE_THAT(diagnostic_loss(p, 0), WithinAbs(0.693147, 1e-6));
}

TEST_CASE("lesion loss is the mean bce over the lesion vector") {
    const auto two = lesion_prediction({0.5, 0.5});
    REQUIRE_THAT(lesion_loss(two, {1, 0}), WithinAbs(0.693147, 1e-6));

    const auto three = lesion_prediction({0.9, 0.2, 0.5});
    REQUIRE_THAT(lesion_loss(three, {1, 0, 1}), WithinAbs(0.340551, 1e-6));
    // mean of the hand-computed parts
    const double by_hand = (-std::log(0.9) - std::log(0.8) - std::log(0.5)) / 3.0;
    REQUIRE_THAT(lesion_loss(three, {1, 0, 1}), WithinAbs(by_hand, 1e-12));

    REQUIRE_THROWS_AS(lesion_loss(three, {1, 0}), ContractError);
    Prediction<double> no_lesions;
    no_lesions.diagnosis_prob = 0.5;
    REQUIRE_THROWS_AS(lesion_loss(no_lesions, {1}), ContractError);
}

TEST_CASE("combined loss adds its parts exactly") {
    auto p = lesion_prediction({0.5, 0.5});
    p.diagnosis_prob = 0.5;
    const auto v = combined_loss(p, 1, {1, 0});
    REQUIRE_THAT(v.total, WithinAbs(1.386294, 1e-6));
    REQUIRE_THAT(v.diagnostic, WithinAbs(0.693147, 1e-6));
    REQUIRE_THAT(v.lesion, WithinAbs(0.693147, 1e-6));

    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
        const int n = 1 + static_cast<int>(uniform_index(rng, 6));
        std::vector<double> probs;
        std::vector<int> labels;
        for (int j = 0; j < n; ++j) {
            probs.push_back(uniform_unit(rng));
            labels.push_back(bernoulli(rng, 0.5) ? 1 : 0);
        }
        auto q = lesion_prediction(probs);
        q.diagnosis_prob = uniform_unit(rng);
        const int d = bernoulli(rng, 0.5) ? 1 : 0;
        const auto lv = combined_loss(q, d, labels);
        REQUIRE(lv.total == lv.diagnostic + lv.lesion);  // exact additivity
        REQUIRE(lv.total >= 0.0);
        REQUIRE_THAT(lv.diagnostic, WithinAbs(diagnostic_loss(q, d), 0.0));
        REQUIRE_THAT(lv.lesion, WithinAbs(lesion_loss(q, labels), 0.0));
    }
}

TEST_CASE("baseline objective coincides with the diagnostic part") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        Prediction<double> p;
        p.diagnosis_prob = uniform_unit(rng);
        const int d = bernoulli(rng, 0.5) ? 1 : 0;
        REQUIRE(baseline_loss(p, d) == diagnostic_loss(p, d));
    }
}

TEST_CASE("logit gradients chain the sigmoid correctly") {
    // dL/dz for BCE through a sigmoid is (p - t); verify against that closed form
    Rng rng(29);
    for (int i = 0; i < 200; ++i) {
        Prediction<double> p;
        p.diagnosis_prob = uniform_real(rng, 0.01, 0.99);
        for (int t : {0, 1}) {
            const double expect = p.diagnosis_prob - t;
            REQUIRE_THAT(diag_logit_grad(p, t), WithinAbs(expect, 1e-9));
        }
    }

    auto q = lesion_prediction({0.9, 0.2, 0.5});
    q.diagnosis_prob = 0.73;
    const std::vector<int> l = {1, 0, 1};
    const auto g = combined_loss_grad(q, 1, l);
    REQUIRE(g.dlesion_logits.cols() == 3);
    REQUIRE_THAT(g.ddiag_logit, WithinAbs(0.73 - 1.0, 1e-9));
    for (int i = 0; i < 3; ++i) {
        const double expect = (q.lesion_probs(i) - l[static_cast<std::size_t>(i)]) / 3.0;
        REQUIRE_THAT(g.dlesion_logits(i), WithinAbs(expect, 1e-9));
    }

    const auto bg = baseline_loss_grad(q, 0);
    REQUIRE(bg.dlesion_logits.cols() == 0);
    REQUIRE_THAT(bg.ddiag_logit, WithinAbs(0.73, 1e-9));
}

TEST_CASE("loss value gradients vanish only in the clamped regions") {
    Prediction<double> p;
    p.diagnosis_prob = 1.0;
    REQUIRE(diag_logit_grad(p, 1) == 0.0);
    p.diagnosis_prob = 0.999;
    REQUIRE(diag_logit_grad(p, 1) != 0.0);
}
