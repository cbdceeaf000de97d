#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lesionmap/nn/adam.hpp"
#include "lesionmap/nn/init.hpp"
#include "lesionmap/nn/network.hpp"

using namespace lesionmap;
using Catch::Matchers::WithinAbs;

namespace {

LesionSchema toy_schema(int n) {
    LesionSchema s;
    s.name = "toy";
    for (int i = 0; i < n; ++i) s.lesions.push_back("l" + std::to_string(i));
    return s;
}

}  // namespace

TEST_CASE("he-uniform draws respect the fan-in bound") {
    // fan-in 512: bound sqrt(6/512) = 0.108253...
    const double bound = std::sqrt(6.0 / 512.0);
    REQUIRE_THAT(bound, WithinAbs(0.108253, 1e-6));

    nn::Mat<double> w(512, 200);
    Rng rng(4);
    he_uniform_fill(w, 512, rng);
    double max_abs = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        max_abs = std::max(max_abs, std::abs(w.data()[i]));
    REQUIRE(max_abs <= bound);
    REQUIRE(max_abs > 0.9 * bound);  // the range is actually used
    REQUIRE(w.minCoeff() < -0.9 * bound);
}

TEST_CASE("random init zeroes biases and fills weights within their bounds") {
    Network<double> net(ModelVariant::kAlFc, toy_schema(4), TrunkConfig::reduced());
    init_random(net, 42);
    for (auto& p : net.params()) {
        INFO(p.name);
        if (p.name.find(".bias") != std::string::npos) {
            REQUIRE(p.value->cwiseAbs().maxCoeff() == 0.0);
        } else {
            const double bound = std::sqrt(6.0 / static_cast<double>(p.value->rows()));
            REQUIRE(p.value->cwiseAbs().maxCoeff() <= bound);
            REQUIRE(p.value->cwiseAbs().maxCoeff() > 0.0);
        }
    }
}

TEST_CASE("random init is seed-stable and seed-sensitive") {
    Network<double> a(ModelVariant::kAlMax, toy_schema(2), TrunkConfig::reduced());
    Network<double> b(ModelVariant::kAlMax, toy_schema(2), TrunkConfig::reduced());
    Network<double> c(ModelVariant::kAlMax, toy_schema(2), TrunkConfig::reduced());
    init_random(a, 7);
    init_random(b, 7);
    init_random(c, 8);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool any_differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].name == pb[i].name);
        REQUIRE(*pa[i].value == *pb[i].value);
        if (!(*pa[i].value == *pc[i].value)) any_differs = true;
    }
    REQUIRE(any_differs);
}

TEST_CASE("adam config validation") {
    AdamConfig cfg;
    REQUIRE(cfg.alpha == 1e-5);
    REQUIRE_NOTHROW(cfg.validate());
    cfg.alpha = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
    AdamConfig cfg2;
    cfg2.beta1 = 1.0;
    REQUIRE_THROWS_AS(cfg2.validate(), ContractError);
}

TEST_CASE("a fresh adam step moves a parameter by about the step size") {
    nn::Mat<double> w(1, 1), g(1, 1);
    w(0, 0) = 1.0;
    g(0, 0) = 0.5;
    AdamConfig cfg;
    cfg.alpha = 1e-3;
    Adam<double> opt(cfg);
    std::vector<nn::ParamRef<double>> params = {{"w", &w, &g}};
    opt.step(params, 1.0);
    // bias correction makes mhat = g, vhat = g^2, so the update is
    // alpha * g / (|g| + eps), within eps/|g| of alpha
    REQUIRE_THAT(1.0 - w(0, 0), WithinAbs(1e-3, 1e-9));
    REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adam matches an independently coded recurrence") {
    Rng rng(12);
    nn::Mat<double> w(3, 2), g(3, 2);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform_real(rng, -1, 1);

    // reference state, updated with the textbook formulas
    nn::Mat<double> ref = w;
    nn::Mat<double> m = nn::Mat<double>::Zero(3, 2);
    nn::Mat<double> v = nn::Mat<double>::Zero(3, 2);

    AdamConfig cfg;
    cfg.alpha = 3e-3;
    Adam<double> opt(cfg);
    std::vector<nn::ParamRef<double>> params = {{"w", &w, &g}};

    for (int t = 1; t <= 50; ++t) {
        for (Eigen::Index i = 0; i < g.size(); ++i)
            g.data()[i] = uniform_real(rng, -2, 2);
        const double scale = 0.5;
        opt.step(params, scale);

        for (Eigen::Index i = 0; i < ref.size(); ++i) {
            const double gi = g.data()[i] * scale;
            m.data()[i] = 0.9 * m.data()[i] + 0.1 * gi;
            v.data()[i] = 0.999 * v.data()[i] + 0.001 * gi * gi;
            const double mhat = m.data()[i] / (1.0 - std::pow(0.9, t));
            const double vhat = v.data()[i] / (1.0 - std::pow(0.999, t));
            ref.data()[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        REQUIRE((w - ref).cwiseAbs().maxCoeff() < 1e-10);
    }
    REQUIRE(opt.step_count() == 50);
}

TEST_CASE("grad_scale folds the batch mean into the update") {
    // summing gradients over a batch and scaling by 1/batch equals stepping
    // with the mean gradient directly
    nn::Mat<double> w1(2, 2), g1(2, 2), w2(2, 2), g2(2, 2);
    w1.setConstant(0.5);
    w2.setConstant(0.5);
    Rng rng(9);
    nn::Mat<double> mean = nn::Mat<double>::Zero(2, 2);
    const int batch = 4;
    g1.setZero();
    for (int b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < g1.size(); ++i) {
            const double gi = uniform_real(rng, -1, 1);
            g1.data()[i] += gi;
            mean.data()[i] += gi / batch;
        }
    g2 = mean;

    AdamConfig cfg;
    Adam<double> a(cfg), b(cfg);
    std::vector<nn::ParamRef<double>> p1 = {{"w", &w1, &g1}};
    std::vector<nn::ParamRef<double>> p2 = {{"w", &w2, &g2}};
    a.step(p1, 1.0 / batch);
    b.step(p2, 1.0);
    REQUIRE((w1 - w2).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("moment state is per parameter name and step count is settable") {
    nn::Mat<double> w(1, 2), g(1, 2);
    w.setZero();
    g.setConstant(1.0);
    Adam<double> opt(AdamConfig{});
    std::vector<nn::ParamRef<double>> params = {{"w", &w, &g}};
    opt.step(params, 1.0);
    REQUIRE(opt.moment1().count("w") == 1);
    REQUIRE(opt.moment2().count("w") == 1);
    REQUIRE(opt.moment1().at("w").cols() == 2);
    for (Eigen::Index i = 0; i < 2; ++i) REQUIRE(opt.moment2().at("w").data()[i] >= 0.0);

    // a large step count shrinks the bias correction; the update with the
    // same gradient and restored moments must differ from the t=1 update
    nn::Mat<double> w_late(1, 2);
    w_late.setZero();
    Adam<double> late(AdamConfig{});
    std::vector<nn::ParamRef<double>> lp = {{"w", &w_late, &g}};
    late.set_step_count(1000);
    late.step(lp, 1.0);
    REQUIRE(late.step_count() == 1001);
    REQUIRE(std::abs(w_late(0, 0) - w(0, 0)) > 1e-9);
}
