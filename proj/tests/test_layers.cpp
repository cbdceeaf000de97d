#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lesionmap/nn/layers.hpp"
#include "test_util.hpp"

using namespace lesionmap;
using nn::FeatureMap;

namespace {

// Direct per-pixel convolution in double precision, the reference the GEMM
// implementation is checked against.
FeatureMap<double> naive_conv3x3(const FeatureMap<double>& x, const nn::Mat<double>& w,
                                 const nn::Mat<double>& b, int out_c) {
    const int in_c = x.channels();
    FeatureMap<double> y(x.h, x.w, out_c);
    for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx)
            for (int oc = 0; oc < out_c; ++oc) {
                double acc = b(0, oc);
                for (int k = 0; k < 9; ++k) {
                    const int sy = yy + k / 3 - 1;
                    const int sx = xx + k % 3 - 1;
                    if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                    for (int ic = 0; ic < in_c; ++ic)
                        acc += x.at(sy, sx, ic) * w(k * in_c + ic, oc);
                }
                y.at(yy, xx, oc) = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("3x3 convolution matches the direct per-pixel computation") {
    Rng rng(101);
    nn::Conv3x3<double> conv("c", 3, 4);
    FeatureMap<double> x(5, 7, 3);
    testutil::fill_uniform(x, rng, -2.0, 2.0);
    nn::Mat<double> w(27, 4), b(1, 4);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = uniform_real(rng, -1.0, 1.0);
    for (Eigen::Index i = 0; i < b.size(); ++i)
        b.data()[i] = uniform_real(rng, -1.0, 1.0);
    auto params = conv.params();
    *params[0].value = w;
    *params[1].value = b;

    const auto y = conv.forward(x);
    const auto ref = naive_conv3x3(x, w, b, 4);
    REQUIRE(y.h == 5);
    REQUIRE(y.w == 7);
    REQUIRE(y.channels() == 4);
    REQUIRE((y.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("3x3 convolution zero-pads the border") {
    nn::Conv3x3<double> conv("c", 1, 1);
    auto params = conv.params();
    params[0].value->setOnes();  // sums the 3x3 neighborhood
    FeatureMap<double> x(1, 1, 1);
    x.at(0, 0, 0) = 2.5;
    const auto y = conv.forward(x);
    REQUIRE_THAT(y.at(0, 0, 0), Catch::Matchers::WithinAbs(2.5, 1e-12));

    FeatureMap<double> x3(3, 3, 1);
    x3.data.setOnes();
    const auto y3 = conv.forward(x3);
    REQUIRE_THAT(y3.at(0, 0, 0), Catch::Matchers::WithinAbs(4.0, 1e-12));  // corner
    REQUIRE_THAT(y3.at(0, 1, 0), Catch::Matchers::WithinAbs(6.0, 1e-12));  // edge
    REQUIRE_THAT(y3.at(1, 1, 0), Catch::Matchers::WithinAbs(9.0, 1e-12));  // centre
}

TEST_CASE("3x3 convolution gradients agree with finite differences") {
    Rng rng(55);
    nn::Conv3x3<double> conv("c", 2, 2);
    auto params = conv.params();
    for (auto& p : params)
        for (Eigen::Index i = 0; i < p.value->size(); ++i)
            p.value->data()[i] = uniform_real(rng, -0.8, 0.8);

    FeatureMap<double> x(3, 4, 2);
    testutil::fill_uniform(x, rng, -1.0, 1.0);

    // loss = 0.5 * sum(y^2), so dL/dy = y
    auto y = conv.forward(x);
    FeatureMap<double> dy = y;
    const auto dx = conv.backward(dy);

    const double h = 1e-6;
    const auto loss = [&](const FeatureMap<double>& in) {
        auto out = conv.forward(in);
        return 0.5 * out.data.array().square().sum();
    };
    for (auto& p : params) {
        for (Eigen::Index i = 0; i < p.value->size(); ++i) {
            const double keep = p.value->data()[i];
            p.value->data()[i] = keep + h;
            const double up = loss(x);
            p.value->data()[i] = keep - h;
            const double dn = loss(x);
            p.value->data()[i] = keep;
            const double fd = (up - dn) / (2 * h);
            REQUIRE_THAT(p.grad->data()[i], Catch::Matchers::WithinAbs(fd, 1e-5));
        }
    }
    for (Eigen::Index i = 0; i < x.data.size(); ++i) {
        const double keep = x.data.data()[i];
        x.data.data()[i] = keep + h;
        const double up = loss(x);
        x.data.data()[i] = keep - h;
        const double dn = loss(x);
        x.data.data()[i] = keep;
        REQUIRE_THAT(dx.data.data()[i],
                     Catch::Matchers::WithinAbs((up - dn) / (2 * h), 1e-5));
    }
}

TEST_CASE("1x1 convolution is a per-pixel linear map") {
    Rng rng(31);
    nn::Conv1x1<double> conv("h", 3, 2);
    auto params = conv.params();
    for (auto& p : params)
        for (Eigen::Index i = 0; i < p.value->size(); ++i)
            p.value->data()[i] = uniform_real(rng, -1.0, 1.0);
    FeatureMap<double> x(4, 3, 3);
    testutil::fill_uniform(x, rng, -2.0, 2.0);

    const auto y = conv.forward(x);
    for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 3; ++xx)
            for (int oc = 0; oc < 2; ++oc) {
                double acc = (*params[1].value)(0, oc);
                for (int ic = 0; ic < 3; ++ic)
                    acc += x.at(yy, xx, ic) * (*params[0].value)(ic, oc);
                REQUIRE_THAT(y.at(yy, xx, oc), Catch::Matchers::WithinAbs(acc, 1e-12));
            }

    nn::Conv1x1<double> zero("z", 3, 2);
    auto zp = zero.params();
    (*zp[1].value)(0, 0) = 0.7;
    (*zp[1].value)(0, 1) = -0.2;
    const auto yz = zero.forward(x);
    for (Eigen::Index p = 0; p < yz.positions(); ++p) {
        REQUIRE(yz.data(p, 0) == 0.7);
        REQUIRE(yz.data(p, 1) == -0.2);
    }
}

TEST_CASE("relu clamps forward and masks backward") {
    nn::ReLU<double> relu;
    FeatureMap<double> x(1, 4, 1);
    x.data << -1.0, 0.0, 2.0, -0.5;
    const auto y = relu.forward(x);
    REQUIRE(y.data(0, 0) == 0.0);
    REQUIRE(y.data(1, 0) == 0.0);
    REQUIRE(y.data(2, 0) == 2.0);
    REQUIRE(y.data(3, 0) == 0.0);

    FeatureMap<double> dy(1, 4, 1);
    dy.data << 1.0, 1.0, 1.0, 1.0;
    const auto dx = relu.backward(dy);
    REQUIRE(dx.data(0, 0) == 0.0);
    REQUIRE(dx.data(1, 0) == 0.0);  // gradient dies at exactly zero
    REQUIRE(dx.data(2, 0) == 1.0);
    REQUIRE(dx.data(3, 0) == 0.0);
}

TEST_CASE("2x2 max pooling picks block maxima and routes gradients to them") {
    nn::MaxPool2<double> pool;
    FeatureMap<double> x(4, 4, 1);
    x.data << 1, 2, 5, 6,
              3, 4, 7, 8,
              -1, -2, 0, 0,
              -3, -4, 0, 9;
    const auto y = pool.forward(x);
    REQUIRE(y.h == 2);
    REQUIRE(y.w == 2);
    REQUIRE(y.at(0, 0, 0) == 4.0);
    REQUIRE(y.at(0, 1, 0) == 8.0);
    REQUIRE(y.at(1, 0, 0) == -1.0);
    REQUIRE(y.at(1, 1, 0) == 9.0);

    FeatureMap<double> dy(2, 2, 1);
    dy.data << 10, 20, 30, 40;
    const auto dx = pool.backward(dy);
    REQUIRE(dx.at(1, 1, 0) == 10.0);
    REQUIRE(dx.at(1, 3, 0) == 20.0);
    REQUIRE(dx.at(2, 0, 0) == 30.0);
    REQUIRE(dx.at(3, 3, 0) == 40.0);
    REQUIRE(dx.data.array().abs().sum() == 100.0);

    FeatureMap<double> odd(3, 4, 1);
    REQUIRE_THROWS_WITH(pool.forward(odd), Catch::Matchers::ContainsSubstring("odd"));
}

TEST_CASE("dense layer computes an affine map and rejects wrong widths") {
    nn::Dense<double> fc("fc", 3, 2);
    auto params = fc.params();
    (*params[0].value) << 1, 0, 0, 1, 1, 1;
    (*params[1].value) << 0.5, -0.5;
    nn::Vec<double> x(3);
    x << 2, 3, 4;
    const auto y = fc.forward(x);
    REQUIRE_THAT(y(0), Catch::Matchers::WithinAbs(2 + 4 + 0.5, 1e-12));
    REQUIRE_THAT(y(1), Catch::Matchers::WithinAbs(3 + 4 - 0.5, 1e-12));

    nn::Vec<double> dy(2);
    dy << 1, 1;
    const auto dx = fc.backward(dy);
    REQUIRE_THAT(dx(0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(dx(1), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(dx(2), Catch::Matchers::WithinAbs(2.0, 1e-12));
    REQUIRE((*params[0].grad)(0, 0) == 2.0);
    REQUIRE((*params[1].grad)(0, 0) == 1.0);

    nn::Vec<double> wrong(4);
    REQUIRE_THROWS_WITH(fc.forward(wrong),
                        Catch::Matchers::ContainsSubstring("fixed input size"));
}

TEST_CASE("global max pool reduces each channel to its spatial maximum") {
    nn::GlobalMaxPool<double> gmp;
    FeatureMap<double> x(2, 3, 2);
    x.data.setConstant(-1.0);
    x.at(1, 2, 0) = 3.2;
    x.at(0, 1, 1) = 0.25;
    const auto y = gmp.forward(x);
    REQUIRE(y.cols() == 2);
    REQUIRE(y(0) == 3.2);
    REQUIRE(y(1) == 0.25);

    nn::Vec<double> dy(2);
    dy << 1.5, -2.5;
    const auto dx = gmp.backward(dy, 2, 3);
    REQUIRE(dx.at(1, 2, 0) == 1.5);
    REQUIRE(dx.at(0, 1, 1) == -2.5);
    REQUIRE(dx.data.cwiseAbs().sum() == 4.0);

    FeatureMap<double> zero(3, 3, 4);
    const auto yz = nn::global_max_pool(zero);
    for (int c = 0; c < 4; ++c) REQUIRE(yz(c) == 0.0);

    FeatureMap<double> empty;
    REQUIRE_THROWS_AS(gmp.forward(empty), ContractError);
}

TEST_CASE("global max pool agrees with an exhaustive scan on random stacks") {
    Rng rng(77);
    for (int rep = 0; rep < 200; ++rep) {
        const int h = 1 + static_cast<int>(uniform_index(rng, 6));
        const int w = 1 + static_cast<int>(uniform_index(rng, 6));
        const int c = 1 + static_cast<int>(uniform_index(rng, 5));
        FeatureMap<double> x(h, w, c);
        testutil::fill_uniform(x, rng, -4.0, 4.0);
        const auto y = nn::global_max_pool(x);
        for (int ch = 0; ch < c; ++ch) {
            double best = -1e300;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) best = std::max(best, x.at(yy, xx, ch));
            REQUIRE(y(ch) == best);
        }
    }
}
