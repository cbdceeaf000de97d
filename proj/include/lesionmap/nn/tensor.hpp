#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lesionmap/common.hpp"

namespace lesionmap::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

// Spatial feature map stored channel-last: row p = position (y*w + x),
// column c = channel. This keeps every convolution a single GEMM.
template <class T>
struct FeatureMap {
    int h = 0;
    int w = 0;
    Mat<T> data;  // (h*w) x channels

    FeatureMap() = default;
    FeatureMap(int h_, int w_, int channels) : h(h_), w(w_) {
        data.setZero(static_cast<Eigen::Index>(h_) * w_, channels);
    }

    int channels() const { return static_cast<int>(data.cols()); }
    Eigen::Index positions() const { return data.rows(); }

    T& at(int y, int x, int c) { return data(static_cast<Eigen::Index>(y) * w + x, c); }
    T at(int y, int x, int c) const { return data(static_cast<Eigen::Index>(y) * w + x, c); }
};

// Named view of one parameter tensor and its gradient. The name is stable
// across runs and is the key used by the optimizer and the checkpoint file.
template <class T>
struct ParamRef {
    std::string name;
    Mat<T>* value = nullptr;
    Mat<T>* grad = nullptr;
};

}  // namespace lesionmap::nn
