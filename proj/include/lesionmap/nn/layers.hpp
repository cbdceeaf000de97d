#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "lesionmap/nn/tensor.hpp"

namespace lesionmap::nn {

// 3x3 convolution, stride 1, zero padding 1. Kernel stored as a
// (9*in_c) x out_c matrix whose row blocks follow the (dy,dx) offsets in
// row-major order, so forward is im2col followed by one GEMM.
template <class T>
class Conv3x3 {
public:
    Conv3x3(std::string name, int in_c, int out_c)
        : name_(std::move(name)), in_c_(in_c), out_c_(out_c) {
        weight_.setZero(9 * in_c, out_c);
        bias_.setZero(1, out_c);
        grad_weight_.setZero(9 * in_c, out_c);
        grad_bias_.setZero(1, out_c);
    }

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }
    // fan-in as seen by an output unit: kernel area times input channels
    int fan_in() const { return 9 * in_c_; }

    FeatureMap<T> forward(const FeatureMap<T>& x) {
        if (x.channels() != in_c_)
            throw ContractError(name_ + ": expected " + std::to_string(in_c_) +
                                " input channels, got " + std::to_string(x.channels()));
        h_ = x.h;
        w_ = x.w;
        build_col(x.data);
        FeatureMap<T> y(x.h, x.w, out_c_);
        y.data.noalias() = col_ * weight_;
        y.data.rowwise() += bias_.row(0);
        return y;
    }

    // Accumulates parameter gradients; returns gradient w.r.t. the input.
    FeatureMap<T> backward(const FeatureMap<T>& dy) {
        grad_weight_.noalias() += col_.transpose() * dy.data;
        grad_bias_.row(0) += dy.data.colwise().sum();
        Mat<T> dcol(dy.positions(), 9 * in_c_);
        dcol.noalias() = dy.data * weight_.transpose();
        FeatureMap<T> dx(h_, w_, in_c_);
        scatter_col(dcol, dx.data);
        return dx;
    }

    std::vector<ParamRef<T>> params() {
        return {{name_ + ".weight", &weight_, &grad_weight_},
                {name_ + ".bias", &bias_, &grad_bias_}};
    }

    void release_cache() { col_.resize(0, 0); }

private:
    // col row p holds the 3x3 neighborhood of position p, one in_c_-wide
    // segment per (dy,dx) offset; out-of-image entries stay zero.
    void build_col(const Mat<T>& x) {
        const Eigen::Index rows = static_cast<Eigen::Index>(h_) * w_;
        col_.setZero(rows, 9 * in_c_);
        for (int k = 0; k < 9; ++k) {
            const int dy = k / 3 - 1;
            const int dx = k % 3 - 1;
            const int col0 = k * in_c_;
            for (int y = 0; y < h_; ++y) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h_) continue;
                const int x0 = dx < 0 ? 1 : 0;
                const int x1 = dx > 0 ? w_ - 1 : w_;
                if (x1 <= x0) continue;
                const Eigen::Index n = static_cast<Eigen::Index>(x1 - x0) * in_c_;
                const T* src = x.data() + (static_cast<Eigen::Index>(sy) * w_ + x0 + dx) * in_c_;
                T* dst = col_.data() + (static_cast<Eigen::Index>(y) * w_ + x0) * (9 * in_c_) + col0;
                // dest rows are strided by 9*in_c_, source rows by in_c_
                for (int xx = x0; xx < x1; ++xx) {
                    std::memcpy(dst, src, sizeof(T) * in_c_);
                    src += in_c_;
                    dst += 9 * in_c_;
                }
                (void)n;
            }
        }
    }

    void scatter_col(const Mat<T>& dcol, Mat<T>& dx) const {
        for (int k = 0; k < 9; ++k) {
            const int dy = k / 3 - 1;
            const int dx_off = k % 3 - 1;
            const int col0 = k * in_c_;
            for (int y = 0; y < h_; ++y) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h_) continue;
                const int x0 = dx_off < 0 ? 1 : 0;
                const int x1 = dx_off > 0 ? w_ - 1 : w_;
                for (int xx = x0; xx < x1; ++xx) {
                    const T* src = dcol.data() +
                                   (static_cast<Eigen::Index>(y) * w_ + xx) * (9 * in_c_) + col0;
                    T* dst = dx.data() +
                             (static_cast<Eigen::Index>(sy) * w_ + xx + dx_off) * in_c_;
                    for (int c = 0; c < in_c_; ++c) dst[c] += src[c];
                }
            }
        }
    }

    std::string name_;
    int in_c_;
    int out_c_;
    Mat<T> weight_, bias_, grad_weight_, grad_bias_;
    Mat<T> col_;
    int h_ = 0, w_ = 0;
};

// 1x1 convolution: a per-pixel linear map, i.e. a plain GEMM over the
// channel-last layout.
template <class T>
class Conv1x1 {
public:
    Conv1x1(std::string name, int in_c, int out_c)
        : name_(std::move(name)), in_c_(in_c), out_c_(out_c) {
        weight_.setZero(in_c, out_c);
        bias_.setZero(1, out_c);
        grad_weight_.setZero(in_c, out_c);
        grad_bias_.setZero(1, out_c);
    }

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }
    int fan_in() const { return in_c_; }

    FeatureMap<T> forward(const FeatureMap<T>& x) {
        if (x.channels() != in_c_)
            throw ContractError(name_ + ": channel mismatch");
        input_ = x.data;
        h_ = x.h;
        w_ = x.w;
        FeatureMap<T> y(x.h, x.w, out_c_);
        y.data.noalias() = x.data * weight_;
        y.data.rowwise() += bias_.row(0);
        return y;
    }

    FeatureMap<T> backward(const FeatureMap<T>& dy) {
        grad_weight_.noalias() += input_.transpose() * dy.data;
        grad_bias_.row(0) += dy.data.colwise().sum();
        FeatureMap<T> dx(h_, w_, in_c_);
        dx.data.noalias() = dy.data * weight_.transpose();
        return dx;
    }

    std::vector<ParamRef<T>> params() {
        return {{name_ + ".weight", &weight_, &grad_weight_},
                {name_ + ".bias", &bias_, &grad_bias_}};
    }

    void release_cache() { input_.resize(0, 0); }

private:
    std::string name_;
    int in_c_;
    int out_c_;
    Mat<T> weight_, bias_, grad_weight_, grad_bias_;
    Mat<T> input_;
    int h_ = 0, w_ = 0;
};

template <class T>
class ReLU {
public:
    FeatureMap<T> forward(const FeatureMap<T>& x) {
        mask_ = (x.data.array() > T(0)).template cast<T>();
        FeatureMap<T> y = x;
        y.data = x.data.cwiseMax(T(0));
        return y;
    }

    FeatureMap<T> backward(const FeatureMap<T>& dy) {
        FeatureMap<T> dx = dy;
        dx.data.array() *= mask_.array();
        return dx;
    }

    void release_cache() { mask_.resize(0, 0); }

private:
    Mat<T> mask_;
};

// 2x2 max pooling, stride 2. Input dims must be even (guaranteed upstream
// by the pad-to-multiple-of-16 preprocessing).
template <class T>
class MaxPool2 {
public:
    FeatureMap<T> forward(const FeatureMap<T>& x) {
        if (x.h % 2 != 0 || x.w % 2 != 0)
            throw ContractError("MaxPool2: odd input dimensions");
        h_ = x.h;
        w_ = x.w;
        const int oh = x.h / 2, ow = x.w / 2, c = x.channels();
        FeatureMap<T> y(oh, ow, c);
        argmax_.resize(static_cast<Eigen::Index>(oh) * ow, c);
        for (int y0 = 0; y0 < oh; ++y0) {
            for (int x0 = 0; x0 < ow; ++x0) {
                const Eigen::Index out_row = static_cast<Eigen::Index>(y0) * ow + x0;
                const Eigen::Index r00 = static_cast<Eigen::Index>(2 * y0) * w_ + 2 * x0;
                const Eigen::Index rows[4] = {r00, r00 + 1, r00 + w_, r00 + w_ + 1};
                for (int ch = 0; ch < c; ++ch) {
                    T best = x.data(rows[0], ch);
                    Eigen::Index arg = rows[0];
                    for (int k = 1; k < 4; ++k) {
                        const T v = x.data(rows[k], ch);
                        if (v > best) {
                            best = v;
                            arg = rows[k];
                        }
                    }
                    y.data(out_row, ch) = best;
                    argmax_(out_row, ch) = arg;
                }
            }
        }
        return y;
    }

    FeatureMap<T> backward(const FeatureMap<T>& dy) {
        FeatureMap<T> dx(h_, w_, dy.channels());
        for (Eigen::Index p = 0; p < dy.positions(); ++p)
            for (int c = 0; c < dy.channels(); ++c)
                dx.data(argmax_(p, c), c) += dy.data(p, c);
        return dx;
    }

    void release_cache() { argmax_.resize(0, 0); }

private:
    Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
    int h_ = 0, w_ = 0;
};

// Fully connected layer over a flattened input row vector.
template <class T>
class Dense {
public:
    Dense(std::string name, int in_dim, int out_dim)
        : name_(std::move(name)), in_dim_(in_dim), out_dim_(out_dim) {
        weight_.setZero(in_dim, out_dim);
        bias_.setZero(1, out_dim);
        grad_weight_.setZero(in_dim, out_dim);
        grad_bias_.setZero(1, out_dim);
    }

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    int fan_in() const { return in_dim_; }

    Vec<T> forward(const Vec<T>& x) {
        if (x.cols() != in_dim_)
            throw ContractError(name_ + ": expects a fixed input size of " +
                                std::to_string(in_dim_) + ", got " +
                                std::to_string(x.cols()));
        input_ = x;
        Vec<T> y = x * weight_;
        y += bias_.row(0);
        return y;
    }

    Vec<T> backward(const Vec<T>& dy) {
        grad_weight_.noalias() += input_.transpose() * dy;
        grad_bias_.row(0) += dy;
        return dy * weight_.transpose();
    }

    std::vector<ParamRef<T>> params() {
        return {{name_ + ".weight", &weight_, &grad_weight_},
                {name_ + ".bias", &bias_, &grad_bias_}};
    }

    void release_cache() { input_.resize(0); }

private:
    std::string name_;
    int in_dim_;
    int out_dim_;
    Mat<T> weight_, bias_, grad_weight_, grad_bias_;
    Vec<T> input_;
};

// Global max pooling: each channel reduces to its spatial maximum.
template <class T>
struct GlobalMaxPool {
    std::vector<Eigen::Index> argmax;
    Eigen::Index positions = 0;

    Vec<T> forward(const FeatureMap<T>& x) {
        if (x.positions() == 0)
            throw ContractError("global_max_pool: empty spatial extent");
        positions = x.positions();
        const int c = x.channels();
        Vec<T> out(c);
        argmax.assign(static_cast<std::size_t>(c), 0);
        for (int ch = 0; ch < c; ++ch) {
            Eigen::Index arg = 0;
            T best = x.data(0, ch);
            for (Eigen::Index p = 1; p < x.positions(); ++p) {
                if (x.data(p, ch) > best) {
                    best = x.data(p, ch);
                    arg = p;
                }
            }
            out(ch) = best;
            argmax[static_cast<std::size_t>(ch)] = arg;
        }
        return out;
    }

    FeatureMap<T> backward(const Vec<T>& dy, int h, int w) {
        FeatureMap<T> dx(h, w, static_cast<int>(dy.cols()));
        for (int ch = 0; ch < dy.cols(); ++ch)
            dx.data(argmax[static_cast<std::size_t>(ch)], ch) = dy(ch);
        return dx;
    }
};

// Free-function form used by the evaluation path and the oracle tests.
template <class T>
Vec<T> global_max_pool(const FeatureMap<T>& stack) {
    GlobalMaxPool<T> gmp;
    return gmp.forward(stack);
}

}  // namespace lesionmap::nn
