#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lesionmap/data/schema.hpp"
#include "lesionmap/nn/layers.hpp"

namespace lesionmap {

enum class ModelVariant { kAlMax, kAlFc, kAOnly };

inline std::string variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::kAlMax: return "al-max";
        case ModelVariant::kAlFc: return "al-fc";
        case ModelVariant::kAOnly: return "a-only";
    }
    return "?";
}

inline ModelVariant variant_from_name(const std::string& s) {
    if (s == "al-max") return ModelVariant::kAlMax;
    if (s == "al-fc") return ModelVariant::kAlFc;
    if (s == "a-only") return ModelVariant::kAOnly;
    throw ContractError("unknown variant '" + s + "' (expected al-max, al-fc or a-only)");
}

// Width layout of the convolutional trunk. The layer pattern is the 13-conv
// arrangement of the reference classifier (2-2-3-3-3 with 2x2 max pooling
// between blocks); the final pooling is omitted so the trunk has net stride
// 16. The reference preset keeps the original widths; the reduced preset is
// a narrow version for CPU desk-scale runs.
struct TrunkConfig {
    std::vector<int> block_widths = {64, 128, 256, 512, 512};
    static constexpr int kConvsPerBlock[5] = {2, 2, 3, 3, 3};

    static TrunkConfig reference() { return {{64, 128, 256, 512, 512}}; }
    static TrunkConfig reduced() { return {{8, 16, 24, 32, 32}}; }

    int out_channels() const { return block_widths.at(4); }

    void validate() const {
        if (block_widths.size() != 5)
            throw ContractError("trunk config: expected 5 block widths");
        for (int w : block_widths)
            if (w < 1) throw ContractError("trunk config: widths must be positive");
    }
};

template <class T>
struct Prediction;

namespace nn {

template <class T>
class Trunk {
public:
    explicit Trunk(const TrunkConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        int in_c = 3;
        int conv_index = 0;
        for (int b = 0; b < 5; ++b) {
            const int out_c = cfg.block_widths[static_cast<std::size_t>(b)];
            for (int i = 0; i < TrunkConfig::kConvsPerBlock[b]; ++i) {
                convs_.emplace_back("trunk.conv" + std::to_string(b + 1) + "_" +
                                        std::to_string(i + 1),
                                    in_c, out_c);
                in_c = out_c;
                ++conv_index;
            }
        }
        relus_.resize(convs_.size());
        (void)conv_index;
    }

    const TrunkConfig& config() const { return cfg_; }
    int out_channels() const { return cfg_.out_channels(); }

    // Net stride 16: inputs must arrive padded to multiples of 16.
    FeatureMap<T> forward(const FeatureMap<T>& image) {
        if (image.h % 16 != 0 || image.w % 16 != 0)
            throw ContractError("trunk: input dims must be multiples of 16, got " +
                                std::to_string(image.h) + "x" + std::to_string(image.w));
        if (image.channels() != 3)
            throw ContractError("trunk: expected 3 input channels");
        FeatureMap<T> x = image;
        std::size_t li = 0;
        for (int b = 0; b < 5; ++b) {
            for (int i = 0; i < TrunkConfig::kConvsPerBlock[b]; ++i, ++li) {
                x = convs_[li].forward(x);
                x = relus_[li].forward(x);
            }
            if (b < 4) x = pools_[static_cast<std::size_t>(b)].forward(x);
        }
        return x;
    }

    FeatureMap<T> backward(const FeatureMap<T>& dfeat) {
        FeatureMap<T> d = dfeat;
        std::size_t li = convs_.size();
        for (int b = 4; b >= 0; --b) {
            if (b < 4) d = pools_[static_cast<std::size_t>(b)].backward(d);
            for (int i = 0; i < TrunkConfig::kConvsPerBlock[b]; ++i) {
                --li;
                d = relus_[li].backward(d);
                d = convs_[li].backward(d);
            }
        }
        return d;
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (auto& c : convs_)
            for (auto& p : c.params()) out.push_back(p);
        return out;
    }

    std::vector<Conv3x3<T>>& convs() { return convs_; }

    void release_cache() {
        for (auto& c : convs_) c.release_cache();
        for (auto& r : relus_) r.release_cache();
        for (auto& p : pools_) p.release_cache();
    }

private:
    TrunkConfig cfg_;
    std::vector<Conv3x3<T>> convs_;
    std::vector<ReLU<T>> relus_;
    std::array<MaxPool2<T>, 4> pools_;
};

}  // namespace nn

template <class T>
T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

// Output of one forward pass. Lesion fields and maps are only present for
// the A+L variants; the baseline emits the diagnosis alone.
template <class T>
struct Prediction {
    nn::Vec<T> lesion_logits;  // empty for a-only
    nn::Vec<T> lesion_probs;
    T diagnosis_logit = T(0);
    T diagnosis_prob = T(0);
    std::optional<nn::FeatureMap<T>> maps;  // pre-sigmoid lesion activation maps

    bool has_lesions() const { return lesion_logits.cols() > 0; }
};

// Maximum-entry aggregation of the lesion logits. With the downstream
// sigmoid this is equivalent to taking the maximum of the lesion
// probabilities, since the sigmoid is strictly increasing.
template <class T>
T aggregate_max(const nn::Vec<T>& lesion_logits, int* argmax = nullptr) {
    if (lesion_logits.cols() == 0)
        throw ContractError("aggregate_max: empty lesion vector");
    int arg = 0;
    T best = lesion_logits(0);
    for (int i = 1; i < lesion_logits.cols(); ++i)
        if (lesion_logits(i) > best) {
            best = lesion_logits(i);
            arg = i;
        }
    if (argmax) *argmax = arg;
    return best;
}

// Learned linear aggregation over the lesion logits.
template <class T>
T aggregate_fc(const nn::Vec<T>& lesion_logits, const nn::Mat<T>& w, T b) {
    if (w.rows() != lesion_logits.cols() || w.cols() != 1)
        throw ContractError("aggregate_fc: weight length mismatch");
    return (lesion_logits * w)(0, 0) + b;
}

// The full model: convolutional trunk plus either the lesion-map setting
// (1x1 head, global max pooling, Max/FC aggregator) or the baseline
// classifier head (final pooling, two fully connected layers).
template <class T>
class Network {
public:
    Network(ModelVariant variant, LesionSchema schema, TrunkConfig trunk_cfg,
            int baseline_input_size = 0, int baseline_hidden = 64)
        : variant_(variant), schema_(std::move(schema)), trunk_(trunk_cfg) {
        schema_.validate();
        if (is_al()) {
            head_ = std::make_unique<nn::Conv1x1<T>>("head", trunk_.out_channels(),
                                                     schema_.size());
            if (variant_ == ModelVariant::kAlFc)
                fc_ = std::make_unique<nn::Dense<T>>("aggregator", schema_.size(), 1);
        } else {
            if (baseline_input_size <= 0 || baseline_input_size % 32 != 0)
                throw ContractError(
                    "a-only: baseline_input_size must be a positive multiple of 32");
            if (baseline_hidden < 1)
                throw ContractError("a-only: baseline_hidden must be positive");
            baseline_input_size_ = baseline_input_size;
            baseline_hidden_ = baseline_hidden;
            const int cells = (baseline_input_size / 32) * (baseline_input_size / 32);
            classifier_hidden_ = std::make_unique<nn::Dense<T>>(
                "classifier.hidden", cells * trunk_.out_channels(), baseline_hidden);
            classifier_out_ = std::make_unique<nn::Dense<T>>("classifier.out",
                                                             baseline_hidden, 1);
        }
    }

    ModelVariant variant() const { return variant_; }
    bool is_al() const { return variant_ != ModelVariant::kAOnly; }
    const LesionSchema& schema() const { return schema_; }
    const TrunkConfig& trunk_config() const { return trunk_.config(); }
    int baseline_input_size() const { return baseline_input_size_; }
    int baseline_hidden() const { return baseline_hidden_; }
    nn::Trunk<T>& trunk() { return trunk_; }

    Prediction<T> forward(const nn::FeatureMap<T>& image) {
        nn::FeatureMap<T> feat = trunk_.forward(image);
        Prediction<T> out;
        if (is_al()) {
            nn::FeatureMap<T> maps = head_->forward(feat);
            map_h_ = maps.h;
            map_w_ = maps.w;
            out.lesion_logits = gmp_.forward(maps);
            if (variant_ == ModelVariant::kAlMax) {
                out.diagnosis_logit = aggregate_max(out.lesion_logits, &max_arg_);
            } else {
                nn::Vec<T> d = fc_->forward(out.lesion_logits);
                out.diagnosis_logit = d(0);
            }
            out.lesion_probs.resize(out.lesion_logits.cols());
            for (int i = 0; i < out.lesion_logits.cols(); ++i)
                out.lesion_probs(i) = sigmoid(out.lesion_logits(i));
            out.maps = std::move(maps);
        } else {
            nn::FeatureMap<T> pooled = pool5_.forward(feat);
            // fixed-size classifier input, as in the original architecture
            nn::Vec<T> flat = Eigen::Map<const nn::Vec<T>>(pooled.data.data(),
                                                           pooled.data.size());
            nn::Vec<T> h = classifier_hidden_->forward(flat);
            h = hidden_relu_.forward_vec(h);
            pooled_h_ = pooled.h;
            pooled_w_ = pooled.w;
            out.diagnosis_logit = classifier_out_->forward(h)(0);
        }
        out.diagnosis_prob = sigmoid(out.diagnosis_logit);
        return out;
    }

    // dlesion_logits: gradient of the loss w.r.t. the pre-sigmoid lesion
    // vector (empty for a-only); ddiag_logit: gradient w.r.t. the
    // pre-sigmoid diagnosis. Accumulates parameter gradients.
    void backward(const nn::Vec<T>& dlesion_logits, T ddiag_logit) {
        if (is_al()) {
            nn::Vec<T> dlesions = dlesion_logits;
            if (dlesions.cols() == 0) dlesions.setZero(schema_.size());
            if (variant_ == ModelVariant::kAlMax) {
                dlesions(max_arg_) += ddiag_logit;
            } else {
                nn::Vec<T> dd(1);
                dd(0) = ddiag_logit;
                dlesions += fc_->backward(dd);
            }
            nn::FeatureMap<T> dmaps = gmp_.backward(dlesions, map_h_, map_w_);
            nn::FeatureMap<T> dfeat = head_->backward(dmaps);
            trunk_.backward(dfeat);
        } else {
            nn::Vec<T> dd(1);
            dd(0) = ddiag_logit;
            nn::Vec<T> dh = classifier_out_->backward(dd);
            dh = hidden_relu_.backward_vec(dh);
            nn::Vec<T> dflat = classifier_hidden_->backward(dh);
            nn::FeatureMap<T> dpool(pooled_h_, pooled_w_, trunk_.out_channels());
            Eigen::Map<nn::Vec<T>>(dpool.data.data(), dpool.data.size()) = dflat;
            nn::FeatureMap<T> dfeat = pool5_.backward(dpool);
            trunk_.backward(dfeat);
        }
    }

    std::vector<nn::ParamRef<T>> params() {
        auto out = trunk_.params();
        if (head_)
            for (auto& p : head_->params()) out.push_back(p);
        if (fc_)
            for (auto& p : fc_->params()) out.push_back(p);
        if (classifier_hidden_)
            for (auto& p : classifier_hidden_->params()) out.push_back(p);
        if (classifier_out_)
            for (auto& p : classifier_out_->params()) out.push_back(p);
        return out;
    }

    void zero_grads() {
        for (auto& p : params()) p.grad->setZero();
    }

    nn::Conv1x1<T>* head() { return head_.get(); }
    nn::Dense<T>* fc_aggregator() { return fc_.get(); }

private:
    // ReLU over a row vector, for the classifier hidden layer.
    struct VecReLU {
        nn::Vec<T> mask;
        nn::Vec<T> forward_vec(const nn::Vec<T>& x) {
            mask = (x.array() > T(0)).template cast<T>();
            return x.cwiseMax(T(0));
        }
        nn::Vec<T> backward_vec(const nn::Vec<T>& dy) {
            return dy.cwiseProduct(mask);
        }
    };

    ModelVariant variant_;
    LesionSchema schema_;
    nn::Trunk<T> trunk_;
    std::unique_ptr<nn::Conv1x1<T>> head_;
    nn::GlobalMaxPool<T> gmp_;
    std::unique_ptr<nn::Dense<T>> fc_;  // al-fc aggregator
    nn::MaxPool2<T> pool5_;             // a-only
    std::unique_ptr<nn::Dense<T>> classifier_hidden_;
    std::unique_ptr<nn::Dense<T>> classifier_out_;
    VecReLU hidden_relu_;
    int baseline_input_size_ = 0;
    int baseline_hidden_ = 0;
    int map_h_ = 0, map_w_ = 0;
    int pooled_h_ = 0, pooled_w_ = 0;
    int max_arg_ = 0;
};

// Elementwise sigmoid of each map channel: the coarse segmentation
// probability rasters.
template <class T>
nn::FeatureMap<T> export_probability_maps(const nn::FeatureMap<T>& stack) {
    nn::FeatureMap<T> out = stack;
    for (Eigen::Index p = 0; p < out.positions(); ++p)
        for (int c = 0; c < out.channels(); ++c)
            out.data(p, c) = sigmoid(stack.data(p, c));
    return out;
}

}  // namespace lesionmap
