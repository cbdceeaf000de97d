#pragma once

#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "lesionmap/common.hpp"

namespace lesionmap {

struct AugmentConfig {
    bool enabled = true;
    double flip_prob = 0.5;                   // horizontal and vertical, independent
    double max_intensity_scale_delta = 0.05;  // per-channel multiplier in [1-d, 1+d]
    double max_brightness_delta = 0.05;       // additive, fraction of dynamic range
    double max_rotation_deg = 8.0;
    double max_scale_delta = 0.04;            // affine scale in [1-d, 1+d]
    double max_shear_deg = 2.0;

    void validate() const {
        if (flip_prob < 0 || flip_prob > 1)
            throw ContractError("augment: flip probability must be in [0,1]");
        if (max_intensity_scale_delta < 0 || max_intensity_scale_delta >= 1 ||
            max_brightness_delta < 0 || max_rotation_deg < 0 || max_scale_delta < 0 ||
            max_scale_delta >= 1 || max_shear_deg < 0 || max_shear_deg >= 90)
            throw ContractError("augment: parameter ranges out of bounds");
    }
};

struct AugmentParams {
    bool hflip = false;
    bool vflip = false;
    double channel_scale[3] = {1.0, 1.0, 1.0};
    double brightness = 0.0;  // fraction of dynamic range
    double rotation_deg = 0.0;
    double scale = 1.0;
    double shear_deg = 0.0;

    bool geometric_identity() const {
        return !hflip && !vflip && rotation_deg == 0.0 && scale == 1.0 && shear_deg == 0.0;
    }
    bool photometric_identity() const {
        return channel_scale[0] == 1.0 && channel_scale[1] == 1.0 &&
               channel_scale[2] == 1.0 && brightness == 0.0;
    }
    bool is_identity() const { return geometric_identity() && photometric_identity(); }
};

// Per-sample parameters are a pure function of (seed, epoch, image id), so
// loaders may process samples in any order.
inline AugmentParams sample_augment_params(const AugmentConfig& cfg, std::uint64_t base_seed,
                                           int epoch, const std::string& image_id) {
    AugmentParams p;
    if (!cfg.enabled) return p;
    Rng rng(derive_seed(base_seed, "augment:" + image_id,
                        static_cast<std::uint64_t>(epoch)));
    p.hflip = bernoulli(rng, cfg.flip_prob);
    p.vflip = bernoulli(rng, cfg.flip_prob);
    for (double& s : p.channel_scale)
        s = uniform_real(rng, 1.0 - cfg.max_intensity_scale_delta,
                         1.0 + cfg.max_intensity_scale_delta);
    p.brightness = uniform_real(rng, -cfg.max_brightness_delta, cfg.max_brightness_delta);
    p.rotation_deg = uniform_real(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg);
    p.scale = uniform_real(rng, 1.0 - cfg.max_scale_delta, 1.0 + cfg.max_scale_delta);
    p.shear_deg = uniform_real(rng, -cfg.max_shear_deg, cfg.max_shear_deg);
    return p;
}

// Flip then rotate+shear+scale about the image centre. Dimensions are kept;
// uncovered pixels are black. Use INTER_NEAREST for masks.
inline cv::Mat apply_geometric(const cv::Mat& img, const AugmentParams& p,
                               int interpolation = cv::INTER_LINEAR) {
    if (img.empty()) throw ContractError("apply_geometric: empty image");
    if (p.geometric_identity()) return img;
    cv::Mat cur = img;
    if (p.hflip) {
        cv::Mat t;
        cv::flip(cur, t, 1);
        cur = t;
    }
    if (p.vflip) {
        cv::Mat t;
        cv::flip(cur, t, 0);
        cur = t;
    }
    if (p.rotation_deg == 0.0 && p.scale == 1.0 && p.shear_deg == 0.0) return cur;

    const double th = p.rotation_deg * CV_PI / 180.0;
    const double sh = std::tan(p.shear_deg * CV_PI / 180.0);
    const double ct = std::cos(th), st = std::sin(th);
    // A = R(th) * Shear(sh) * s
    const double a00 = p.scale * ct, a01 = p.scale * (ct * sh - st);
    const double a10 = p.scale * st, a11 = p.scale * (st * sh + ct);
    const double cx = (cur.cols - 1) / 2.0, cy = (cur.rows - 1) / 2.0;
    cv::Mat mat = (cv::Mat_<double>(2, 3) << a00, a01, cx - a00 * cx - a01 * cy,
                   a10, a11, cy - a10 * cx - a11 * cy);
    cv::Mat out;
    cv::warpAffine(cur, out, mat, cur.size(), interpolation, cv::BORDER_CONSTANT,
                   cv::Scalar(0, 0, 0));
    return out;
}

// Per-channel gain and global brightness shift on an 8-bit BGR image.
inline cv::Mat apply_photometric(const cv::Mat& img, const AugmentParams& p) {
    if (img.empty()) throw ContractError("apply_photometric: empty image");
    if (img.type() != CV_8UC3)
        throw ContractError("apply_photometric: expected an 8-bit BGR image");
    if (p.photometric_identity()) return img;
    cv::Mat out(img.size(), img.type());
    const double add = p.brightness * 255.0;
    for (int y = 0; y < img.rows; ++y) {
        const auto* src = img.ptr<cv::Vec3b>(y);
        auto* dst = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.cols; ++x)
            for (int c = 0; c < 3; ++c)
                dst[x][c] = cv::saturate_cast<uchar>(src[x][c] * p.channel_scale[c] + add);
    }
    return out;
}

inline cv::Mat apply_augment(const cv::Mat& img, const AugmentParams& p) {
    return apply_photometric(apply_geometric(img, p), p);
}

}  // namespace lesionmap
