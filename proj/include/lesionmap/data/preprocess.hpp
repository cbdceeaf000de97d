#pragma once

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "lesionmap/common.hpp"
#include "lesionmap/data/manifest.hpp"

namespace lesionmap {

// Images wider than this are scaled down to the working width before
// training; narrower ones are only padded.
inline constexpr int kResizeSkipThreshold = 800;

struct PreprocessResult {
    cv::Mat image;     // padded, dims divisible by 16
    int content_h = 0; // valid region before padding
    int content_w = 0;
};

inline int pad_to_multiple(int v, int m) { return ((v + m - 1) / m) * m; }

// Scales to the target width preserving aspect ratio, then pads the bottom
// and right edges with black so both dims are divisible by 16. Images whose
// width already matches the target are passed through without resampling.
inline PreprocessResult resize_to_width(const cv::Mat& img, int target_width,
                                        int interpolation = cv::INTER_AREA) {
    if (img.empty()) throw ContractError("resize_to_width: empty image");
    if (target_width <= 0 || target_width % 16 != 0)
        throw ContractError("resize_to_width: target width must be a positive multiple of 16");

    cv::Mat scaled;
    if (img.cols == target_width) {
        scaled = img;
    } else {
        const double f = static_cast<double>(target_width) / img.cols;
        const int new_h = std::max(1, static_cast<int>(std::lround(img.rows * f)));
        cv::resize(img, scaled, cv::Size(target_width, new_h), 0, 0, interpolation);
    }

    PreprocessResult r;
    r.content_h = scaled.rows;
    r.content_w = scaled.cols;
    const int pad_h = pad_to_multiple(scaled.rows, 16) - scaled.rows;
    if (pad_h > 0) {
        cv::copyMakeBorder(scaled, r.image, 0, pad_h, 0, 0, cv::BORDER_CONSTANT,
                           cv::Scalar(0, 0, 0));
    } else {
        r.image = scaled;
    }
    return r;
}

// Ground-truth masks follow the image geometry: nearest-neighbour resampling
// keeps them binary.
inline PreprocessResult resize_mask_to_width(const cv::Mat& mask, int target_width) {
    return resize_to_width(mask, target_width, cv::INTER_NEAREST);
}

inline void preprocess_sample(ImageSample& s, const DatasetManifest& m, int target_width) {
    cv::Mat raw = read_image_bgr(m.resolve(s.image_path));
    auto r = resize_to_width(raw, target_width);
    s.pixels = r.image;
    s.content_h = r.content_h;
    s.content_w = r.content_w;
    s.gt_maps.assign(s.gt_map_paths.size(), cv::Mat());
    for (std::size_t i = 0; i < s.gt_map_paths.size(); ++i) {
        if (s.gt_map_paths[i].empty()) continue;
        cv::Mat gm = read_mask(m.resolve(s.gt_map_paths[i]));
        if (gm.rows != raw.rows || gm.cols != raw.cols)
            throw ContractError("ground-truth map '" + s.gt_map_paths[i] +
                                "' does not match image dimensions");
        s.gt_maps[i] = resize_mask_to_width(gm, target_width).image;
    }
}

}  // namespace lesionmap
