#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lesionmap/common.hpp"
#include "lesionmap/nn/tensor.hpp"

namespace lesionmap {

inline cv::Mat read_image_bgr(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("cannot read image '" + path.string() + "'");
    return img;
}

inline cv::Mat read_mask(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw IoError("cannot read mask '" + path.string() + "'");
    return img;
}

inline void write_image(const std::filesystem::path& path, const cv::Mat& img) {
    if (!cv::imwrite(path.string(), img))
        throw IoError("cannot write image '" + path.string() + "'");
}

// Converts an 8-bit BGR raster into the network input: one row per pixel
// (row-major spatial order), channels RGB, scaled to [0,1] then standardized
// per channel with fixed fundus statistics.
inline constexpr double kInputMean[3] = {0.5, 0.3, 0.2};  // R, G, B
inline constexpr double kInputStd[3] = {0.25, 0.2, 0.15};

template <typename T>
nn::FeatureMap<T> to_input_tensor(const cv::Mat& bgr) {
    if (bgr.empty()) throw ContractError("to_input_tensor: empty image");
    if (bgr.type() != CV_8UC3)
        throw ContractError("to_input_tensor: expected an 8-bit BGR image");
    nn::FeatureMap<T> fm(bgr.rows, bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            const auto& px = row[x];
            for (int c = 0; c < 3; ++c) {
                const double v = px[2 - c] / 255.0;  // BGR -> RGB
                fm.at(y, x, c) =
                    static_cast<T>((v - kInputMean[c]) / kInputStd[c]);
            }
        }
    }
    return fm;
}

// Region-of-interest mask of the fundus disc: pixels whose max channel value
// exceeds the threshold. Returns 8-bit 0/255.
inline cv::Mat roi_mask(const cv::Mat& bgr, int threshold = 20) {
    if (bgr.type() != CV_8UC3) throw ContractError("roi_mask: expected an 8-bit BGR image");
    cv::Mat channels[3];
    cv::split(bgr, channels);
    cv::Mat m = cv::max(channels[0], cv::max(channels[1], channels[2]));
    cv::Mat out;
    cv::threshold(m, out, threshold, 255, cv::THRESH_BINARY);
    return out;
}

}  // namespace lesionmap
