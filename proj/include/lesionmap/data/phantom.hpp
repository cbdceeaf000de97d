#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lesionmap/common.hpp"
#include "lesionmap/data/image_io.hpp"
#include "lesionmap/data/manifest.hpp"

namespace lesionmap {

struct LesionSignature {
    cv::Vec3b color;  // BGR
    int style = 0;    // 0 solid, 1 ring, 2 speckle, 3 radial fade
};

struct PhantomConfig {
    std::filesystem::path out_dir;
    int image_count = 240;
    int image_size = 96;  // square, multiple of 16
    int lesion_count = 4;
    int blob_radius_min = 12;
    int blob_radius_max = 15;
    double positive_fraction = 0.6;
    double lesion_active_prob = 0.35;
    double roi_frac = 0.69;  // fundus disc radius as a fraction of the frame
    std::uint64_t seed = 1;
    std::vector<LesionSignature> signatures;  // empty: defaults per lesion

    void validate() const {
        if (out_dir.empty()) throw ContractError("phantom: output directory required");
        if (image_count < 1) throw ContractError("phantom: image_count must be positive");
        if (image_size < 32 || image_size % 16 != 0)
            throw ContractError("phantom: image_size must be a multiple of 16, at least 32");
        if (lesion_count < 1 || lesion_count > 8)
            throw ContractError("phantom: lesion_count must be in [1,8]");
        if (blob_radius_min < 2 || blob_radius_max < blob_radius_min ||
            blob_radius_max > image_size / 4)
            throw ContractError("phantom: blob radius range invalid (max is image_size/4)");
        if (positive_fraction < 0 || positive_fraction > 1)
            throw ContractError("phantom: positive_fraction must be in [0,1]");
        if (lesion_active_prob <= 0 || lesion_active_prob > 1)
            throw ContractError("phantom: lesion_active_prob must be in (0,1]");
        if (roi_frac < 0.3 || roi_frac > 0.8)
            throw ContractError("phantom: roi_frac must be in [0.3,0.8]");
        if (!signatures.empty() &&
            static_cast<int>(signatures.size()) != lesion_count)
            throw ContractError("phantom: need one signature per lesion");
    }
};

namespace detail {

inline const char* kPhantomLesionNames[8] = {"drusen", "exudates", "hemorrhage", "scar",
                                             "atrophy", "fibrosis", "ped", "pm"};

inline const LesionSignature kPhantomSignatures[8] = {
    {{20, 235, 255}, 0},   // drusen: saturated yellow
    {{235, 60, 20}, 1},    // exudates: blue
    {{180, 10, 120}, 2},   // hemorrhage: purple
    {{45, 230, 20}, 3},    // scar: green
    {{200, 60, 200}, 0},   // magenta
    {{220, 120, 40}, 1},   // blue
    {{30, 140, 240}, 2},   // orange
    {{60, 130, 40}, 3},    // dark green
};

struct PlacedBlob {
    int cx, cy, r;
};

inline bool blob_fits(const std::vector<PlacedBlob>& placed, int cx, int cy, int r) {
    for (const auto& b : placed) {
        const double dx = cx - b.cx, dy = cy - b.cy;
        if (std::sqrt(dx * dx + dy * dy) < r + b.r + 2) return false;
    }
    return true;
}

inline void render_blob(cv::Mat& img, cv::Mat& mask, Rng& rng, int cx, int cy, int r,
                        const LesionSignature& sig) {
    for (int y = cy - r; y <= cy + r; ++y) {
        for (int x = cx - r; x <= cx + r; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d > r) continue;
            mask.at<uchar>(y, x) = 255;
            double gain = 1.0;
            switch (sig.style) {
                case 1: gain = d > 0.6 * r ? 1.04 : 0.99; break;
                case 2: gain = bernoulli(rng, 0.05) ? 0.95 : 1.0; break;
                case 3: gain = 1.0 - 0.05 * d / r; break;
                default: break;
            }
            const double noise = uniform_real(rng, -4.0, 4.0);
            auto& px = img.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                px[c] = cv::saturate_cast<uchar>(sig.color[c] * gain + noise);
        }
    }
}

inline void render_background(cv::Mat& img, Rng& rng, int roi_radius) {
    img.setTo(cv::Scalar(28, 58, 146));
    (void)rng;
    (void)roi_radius;
}

inline void mask_outside_roi(cv::Mat& img, int roi_radius) {
    const int size = img.rows;
    const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)) > roi_radius)
                img.at<cv::Vec3b>(y, x) = cv::Vec3b(0, 0, 0);
}

inline std::string phantom_image_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%04d.png", index);
    return buf;
}

}  // namespace detail

// Renders the synthetic fundus set: circular disc with vessels and a bright
// spot on every image, plus 1 to 3 colored blobs per active lesion type on
// positive images. Ground-truth masks are the exact planted disks, written
// only for active lesions. Output is byte-identical for a fixed seed.
inline DatasetManifest generate_phantom_dataset(const PhantomConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir / "images", ec);
    fs::create_directories(cfg.out_dir / "gt", ec);
    if (!fs::is_directory(cfg.out_dir / "images") || !fs::is_directory(cfg.out_dir / "gt"))
        throw IoError("phantom: cannot create output directory '" + cfg.out_dir.string() +
                      "'");

    std::vector<LesionSignature> sigs = cfg.signatures;
    if (sigs.empty())
        for (int i = 0; i < cfg.lesion_count; ++i)
            sigs.push_back(detail::kPhantomSignatures[i]);

    DatasetManifest m;
    m.name = "phantom";
    m.root = cfg.out_dir;
    m.diagnosis_coupling = true;
    LesionSchema schema;
    schema.name = "phantom";
    for (int i = 0; i < cfg.lesion_count; ++i)
        schema.lesions.push_back(detail::kPhantomLesionNames[i]);
    m.schema = schema;

    // patients take 1 or 2 consecutive images; a patient's images share the
    // diagnosis so folds can stay patient-grouped and stratified
    struct Patient {
        int first, count;
        bool positive = false;
    };
    std::vector<Patient> patients;
    {
        Rng rng(derive_seed(cfg.seed, "patients"));
        int next = 0;
        while (next < cfg.image_count) {
            int take = bernoulli(rng, 0.5) ? 2 : 1;
            take = std::min(take, cfg.image_count - next);
            patients.push_back({next, take});
            next += take;
        }
        const int target = static_cast<int>(
            std::lround(cfg.positive_fraction * cfg.image_count));
        std::vector<int> order(patients.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        fisher_yates_shuffle(order, rng);
        int pos = 0;
        for (int idx : order) {  // exact-fit pass
            auto& p = patients[static_cast<std::size_t>(idx)];
            if (pos + p.count <= target) {
                p.positive = true;
                pos += p.count;
            }
        }
        for (int idx : order) {  // cover any remainder, overshooting by at most one image
            if (pos >= target) break;
            auto& p = patients[static_cast<std::size_t>(idx)];
            if (!p.positive) {
                p.positive = true;
                pos += p.count;
            }
        }
    }

    std::vector<int> image_patient(static_cast<std::size_t>(cfg.image_count));
    std::vector<bool> image_positive(static_cast<std::size_t>(cfg.image_count));
    for (std::size_t pi = 0; pi < patients.size(); ++pi)
        for (int j = 0; j < patients[pi].count; ++j) {
            image_patient[static_cast<std::size_t>(patients[pi].first + j)] =
                static_cast<int>(pi);
            image_positive[static_cast<std::size_t>(patients[pi].first + j)] =
                patients[pi].positive;
        }

    const int roi_radius = static_cast<int>(cfg.roi_frac * cfg.image_size);
    for (int i = 0; i < cfg.image_count; ++i) {
        Rng rng(derive_seed(cfg.seed, "image", static_cast<std::uint64_t>(i)));
        cv::Mat img(cfg.image_size, cfg.image_size, CV_8UC3);
        detail::render_background(img, rng, roi_radius);

        ImageSample s;
        s.image_path = "images/" + detail::phantom_image_name(i);
        s.image_id = s.image_path;
        {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%03d", image_patient[static_cast<std::size_t>(i)]);
            s.patient_id = buf;
        }
        s.diagnosis = image_positive[static_cast<std::size_t>(i)] ? 1 : 0;
        s.lesion_flags.assign(static_cast<std::size_t>(cfg.lesion_count), 0);
        s.gt_map_paths.assign(static_cast<std::size_t>(cfg.lesion_count), "");

        if (s.diagnosis == 1) {
            std::vector<bool> active(static_cast<std::size_t>(cfg.lesion_count));
            bool any = false;
            for (int l = 0; l < cfg.lesion_count; ++l) {
                active[static_cast<std::size_t>(l)] = bernoulli(rng, cfg.lesion_active_prob);
                any = any || active[static_cast<std::size_t>(l)];
            }
            if (!any) active[uniform_index(rng, static_cast<std::size_t>(cfg.lesion_count))] = true;

            const double cx = (cfg.image_size - 1) / 2.0, cy = cx;
            std::vector<detail::PlacedBlob> placed;
            std::vector<int> order;
            for (int l = 0; l < cfg.lesion_count; ++l)
                if (active[static_cast<std::size_t>(l)]) order.push_back(l);
            fisher_yates_shuffle(order, rng);
            for (int l : order) {
                cv::Mat mask = cv::Mat::zeros(cfg.image_size, cfg.image_size, CV_8UC1);
                const int want = 2 + static_cast<int>(uniform_index(rng, 2));
                int made = 0;
                for (int b = 0; b < want; ++b) {
                    int r = cfg.blob_radius_min +
                            static_cast<int>(uniform_index(
                                rng, static_cast<std::size_t>(cfg.blob_radius_max -
                                                              cfg.blob_radius_min + 1)));
                    bool ok = false;
                    int bx = 0, by = 0;
                    const auto place = [&] {
                        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
                            const double ang = uniform_real(rng, 0.0, 2.0 * CV_PI);
                            const double dist =
                                std::sqrt(uniform_unit(rng)) * (roi_radius - r - 2);
                            bx = static_cast<int>(std::lround(cx + dist * std::cos(ang)));
                            by = static_cast<int>(std::lround(cy + dist * std::sin(ang)));
                            if (r >= 12) {  // large blobs lock onto the 16-px grid
                                bx = 16 * std::clamp((bx + 8) / 16, 1, cfg.image_size / 16 - 1);
                                by = 16 * std::clamp((by + 8) / 16, 1, cfg.image_size / 16 - 1);
                                const double ddx = bx - cx, ddy = by - cy;
                                if (std::sqrt(ddx * ddx + ddy * ddy) > roi_radius - r - 2)
                                    continue;
                            }
                            ok = bx >= r && by >= r && bx + r < cfg.image_size &&
                                 by + r < cfg.image_size && detail::blob_fits(placed, bx, by, r);
                        }
                    };
                    place();
                    if (!ok && made == 0 && r > cfg.blob_radius_min) {
                        r = cfg.blob_radius_min;  // crowded: the mandatory blob shrinks
                        place();
                    }
                    if (!ok) {
                        if (made > 0) break;  // crowded: settle for fewer blobs
                        if (r >= 12) {
                            bx = by = 16 * (cfg.image_size / 32);
                        } else {
                            bx = std::clamp(bx, r, cfg.image_size - 1 - r);
                            by = std::clamp(by, r, cfg.image_size - 1 - r);
                        }
                    }
                    detail::render_blob(img, mask, rng, bx, by, r, sigs[static_cast<std::size_t>(l)]);
                    placed.push_back({bx, by, r});
                    ++made;
                }
                s.lesion_flags[static_cast<std::size_t>(l)] = 1;
                const std::string gt_rel = "gt/" + detail::phantom_image_name(i).substr(0, 8) +
                                           "_" + schema.lesions[static_cast<std::size_t>(l)] +
                                           ".png";
                s.gt_map_paths[static_cast<std::size_t>(l)] = gt_rel;
                write_image(cfg.out_dir / gt_rel, mask);
            }
        }

        detail::mask_outside_roi(img, roi_radius);
        write_image(cfg.out_dir / s.image_path, img);
        m.samples.push_back(std::move(s));
    }

    save_manifest(m, cfg.out_dir / "manifest.csv");
    return m;
}

}  // namespace lesionmap
