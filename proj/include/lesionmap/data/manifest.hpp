#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "lesionmap/data/schema.hpp"

namespace lesionmap {

// One fundus image with its labels. Pixel data and ground-truth maps are
// loaded on demand; the manifest row carries only paths and labels.
// content_h/content_w track the un-padded image region after preprocessing
// (0 means "not preprocessed yet": the full raster is content).
struct ImageSample {
    std::string image_id;
    std::string image_path;
    std::string patient_id;
    int diagnosis = 0;
    std::vector<int> lesion_flags;          // empty when the dataset has no lesion labels
    std::vector<std::string> gt_map_paths;  // per lesion; "" = no map for this sample
    cv::Mat pixels;                         // 8-bit BGR, empty until loaded
    std::vector<cv::Mat> gt_maps;           // 8-bit single channel, 0/255
    int content_h = 0;
    int content_w = 0;

    bool has_lesion_labels() const { return !lesion_flags.empty(); }
};

struct DatasetManifest {
    std::string name;
    std::optional<LesionSchema> schema;  // absent: diagnosis labels only
    bool diagnosis_coupling = true;      // lesion presence implies positive diagnosis
    std::vector<ImageSample> samples;
    std::filesystem::path root;  // directory image paths are relative to

    int lesion_count() const { return schema ? schema->size() : 0; }

    std::filesystem::path resolve(const std::string& rel) const {
        const std::filesystem::path p(rel);
        return p.is_absolute() ? p : root / p;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += '"';
    return out;
}

inline int parse_binary(const std::string& s, const std::string& what) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw ContractError("manifest: " + what + " must be 0 or 1, got '" + s + "'");
}

}  // namespace detail

struct ManifestOptions {
    std::string name;  // default: file stem
    bool diagnosis_coupling = true;
    std::optional<LesionSchema> expected_schema;  // columns must match this vocabulary
};

// Reads a dataset manifest CSV. Fixed columns image_path, patient_id, amd;
// every remaining column is either a lesion flag column or a gt_<lesion>
// path column. Column order defines the schema order unless an expected
// schema is supplied, in which case columns are matched against it.
inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     const ManifestOptions& opts = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest file not found: '" + path.string() + "'");

    DatasetManifest m;
    m.name = opts.name.empty() ? path.stem().string() : opts.name;
    m.diagnosis_coupling = opts.diagnosis_coupling;
    m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

    std::string line;
    if (!std::getline(in, line))
        throw ContractError("manifest '" + path.string() + "': empty file");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "image_path" || header[1] != "patient_id" ||
        header[2] != "amd")
        throw ContractError("manifest '" + path.string() +
                            "': header must start with image_path,patient_id,amd");

    std::vector<std::string> lesion_order;
    std::vector<int> lesion_cols;   // column index per schema position
    std::vector<int> gt_cols;       // column index per schema position, -1 if absent
    std::vector<std::pair<std::string, int>> gt_pending;
    for (std::size_t c = 3; c < header.size(); ++c) {
        const std::string& col = header[c];
        if (col.rfind("gt_", 0) == 0) {
            gt_pending.emplace_back(col.substr(3), static_cast<int>(c));
        } else {
            if (opts.expected_schema && opts.expected_schema->index_of(col) < 0)
                throw ContractError("manifest '" + path.string() +
                                    "': unknown lesion column '" + col + "'");
            lesion_order.push_back(col);
            lesion_cols.push_back(static_cast<int>(c));
        }
    }

    if (opts.expected_schema) {
        // reorder columns into the declared schema order
        const auto& want = *opts.expected_schema;
        if (static_cast<int>(lesion_order.size()) != want.size())
            throw ContractError("manifest '" + path.string() + "': expected " +
                                std::to_string(want.size()) + " lesion columns, found " +
                                std::to_string(lesion_order.size()));
        std::vector<int> reordered(static_cast<std::size_t>(want.size()));
        for (int i = 0; i < want.size(); ++i) {
            bool found = false;
            for (std::size_t j = 0; j < lesion_order.size(); ++j) {
                if (lesion_order[j] == want.lesions[static_cast<std::size_t>(i)]) {
                    reordered[static_cast<std::size_t>(i)] = lesion_cols[j];
                    found = true;
                    break;
                }
            }
            if (!found)
                throw ContractError("manifest '" + path.string() +
                                    "': missing lesion column '" +
                                    want.lesions[static_cast<std::size_t>(i)] + "'");
        }
        lesion_cols = reordered;
        lesion_order = want.lesions;
        m.schema = want;
    } else if (!lesion_order.empty()) {
        m.schema = LesionSchema{m.name, lesion_order};
        m.schema->validate();
    }

    gt_cols.assign(lesion_order.size(), -1);
    for (const auto& [lesion, col] : gt_pending) {
        bool found = false;
        for (std::size_t i = 0; i < lesion_order.size(); ++i) {
            if (lesion_order[i] == lesion) {
                gt_cols[i] = col;
                found = true;
                break;
            }
        }
        if (!found)
            throw ContractError("manifest '" + path.string() +
                                "': unknown lesion column 'gt_" + lesion + "'");
    }

    std::set<std::string> seen_ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ContractError("manifest '" + path.string() + "' line " +
                                std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " cells, got " +
                                std::to_string(cells.size()));
        ImageSample s;
        s.image_path = cells[0];
        s.image_id = cells[0];
        s.patient_id = cells[1];
        if (s.image_path.empty())
            throw ContractError("manifest line " + std::to_string(line_no) +
                                ": empty image_path");
        if (s.patient_id.empty())
            throw ContractError("manifest '" + path.string() + "' line " +
                                std::to_string(line_no) + ": missing patient_id");
        if (!seen_ids.insert(s.image_id).second)
            throw ContractError("manifest '" + path.string() + "': duplicate image_id '" +
                                s.image_id + "'");
        s.diagnosis = detail::parse_binary(cells[2], "amd");
        for (std::size_t i = 0; i < lesion_cols.size(); ++i)
            s.lesion_flags.push_back(detail::parse_binary(
                cells[static_cast<std::size_t>(lesion_cols[i])],
                "lesion '" + lesion_order[i] + "'"));
        for (std::size_t i = 0; i < gt_cols.size(); ++i)
            s.gt_map_paths.push_back(gt_cols[i] < 0
                                         ? std::string()
                                         : cells[static_cast<std::size_t>(gt_cols[i])]);
        if (m.diagnosis_coupling && s.diagnosis == 0)
            for (std::size_t i = 0; i < s.lesion_flags.size(); ++i)
                if (s.lesion_flags[i] != 0)
                    throw ContractError("manifest '" + path.string() + "' line " +
                                        std::to_string(line_no) +
                                        ": lesion flag set on a non-AMD sample in a "
                                        "diagnosis-coupled dataset");
        m.samples.push_back(std::move(s));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << "image_path,patient_id,amd";
    if (m.schema) {
        for (const auto& l : m.schema->lesions) out << "," << l;
        for (const auto& l : m.schema->lesions) out << ",gt_" << l;
    }
    out << "\n";
    for (const auto& s : m.samples) {
        out << detail::csv_escape(s.image_path) << "," << detail::csv_escape(s.patient_id)
            << "," << s.diagnosis;
        if (m.schema) {
            for (int f : s.lesion_flags) out << "," << f;
            for (const auto& g : s.gt_map_paths) out << "," << detail::csv_escape(g);
        }
        out << "\n";
    }
}

}  // namespace lesionmap
