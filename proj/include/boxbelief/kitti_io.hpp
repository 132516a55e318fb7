#pragma once

// KITTI object labels, calibration files and velodyne scans, plus the
// boxbelief.v1 JSON-lines detection interchange format.
//
// KITTI locations are bottom-face centers; BoxParams uses the volumetric
// center, so ingestion shifts y by -h/2 and export shifts it back.

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "boxbelief/diagnostics.hpp"
#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"
#include "boxbelief/loss.hpp"

namespace boxbelief {

using Json = nlohmann::json;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Which yaw convention a label's rotation_y is read with.
enum class Convention {
    /// psi = rotation_y
    verbatim,
    /// psi = pi/2 - rotation_y
    kitti_ry,
};

inline std::string_view to_string(Convention c) { return c == Convention::kitti_ry ? "kitti_ry" : "verbatim"; }

inline Convention parse_convention(std::string_view s) {
    if (s == "verbatim") {
        return Convention::verbatim;
    }
    if (s == "kitti_ry") {
        return Convention::kitti_ry;
    }
    throw InvalidInput("unknown convention: " + std::string(s));
}

namespace detail {

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

/// Lines with their 1-based numbers; a trailing '\r' is dropped.
inline std::vector<std::pair<std::size_t, std::string_view>> split_lines(std::string_view text) {
    std::vector<std::pair<std::size_t, std::string_view>> out;
    std::size_t start = 0;
    std::size_t number = 1;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        out.emplace_back(number, line);
        start = end + 1;
        ++number;
    }
    return out;
}

inline bool is_blank(std::string_view line) {
    for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            return false;
        }
    }
    return true;
}

inline double parse_double(std::string_view token, std::size_t line, std::string_view what) {
    // from_chars rejects a leading '+'.
    if (!token.empty() && token.front() == '+') {
        token.remove_prefix(1);
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
        throw ParseError("non-numeric " + std::string(what) + " field '" + std::string(token) + "'", line);
    }
    return v;
}

inline int parse_int(std::string_view token, std::size_t line, std::string_view what) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw ParseError("non-integer " + std::string(what) + " field '" + std::string(token) + "'", line);
    }
    return v;
}

}  // namespace detail

// Labels.

struct KittiLabel {
    std::string type;
    double truncated = 0.0;
    int occluded = 0;
    double alpha = 0.0;
    std::array<double, 4> bbox2d{};
    double h = 0.0;
    double w = 0.0;
    double l = 0.0;
    /// Bottom-face center in the rectified camera frame.
    Vec3 location = Vec3::Zero();
    double rotation_y = 0.0;

    [[nodiscard]] bool dont_care() const { return type == "DontCare"; }

    friend bool operator==(const KittiLabel&, const KittiLabel&) = default;
};

inline constexpr std::size_t kLabelFieldCount = 15;

inline std::vector<KittiLabel> parse_labels(std::string_view text) {
    std::vector<KittiLabel> out;
    for (const auto& [number, line] : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            continue;
        }
        const auto f = detail::split_whitespace(line);
        if (f.size() != kLabelFieldCount) {
            throw ParseError("expected 15 fields, found " + std::to_string(f.size()), number);
        }
        KittiLabel lab;
        lab.type = std::string(f[0]);
        lab.truncated = detail::parse_double(f[1], number, "truncated");
        lab.occluded = detail::parse_int(f[2], number, "occluded");
        lab.alpha = detail::parse_double(f[3], number, "alpha");
        for (std::size_t i = 0; i < 4; ++i) {
            lab.bbox2d[i] = detail::parse_double(f[4 + i], number, "bbox");
        }
        lab.h = detail::parse_double(f[8], number, "height");
        lab.w = detail::parse_double(f[9], number, "width");
        lab.l = detail::parse_double(f[10], number, "length");
        lab.location = Vec3(detail::parse_double(f[11], number, "x"), detail::parse_double(f[12], number, "y"),
                            detail::parse_double(f[13], number, "z"));
        lab.rotation_y = detail::parse_double(f[14], number, "rotation_y");
        if (!lab.dont_care() && (lab.h < 0.0 || lab.w < 0.0 || lab.l < 0.0)) {
            throw ParseError("negative dimension", number);
        }
        out.push_back(std::move(lab));
    }
    return out;
}

namespace detail {

inline std::string format_number(double v) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

}  // namespace detail

/// One label line in KITTI order with shortest round-trip number formatting.
inline std::string format_label(const KittiLabel& lab) {
    using detail::format_number;
    std::string s = lab.type;
    auto add = [&s](const std::string& v) {
        s += ' ';
        s += v;
    };
    add(format_number(lab.truncated));
    add(std::to_string(lab.occluded));
    add(format_number(lab.alpha));
    for (double v : lab.bbox2d) {
        add(format_number(v));
    }
    add(format_number(lab.h));
    add(format_number(lab.w));
    add(format_number(lab.l));
    for (Eigen::Index i = 0; i < 3; ++i) {
        add(format_number(lab.location[i]));
    }
    add(format_number(lab.rotation_y));
    return s;
}

inline BoxParams label_to_box(const KittiLabel& lab, Convention convention) {
    if (lab.dont_care() || !(lab.h > 0.0 && lab.w > 0.0 && lab.l > 0.0)) {
        throw DegenerateLabel("label '" + lab.type + "' has a non-positive dimension");
    }
    const double psi = convention == Convention::kitti_ry ? psi_from_kitti_ry(lab.rotation_y) : lab.rotation_y;
    return BoxParams(lab.location.x(), lab.location.y() - lab.h / 2.0, lab.location.z(), lab.h, lab.w, lab.l, psi);
}

/// Inverse of label_to_box; non-geometric fields come from `base`.
inline KittiLabel box_to_label(const BoxParams& box, Convention convention, KittiLabel base = {}) {
    base.h = box.h();
    base.w = box.w();
    base.l = box.l();
    base.location = Vec3(box.x(), box.y() + box.h() / 2.0, box.z());
    base.rotation_y = convention == Convention::kitti_ry ? kitti_ry_from_psi(box.psi()) : box.psi();
    return base;
}

inline Json to_json(const KittiLabel& lab) {
    return Json{{"type", lab.type},
                {"truncated", lab.truncated},
                {"occluded", lab.occluded},
                {"alpha", lab.alpha},
                {"bbox", lab.bbox2d},
                {"dimensions", {{"h", lab.h}, {"w", lab.w}, {"l", lab.l}}},
                {"location", {lab.location.x(), lab.location.y(), lab.location.z()}},
                {"rotation_y", lab.rotation_y},
                {"dont_care", lab.dont_care()}};
}

// Calibration.

struct CalibMatrices {
    Mat34 P2 = Mat34::Zero();
    Mat3 R0_rect = Mat3::Identity();
    Mat34 Tr_velo_to_cam = Mat34::Zero();

    static CalibMatrices identity() {
        CalibMatrices c;
        c.P2.leftCols<3>().setIdentity();
        c.Tr_velo_to_cam.leftCols<3>().setIdentity();
        return c;
    }
};

inline constexpr double kRectificationOrthonormalTolerance = 1e-3;

/// Parses "KEY: v0 v1 ..." lines. P2 and Tr_velo_to_cam take 12 values,
/// R0_rect takes 9; R_rect and Tr_velo_cam are accepted as aliases. Other
/// keys are ignored.
inline CalibMatrices parse_calib(std::string_view text) {
    CalibMatrices c;
    bool have_p2 = false;
    bool have_r0 = false;
    bool have_tr = false;
    for (const auto& [number, line] : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            continue;
        }
        auto f = detail::split_whitespace(line);
        std::string_view key = f[0];
        if (!key.empty() && key.back() == ':') {
            key.remove_suffix(1);
        }
        const std::span<const std::string_view> values(f.data() + 1, f.size() - 1);
        auto read = [&, n = number](auto& m, std::size_t rows, std::size_t cols) {
            if (values.size() != rows * cols) {
                throw ParseError(std::string(key) + " expects " + std::to_string(rows * cols) + " values, found " +
                                     std::to_string(values.size()),
                                 n);
            }
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t col = 0; col < cols; ++col) {
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) =
                        detail::parse_double(values[r * cols + col], n, key);
                }
            }
        };
        if (key == "P2") {
            read(c.P2, 3, 4);
            have_p2 = true;
        } else if (key == "R0_rect" || key == "R_rect") {
            read(c.R0_rect, 3, 3);
            have_r0 = true;
        } else if (key == "Tr_velo_to_cam" || key == "Tr_velo_cam") {
            read(c.Tr_velo_to_cam, 3, 4);
            have_tr = true;
        }
    }
    if (!have_p2 || !have_r0 || !have_tr) {
        throw ParseError("calibration is missing one of P2, R0_rect, Tr_velo_to_cam");
    }
    const double dev = (c.R0_rect * c.R0_rect.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (dev > kRectificationOrthonormalTolerance) {
        throw ParseError("R0_rect is not orthonormal (deviation " + std::to_string(dev) + ")");
    }
    return c;
}

inline std::string format_calib(const CalibMatrices& c) {
    std::string s;
    auto line = [&s](std::string_view key, const auto& m) {
        s += key;
        s += ':';
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index col = 0; col < m.cols(); ++col) {
                s += ' ';
                s += detail::format_number(m(r, col));
            }
        }
        s += '\n';
    };
    line("P2", c.P2);
    line("R0_rect", c.R0_rect);
    line("Tr_velo_to_cam", c.Tr_velo_to_cam);
    return s;
}

namespace detail {

template <class Derived>
Json matrix_json(const Eigen::MatrixBase<Derived>& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

inline Json to_json(const CalibMatrices& c) {
    return Json{{"P2", detail::matrix_json(c.P2)},
                {"R0_rect", detail::matrix_json(c.R0_rect)},
                {"Tr_velo_to_cam", detail::matrix_json(c.Tr_velo_to_cam)}};
}

// Velodyne scans.

inline constexpr std::size_t kVelodyneRecordBytes = 16;

namespace detail {

inline float load_le_float(const std::byte* p) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) {
        bits = (bits << 8) | static_cast<std::uint32_t>(p[i]);
    }
    return std::bit_cast<float>(bits);
}

inline void store_le_float(float v, std::byte* p) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
        p[i] = static_cast<std::byte>(bits & 0xffu);
        bits >>= 8;
    }
}

}  // namespace detail

/// Little-endian float32 quadruples (x, y, z, intensity).
inline PointCloud read_velodyne(std::span<const std::byte> bytes) {
    if (bytes.size() % kVelodyneRecordBytes != 0) {
        throw FormatError("velodyne byte length " + std::to_string(bytes.size()) + " is not a multiple of 16");
    }
    const std::size_t n = bytes.size() / kVelodyneRecordBytes;
    PointCloud cloud;
    cloud.points.reserve(n);
    cloud.intensity.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::byte* p = bytes.data() + i * kVelodyneRecordBytes;
        cloud.points.emplace_back(detail::load_le_float(p), detail::load_le_float(p + 4),
                                  detail::load_le_float(p + 8));
        cloud.intensity.push_back(detail::load_le_float(p + 12));
    }
    cloud.validate();
    return cloud;
}

/// Inverse of read_velodyne; coordinates are rounded to float32 and missing
/// intensities are written as 0.
inline std::vector<std::byte> write_velodyne(const PointCloud& cloud) {
    cloud.validate();
    std::vector<std::byte> out(cloud.size() * kVelodyneRecordBytes);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::byte* p = out.data() + i * kVelodyneRecordBytes;
        for (int c = 0; c < 3; ++c) {
            detail::store_le_float(static_cast<float>(cloud.points[i][c]), p + 4 * c);
        }
        detail::store_le_float(cloud.has_intensity() ? cloud.intensity[i] : 0.0f, p + 12);
    }
    return out;
}

/// p_cam = R0_rect * Tr_velo_to_cam * [p; 1]
inline PointCloud velo_to_rect_cam(const PointCloud& cloud, const CalibMatrices& calib) {
    const Mat3 rot = calib.R0_rect * calib.Tr_velo_to_cam.leftCols<3>();
    const Vec3 trans = calib.R0_rect * calib.Tr_velo_to_cam.col(3);
    PointCloud out;
    out.intensity = cloud.intensity;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        out.points.push_back(rot * p + trans);
    }
    return out;
}

inline Json to_json(const PointCloud& cloud) {
    Json pts = Json::array();
    for (const auto& p : cloud.points) {
        pts.push_back({p.x(), p.y(), p.z()});
    }
    Json j{{"count", cloud.size()}, {"points", std::move(pts)}};
    if (cloud.has_intensity()) {
        j["intensity"] = cloud.intensity;
    }
    return j;
}

// Files.

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::byte> read_binary_file(const std::filesystem::path& path) {
    const std::string s = read_text_file(path);
    std::vector<std::byte> out(s.size());
    std::memcpy(out.data(), s.data(), s.size());
    return out;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

// Detection records.

inline constexpr std::string_view kDetectionSchema = "boxbelief.v1";

struct DetectionRecord {
    std::string frame_id;
    BoxParams box;
    /// Laplace diversities per corner and component.
    DiversityGrid diversities{};
    double score = 1.0;
    Convention convention = Convention::verbatim;

    [[nodiscard]] CornerBelief belief() const { return {corners_from_box(box), diversities}; }

    void validate() const {
        for (const auto& row : diversities) {
            for (double b : row) {
                if (!std::isfinite(b) || b < kMinDiversity) {
                    throw InvalidInput("diversity below minimum: " + std::to_string(b));
                }
            }
        }
        if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
            throw InvalidInput("score must lie in [0, 1]");
        }
    }

    friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

inline Json box_json(const BoxParams& box) {
    return Json{{"x", box.x()}, {"y", box.y()}, {"z", box.z()}, {"h", box.h()},
                {"w", box.w()}, {"l", box.l()}, {"psi", box.psi()}};
}

inline Json to_json(const DetectionRecord& r) {
    r.validate();
    Json b = Json::array();
    for (const auto& row : r.diversities) {
        for (double v : row) {
            b.push_back(v);
        }
    }
    return Json{{"schema", kDetectionSchema}, {"frame", r.frame_id},        {"box", box_json(r.box)},
                {"b", std::move(b)},          {"score", r.score},          {"convention", to_string(r.convention)}};
}

namespace detail {

inline const Json& require(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw SchemaError(std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

inline double require_number(const Json& j, const char* key) {
    const Json& v = require(j, key);
    if (!v.is_number()) {
        throw SchemaError(std::string("field '") + key + "' must be a number");
    }
    return v.get<double>();
}

}  // namespace detail

inline BoxParams box_from_json(const Json& j) {
    return BoxParams(detail::require_number(j, "x"), detail::require_number(j, "y"), detail::require_number(j, "z"),
                     detail::require_number(j, "h"), detail::require_number(j, "w"), detail::require_number(j, "l"),
                     detail::require_number(j, "psi"));
}

inline DetectionRecord detection_from_json(const Json& j) {
    const Json& schema = detail::require(j, "schema");
    if (!schema.is_string() || schema.get<std::string>() != kDetectionSchema) {
        throw SchemaError("unknown schema version " + schema.dump());
    }
    const Json& frame = detail::require(j, "frame");
    if (!frame.is_string()) {
        throw SchemaError("field 'frame' must be a string");
    }
    const Json& b = detail::require(j, "b");
    if (!b.is_array() || b.size() != 3 * kNumCorners) {
        throw SchemaError("field 'b' must hold 24 numbers");
    }
    DetectionRecord r{frame.get<std::string>(), box_from_json(detail::require(j, "box")), {}, 1.0,
                      Convention::verbatim};
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i].is_number()) {
            throw SchemaError("field 'b' must hold 24 numbers");
        }
        r.diversities[i / 3][i % 3] = b[i].get<double>();
    }
    r.score = detail::require_number(j, "score");
    if (j.contains("convention")) {
        const Json& c = j.at("convention");
        if (!c.is_string()) {
            throw SchemaError("field 'convention' must be a string");
        }
        r.convention = parse_convention(c.get<std::string>());
    }
    r.validate();
    return r;
}

inline DetectionRecord parse_detection_line(std::string_view line) {
    Json j;
    try {
        j = Json::parse(line);
    } catch (const Json::parse_error& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    return detection_from_json(j);
}

inline std::string write_detections(std::span<const DetectionRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

/// Parses JSON lines; blank lines are skipped. Errors name the line.
inline std::vector<DetectionRecord> read_detections(std::string_view text) {
    std::vector<DetectionRecord> out;
    for (const auto& [number, line] : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            continue;
        }
        try {
            out.push_back(parse_detection_line(line));
        } catch (const Error& e) {
            throw ParseError(e.what(), number);
        }
    }
    return out;
}

}  // namespace boxbelief
