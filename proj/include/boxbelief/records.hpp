#pragma once

// JSON and CSV encodings of the toolkit's output records.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "boxbelief/diagnostics.hpp"
#include "boxbelief/kitti_io.hpp"
#include "boxbelief/loss.hpp"
#include "boxbelief/recovery.hpp"

namespace boxbelief {

inline constexpr std::string_view kCornersSchema = "boxbelief.corners.v1";
inline constexpr std::string_view kLossSchema = "boxbelief.loss.v1";
inline constexpr std::string_view kDiagnosticsSchema = "boxbelief.diagnostics.v1";
inline constexpr std::string_view kRecoveredSchema = "boxbelief.recovered.v1";

inline Json to_json(const CornerSet& cs) {
    Json arr = Json::array();
    for (const auto& c : cs) {
        arr.push_back({c.x(), c.y(), c.z()});
    }
    return arr;
}

inline CornerSet corners_from_json(const Json& j) {
    if (!j.is_array() || j.size() != kNumCorners) {
        throw SchemaError("corners must be an array of 8 triples");
    }
    CornerSet cs;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        const Json& c = j[k];
        if (!c.is_array() || c.size() != 3 || !c[0].is_number() || !c[1].is_number() || !c[2].is_number()) {
            throw SchemaError("corners must be an array of 8 triples");
        }
        cs[k] = Vec3(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
    }
    return cs;
}

template <class T>
Json grid_json(const CornerGrid<T>& g) {
    Json arr = Json::array();
    for (const auto& row : g) {
        arr.push_back(row);
    }
    return arr;
}

inline Json to_json(const LossValue& v) {
    return Json{{"total", v.total}, {"per_component", grid_json(v.per_component)}};
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const BoxDiagnostics& d, double kld_flag_threshold = kDefaultKldFlagThreshold) {
    return Json{{"d", d.d},
                {"sigma_ens", d.sigma_ens},
                {"kld_ud", d.kld_ud},
                {"kld_r", optional_json(d.kld_r)},
                {"iou", optional_json(d.iou)},
                {"detection_distance", d.detection_distance},
                {"overall_variance", d.per_component_overall_variance},
                {"num_points", d.num_points},
                {"kld_flag", d.kld_ud > kld_flag_threshold}};
}

inline std::string_view location_rule(LocationMode m) {
    return m == LocationMode::strict ? "quarter-sum (first-order midpoint transfer)"
                                     : "half-sum (verbatim; twice the first-order midpoint transfer)";
}

inline Json to_json(const RecoveredBox& r) {
    Json params = Json::object();
    for (std::size_t p = 0; p < 7; ++p) {
        params[kParamNames[p]] = {{"value", r.params[p].value}, {"variance", r.params[p].variance}};
    }
    return Json{{"params", std::move(params)}, {"mode", to_string(r.mode)}, {"location_rule", location_rule(r.mode)}};
}

inline Json variances_json(const std::array<double, 7>& v) {
    Json j = Json::object();
    for (std::size_t p = 0; p < 7; ++p) {
        j[kParamNames[p]] = v[p];
    }
    return j;
}

/// CSV with header lower,upper,count,mean_x,mean_y,mean_z,std_x,std_y,std_z.
inline std::string format_bins_csv(std::span<const DistanceBin> bins) {
    using detail::format_number;
    std::string s = "lower,upper,count,mean_x,mean_y,mean_z,std_x,std_y,std_z\n";
    for (const auto& b : bins) {
        s += format_number(b.lower) + ',' + format_number(b.upper) + ',' + std::to_string(b.count);
        for (double v : b.mean) {
            s += ',' + format_number(v);
        }
        for (double v : b.stddev) {
            s += ',' + format_number(v);
        }
        s += '\n';
    }
    return s;
}

}  // namespace boxbelief
