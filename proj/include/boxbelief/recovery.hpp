#pragma once

// Recovery of box-parameter means and variances from a corner belief.
//
// The corners are split into four pairs per parameter. Each pair yields one
// measurement of the parameter with a first-order error-transfer variance,
// and the four measurements are fused by inverse-variance weighting:
//
//     var = prod_i var_i / sum_j prod_{i != j} var_i = 1 / sum_i (1 / var_i)
//
// Pairings: length edges for yaw and l, height edges for h, width edges for
// w, space diagonals for the location.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"
#include "boxbelief/loss.hpp"

namespace boxbelief {

struct VarianceMeasurement {
    double value = 0.0;
    double variance = 1.0;

    /// Throws InvalidInput unless value is finite and variance is positive.
    void validate() const {
        if (!std::isfinite(value) || !std::isfinite(variance) || !(variance > 0.0)) {
            throw InvalidInput("measurement needs a finite value and a positive variance");
        }
    }
};

/// How a diagonal pair's component variances combine into a location variance.
enum class LocationMode {
    /// Half the summed corner variances.
    verbatim,
    /// Quarter of the summed corner variances (first-order midpoint transfer).
    strict,
};

inline std::string_view to_string(LocationMode m) { return m == LocationMode::strict ? "strict" : "verbatim"; }

inline double location_variance_factor(LocationMode m) { return m == LocationMode::strict ? 0.25 : 0.5; }

/// Inverse-variance fusion. The value is the precision-weighted mean.
inline VarianceMeasurement bayes_fuse(std::span<const VarianceMeasurement> measurements) {
    if (measurements.empty()) {
        throw InsufficientData("fusion needs at least one measurement");
    }
    double smallest = measurements.front().variance;
    for (const auto& m : measurements) {
        m.validate();
        smallest = std::min(smallest, m.variance);
    }
    // Weights relative to the smallest variance keep the sums well scaled.
    double weight_sum = 0.0;
    double weighted = 0.0;
    for (const auto& m : measurements) {
        const double w = smallest / m.variance;
        weight_sum += w;
        weighted += w * m.value;
    }
    return {weighted / weight_sum, smallest / weight_sum};
}

inline VarianceMeasurement bayes_fuse(std::initializer_list<VarianceMeasurement> measurements) {
    return bayes_fuse(std::span<const VarianceMeasurement>(measurements.begin(), measurements.size()));
}

// Yaw.

/// Heading atan2(z_i - z_j, x_i - x_j) of the x-z projection of an edge.
inline double edge_heading(const Vec3& ci, const Vec3& cj) {
    const double dx = ci.x() - cj.x();
    const double dz = ci.z() - cj.z();
    if (dx == 0.0 && dz == 0.0) {
        throw DegenerateGeometry("edge has zero length in the x-z plane");
    }
    return std::atan2(dz, dx);
}

/// Edge heading of corners i and j with its error-transfer variance.
inline VarianceMeasurement heading_measurement(const CornerSet& corners, const CornerBelief& belief,
                                               std::size_t i, std::size_t j) {
    const double heading = edge_heading(corners[i], corners[j]);
    const double dx = corners[i].x() - corners[j].x();
    const double dz = corners[i].z() - corners[j].z();
    const double r2 = dx * dx + dz * dz;
    const double var_x = belief(i, 0).variance() + belief(j, 0).variance();
    const double var_z = belief(i, 2).variance() + belief(j, 2).variance();
    return {heading, (dz * dz * var_x + dx * dx * var_z) / (r2 * r2)};
}

/// Fused yaw psi (box convention) from the four length edges.
///
/// Each edge points along (sin psi, -cos psi), so psi is the edge heading plus
/// pi/2. Headings are unwrapped about the first edge before fusing.
inline VarianceMeasurement recover_yaw(const CornerSet& corners, const CornerBelief& belief) {
    std::array<VarianceMeasurement, 4> m{};
    for (std::size_t p = 0; p < kLengthEdges.size(); ++p) {
        m[p] = heading_measurement(corners, belief, kLengthEdges[p][0], kLengthEdges[p][1]);
    }
    const double anchor = m[0].value;
    for (auto& v : m) {
        v.value = normalize_angle(v.value - anchor);
    }
    VarianceMeasurement fused = bayes_fuse(m);
    fused.value = normalize_angle(anchor + fused.value + std::numbers::pi / 2.0);
    return fused;
}

// Dimensions.

enum class Dimension { h, w, l };

inline const PairScheme& edges_for(Dimension d) {
    switch (d) {
        case Dimension::h: return kHeightEdges;
        case Dimension::w: return kWidthEdges;
        case Dimension::l: return kLengthEdges;
    }
    return kLengthEdges;
}

/// Length of the edge (i, j) with its error-transfer variance.
inline VarianceMeasurement edge_length_measurement(const CornerSet& corners, const CornerBelief& belief,
                                                   std::size_t i, std::size_t j) {
    const Vec3 diff = corners[i] - corners[j];
    const double len2 = diff.squaredNorm();
    if (len2 == 0.0) {
        throw DegenerateGeometry("edge has zero length");
    }
    const Vec3 var = belief.variances(i) + belief.variances(j);
    return {std::sqrt(len2), diff.cwiseProduct(diff).dot(var) / len2};
}

inline VarianceMeasurement recover_dimension(const CornerSet& corners, const CornerBelief& belief, Dimension which) {
    std::array<VarianceMeasurement, 4> m{};
    const PairScheme& scheme = edges_for(which);
    for (std::size_t p = 0; p < scheme.size(); ++p) {
        m[p] = edge_length_measurement(corners, belief, scheme[p][0], scheme[p][1]);
    }
    return bayes_fuse(m);
}

// Location.

/// Per-component (x, y, z) location from the four space diagonals.
inline std::array<VarianceMeasurement, 3> recover_location(const CornerSet& corners, const CornerBelief& belief,
                                                           LocationMode mode = LocationMode::verbatim) {
    const double factor = location_variance_factor(mode);
    std::array<VarianceMeasurement, 3> out{};
    for (std::size_t c = 0; c < 3; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        std::array<VarianceMeasurement, 4> m{};
        for (std::size_t p = 0; p < kDiagonals.size(); ++p) {
            const auto [i, j] = kDiagonals[p];
            m[p] = {(corners[i][ci] + corners[j][ci]) / 2.0,
                    factor * (belief(i, c).variance() + belief(j, c).variance())};
        }
        out[c] = bayes_fuse(m);
    }
    return out;
}

// Whole box.

struct RecoveredBox {
    /// Indexed by Param: x, y, z, h, w, l, psi.
    std::array<VarianceMeasurement, 7> params{};
    LocationMode mode = LocationMode::verbatim;

    [[nodiscard]] const VarianceMeasurement& operator[](Param p) const {
        return params[static_cast<std::size_t>(p)];
    }

    [[nodiscard]] BoxParams box() const {
        return BoxParams(params[0].value, params[1].value, params[2].value, params[3].value, params[4].value,
                         params[5].value, params[6].value);
    }
};

inline RecoveredBox recover_box(const CornerSet& corners, const CornerBelief& belief,
                                LocationMode mode = LocationMode::verbatim) {
    RecoveredBox out;
    out.mode = mode;
    const auto loc = recover_location(corners, belief, mode);
    out.params[0] = loc[0];
    out.params[1] = loc[1];
    out.params[2] = loc[2];
    out.params[3] = recover_dimension(corners, belief, Dimension::h);
    out.params[4] = recover_dimension(corners, belief, Dimension::w);
    out.params[5] = recover_dimension(corners, belief, Dimension::l);
    out.params[6] = recover_yaw(corners, belief);
    return out;
}

/// Recovery using the belief's own means as the corners.
inline RecoveredBox recover_box(const CornerBelief& belief, LocationMode mode = LocationMode::verbatim) {
    return recover_box(belief.means(), belief, mode);
}

// Monte Carlo reference.

inline constexpr std::size_t kMinOracleSamples = 1000;

/// Empirical variances of the 7 box parameters when the corners of `box` are
/// perturbed by Laplace noise with the belief's diversities and mapped back
/// through fit_box_to_corners. Deterministic for a given seed. Yaw residuals
/// are wrapped about box.psi().
inline std::array<double, 7> mc_variance_oracle(const BoxParams& box, const DiversityGrid& diversities,
                                                std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < kMinOracleSamples) {
        throw InsufficientData("Monte Carlo oracle needs at least 1000 samples");
    }
    const CornerBelief belief(corners_from_box(box), diversities);
    std::mt19937_64 gen(seed);
    const Vec7 truth = box.as_vector();
    // Welford accumulation of residuals about the true parameters.
    std::array<double, 7> mean{};
    std::array<double, 7> m2{};
    for (std::size_t n = 1; n <= n_samples; ++n) {
        const Vec7 est = fit_box_to_corners(sample_corners(belief, gen)).as_vector();
        for (std::size_t p = 0; p < 7; ++p) {
            const auto pi = static_cast<Eigen::Index>(p);
            double r = est[pi] - truth[pi];
            if (p == static_cast<std::size_t>(Param::psi)) {
                r = normalize_angle(r);
            }
            const double delta = r - mean[p];
            mean[p] += delta / static_cast<double>(n);
            m2[p] += delta * (r - mean[p]);
        }
    }
    std::array<double, 7> var{};
    for (std::size_t p = 0; p < 7; ++p) {
        var[p] = m2[p] / static_cast<double>(n_samples - 1);
    }
    return var;
}

inline std::array<double, 7> mc_variance_oracle(const BoxParams& box, const CornerBelief& belief,
                                                std::size_t n_samples, std::uint64_t seed) {
    return mc_variance_oracle(box, belief.diversities(), n_samples, seed);
}

}  // namespace boxbelief
