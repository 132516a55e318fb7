#pragma once

// Diagnostics relating predicted corner uncertainties to the point cloud and
// to the cuboid geometry, plus 3D IoU and distance-binned statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"
#include "boxbelief/loss.hpp"

namespace boxbelief {

/// Default KLD-UD value above which a box is flagged in reports.
inline constexpr double kDefaultKldFlagThreshold = 0.05;
/// Slack added to box half-extents in membership tests, in meters.
inline constexpr double kMembershipEpsilon = 1e-9;
/// Relative floor applied to pseudo-distribution weights before normalizing.
inline constexpr double kPseudoDistributionFloor = 1e-9;

struct PointCloud {
    std::vector<Vec3> points;
    /// Either empty or one entry per point.
    std::vector<float> intensity;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
    [[nodiscard]] bool empty() const noexcept { return points.empty(); }
    [[nodiscard]] bool has_intensity() const noexcept { return !intensity.empty(); }

    void validate() const {
        if (!intensity.empty() && intensity.size() != points.size()) {
            throw InvalidInput("intensity count does not match point count");
        }
        for (const auto& p : points) {
            if (!p.allFinite()) {
                throw InvalidInput("point coordinates must be finite");
            }
        }
    }
};

using CornerValues = std::array<double, kNumCorners>;

/// Eight strictly positive weights summing to one.
class PseudoDistribution {
public:
    /// Floors every weight at kPseudoDistributionFloor * sum, then normalizes.
    /// Throws InvalidInput on negative or non-finite weights or a zero sum.
    static PseudoDistribution from_weights(const CornerValues& raw) {
        double sum = 0.0;
        for (double v : raw) {
            if (!std::isfinite(v) || v < 0.0) {
                throw InvalidInput("pseudo-distribution weights must be finite and non-negative");
            }
            sum += v;
        }
        if (!(sum > 0.0)) {
            throw InvalidInput("pseudo-distribution weights sum to zero");
        }
        const double floor = kPseudoDistributionFloor * sum;
        CornerValues w{};
        double floored_sum = 0.0;
        for (std::size_t k = 0; k < kNumCorners; ++k) {
            w[k] = std::max(raw[k], floor);
            floored_sum += w[k];
        }
        for (double& v : w) {
            v /= floored_sum;
        }
        return PseudoDistribution(w);
    }

    [[nodiscard]] const CornerValues& weights() const noexcept { return weights_; }
    [[nodiscard]] double operator[](std::size_t k) const { return weights_[k]; }

private:
    explicit PseudoDistribution(const CornerValues& w) : weights_(w) {}
    CornerValues weights_;
};

/// Sum_k p(k) ln(p(k) / q(k)).
inline double kl_divergence(const PseudoDistribution& p, const PseudoDistribution& q) {
    double sum = 0.0;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        sum += p[k] * std::log(p[k] / q[k]);
    }
    // Rounding can leave a tiny negative value for identical inputs.
    return std::max(sum, 0.0);
}

// Point membership and distance profiles.

/// Points whose box-frame coordinates lie within the half-extents plus margin.
inline PointCloud points_in_box(const BoxParams& box, const PointCloud& cloud, double margin = 0.0) {
    const Mat3 rt = yaw_rotation(box.psi()).transpose();
    const Vec3 half(box.l() / 2.0 + margin + kMembershipEpsilon,
                    box.h() / 2.0 + margin + kMembershipEpsilon,
                    box.w() / 2.0 + margin + kMembershipEpsilon);
    PointCloud out;
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3 local = rt * (cloud.points[i] - box.center());
        if ((local.cwiseAbs().array() <= half.array()).all()) {
            out.points.push_back(cloud.points[i]);
            if (cloud.has_intensity()) {
                out.intensity.push_back(cloud.intensity[i]);
            }
        }
    }
    return out;
}

/// Mean Euclidean distance from each corner to the points of the cloud.
inline CornerValues corner_point_distances(const CornerSet& corners, const PointCloud& cloud) {
    if (cloud.empty()) {
        throw EmptyCloud("no points to measure corner distances against");
    }
    CornerValues d{};
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        double sum = 0.0;
        for (const auto& p : cloud.points) {
            sum += (corners[k] - p).norm();
        }
        d[k] = sum / static_cast<double>(cloud.size());
    }
    return d;
}

/// Per-corner sum of the three component variances 2b^2.
inline CornerValues corner_ensemble_variance(const CornerBelief& belief) {
    CornerValues v{};
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        v[k] = belief.variances(k).sum();
    }
    return v;
}

enum class UncertaintyScale { std_dev, variance };

/// KL divergence of the normalized corner-uncertainty profile U from the
/// normalized corner-to-point distance profile D, i.e. sum D ln(D / U).
/// U is built from the ensemble standard deviation unless scale says otherwise.
inline double kld_ud(const CornerSet& corners, const CornerBelief& belief, const PointCloud& cloud,
                     UncertaintyScale scale = UncertaintyScale::std_dev) {
    const CornerValues d = corner_point_distances(corners, cloud);
    CornerValues u = corner_ensemble_variance(belief);
    if (scale == UncertaintyScale::std_dev) {
        for (double& v : u) {
            v = std::sqrt(v);
        }
    }
    return kl_divergence(PseudoDistribution::from_weights(d), PseudoDistribution::from_weights(u));
}

/// Index of the smallest ensemble variance; ties go to the lowest index.
inline std::size_t reference_corner(const CornerValues& ensemble_variance) {
    return static_cast<std::size_t>(
        std::min_element(ensemble_variance.begin(), ensemble_variance.end()) - ensemble_variance.begin());
}

struct RelativeProfiles {
    std::size_t reference = 0;
    CornerValues sigma{};     ///< sqrt(var_k - var_ref)
    CornerValues distance{};  ///< |c_k - c_ref|
};

inline RelativeProfiles relative_profiles(const CornerSet& corners, const CornerBelief& belief) {
    const CornerValues var = corner_ensemble_variance(belief);
    RelativeProfiles out;
    out.reference = reference_corner(var);
    const double ref = var[out.reference];
    bool any_above = false;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        const double diff = var[k] - ref;
        any_above = any_above || diff > 0.0;
        out.sigma[k] = std::sqrt(diff);
        out.distance[k] = (corners[k] - corners[out.reference]).norm();
    }
    if (!any_above) {
        throw DegenerateRelativeUncertainty("all corners share the same ensemble variance");
    }
    return out;
}

/// KL divergence between relative corner distances R_d and relative corner
/// uncertainties R_sigma measured from the most confident corner, computed as
/// sum R_d ln(R_d / R_sigma).
inline double kld_r(const CornerSet& corners, const CornerBelief& belief) {
    const RelativeProfiles rel = relative_profiles(corners, belief);
    return kl_divergence(PseudoDistribution::from_weights(rel.distance),
                         PseudoDistribution::from_weights(rel.sigma));
}

// 3D IoU.

using Point2 = Eigen::Vector2d;
using Polygon2 = std::vector<Point2>;

namespace detail {

inline double cross2(const Point2& a, const Point2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double signed_area(const Polygon2& poly) {
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        a += cross2(poly[i], poly[(i + 1) % poly.size()]);
    }
    return a / 2.0;
}

/// Box footprint in the x-z plane, counter-clockwise.
inline Polygon2 footprint(const BoxParams& box) {
    const CornerSet cs = corners_from_box(box);
    Polygon2 poly;
    for (std::size_t k : {0u, 1u, 5u, 4u}) {
        poly.emplace_back(cs[k].x(), cs[k].z());
    }
    if (signed_area(poly) < 0.0) {
        std::reverse(poly.begin(), poly.end());
    }
    return poly;
}

/// Sutherland-Hodgman clipping of a polygon against a convex CCW polygon.
inline Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip) {
    Polygon2 out = subject;
    for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
        const Point2& a = clip[e];
        const Point2& b = clip[(e + 1) % clip.size()];
        const Point2 edge = b - a;
        const Polygon2 in = std::move(out);
        out.clear();
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Point2& p = in[i];
            const Point2& q = in[(i + 1) % in.size()];
            const double sp = cross2(edge, p - a);
            const double sq = cross2(edge, q - a);
            if (sp >= 0.0) {
                out.push_back(p);
            }
            if ((sp >= 0.0) != (sq >= 0.0)) {
                const double t = sp / (sp - sq);
                out.push_back(p + t * (q - p));
            }
        }
    }
    return out;
}

}  // namespace detail

/// Volume IoU of two yaw-only boxes.
inline double iou3d(const BoxParams& a, const BoxParams& b) {
    const double y_overlap = std::min(a.y() + a.h() / 2.0, b.y() + b.h() / 2.0) -
                             std::max(a.y() - a.h() / 2.0, b.y() - b.h() / 2.0);
    if (y_overlap <= 0.0) {
        return 0.0;
    }
    const Polygon2 inter = detail::clip_convex(detail::footprint(a), detail::footprint(b));
    const double area = inter.size() < 3 ? 0.0 : std::abs(detail::signed_area(inter));
    const double intersection = area * y_overlap;
    const double uni = a.volume() + b.volume() - intersection;
    return std::clamp(intersection / uni, 0.0, 1.0);
}

// Per-box reports and binning.

/// Ground-plane range of the box center from the sensor origin.
inline double detection_distance(const BoxParams& box) { return std::hypot(box.x(), box.z()); }

struct BoxDiagnostics {
    CornerValues d{};
    CornerValues sigma_ens{};
    double kld_ud = 0.0;
    /// Absent when all corner variances are equal.
    std::optional<double> kld_r;
    /// Absent when no ground-truth box was matched.
    std::optional<double> iou;
    double detection_distance = 0.0;
    std::array<double, 3> per_component_overall_variance{};
    std::size_t num_points = 0;
};

struct DiagnoseOptions {
    double margin = 0.0;
    UncertaintyScale scale = UncertaintyScale::std_dev;
};

/// Full diagnostic record for one predicted box. The cloud is restricted to
/// the predicted box before distances are measured.
inline BoxDiagnostics diagnose_box(const BoxParams& predicted, const CornerBelief& belief,
                                   const PointCloud& cloud, const std::optional<BoxParams>& truth = std::nullopt,
                                   const DiagnoseOptions& opts = {}) {
    const CornerSet corners = corners_from_box(predicted);
    const PointCloud inside = points_in_box(predicted, cloud, opts.margin);
    BoxDiagnostics out;
    out.num_points = inside.size();
    out.d = corner_point_distances(corners, inside);
    const CornerValues var = corner_ensemble_variance(belief);
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        out.sigma_ens[k] = std::sqrt(var[k]);
        const Vec3 v = belief.variances(k);
        for (std::size_t j = 0; j < 3; ++j) {
            out.per_component_overall_variance[j] += v[static_cast<Eigen::Index>(j)];
        }
    }
    out.kld_ud = kld_ud(corners, belief, inside, opts.scale);
    try {
        out.kld_r = kld_r(corners, belief);
    } catch (const DegenerateRelativeUncertainty&) {
        out.kld_r.reset();
    }
    if (truth) {
        out.iou = iou3d(predicted, *truth);
    }
    out.detection_distance = detection_distance(predicted);
    return out;
}

struct DistanceBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    std::array<double, 3> mean{};
    /// Population standard deviation (zero for a single report).
    std::array<double, 3> stddev{};
};

/// Groups reports into [k w, (k+1) w) distance bins and returns per-bin mean
/// and standard deviation of the per-component overall variance. Empty bins
/// are omitted; bins are ordered by distance.
inline std::vector<DistanceBin> distance_binned_stats(std::span<const BoxDiagnostics> reports, double bin_width) {
    if (!(bin_width > 0.0) || !std::isfinite(bin_width)) {
        throw InvalidInput("bin width must be positive");
    }
    std::map<long long, std::vector<const BoxDiagnostics*>> groups;
    for (const auto& r : reports) {
        const auto idx = static_cast<long long>(std::floor(r.detection_distance / bin_width));
        groups[idx].push_back(&r);
    }
    std::vector<DistanceBin> out;
    out.reserve(groups.size());
    for (const auto& [idx, members] : groups) {
        DistanceBin bin;
        bin.lower = static_cast<double>(idx) * bin_width;
        bin.upper = static_cast<double>(idx + 1) * bin_width;
        bin.count = members.size();
        const auto n = static_cast<double>(members.size());
        for (std::size_t j = 0; j < 3; ++j) {
            double sum = 0.0;
            for (const auto* m : members) {
                sum += m->per_component_overall_variance[j];
            }
            const double mean = sum / n;
            double sq = 0.0;
            for (const auto* m : members) {
                const double dv = m->per_component_overall_variance[j] - mean;
                sq += dv * dv;
            }
            bin.mean[j] = mean;
            bin.stddev[j] = std::sqrt(sq / n);
        }
        out.push_back(bin);
    }
    return out;
}

// Rank correlation.

struct RankCorrelation {
    double rho = 0.0;
    /// True when either input has no rank variation; rho is then 0.
    bool degenerate = false;
};

namespace detail {

/// Ranks starting at 1, ties receive their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

/// Spearman rank correlation (Pearson correlation of average ranks).
inline RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw InvalidInput("rank correlation needs two equally sized inputs of length >= 2");
    }
    const std::vector<double> ra = detail::average_ranks(a);
    const std::vector<double> rb = detail::average_ranks(b);
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0;
    double va = 0.0;
    double vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) {
        return {0.0, true};
    }
    return {cov / std::sqrt(va * vb), false};
}

}  // namespace boxbelief
