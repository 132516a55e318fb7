#pragma once

// Synthetic scenes with known ground truth. A sensor sits at the camera-frame
// origin; points are sampled only on box faces that face it, with an area
// density falling off with the square of the range, and corner observations
// are Laplace draws whose diversity depends on whether the corner is among
// the four nearest the sensor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "boxbelief/diagnostics.hpp"
#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"
#include "boxbelief/loss.hpp"

namespace boxbelief {

struct DimensionPrior {
    double mean = 1.0;
    /// Half-width of the uniform spread around the mean.
    double spread = 0.0;
};

struct SceneSpec {
    std::size_t n_boxes = 10;
    double range_min = 5.0;
    double range_max = 50.0;
    /// Boxes are placed at bearings uniform in [-half_fov, half_fov] around +z.
    double half_fov = std::numbers::pi / 4.0;
    double center_y = 1.0;
    DimensionPrior h{1.53, 0.1};
    DimensionPrior w{1.63, 0.1};
    DimensionPrior l{3.88, 0.3};
    double points_per_m2_at_10m = 100.0;
    /// Points are displaced along the face normal by up to this much.
    double point_noise = 0.02;
    double noise_b_near = 0.05;
    double noise_b_far = 0.05;
    std::size_t n_observations = 200;
    std::uint64_t seed = 0;

    void validate() const {
        auto prior_ok = [](const DimensionPrior& p) { return p.mean > 0.0 && p.spread >= 0.0 && p.spread < p.mean; };
        if (!(range_min > 0.0 && range_max >= range_min)) {
            throw InvalidInput("scene ranges must be positive and ordered");
        }
        if (!(half_fov >= 0.0 && half_fov < std::numbers::pi / 2.0)) {
            throw InvalidInput("half field of view must lie in [0, pi/2)");
        }
        if (!prior_ok(h) || !prior_ok(w) || !prior_ok(l)) {
            throw InvalidInput("dimension priors need a positive mean larger than the spread");
        }
        if (!(points_per_m2_at_10m > 0.0) || !(point_noise >= 0.0)) {
            throw InvalidInput("point density must be positive and point noise non-negative");
        }
        if (!(noise_b_near >= kMinDiversity && noise_b_far >= kMinDiversity)) {
            throw InvalidInput("corner noise diversities must be at least the minimum diversity");
        }
        if (!std::isfinite(center_y)) {
            throw InvalidInput("center height must be finite");
        }
    }
};

struct SyntheticSample {
    BoxParams gt_box;
    PointCloud cloud;
    std::vector<CornerSet> observations;
    CornerBelief true_belief;
};

struct Face {
    Vec3 center;
    Vec3 normal;
    /// Half-extent vectors spanning the face.
    Vec3 span_a;
    Vec3 span_b;

    [[nodiscard]] double area() const { return 4.0 * span_a.norm() * span_b.norm(); }
    [[nodiscard]] bool faces_origin() const { return normal.dot(center) < 0.0; }
};

/// The six faces in the order +l, -l, +h, -h, +w, -w.
inline std::array<Face, 6> box_faces(const BoxParams& box) {
    const Mat3 r = yaw_rotation(box.psi());
    const Vec3 half(box.l() / 2.0, box.h() / 2.0, box.w() / 2.0);
    std::array<Face, 6> faces{};
    for (int axis = 0; axis < 3; ++axis) {
        const int a = (axis + 1) % 3;
        const int b = (axis + 2) % 3;
        for (int s = 0; s < 2; ++s) {
            const double sign = s == 0 ? 1.0 : -1.0;
            Face& f = faces[static_cast<std::size_t>(2 * axis + s)];
            f.normal = sign * r.col(axis);
            f.center = box.center() + sign * half[axis] * r.col(axis);
            f.span_a = half[a] * r.col(a);
            f.span_b = half[b] * r.col(b);
        }
    }
    return faces;
}

/// Indices of the four corners closest to the origin, ascending by index.
inline std::array<std::size_t, 4> near_corners(const CornerSet& corners) {
    std::array<std::size_t, kNumCorners> order{};
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return corners[a].norm() < corners[b].norm(); });
    std::array<std::size_t, 4> out{order[0], order[1], order[2], order[3]};
    std::sort(out.begin(), out.end());
    return out;
}

/// Expected number of points per square meter on a box at the given range.
inline double area_density(const SceneSpec& spec, double range) {
    const double r = std::max(range, 1e-3);
    return spec.points_per_m2_at_10m * (10.0 / r) * (10.0 / r);
}

template <class URBG>
SyntheticSample synthesize_sample(const BoxParams& box, const SceneSpec& spec, URBG& gen) {
    SyntheticSample out{box, {}, {}, {}};
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double density = area_density(spec, detection_distance(box));
    for (const Face& f : box_faces(box)) {
        if (!f.faces_origin()) {
            continue;
        }
        std::poisson_distribution<long long> count(density * f.area());
        const long long n = count(gen);
        for (long long i = 0; i < n; ++i) {
            const double u = unit(gen);
            const double v = unit(gen);
            const double jitter = spec.point_noise * unit(gen);
            out.cloud.points.push_back(f.center + u * f.span_a + v * f.span_b + jitter * f.normal);
        }
    }

    const CornerSet corners = corners_from_box(box);
    DiversityGrid b;
    for (auto& row : b) {
        row.fill(spec.noise_b_far);
    }
    for (std::size_t k : near_corners(corners)) {
        b[k].fill(spec.noise_b_near);
    }
    out.true_belief = CornerBelief(corners, b);
    out.observations.reserve(spec.n_observations);
    for (std::size_t i = 0; i < spec.n_observations; ++i) {
        out.observations.push_back(sample_corners(out.true_belief, gen));
    }
    return out;
}

/// Generator for scene i; every scene owns an independent substream.
inline std::mt19937_64 scene_stream(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
    return std::mt19937_64(seq);
}

inline std::vector<SyntheticSample> sample_scene(const SceneSpec& spec) {
    spec.validate();
    std::vector<SyntheticSample> out;
    out.reserve(spec.n_boxes);
    for (std::size_t i = 0; i < spec.n_boxes; ++i) {
        std::mt19937_64 gen = scene_stream(spec.seed, i);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double range = spec.range_min + (spec.range_max - spec.range_min) * unit(gen);
        const double bearing = spec.half_fov * (2.0 * unit(gen) - 1.0);
        auto dim = [&](const DimensionPrior& p) { return p.mean + p.spread * (2.0 * unit(gen) - 1.0); };
        const double h = dim(spec.h);
        const double w = dim(spec.w);
        const double l = dim(spec.l);
        const double psi = std::numbers::pi * (1.0 - 2.0 * unit(gen));
        const BoxParams box(range * std::sin(bearing), spec.center_y, range * std::cos(bearing), h, w, l, psi);
        out.push_back(synthesize_sample(box, spec, gen));
    }
    return out;
}

struct CorrelationSummary {
    /// Mean of the per-box Spearman correlations (degenerate boxes count as 0).
    double rho = 0.0;
    /// True when every box had an undefined ranking.
    bool degenerate = false;
    std::size_t boxes_used = 0;
    std::size_t degenerate_boxes = 0;
};

/// Per-corner ensemble standard deviation from Laplace fits to the observations.
inline CornerValues fitted_sigma_ens(std::span<const CornerSet> observations) {
    CornerValues sigma{};
    std::vector<double> column(observations.size());
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        double var = 0.0;
        for (Eigen::Index j = 0; j < 3; ++j) {
            for (std::size_t i = 0; i < observations.size(); ++i) {
                column[i] = observations[i][k][j];
            }
            var += fit_laplace_mle(column).variance();
        }
        sigma[k] = std::sqrt(var);
    }
    return sigma;
}

/// Rank correlation between per-corner mean point distance and the fitted
/// per-corner ensemble standard deviation, computed per box and averaged.
/// Boxes without points are skipped.
inline CorrelationSummary density_uncertainty_correlation(std::span<const SyntheticSample> samples,
                                                          std::size_t min_samples = 30) {
    if (samples.size() < min_samples || samples.empty()) {
        throw InsufficientData("density/uncertainty correlation needs at least " + std::to_string(min_samples) +
                               " samples");
    }
    CorrelationSummary out;
    double sum = 0.0;
    for (const auto& s : samples) {
        if (s.cloud.empty()) {
            continue;
        }
        const CornerValues d = corner_point_distances(corners_from_box(s.gt_box), s.cloud);
        const CornerValues sigma = fitted_sigma_ens(s.observations);
        const RankCorrelation rc = spearman(d, sigma);
        ++out.boxes_used;
        if (rc.degenerate) {
            ++out.degenerate_boxes;
        }
        sum += rc.rho;
    }
    if (out.boxes_used == 0) {
        throw InsufficientData("no sample has any points");
    }
    out.rho = sum / static_cast<double>(out.boxes_used);
    out.degenerate = out.degenerate_boxes == out.boxes_used;
    return out;
}

}  // namespace boxbelief
