#pragma once

// Yaw-only 3D boxes in the camera frame and their 8-corner representation.
//
// A box [x, y, z, h, w, l, psi] maps to corners
//
//     c = R(psi) * (s_l l/2, s_h h/2, s_w w/2) + (x, y, z)
//     R(psi) = [[ sin psi, 0, cos psi],
//               [       0, 1,       0],
//               [-cos psi, 0, sin psi]]
//
// Corner k encodes its sign triple in three bits: bit 2 is the sign of l/2,
// bit 1 of h/2, bit 0 of w/2, with 0 meaning + and 1 meaning -. Corner 0 is
// (+l/2, +h/2, +w/2) and corner 7 - k is diagonally opposite corner k.
//
// Note that R(psi) is not KITTI's rotation_y matrix; psi_from_kitti_ry
// converts between the two and is never applied implicitly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "boxbelief/errors.hpp"

namespace boxbelief {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using CornerJacobian = Eigen::Matrix<double, 24, 7>;

inline constexpr std::size_t kNumCorners = 8;
inline constexpr double kDefaultCuboidTolerance = 1e-6;

/// Row-major 8x3 grid indexed by (corner, component).
template <class T>
using CornerGrid = std::array<std::array<T, 3>, kNumCorners>;

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::remainder(a, two_pi);
    if (r <= -std::numbers::pi) {
        r += two_pi;
    }
    return r;
}

inline double psi_from_kitti_ry(double rotation_y) {
    return normalize_angle(std::numbers::pi / 2.0 - rotation_y);
}

inline double kitti_ry_from_psi(double psi) {
    return normalize_angle(std::numbers::pi / 2.0 - psi);
}

/// Indices into the 7-parameter vector.
enum class Param : std::size_t { x = 0, y, z, h, w, l, psi };

inline constexpr std::array<const char*, 7> kParamNames = {"x", "y", "z", "h", "w", "l", "psi"};

class BoxParams {
public:
    /// Throws InvalidInput on non-finite values or non-positive dimensions.
    /// psi is wrapped into (-pi, pi].
    BoxParams(double x, double y, double z, double h, double w, double l, double psi)
        : center_(x, y, z), h_(h), w_(w), l_(l), psi_(psi) {
        if (!center_.allFinite() || !std::isfinite(h) || !std::isfinite(w) || !std::isfinite(l) ||
            !std::isfinite(psi)) {
            throw InvalidInput("box parameters must be finite");
        }
        if (!(h > 0.0 && w > 0.0 && l > 0.0)) {
            throw InvalidInput("box dimensions must be positive");
        }
        psi_ = normalize_angle(psi);
    }

    BoxParams(const Vec3& center, double h, double w, double l, double psi)
        : BoxParams(center.x(), center.y(), center.z(), h, w, l, psi) {}

    static BoxParams from_vector(const Vec7& p) {
        return BoxParams(p[0], p[1], p[2], p[3], p[4], p[5], p[6]);
    }

    [[nodiscard]] double x() const noexcept { return center_.x(); }
    [[nodiscard]] double y() const noexcept { return center_.y(); }
    [[nodiscard]] double z() const noexcept { return center_.z(); }
    [[nodiscard]] double h() const noexcept { return h_; }
    [[nodiscard]] double w() const noexcept { return w_; }
    [[nodiscard]] double l() const noexcept { return l_; }
    [[nodiscard]] double psi() const noexcept { return psi_; }
    [[nodiscard]] const Vec3& center() const noexcept { return center_; }

    [[nodiscard]] double operator[](Param p) const noexcept {
        switch (p) {
            case Param::x: return center_.x();
            case Param::y: return center_.y();
            case Param::z: return center_.z();
            case Param::h: return h_;
            case Param::w: return w_;
            case Param::l: return l_;
            case Param::psi: return psi_;
        }
        return 0.0;
    }

    [[nodiscard]] Vec7 as_vector() const {
        Vec7 v;
        v << center_.x(), center_.y(), center_.z(), h_, w_, l_, psi_;
        return v;
    }

    [[nodiscard]] double volume() const noexcept { return h_ * w_ * l_; }

    friend bool operator==(const BoxParams&, const BoxParams&) = default;

private:
    Vec3 center_;
    double h_;
    double w_;
    double l_;
    double psi_;
};

/// Eight corners ordered by the bit-encoded sign convention.
struct CornerSet {
    std::array<Vec3, kNumCorners> corners{};

    [[nodiscard]] Vec3& operator[](std::size_t k) { return corners[k]; }
    [[nodiscard]] const Vec3& operator[](std::size_t k) const { return corners[k]; }

    [[nodiscard]] auto begin() const { return corners.begin(); }
    [[nodiscard]] auto end() const { return corners.end(); }

    [[nodiscard]] Vec3 centroid() const {
        Vec3 sum = Vec3::Zero();
        for (const auto& c : corners) {
            sum += c;
        }
        return sum / static_cast<double>(kNumCorners);
    }

    [[nodiscard]] double max_abs_difference(const CornerSet& other) const {
        double worst = 0.0;
        for (std::size_t k = 0; k < kNumCorners; ++k) {
            worst = std::max(worst, (corners[k] - other.corners[k]).cwiseAbs().maxCoeff());
        }
        return worst;
    }
};

// Corner indexing.

/// Sign (+1 or -1) of the l, h and w half-extent for corner k.
inline constexpr double corner_sign_l(std::size_t k) { return (k & 4u) ? -1.0 : 1.0; }
inline constexpr double corner_sign_h(std::size_t k) { return (k & 2u) ? -1.0 : 1.0; }
inline constexpr double corner_sign_w(std::size_t k) { return (k & 1u) ? -1.0 : 1.0; }

inline constexpr std::size_t corner_index(bool neg_l, bool neg_h, bool neg_w) {
    return (neg_l ? 4u : 0u) | (neg_h ? 2u : 0u) | (neg_w ? 1u : 0u);
}

inline constexpr std::size_t opposite_corner(std::size_t k) { return 7u - k; }

using CornerPair = std::array<std::size_t, 2>;
using PairScheme = std::array<CornerPair, 4>;

/// Edges parallel to l, positive-l corner first.
inline constexpr PairScheme kLengthEdges = {{{0, 4}, {1, 5}, {2, 6}, {3, 7}}};
/// Edges parallel to h, positive-h corner first.
inline constexpr PairScheme kHeightEdges = {{{0, 2}, {1, 3}, {4, 6}, {5, 7}}};
/// Edges parallel to w, positive-w corner first.
inline constexpr PairScheme kWidthEdges = {{{0, 1}, {2, 3}, {4, 5}, {6, 7}}};
/// Space diagonals, k paired with 7 - k.
inline constexpr PairScheme kDiagonals = {{{0, 7}, {1, 6}, {2, 5}, {3, 4}}};

// Corner transform.

inline Mat3 yaw_rotation(double psi) {
    const double s = std::sin(psi);
    const double c = std::cos(psi);
    Mat3 r;
    r << s, 0.0, c,
         0.0, 1.0, 0.0,
         -c, 0.0, s;
    return r;
}

/// Derivative of yaw_rotation with respect to psi.
inline Mat3 yaw_rotation_derivative(double psi) {
    const double s = std::sin(psi);
    const double c = std::cos(psi);
    Mat3 r;
    r << c, 0.0, -s,
         0.0, 0.0, 0.0,
         s, 0.0, c;
    return r;
}

/// Half-extent offset of corner k in the box frame (l, h, w axes).
inline Vec3 corner_offset(std::size_t k, double h, double w, double l) {
    return {corner_sign_l(k) * l / 2.0, corner_sign_h(k) * h / 2.0, corner_sign_w(k) * w / 2.0};
}

inline CornerSet corners_from_box(const BoxParams& box) {
    const Mat3 r = yaw_rotation(box.psi());
    CornerSet out;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        out[k] = r * corner_offset(k, box.h(), box.w(), box.l()) + box.center();
    }
    return out;
}

/// Rows are 3k + j (corner k, component j); columns follow Param.
inline CornerJacobian corner_jacobian(const BoxParams& box) {
    const Mat3 r = yaw_rotation(box.psi());
    const Mat3 dr = yaw_rotation_derivative(box.psi());
    CornerJacobian jac = CornerJacobian::Zero();
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        const auto row = static_cast<Eigen::Index>(3 * k);
        jac.block<3, 3>(row, 0).setIdentity();
        jac.block<3, 1>(row, 3) = r.col(1) * (corner_sign_h(k) / 2.0);
        jac.block<3, 1>(row, 4) = r.col(2) * (corner_sign_w(k) / 2.0);
        jac.block<3, 1>(row, 5) = r.col(0) * (corner_sign_l(k) / 2.0);
        jac.block<3, 1>(row, 6) = dr * corner_offset(k, box.h(), box.w(), box.l());
    }
    return jac;
}

// Inverse transform.

inline double edge_length_mean(const CornerSet& cs, const PairScheme& scheme) {
    double sum = 0.0;
    for (const auto& [i, j] : scheme) {
        sum += (cs[i] - cs[j]).norm();
    }
    return sum / static_cast<double>(scheme.size());
}

/// Least-squares style fit of box parameters to 8 corners without any cuboid
/// check: center is the corner mean, dimensions are mean edge lengths, psi
/// comes from the summed length-edge direction in the x-z plane.
/// Throws NotACuboid only when a dimension or the heading is undefined.
inline BoxParams fit_box_to_corners(const CornerSet& cs) {
    for (const auto& c : cs) {
        if (!c.allFinite()) {
            throw InvalidInput("corner coordinates must be finite");
        }
    }
    const double l = edge_length_mean(cs, kLengthEdges);
    const double h = edge_length_mean(cs, kHeightEdges);
    const double w = edge_length_mean(cs, kWidthEdges);

    Vec3 dir = Vec3::Zero();
    for (const auto& [i, j] : kLengthEdges) {
        dir += cs[i] - cs[j];
    }
    const double planar = std::hypot(dir.x(), dir.z());
    const double smallest = std::min({l, h, w});
    if (!(smallest > 0.0) || !(planar > 0.0)) {
        throw NotACuboid("degenerate corner set: a dimension or the heading is undefined",
                         smallest);
    }
    // The l-edge direction is (sin psi, -cos psi) in x-z, i.e. heading psi - pi/2.
    const double psi = std::atan2(dir.z(), dir.x()) + std::numbers::pi / 2.0;
    return BoxParams(cs.centroid(), h, w, l, psi);
}

/// Exact inverse of corners_from_box. Throws NotACuboid when the corners
/// deviate from a yaw-only cuboid by more than tol (meters).
inline BoxParams box_from_corners(const CornerSet& cs, double tol = kDefaultCuboidTolerance) {
    if (!(tol >= 0.0)) {
        throw InvalidInput("tolerance must be non-negative");
    }
    const Vec3 center = cs.centroid();
    double worst = 0.0;
    for (const auto& [i, j] : kDiagonals) {
        worst = std::max(worst, ((cs[i] + cs[j]) / 2.0 - center).norm());
    }
    if (worst > tol) {
        throw NotACuboid("diagonal midpoints do not coincide", worst);
    }
    for (const PairScheme* scheme : {&kLengthEdges, &kHeightEdges, &kWidthEdges}) {
        const double mean = edge_length_mean(cs, *scheme);
        if (mean <= tol) {
            throw NotACuboid("zero-length edge group", mean);
        }
        for (const auto& [i, j] : *scheme) {
            worst = std::max(worst, std::abs((cs[i] - cs[j]).norm() - mean));
        }
    }
    if (worst > tol) {
        throw NotACuboid("edge lengths within a group differ", worst);
    }
    BoxParams box = fit_box_to_corners(cs);
    worst = corners_from_box(box).max_abs_difference(cs);
    if (worst > tol) {
        throw NotACuboid("corners are not a yaw-only cuboid", worst);
    }
    return box;
}

}  // namespace boxbelief
