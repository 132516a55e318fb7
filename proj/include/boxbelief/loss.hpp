#pragma once

// Laplace corner-component likelihood and its negative log likelihood.
//
// Every corner component is modeled as an independent Laplace variable with
// location mu and diversity b. The per-component loss is
//
//     L(x; mu, b) = ln(2b) + |x - mu| / b
//
// and the box loss sums it over 8 corners and 3 components. The library takes
// b directly; a trainer that prefers an unconstrained output can predict
// log b and exponentiate before calling in.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"

namespace boxbelief {

/// Smallest admissible diversity, in meters.
inline constexpr double kMinDiversity = 1e-3;

class LaplaceParam {
public:
    LaplaceParam() = default;

    /// Throws InvalidInput unless mu is finite and b >= kMinDiversity.
    LaplaceParam(double mu, double b) : mu_(mu), b_(b) {
        if (!std::isfinite(mu) || !std::isfinite(b)) {
            throw InvalidInput("Laplace parameters must be finite");
        }
        if (b < kMinDiversity) {
            throw InvalidInput("Laplace diversity below minimum: " + std::to_string(b));
        }
    }

    [[nodiscard]] double mu() const noexcept { return mu_; }
    [[nodiscard]] double b() const noexcept { return b_; }
    [[nodiscard]] double variance() const noexcept { return 2.0 * b_ * b_; }

    friend bool operator==(const LaplaceParam&, const LaplaceParam&) = default;

private:
    double mu_ = 0.0;
    double b_ = 1.0;
};

using DiversityGrid = CornerGrid<double>;

/// Per-corner, per-component Laplace beliefs.
class CornerBelief {
public:
    CornerBelief() = default;

    explicit CornerBelief(const CornerGrid<LaplaceParam>& params) : params_(params) {}

    /// Means from the given corners, diversities from the grid.
    CornerBelief(const CornerSet& means, const DiversityGrid& b) {
        for (std::size_t k = 0; k < kNumCorners; ++k) {
            for (std::size_t j = 0; j < 3; ++j) {
                params_[k][j] = LaplaceParam(means[k][static_cast<Eigen::Index>(j)], b[k][j]);
            }
        }
    }

    static CornerBelief uniform(const CornerSet& means, double b) {
        DiversityGrid grid;
        for (auto& row : grid) {
            row.fill(b);
        }
        return {means, grid};
    }

    [[nodiscard]] const LaplaceParam& operator()(std::size_t k, std::size_t j) const {
        return params_[k][j];
    }

    [[nodiscard]] const CornerGrid<LaplaceParam>& params() const noexcept { return params_; }

    [[nodiscard]] CornerSet means() const {
        CornerSet out;
        for (std::size_t k = 0; k < kNumCorners; ++k) {
            out[k] = Vec3(params_[k][0].mu(), params_[k][1].mu(), params_[k][2].mu());
        }
        return out;
    }

    [[nodiscard]] DiversityGrid diversities() const {
        DiversityGrid out;
        for (std::size_t k = 0; k < kNumCorners; ++k) {
            for (std::size_t j = 0; j < 3; ++j) {
                out[k][j] = params_[k][j].b();
            }
        }
        return out;
    }

    /// Component variance 2b^2 of corner k, as a vector over (x, y, z).
    [[nodiscard]] Vec3 variances(std::size_t k) const {
        return {params_[k][0].variance(), params_[k][1].variance(), params_[k][2].variance()};
    }

    friend bool operator==(const CornerBelief&, const CornerBelief&) = default;

private:
    CornerGrid<LaplaceParam> params_{};
};

struct LossValue {
    double total = 0.0;
    CornerGrid<double> per_component{};
};

struct LossGradient {
    CornerGrid<double> d_mu{};
    CornerGrid<double> d_b{};
};

inline double laplace_density(double x, const LaplaceParam& p) {
    return std::exp(-std::abs(x - p.mu()) / p.b()) / (2.0 * p.b());
}

inline double component_nll(double x, const LaplaceParam& p) {
    return std::log(2.0 * p.b()) + std::abs(x - p.mu()) / p.b();
}

/// Summation runs corner-major, component-minor so the total is deterministic.
inline LossValue ensemble_loss(const CornerSet& label, const CornerBelief& belief) {
    LossValue out;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double v = component_nll(label[k][static_cast<Eigen::Index>(j)], belief(k, j));
            out.per_component[k][j] = v;
            out.total += v;
        }
    }
    return out;
}

/// Gradient of ensemble_loss with respect to every mu and b. At x == mu the
/// mu-subgradient is taken as 0.
inline LossGradient ensemble_loss_grad(const CornerSet& label, const CornerBelief& belief) {
    LossGradient g;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        for (std::size_t j = 0; j < 3; ++j) {
            const LaplaceParam& p = belief(k, j);
            const double r = label[k][static_cast<Eigen::Index>(j)] - p.mu();
            const double sign = (r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            g.d_mu[k][j] = -sign / p.b();
            g.d_b[k][j] = 1.0 / p.b() - std::abs(r) / (p.b() * p.b());
        }
    }
    return g;
}

/// Gradient of the corner loss with respect to the 7 parameters of the box
/// whose corners serve as the Laplace means.
inline Vec7 box_loss_grad(const CornerSet& label, const BoxParams& predicted,
                          const DiversityGrid& diversities) {
    const CornerBelief belief(corners_from_box(predicted), diversities);
    const LossGradient g = ensemble_loss_grad(label, belief);
    Eigen::Matrix<double, 24, 1> d_mu;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        for (std::size_t j = 0; j < 3; ++j) {
            d_mu[static_cast<Eigen::Index>(3 * k + j)] = g.d_mu[k][j];
        }
    }
    return corner_jacobian(predicted).transpose() * d_mu;
}

/// Closed-form maximum likelihood fit: mu is the sample median, b the mean
/// absolute deviation about it, floored at kMinDiversity.
inline LaplaceParam fit_laplace_mle(std::span<const double> samples) {
    if (samples.size() < 2) {
        throw InsufficientData("Laplace fit needs at least 2 samples");
    }
    std::vector<double> sorted(samples.begin(), samples.end());
    const std::size_t n = sorted.size();
    const std::size_t mid = n / 2;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
    double median = sorted[mid];
    if (n % 2 == 0) {
        const double lower = *std::max_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid));
        median = 0.5 * (lower + median);
    }
    double mad = 0.0;
    for (double s : samples) {
        mad += std::abs(s - median);
    }
    mad /= static_cast<double>(n);
    return {median, std::max(mad, kMinDiversity)};
}

/// Laplace(mu, b) sampler by inverse CDF.
class LaplaceDistribution {
public:
    LaplaceDistribution(double mu, double b) : mu_(mu), b_(b) {}

    template <class URBG>
    double operator()(URBG& gen) {
        double u = 0.0;
        do {
            u = uniform_(gen);
        } while (u == 0.0);
        // u in (0, 1); |v| < 1/2 with v = u - 1/2.
        const double v = u - 0.5;
        const double mag = -b_ * std::log1p(-2.0 * std::abs(v));
        return v < 0.0 ? mu_ - mag : mu_ + mag;
    }

private:
    double mu_;
    double b_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// One draw of all 24 corner components from the belief.
template <class URBG>
CornerSet sample_corners(const CornerBelief& belief, URBG& gen) {
    CornerSet out;
    for (std::size_t k = 0; k < kNumCorners; ++k) {
        for (std::size_t j = 0; j < 3; ++j) {
            const LaplaceParam& p = belief(k, j);
            out[k][static_cast<Eigen::Index>(j)] = LaplaceDistribution(p.mu(), p.b())(gen);
        }
    }
    return out;
}

}  // namespace boxbelief
