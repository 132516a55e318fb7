#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "boxbelief/diagnostics.hpp"
#include "test_support.hpp"

using namespace boxbelief;
using boxbelief::testing::random_box;
using boxbelief::testing::random_diversities;
using boxbelief::testing::uniform_diversities;

namespace {

constexpr double kPi = std::numbers::pi;

const BoxParams kUnitCube(0, 0, 0, 1, 1, 1, kPi / 2);

PointCloud random_cloud_in(const BoxParams& box, std::size_t n, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const Mat3 r = yaw_rotation(box.psi());
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) {
        c.points.push_back(r * Vec3(u(gen) * box.l(), u(gen) * box.h(), u(gen) * box.w()) + box.center());
    }
    return c;
}

/// Belief whose ensemble std-dev is proportional to the given weights.
CornerBelief belief_with_sigma(const CornerSet& means, const CornerValues& sigma) {
    DiversityGrid b;
    for (std::size_t k = 0; k < 8; ++k) {
        // 3 components of 2b^2 sum to sigma^2.
        b[k].fill(sigma[k] / std::sqrt(6.0));
    }
    return {means, b};
}

/// Membership via the six face half-spaces, with outward normals built from corners.
bool inside_half_spaces(const CornerSet& cs, const Vec3& p, double slack) {
    const std::pair<std::size_t, std::size_t> faces[] = {{0, 4}, {4, 0}, {0, 2}, {2, 0}, {0, 1}, {1, 0}};
    for (const auto& [on, off] : faces) {
        const Vec3 n = (cs[on] - cs[off]).normalized();
        if (n.dot(p - cs[on]) > slack) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST(PseudoDistribution, FloorsAndNormalizes) {
    const auto p = PseudoDistribution::from_weights({0, 1, 1, 1, 1, 1, 1, 1});
    double sum = 0.0;
    for (double w : p.weights()) {
        EXPECT_GT(w, 0.0);
        sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(p[0], 1e-9 * 7 / (7 + 7e-9), 1e-20);
    EXPECT_THROW(PseudoDistribution::from_weights({0, 0, 0, 0, 0, 0, 0, 0}), InvalidInput);
    EXPECT_THROW(PseudoDistribution::from_weights({-1, 1, 1, 1, 1, 1, 1, 1}), InvalidInput);
}

TEST(KlDivergence, DegenerateAgainstUniformIsLogEight) {
    const auto d = PseudoDistribution::from_weights({1, 0, 0, 0, 0, 0, 0, 0});
    const auto u = PseudoDistribution::from_weights({1, 1, 1, 1, 1, 1, 1, 1});
    EXPECT_NEAR(kl_divergence(d, u), std::log(8.0), 1e-6);
    EXPECT_EQ(kl_divergence(u, u), 0.0);
}

TEST(CornerPointDistances, Examples) {
    const CornerSet cs = corners_from_box(kUnitCube);
    PointCloud center;
    center.points.push_back(Vec3::Zero());
    for (double d : corner_point_distances(cs, center)) {
        EXPECT_NEAR(d, std::sqrt(3.0) / 2.0, 1e-15);
    }

    PointCloud at_corner;
    for (int i = 0; i < 10; ++i) {
        at_corner.points.push_back(cs[0]);
    }
    const CornerValues d = corner_point_distances(cs, at_corner);
    EXPECT_NEAR(d[0], 0.0, 1e-15);
    EXPECT_NEAR(d[7], std::sqrt(3.0), 1e-15);

    EXPECT_THROW(corner_point_distances(cs, PointCloud{}), EmptyCloud);
}

TEST(CornerPointDistances, MatchesBruteForce) {
    std::mt19937_64 gen(1);
    for (int t = 0; t < 20; ++t) {
        const BoxParams box = random_box(gen);
        const CornerSet cs = corners_from_box(box);
        const PointCloud cloud = random_cloud_in(box, 200, gen);
        const CornerValues d = corner_point_distances(cs, cloud);
        for (std::size_t k = 0; k < 8; ++k) {
            double sum = 0.0;
            for (const auto& p : cloud.points) {
                const double dx = cs[k].x() - p.x();
                const double dy = cs[k].y() - p.y();
                const double dz = cs[k].z() - p.z();
                sum += std::sqrt(dx * dx + dy * dy + dz * dz);
            }
            EXPECT_NEAR(d[k], sum / 200.0, 1e-12);
        }
    }
}

TEST(PointsInBox, Examples) {
    const BoxParams box(5, 1, 12, 1.5, 1.6, 3.9, 0.6);
    PointCloud cloud;
    cloud.points.push_back(box.center());
    const double diag = std::sqrt(1.5 * 1.5 + 1.6 * 1.6 + 3.9 * 3.9);
    cloud.points.push_back(box.center() + Vec3(2 * diag, 0, 0));
    for (double margin : {0.0, 0.5}) {
        const PointCloud in = points_in_box(box, cloud, margin);
        ASSERT_EQ(in.size(), 1u);
        EXPECT_EQ(in.points[0], box.center());
    }
}

TEST(PointsInBox, CornersBelongToTheirOwnBox) {
    std::mt19937_64 gen(17);
    for (int t = 0; t < 500; ++t) {
        const BoxParams box = random_box(gen);
        PointCloud cloud;
        for (const auto& c : corners_from_box(box)) {
            cloud.points.push_back(c);
        }
        EXPECT_EQ(points_in_box(box, cloud).size(), 8u);
    }
}

TEST(PointsInBox, MatchesHalfSpaceOracle) {
    std::mt19937_64 gen(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 5; ++t) {
        const BoxParams box = random_box(gen);
        const CornerSet cs = corners_from_box(box);
        const double reach = std::max({box.l(), box.h(), box.w()});
        PointCloud cloud;
        for (int i = 0; i < 10'000; ++i) {
            cloud.points.push_back(box.center() + reach * Vec3(u(gen), u(gen), u(gen)));
        }
        const PointCloud in = points_in_box(box, cloud);
        std::size_t j = 0;
        for (const auto& p : cloud.points) {
            const bool oracle = inside_half_spaces(cs, p, kMembershipEpsilon);
            const bool member = j < in.size() && in.points[j] == p;
            ASSERT_EQ(oracle, member);
            j += member ? 1 : 0;
        }
        EXPECT_EQ(j, in.size());
    }
}

TEST(PointsInBox, KeepsIntensityAligned) {
    PointCloud cloud;
    cloud.points = {Vec3(0, 0, 0), Vec3(100, 0, 0), Vec3(0.1, 0, 0)};
    cloud.intensity = {0.1f, 0.2f, 0.3f};
    const PointCloud in = points_in_box(kUnitCube, cloud);
    ASSERT_EQ(in.intensity.size(), 2u);
    EXPECT_EQ(in.intensity[1], 0.3f);
}

TEST(CornerEnsembleVariance, Examples) {
    const CornerSet cs = corners_from_box(kUnitCube);
    for (double v : corner_ensemble_variance(CornerBelief::uniform(cs, 1.0))) {
        EXPECT_DOUBLE_EQ(v, 6.0);
    }
    DiversityGrid b = uniform_diversities(1.0);
    b[3] = {1.0, 2.0, 3.0};
    EXPECT_DOUBLE_EQ(corner_ensemble_variance(CornerBelief(cs, b))[3], 28.0);

    std::mt19937_64 gen(2);
    const DiversityGrid rb = random_diversities(gen);
    const CornerValues v = corner_ensemble_variance(CornerBelief(cs, rb));
    for (std::size_t k = 0; k < 8; ++k) {
        const double oracle = 2 * rb[k][0] * rb[k][0] + 2 * rb[k][1] * rb[k][1] + 2 * rb[k][2] * rb[k][2];
        EXPECT_NEAR(v[k], oracle, 1e-12);
    }
}

TEST(KldUd, ZeroForProportionalBelief) {
    std::mt19937_64 gen(31);
    const BoxParams box(3, 1, 20, 1.5, 1.6, 3.9, 0.4);
    const CornerSet cs = corners_from_box(box);
    const PointCloud cloud = random_cloud_in(box, 300, gen);
    const CornerValues d = corner_point_distances(cs, cloud);
    EXPECT_LT(kld_ud(cs, belief_with_sigma(cs, d), cloud), 1e-9);

    // Scale invariance: any common factor on sigma leaves the divergence at zero.
    CornerValues scaled = d;
    for (double& v : scaled) {
        v *= 0.37;
    }
    EXPECT_LT(kld_ud(cs, belief_with_sigma(cs, scaled), cloud), 1e-9);
}

TEST(KldUd, MatchesDirectEvaluation) {
    std::mt19937_64 gen(37);
    for (int t = 0; t < 50; ++t) {
        const BoxParams box = random_box(gen);
        const CornerSet cs = corners_from_box(box);
        const PointCloud cloud = random_cloud_in(box, 50, gen);
        const DiversityGrid b = random_diversities(gen);
        const double got = kld_ud(cs, CornerBelief(cs, b), cloud);

        double d[8];
        double u[8];
        double sd = 0;
        double su = 0;
        for (int k = 0; k < 8; ++k) {
            double acc = 0;
            for (const auto& p : cloud.points) {
                acc += (cs[k] - p).norm();
            }
            d[k] = acc / 50;
            u[k] = std::sqrt(2 * (b[k][0] * b[k][0] + b[k][1] * b[k][1] + b[k][2] * b[k][2]));
            sd += d[k];
            su += u[k];
        }
        double kl = 0;
        for (int k = 0; k < 8; ++k) {
            kl += (d[k] / sd) * std::log((d[k] / sd) / (u[k] / su));
        }
        EXPECT_NEAR(got, kl, 1e-12);
        EXPECT_GE(got, 0.0);
    }
}

TEST(KldUd, VarianceScaleOption) {
    std::mt19937_64 gen(41);
    const BoxParams box(0, 1, 10, 1.5, 1.6, 3.9, 0.0);
    const CornerSet cs = corners_from_box(box);
    const PointCloud cloud = random_cloud_in(box, 100, gen);
    const CornerValues d = corner_point_distances(cs, cloud);
    CornerValues root{};
    for (std::size_t k = 0; k < 8; ++k) {
        root[k] = std::sqrt(d[k]);
    }
    // sigma proportional to sqrt(d) means variance proportional to d.
    const CornerBelief belief = belief_with_sigma(cs, root);
    EXPECT_LT(kld_ud(cs, belief, cloud, UncertaintyScale::variance), 1e-9);
    EXPECT_GT(kld_ud(cs, belief, cloud, UncertaintyScale::std_dev), 1e-6);
}

TEST(KldR, ZeroWhenRelativeSigmaFollowsGeometry) {
    std::mt19937_64 gen(43);
    for (int t = 0; t < 100; ++t) {
        const BoxParams box = random_box(gen);
        const CornerSet cs = corners_from_box(box);
        const std::size_t ref = static_cast<std::size_t>(t % 8);
        // var_k = base + (alpha d_k)^2 with d measured from ref.
        CornerValues sigma{};
        for (std::size_t k = 0; k < 8; ++k) {
            const double dk = (cs[k] - cs[ref]).norm();
            sigma[k] = std::sqrt(0.04 + 0.01 * dk * dk);
        }
        EXPECT_LT(kld_r(cs, belief_with_sigma(cs, sigma)), 1e-9);
    }
}

TEST(KldR, UnitCubeAgainstUniformRelativeSigma) {
    // Reference corner 0 at the minimum, all others equal and larger.
    const CornerSet cs = corners_from_box(kUnitCube);
    CornerValues sigma{};
    sigma.fill(0.5);
    sigma[0] = 0.3;
    // Hand evaluation: R_d over {0,1,1,sqrt2,1,sqrt2,sqrt2,sqrt3}, R_sigma uniform over
    // corners 1..7, both with the 1e-9 relative floor on the reference entry.
    EXPECT_NEAR(kld_r(cs, belief_with_sigma(cs, sigma)), 0.021350794228038837, 1e-9);
}

TEST(KldR, TieBreaksToLowestIndex) {
    const CornerSet cs = corners_from_box(kUnitCube);
    CornerValues sigma{};
    sigma.fill(0.5);
    sigma[2] = 0.3;
    sigma[5] = 0.3;
    const CornerBelief belief = belief_with_sigma(cs, sigma);
    EXPECT_EQ(relative_profiles(cs, belief).reference, 2u);

    // Swapping the two tied corners' beliefs reproduces the same grid.
    CornerValues swapped = sigma;
    std::swap(swapped[2], swapped[5]);
    EXPECT_EQ(kld_r(cs, belief_with_sigma(cs, swapped)), kld_r(cs, belief));
}

TEST(KldR, DegenerateWhenAllVariancesEqual) {
    const CornerSet cs = corners_from_box(kUnitCube);
    EXPECT_THROW(kld_r(cs, CornerBelief::uniform(cs, 0.2)), DegenerateRelativeUncertainty);
}

TEST(KldProperties, NonNegativeAndRigidMotionInvariant) {
    std::mt19937_64 gen(47);
    std::uniform_real_distribution<double> u(-20, 20);
    std::uniform_real_distribution<double> yaw(-kPi, kPi);
    for (int t = 0; t < 200; ++t) {
        const BoxParams box = random_box(gen);
        const CornerSet cs = corners_from_box(box);
        const PointCloud cloud = random_cloud_in(box, 30, gen);
        const DiversityGrid b = random_diversities(gen);
        const double ud = kld_ud(cs, CornerBelief(cs, b), cloud);
        const double r = kld_r(cs, CornerBelief(cs, b));
        EXPECT_GE(ud, 0.0);
        EXPECT_GE(r, 0.0);

        // Rotate about the camera y axis and translate, carrying the belief with the corners.
        const double a = yaw(gen);
        Mat3 rot;
        rot << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
        const Vec3 shift(u(gen), u(gen) / 10, u(gen));
        const BoxParams moved(rot * box.center() + shift, box.h(), box.w(), box.l(), box.psi() - a);
        const CornerSet mcs = corners_from_box(moved);
        ASSERT_LT((rot * cs[0] + shift - mcs[0]).norm(), 1e-9);
        PointCloud mcloud;
        for (const auto& p : cloud.points) {
            mcloud.points.push_back(rot * p + shift);
        }
        EXPECT_NEAR(kld_ud(mcs, CornerBelief(mcs, b), mcloud), ud, 1e-9);
        EXPECT_NEAR(kld_r(mcs, CornerBelief(mcs, b)), r, 1e-9);
        const CornerValues d0 = corner_point_distances(cs, cloud);
        const CornerValues d1 = corner_point_distances(mcs, mcloud);
        for (std::size_t k = 0; k < 8; ++k) {
            EXPECT_NEAR(d0[k], d1[k], 1e-9);
        }

        const BoxParams other = random_box(gen);
        const BoxParams other_moved(rot * other.center() + shift, other.h(), other.w(), other.l(), other.psi() - a);
        EXPECT_NEAR(iou3d(box, other), iou3d(moved, other_moved), 1e-9);
    }
}

TEST(Iou3d, Examples) {
    const BoxParams a(0, 0, 0, 1, 1, 1, kPi / 2);
    EXPECT_NEAR(iou3d(a, a), 1.0, 1e-12);
    const BoxParams b(0.5, 0, 0, 1, 1, 1, kPi / 2);
    EXPECT_NEAR(iou3d(a, b), 1.0 / 3.0, 1e-12);
    EXPECT_EQ(iou3d(a, BoxParams(5, 0, 0, 1, 1, 1, 0)), 0.0);
    EXPECT_EQ(iou3d(a, BoxParams(0, 3, 0, 1, 1, 1, 0)), 0.0);
}

TEST(Iou3d, SymmetricAndBounded) {
    std::mt19937_64 gen(53);
    std::uniform_real_distribution<double> jitter(-1.5, 1.5);
    for (int t = 0; t < 1000; ++t) {
        const BoxParams a = random_box(gen);
        const BoxParams b(a.x() + jitter(gen), a.y() + jitter(gen) / 3, a.z() + jitter(gen), a.h(), a.w() * 1.2,
                          a.l() * 0.9, a.psi() + jitter(gen));
        const double ab = iou3d(a, b);
        EXPECT_NEAR(ab, iou3d(b, a), 1e-12);
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_NEAR(iou3d(a, a), 1.0, 1e-12);
    }
}

TEST(Iou3d, MatchesMonteCarloVolume) {
    std::mt19937_64 gen(59);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::uniform_real_distribution<double> yaw(-kPi, kPi);
    for (int t = 0; t < 10; ++t) {
        const BoxParams a(0, 0, 10, 1.5, 1.6, 3.9, yaw(gen));
        const BoxParams b(jitter(gen), 0.3 * jitter(gen), 10 + jitter(gen), 1.4, 1.7, 3.5, yaw(gen));
        Vec3 lo = Vec3::Constant(1e9);
        Vec3 hi = Vec3::Constant(-1e9);
        for (const BoxParams* box : {&a, &b}) {
            for (const auto& c : corners_from_box(*box)) {
                lo = lo.cwiseMin(c);
                hi = hi.cwiseMax(c);
            }
        }
        PointCloud samples;
        std::uniform_real_distribution<double> u(0, 1);
        for (int i = 0; i < 200'000; ++i) {
            samples.points.push_back(lo + (hi - lo).cwiseProduct(Vec3(u(gen), u(gen), u(gen))));
        }
        const auto in_a = points_in_box(a, samples).size();
        const auto in_b = points_in_box(b, samples).size();
        // Count the intersection by testing the a-members against b.
        const auto in_both = points_in_box(b, points_in_box(a, samples)).size();
        const double mc = static_cast<double>(in_both) / static_cast<double>(in_a + in_b - in_both);
        EXPECT_NEAR(iou3d(a, b), mc, 1e-2);
    }
}

TEST(DistanceBinnedStats, Examples) {
    BoxDiagnostics r;
    r.detection_distance = 7.0;
    r.per_component_overall_variance = {1.0, 2.0, 3.0};
    std::vector<BoxDiagnostics> one{r};
    const auto bins = distance_binned_stats(one, 5.0);
    ASSERT_EQ(bins.size(), 1u);
    EXPECT_EQ(bins[0].lower, 5.0);
    EXPECT_EQ(bins[0].upper, 10.0);
    EXPECT_EQ(bins[0].stddev[0], 0.0);

    BoxDiagnostics r2 = r;
    r.per_component_overall_variance[0] = 1.0;
    r2.per_component_overall_variance[0] = 3.0;
    r2.detection_distance = 9.9;
    std::vector<BoxDiagnostics> two{r, r2};
    const auto b2 = distance_binned_stats(two, 5.0);
    ASSERT_EQ(b2.size(), 1u);
    EXPECT_DOUBLE_EQ(b2[0].mean[0], 2.0);
    EXPECT_DOUBLE_EQ(b2[0].stddev[0], 1.0);

    EXPECT_THROW(distance_binned_stats(one, 0.0), InvalidInput);
}

TEST(DistanceBinnedStats, MatchesScalarBinning) {
    std::mt19937_64 gen(61);
    std::uniform_real_distribution<double> dist(0, 80);
    std::uniform_real_distribution<double> var(0, 5);
    std::vector<BoxDiagnostics> reports(1000);
    for (auto& r : reports) {
        r.detection_distance = dist(gen);
        r.per_component_overall_variance = {var(gen), var(gen), var(gen)};
    }
    const auto bins = distance_binned_stats(reports, 5.0);

    std::map<int, std::vector<const BoxDiagnostics*>> oracle;
    for (const auto& r : reports) {
        oracle[static_cast<int>(r.detection_distance / 5.0)].push_back(&r);
    }
    ASSERT_EQ(bins.size(), oracle.size());
    std::size_t i = 0;
    for (const auto& [idx, members] : oracle) {
        EXPECT_EQ(bins[i].lower, idx * 5.0);
        EXPECT_EQ(bins[i].count, members.size());
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (const auto* m : members) {
                s += m->per_component_overall_variance[static_cast<std::size_t>(j)];
            }
            const double mean = s / static_cast<double>(members.size());
            double sq = 0;
            for (const auto* m : members) {
                sq += std::pow(m->per_component_overall_variance[static_cast<std::size_t>(j)] - mean, 2);
            }
            EXPECT_NEAR(bins[i].mean[static_cast<std::size_t>(j)], mean, 1e-12);
            EXPECT_NEAR(bins[i].stddev[static_cast<std::size_t>(j)], std::sqrt(sq / static_cast<double>(members.size())),
                        1e-12);
        }
        ++i;
    }
}

TEST(DiagnoseBox, AssemblesRecord) {
    std::mt19937_64 gen(67);
    const BoxParams box(3, 1, 20, 1.5, 1.6, 3.9, 0.4);
    const CornerSet cs = corners_from_box(box);
    PointCloud cloud = random_cloud_in(box, 100, gen);
    cloud.points.push_back(Vec3(100, 100, 100));
    const DiversityGrid b = random_diversities(gen);
    const BoxDiagnostics d = diagnose_box(box, CornerBelief(cs, b), cloud, box);
    EXPECT_EQ(d.num_points, 100u);
    ASSERT_TRUE(d.iou.has_value());
    EXPECT_NEAR(*d.iou, 1.0, 1e-12);
    EXPECT_NEAR(d.detection_distance, std::hypot(3.0, 20.0), 1e-12);
    double vx = 0;
    for (const auto& row : b) {
        vx += 2 * row[0] * row[0];
    }
    EXPECT_NEAR(d.per_component_overall_variance[0], vx, 1e-12);
    ASSERT_TRUE(d.kld_r.has_value());

    const BoxDiagnostics u = diagnose_box(box, CornerBelief::uniform(cs, 0.1), cloud);
    EXPECT_FALSE(u.kld_r.has_value());
    EXPECT_FALSE(u.iou.has_value());

    PointCloud far;
    far.points.push_back(Vec3(100, 100, 100));
    EXPECT_THROW(diagnose_box(box, CornerBelief(cs, b), far), EmptyCloud);
}

TEST(Spearman, TiesAndDegenerateInput) {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{10, 20, 30, 40};
    const std::vector<double> c{4, 3, 2, 1};
    const std::vector<double> flat{5, 5, 5, 5};
    EXPECT_NEAR(spearman(a, b).rho, 1.0, 1e-15);
    EXPECT_NEAR(spearman(a, c).rho, -1.0, 1e-15);
    const RankCorrelation d = spearman(a, flat);
    EXPECT_TRUE(d.degenerate);
    EXPECT_EQ(d.rho, 0.0);
    const std::vector<double> tied{1, 1, 2, 3};
    // Average ranks {1.5, 1.5, 3, 4} against {1, 2, 3, 4}.
    EXPECT_NEAR(spearman(tied, a).rho, 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
}
