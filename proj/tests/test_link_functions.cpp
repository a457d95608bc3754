#include <gtest/gtest.h>

#include <cmath>

#include "pcglm/link_functions.hpp"
#include "pcglm/random.hpp"
#include "test_support.hpp"

using namespace pcglm;

namespace {

ProbabilityVector pv(std::initializer_list<double> v) {
    Vector p(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) p[i++] = x;
    return ProbabilityVector(p);
}

Vector vec(std::initializer_list<double> v) { return pv(v).probs; }

} // namespace

TEST(RatioForward, ReferenceUniform) {
    const Vector r = ratio_forward(pv({1.0 / 3, 1.0 / 3, 1.0 / 3}), RatioKind::Reference);
    EXPECT_NEAR(r[0], 0.5, 1e-15);
    EXPECT_NEAR(r[1], 0.5, 1e-15);
}

TEST(RatioForward, CumulativeAndSequential) {
    const auto pi = pv({0.5, 0.3, 0.2});
    const Vector c = ratio_forward(pi, RatioKind::Cumulative);
    EXPECT_NEAR(c[0], 0.5, 1e-15);
    EXPECT_NEAR(c[1], 0.8, 1e-15);
    const Vector s = ratio_forward(pi, RatioKind::Sequential);
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], 0.6, 1e-15);
}

TEST(RatioForward, DegenerateInputNamesIndex) {
    try {
        ratio_forward(pv({0.5, 0.5, 0.0}), RatioKind::Adjacent);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
    }
}

TEST(RatioInverse, Examples) {
    const auto c = ratio_inverse(vec({0.5, 0.8}), RatioKind::Cumulative);
    EXPECT_NEAR(c[0], 0.5, 1e-15);
    EXPECT_NEAR(c[1], 0.3, 1e-15);
    EXPECT_NEAR(c[2], 0.2, 1e-15);
    const auto r = ratio_inverse(vec({0.5, 0.5}), RatioKind::Reference);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r[j], 1.0 / 3, 1e-15);
    const auto s = ratio_inverse(vec({0.5, 0.6}), RatioKind::Sequential);
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], 0.3, 1e-15);
    EXPECT_NEAR(s[2], 0.2, 1e-15);
}

TEST(RatioInverse, CumulativeMustIncrease) {
    EXPECT_THROW(ratio_inverse(vec({0.6, 0.4}), RatioKind::Cumulative), DomainError);
}

TEST(RatioRoundTrip, RandomSimplexPoints) {
    Random rng(7);
    for (auto kind : kAllRatios) {
        for (int t = 0; t < 1000; ++t) {
            const int J = 2 + static_cast<int>(rng.below(7));
            const auto pi = testing_support::random_simplex(rng, J);
            const Vector r = ratio_forward(pi, kind);
            for (Eigen::Index j = 0; j < r.size(); ++j) {
                ASSERT_GT(r[j], 0.0);
                ASSERT_LT(r[j], 1.0);
                if (kind == RatioKind::Cumulative && j > 0) ASSERT_GT(r[j], r[j - 1]);
            }
            const auto back = ratio_inverse(r, kind);
            ASSERT_LT((back.probs - pi.probs).cwiseAbs().maxCoeff(), 1e-12);
            const Vector again = ratio_forward(back, kind);
            ASSERT_LT((again - r).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(RatioJacobian, CumulativeIsConstant) {
    const Matrix jac = ratio_jacobian(pv({0.2, 0.5, 0.3}), RatioKind::Cumulative);
    Matrix expected(2, 2);
    expected << 1, 0, -1, 1;
    EXPECT_EQ(jac, expected);
}

TEST(RatioJacobian, MatchesFiniteDifferences) {
    Random rng(11);
    EXPECT_LT(testing_support::jacobian_fd_error(pv({1.0 / 3, 1.0 / 3, 1.0 / 3}), RatioKind::Reference),
              1e-6);
    EXPECT_LT(testing_support::jacobian_fd_error(pv({0.5, 0.3, 0.2}), RatioKind::Adjacent), 1e-6);
    for (auto kind : kAllRatios) {
        for (int t = 0; t < 100; ++t) {
            const int J = 2 + static_cast<int>(rng.below(6));
            const auto pi = testing_support::random_simplex(rng, J, 0.02);
            ASSERT_LT(testing_support::jacobian_fd_error(pi, kind), 1e-6) << to_string(kind);
        }
    }
}

TEST(RatioJacobian, Invertible) {
    const auto pi = pv({0.1, 0.2, 0.3, 0.4});
    for (auto kind : kAllRatios)
        EXPECT_GT(std::fabs(ratio_jacobian(pi, kind).determinant()), 1e-8);
}

TEST(Cdf, ReferenceValues) {
    EXPECT_EQ(CdfKind::logistic().cdf(0.0), 0.5);
    EXPECT_NEAR(CdfKind::gumbel_max().cdf(0.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(CdfKind::gumbel_max().cdf(0.0), 0.367879, 1e-6);
    EXPECT_EQ(CdfKind::normal().quantile(0.5), 0.0);
    EXPECT_NEAR(CdfKind::gumbel_min().cdf(0.0), 1.0 - std::exp(-1.0), 1e-15);
    EXPECT_NEAR(CdfKind::laplace().cdf(0.0), 0.5, 1e-15);
    // scipy.stats.t(3) reference values
    EXPECT_NEAR(CdfKind::student(3).cdf(1.5), 0.8847080673775886, 1e-12);
    EXPECT_NEAR(CdfKind::student(3).quantile(0.9), 1.6377443536962095, 1e-10);
    EXPECT_NEAR(CdfKind::student(1).cdf(1.0), 0.75, 1e-14);
}

TEST(Cdf, QuantileDomain) {
    for (auto f : kAllCdfFamilies) {
        const CdfKind cdf(f, f == CdfFamily::Student ? 4 : 0);
        EXPECT_THROW((void)cdf.quantile(0.0), DomainError);
        EXPECT_THROW((void)cdf.quantile(1.0), DomainError);
        EXPECT_THROW((void)cdf.quantile(-0.2), DomainError);
    }
}

TEST(Cdf, StudentShape) {
    EXPECT_EQ(CdfKind(CdfFamily::Student).df(), 1);
    EXPECT_THROW(CdfKind(CdfFamily::Student, -2), SpecError);
    EXPECT_THROW(CdfKind(CdfFamily::Normal, 3), SpecError);
}

TEST(Cdf, MonotoneInvertibleAndDensityConsistent) {
    for (auto f : kAllCdfFamilies) {
        for (int df : (f == CdfFamily::Student ? std::vector<int>{1, 2, 3, 8} : std::vector<int>{0})) {
            const CdfKind cdf(f, df);
            double prev = -1.0;
            for (int i = 0; i < 10000; ++i) {
                const double x = -6.0 + 12.0 * i / 9999.0;
                const double F = cdf.cdf(x);
                // Keep to the range where F carries information about x.
                if (F < 1e-300 || F > 1.0 - 1e-6) continue;
                ASSERT_GT(F, prev) << cdf.name() << " x=" << x;
                prev = F;
                ASSERT_NEAR(cdf.quantile(F), x, 1e-9 * std::max(1.0, std::fabs(x)))
                    << cdf.name() << " x=" << x;
                ASSERT_NEAR(cdf.survival(x), 1.0 - F, 1e-15);
                if (i % 10 == 0) {
                    const double h = 1e-5;
                    const double fd = (cdf.cdf(x + h) - cdf.cdf(x - h)) / (2 * h);
                    ASSERT_NEAR(cdf.density(x), fd, 1e-6) << cdf.name() << " x=" << x;
                }
            }
        }
    }
}
