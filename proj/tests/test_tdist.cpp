#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "enrf/linalg.hpp"
#include "enrf/special.hpp"
#include "enrf/tdist.hpp"

using namespace enrf;
using Catch::Approx;

namespace {

Eigen::MatrixXd random_spd(int m, RngStream& rng, double ridge = 0.5) {
    Eigen::MatrixXd g(m, m + 4);
    rng.fill_normal(g);
    return symmetrize(g * g.transpose() / double(m + 4)) +
           ridge * Eigen::MatrixXd::Identity(m, m);
}

}  // namespace

TEST_CASE("digamma matches high-precision references", "[tdist][special]") {
    CHECK(digamma(0.5) == Approx(-1.9635100260214235).epsilon(1e-12));
    CHECK(digamma(1.0) == Approx(-0.5772156649015329).epsilon(1e-12));
    CHECK(digamma(2.5) == Approx(0.7031566406452432).epsilon(1e-12));
    CHECK(digamma(3.7) == Approx(1.1671535393615114).epsilon(1e-12));
    CHECK(digamma(15.25) == Approx(2.6914344449562922).epsilon(1e-12));
    CHECK(digamma(100.5) == Approx(4.6051743525818452).epsilon(1e-12));
    CHECK(digamma(501.0) == Approx(6.2156077650889917).epsilon(1e-12));
}

TEST_CASE("logpdf closed forms", "[tdist]") {
    SECTION("standard Cauchy mode (raw kernel; nu below the TDist range)") {
        CHECK(detail::t_logpdf_kernel(0.0, 0.0, 1, 1.0) ==
              Approx(std::log(1.0 / M_PI)).epsilon(1e-12));
    }
    SECTION("large-nu limit matches the Gaussian log-density") {
        TDist d((Eigen::VectorXd(1) << 0.0).finished(),
                Eigen::MatrixXd::Identity(1, 1), 1e6);
        const double gauss = -0.5 * 1.5 * 1.5 - 0.5 * std::log(2.0 * M_PI);
        CHECK(logpdf(d, (Eigen::VectorXd(1) << 1.5).finished()) == Approx(gauss).margin(1e-4));
    }
    SECTION("m=3, nu=4 frozen high-precision reference") {
        TDist d(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 4.0);
        Eigen::VectorXd x(3);
        x << 1, 2, 3;
        CHECK(logpdf(d, x) == Approx(-7.8598336568238212).epsilon(1e-12));
    }
    SECTION("errors") {
        TDist d(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 5.0);
        CHECK_THROWS_AS(logpdf(d, Eigen::VectorXd::Zero(3)), ArgumentError);
        Eigen::VectorXd bad(2);
        bad << 1.0, std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(logpdf(d, bad), ArgumentError);
    }
}

TEST_CASE("TDist invariants", "[tdist]") {
    CHECK_THROWS_AS(TDist(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 2.0),
                    ArgumentError);
    CHECK_THROWS_AS(TDist(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 1.5),
                    ArgumentError);
    Eigen::MatrixXd not_spd(2, 2);
    not_spd << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(TDist(Eigen::VectorXd::Zero(2), not_spd, 5.0), SingularError);
    RngStream rng(5);
    const Eigen::MatrixXd c = random_spd(4, rng);
    TDist d(Eigen::VectorXd::Zero(4), c, 6.0);
    const Eigen::MatrixXd l = d.scale_chol();
    CHECK((l * l.transpose() - c).norm() <= 1e-10 * c.norm());
}

TEST_CASE("sampling moments", "[tdist][montecarlo]") {
    SECTION("Gaussian limit: mean and covariance") {
        TDist d(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), kGaussianDof);
        RngStream rng(11);
        const Eigen::MatrixXd s = sample(d, 100000, rng);
        CHECK(s.rowwise().mean().norm() < 0.02);
        const Eigen::MatrixXd centered = s.colwise() - Eigen::VectorXd(s.rowwise().mean());
        const Eigen::MatrixXd cov = centered * centered.transpose() / (s.cols() - 1.0);
        CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).norm() < 0.05);
    }
    SECTION("nu=5 variance matches nu/(nu-2)") {
        TDist d(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 5.0);
        RngStream rng(13);
        const Eigen::MatrixXd s = sample(d, 1000000, rng);
        const double var = (s.array() - s.mean()).square().sum() / (s.cols() - 1.0);
        CHECK(var == Approx(5.0 / 3.0).epsilon(0.03));
    }
    SECTION("nu=3 tail fraction below the 5% quantile") {
        TDist d(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 3.0);
        RngStream rng(17);
        const Eigen::MatrixXd s = sample(d, 1000000, rng);
        const double q = quantile1d(3.0, 0.05);
        const double frac = (s.array() < q).count() / double(s.cols());
        CHECK(frac == Approx(0.05).margin(0.005));
    }
    SECTION("deterministic given the seed") {
        TDist d(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 4.0);
        RngStream a(99), b(99);
        CHECK(sample(d, 10, a) == sample(d, 10, b));
    }
}

TEST_CASE("mahalanobis distance", "[tdist]") {
    SECTION("zero at the mean; scalar algebra") {
        Eigen::MatrixXd c(1, 1);
        c << 4.0;
        TDist d(Eigen::VectorXd::Zero(1), c, 5.0);
        CHECK(mahalanobis(d, Eigen::VectorXd::Zero(1)) == 0.0);
        CHECK(mahalanobis(d, (Eigen::VectorXd(1) << 2.0).finished()) == Approx(1.0));
    }
    SECTION("matches the dense-inverse quadratic form") {
        RngStream rng(23);
        const Eigen::MatrixXd c = random_spd(6, rng);
        const Eigen::VectorXd mu = rng.normal_vector(6);
        TDist d(mu, c, 7.0);
        const Eigen::VectorXd x = rng.normal_vector(6);
        const double direct = (x - mu).dot(spd_inverse(c) * (x - mu));
        CHECK(mahalanobis(d, x) == Approx(direct).epsilon(1e-10));
    }
    SECTION("dimension mismatch") {
        TDist d(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 5.0);
        CHECK_THROWS_AS(mahalanobis(d, Eigen::VectorXd::Zero(3)), ArgumentError);
    }
}

TEST_CASE("affine transforms", "[tdist]") {
    RngStream rng(31);
    SECTION("identity map returns the same distribution") {
        const Eigen::MatrixXd c = random_spd(3, rng);
        TDist d(rng.normal_vector(3), c, 4.0);
        TDist t = affine_transform(d, Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3));
        CHECK((t.mean() - d.mean()).norm() == 0.0);
        CHECK((t.scale() - d.scale()).norm() < 1e-14);
        CHECK(t.dof() == d.dof());
    }
    SECTION("coordinate selection yields the marginal") {
        Eigen::MatrixXd c = Eigen::Vector3d(1, 4, 9).asDiagonal();
        Eigen::VectorXd mu(3);
        mu << 1, 2, 3;
        TDist d(mu, c, 6.0);
        Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(1, 3);
        sel(0, 1) = 1.0;
        TDist marg = affine_transform(d, sel, Eigen::VectorXd::Zero(1));
        CHECK(marg.mean()(0) == Approx(2.0));
        CHECK(marg.scale()(0, 0) == Approx(4.0));
        CHECK(marg.dof() == 6.0);
    }
    SECTION("rank-deficient A raises the singular error") {
        TDist d(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 5.0);
        Eigen::MatrixXd a(2, 3);
        a << 1, 0, 0, 1, 0, 0;  // rows identical
        CHECK_THROWS_AS(affine_transform(d, a, Eigen::VectorXd::Zero(2)), SingularError);
    }
    SECTION("transformed samples match the transformed distribution (Monte-Carlo)") {
        const Eigen::MatrixXd c = random_spd(4, rng);
        TDist d(rng.normal_vector(4), c, 5.0);
        Eigen::MatrixXd a(2, 4);
        rng.fill_normal(a);
        const Eigen::VectorXd b = rng.normal_vector(2);
        TDist t = affine_transform(d, a, b);
        RngStream sampler(77);
        Eigen::MatrixXd draws = sample(d, 100000, sampler);
        draws = (a * draws).colwise() + b;
        // Mahalanobis quantiles of the transformed draws under the claimed law:
        // delta/k ~ F(k, nu) for St with dim k.
        std::vector<double> deltas(draws.cols());
        for (int i = 0; i < draws.cols(); ++i)
            deltas[i] = mahalanobis(t, draws.col(i));
        std::sort(deltas.begin(), deltas.end());
        // Monte-Carlo oracle for the same quantiles from fresh standard draws.
        TDist ref(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 5.0);
        RngStream oracle_rng(78);
        const Eigen::MatrixXd ref_draws = sample(ref, 100000, oracle_rng);
        std::vector<double> ref_deltas(ref_draws.cols());
        for (int i = 0; i < ref_draws.cols(); ++i)
            ref_deltas[i] = ref_draws.col(i).squaredNorm();
        std::sort(ref_deltas.begin(), ref_deltas.end());
        for (double q : {0.10, 0.50, 0.90}) {
            const auto at = [&](const std::vector<double>& v) {
                return v[static_cast<size_t>(q * (v.size() - 1))];
            };
            CHECK(at(deltas) == Approx(at(ref_deltas)).epsilon(0.03));
        }
    }
}

TEST_CASE("conditionals", "[tdist]") {
    RngStream rng(41);
    SECTION("zero cross block: mean unaffected, scale alpha-scaled, dof grows") {
        const int d = 2, n = 3;
        Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(d + n, d + n);
        scale.diagonal() << 1, 2, 3, 4, 5;
        Eigen::VectorXd mu(d + n);
        mu << 1, 2, 3, 4, 5;
        JointSplit joint(TDist(mu, scale, 4.0), d);
        Eigen::VectorXd y(2);
        y << 3.0, 2.0;
        TDist post = condition(joint, y);
        CHECK((post.mean() - mu.tail(3)).norm() < 1e-12);
        const double delta = (y - mu.head(2)).cwiseQuotient(
                                 scale.topLeftCorner(2, 2).diagonal().cwiseSqrt())
                                 .squaredNorm();
        const double alpha = (4.0 + delta) / (4.0 + 2);
        CHECK((post.scale() - alpha * scale.bottomRightCorner(3, 3)).norm() < 1e-12);
        CHECK(post.dof() == Approx(6.0));
    }
    SECTION("y at the observation mean: alpha = nu/(nu+d)") {
        const int d = 2, n = 2;
        const Eigen::MatrixXd scale = random_spd(d + n, rng);
        const Eigen::VectorXd mu = rng.normal_vector(d + n);
        JointSplit joint(TDist(mu, scale, 4.0), d);
        TDist post = condition(joint, mu.head(d));
        const Eigen::MatrixXd cy = scale.topLeftCorner(d, d);
        const Eigen::MatrixXd cxy = scale.bottomLeftCorner(n, d);
        const Eigen::MatrixXd schur =
            scale.bottomRightCorner(n, n) - cxy * spd_inverse(cy) * cxy.transpose();
        CHECK((post.scale() - (2.0 / 3.0) * schur).norm() < 1e-10 * schur.norm());
        CHECK(post.dof() == Approx(6.0));
    }
    SECTION("random joint matches the dense-block oracle") {
        const int d = 3, n = 4;
        const Eigen::MatrixXd scale = random_spd(d + n, rng);
        const Eigen::VectorXd mu = rng.normal_vector(d + n);
        const double nu = 5.0;
        JointSplit joint(TDist(mu, scale, nu), d);
        const Eigen::VectorXd y = rng.normal_vector(d);
        TDist post = condition(joint, y);

        const Eigen::MatrixXd cy_inv = spd_inverse(scale.topLeftCorner(d, d));
        const Eigen::MatrixXd cxy = scale.bottomLeftCorner(n, d);
        const Eigen::VectorXd mean_ref =
            mu.tail(n) + cxy * cy_inv * (y - mu.head(d));
        const double delta = (y - mu.head(d)).dot(cy_inv * (y - mu.head(d)));
        const Eigen::MatrixXd scale_ref =
            ((nu + delta) / (nu + d)) *
            (scale.bottomRightCorner(n, n) - cxy * cy_inv * cxy.transpose());
        CHECK((post.mean() - mean_ref).norm() <= 1e-9 * (1.0 + mean_ref.norm()));
        CHECK((post.scale() - scale_ref).norm() <= 1e-9 * scale_ref.norm());
        CHECK(post.dof() == Approx(nu + d));
    }
    SECTION("Gaussian limit keeps the plain Schur complement and infinite dof") {
        const int d = 2, n = 2;
        const Eigen::MatrixXd scale = random_spd(d + n, rng);
        JointSplit joint(TDist(Eigen::VectorXd::Zero(4), scale, kGaussianDof), d);
        TDist post = condition(joint, (Eigen::VectorXd(2) << 5.0, -3.0).finished());
        const Eigen::MatrixXd cy_inv = spd_inverse(scale.topLeftCorner(d, d));
        const Eigen::MatrixXd cxy = scale.bottomLeftCorner(n, d);
        const Eigen::MatrixXd schur =
            scale.bottomRightCorner(n, n) - cxy * cy_inv * cxy.transpose();
        CHECK(post.is_gaussian());
        CHECK((post.scale() - schur).norm() < 1e-10 * schur.norm());
    }
    SECTION("empty observation block returns the marginal unchanged") {
        const Eigen::MatrixXd scale = random_spd(3, rng);
        const Eigen::VectorXd mu = rng.normal_vector(3);
        JointSplit joint(TDist(mu, scale, 5.0), 0);
        TDist post = condition(joint, Eigen::VectorXd(0));
        CHECK((post.mean() - mu).norm() == 0.0);
        CHECK((post.scale() - scale).norm() == 0.0);
        CHECK(post.dof() == 5.0);
    }
}

TEST_CASE("moments", "[tdist]") {
    RngStream rng(53);
    SECTION("Gaussian limit: covariance equals the scale exactly") {
        const Eigen::MatrixXd c = random_spd(3, rng);
        TDist d(Eigen::VectorXd::Zero(3), c, kGaussianDof);
        CHECK((moments(d).second - c).norm() == 0.0);
    }
    SECTION("nu = 4 doubles the scale") {
        TDist d(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 4.0);
        CHECK((moments(d).second - 2.0 * Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
    }
    SECTION("nu = 3 Monte-Carlo covariance") {
        const Eigen::MatrixXd c = random_spd(3, rng);
        TDist d(Eigen::VectorXd::Zero(3), c, 3.0);
        RngStream sampler(3131);
        const Eigen::MatrixXd s = sample(d, 1000000, sampler);
        const Eigen::VectorXd mean = s.rowwise().mean();
        const Eigen::MatrixXd cov =
            (s.colwise() - mean) * (s.colwise() - mean).transpose() / (s.cols() - 1.0);
        CHECK((cov - moments(d).second).norm() < 0.05 * moments(d).second.norm());
    }
}

TEST_CASE("quantile1d", "[tdist]") {
    SECTION("nu = 2 tail quantiles (paper values)") {
        CHECK(quantile1d(2.0, 0.01) == Approx(-7.0).margin(0.05));
        CHECK(quantile1d(2.0, 0.02) == Approx(-4.8).margin(0.05));
        CHECK(quantile1d(2.0, 0.05) == Approx(-2.9).margin(0.05));
        CHECK(quantile1d(2.0, 0.10) == Approx(-1.9).margin(0.05));
    }
    SECTION("median is exactly zero; symmetry") {
        CHECK(quantile1d(7.3, 0.5) == 0.0);
        CHECK(quantile1d(5.0, 0.8) == Approx(-quantile1d(5.0, 0.2)).margin(1e-7));
    }
    SECTION("Gaussian limit") {
        CHECK(quantile1d(kGaussianDof, 0.01) == Approx(-2.3263478740).margin(1e-6));
        CHECK(quantile1d(kGaussianDof, 0.05) == Approx(-1.6448536270).margin(1e-6));
    }
    SECTION("monotone in p") {
        double prev = -1e308;
        for (double p : {0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
            const double q = quantile1d(3.0, p);
            CHECK(q >= prev);
            prev = q;
        }
    }
    SECTION("p outside (0,1) rejected") {
        CHECK_THROWS_AS(quantile1d(3.0, 0.0), ArgumentError);
        CHECK_THROWS_AS(quantile1d(3.0, 1.0), ArgumentError);
    }
}

TEST_CASE("expected alpha", "[tdist]") {
    CHECK(expected_alpha(kGaussianDof, 3) == 1.0);
    CHECK(expected_alpha(3.0, 5) == Approx(2.25));
    CHECK_THROWS_AS(expected_alpha(2.0, 1), ArgumentError);

    SECTION("Monte-Carlo agreement and strict inequality") {
        for (const auto& [nu, d] : std::vector<std::pair<double, int>>{{3.0, 5}, {10.0, 1}}) {
            TDist y(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), nu);
            RngStream rng(1000 + d);
            const Eigen::MatrixXd draws = sample(y, 1000000, rng);
            double acc = 0.0;
            for (int i = 0; i < draws.cols(); ++i)
                acc += (nu + draws.col(i).squaredNorm()) / (nu + d);
            const double mc = acc / draws.cols();
            CHECK(expected_alpha(nu, d) == Approx(mc).epsilon(0.02));
            CHECK(expected_alpha(nu, d) > 1.0);
        }
        CHECK(expected_alpha(10.0, 1) > 1.0);
        CHECK(expected_alpha(10.0, 1) < 1.2);
    }
}

TEST_CASE("Mahalanobis affine invariance", "[tdist][property]") {
    RngStream rng(61);
    for (int rep = 0; rep < 10; ++rep) {
        const int m = 3;
        const Eigen::MatrixXd c = random_spd(m, rng);
        const Eigen::VectorXd mu = rng.normal_vector(m);
        TDist d(mu, c, 5.0);
        Eigen::MatrixXd a(m, m);
        do {
            rng.fill_normal(a);
        } while (std::abs(a.determinant()) < 0.1);
        const Eigen::VectorXd b = rng.normal_vector(m);
        TDist t = affine_transform(d, a, b);
        const Eigen::VectorXd x = rng.normal_vector(m);
        const double before = mahalanobis(d, x);
        const double after = mahalanobis(t, a * x + b);
        CHECK(after == Approx(before).epsilon(1e-9));
    }
}

TEST_CASE("large-nu logpdf agrees with the Gaussian everywhere tested", "[tdist][property]") {
    RngStream rng(71);
    const Eigen::MatrixXd c = random_spd(3, rng);
    const Eigen::VectorXd mu = rng.normal_vector(3);
    TDist t(mu, c, 1e6);
    TDist g(mu, c, kGaussianDof);
    for (int rep = 0; rep < 25; ++rep) {
        const Eigen::VectorXd x = mu + 2.0 * rng.normal_vector(3);
        CHECK(logpdf(t, x) == Approx(logpdf(g, x)).margin(1e-3));
    }
}
