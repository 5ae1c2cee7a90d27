#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crossdiff/basis.hpp"
#include "crossdiff/noise.hpp"

using namespace crossdiff;

namespace {

NoiseModel bounded_model(int n, double c, int K) {
    NoiseModel m;
    m.kind = NoiseKind::bounded_multiplicative;
    m.c = Array2D(n, n, 0.0);
    for (int i = 0; i < n; ++i) m.c(i, i) = c;
    m.K = K;
    return m;
}

}  // namespace

TEST_CASE("path sampling") {
    SECTION("deterministic in the seed") {
        auto p1 = sample_path(1.0, 10, 2, 4, 99);
        auto p2 = sample_path(1.0, 10, 2, 4, 99);
        auto p3 = sample_path(1.0, 10, 2, 4, 100);
        REQUIRE(p1.incr.flat().size() == p2.incr.flat().size());
        for (std::size_t k = 0; k < p1.incr.flat().size(); ++k)
            REQUIRE(p1.incr.flat()[k] == p2.incr.flat()[k]);
        bool any_diff = false;
        for (std::size_t k = 0; k < p1.incr.flat().size(); ++k)
            if (p1.incr.flat()[k] != p3.incr.flat()[k]) any_diff = true;
        CHECK(any_diff);
    }
    SECTION("pooled increment variance matches the mesh") {
        const double T = 1.0;
        const int M = 1000;
        auto p = sample_path(T, M, 10, 10, 7);
        const double eta = T / M;
        double mean = 0.0, var = 0.0;
        const auto flat = p.incr.flat();
        const double count = static_cast<double>(flat.size());
        for (double v : flat) mean += v;
        mean /= count;
        for (double v : flat) var += (v - mean) * (v - mean);
        var /= (count - 1.0);
        // variance of the sample variance of N(0, eta): 2 eta^2 / (count - 1)
        const double se = eta * std::sqrt(2.0 / (count - 1.0));
        REQUIRE(std::abs(var - eta) <= 3.0 * se);
    }
    SECTION("degenerate arguments") {
        CHECK_THROWS_AS(sample_path(0.0, 10, 1, 1, 1), std::invalid_argument);
        CHECK_THROWS_AS(sample_path(1.0, 0, 1, 1, 1), std::invalid_argument);
    }
}

TEST_CASE("piecewise-linear interpolation") {
    auto p = sample_path(1.0, 8, 2, 3, 5);
    SECTION("zero at the origin and exact at grid points") {
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 3; ++k) {
                CHECK(wong_zakai_value(p, j, k, 0.0) == 0.0);
                for (int m = 0; m <= 8; ++m)
                    REQUIRE(wong_zakai_value(p, j, k, m * p.eta) ==
                            Catch::Approx(p.cums(m, j, k)).margin(1e-12 * p.M));
            }
    }
    SECTION("midpoints average the neighbors") {
        for (int m = 0; m < 8; ++m) {
            const double t = (m + 0.5) * p.eta;
            const double v = wong_zakai_value(p, 0, 0, t);
            const double avg = 0.5 * (p.cums(m, 0, 0) + p.cums(m + 1, 0, 0));
            REQUIRE(v == Catch::Approx(avg).epsilon(1e-12));
        }
    }
    SECTION("difference quotient equals the rate") {
        for (int m = 0; m < 8; ++m) {
            const double t0 = m * p.eta + 0.25 * p.eta;
            const double t1 = m * p.eta + 0.75 * p.eta;
            const double slope = (wong_zakai_value(p, 1, 2, t1) - wong_zakai_value(p, 1, 2, t0)) / (t1 - t0);
            REQUIRE(slope == Catch::Approx(p.incr(m, 1, 2) / p.eta).epsilon(1e-10));
            REQUIRE(wong_zakai_rate(p, 1, 2, t0) == Catch::Approx(p.incr(m, 1, 2) / p.eta));
        }
    }
    SECTION("out-of-range time is a domain error") {
        CHECK_THROWS_AS(wong_zakai_value(p, 0, 0, -0.1), std::domain_error);
        CHECK_THROWS_AS(wong_zakai_value(p, 0, 0, 1.1), std::domain_error);
    }
    SECTION("coarsening sums fine increments") {
        auto c = p.coarsen(2);
        CHECK(c.M == 4);
        CHECK(c.eta == Catch::Approx(2.0 * p.eta));
        for (int m = 0; m < 4; ++m)
            REQUIRE(c.incr(m, 0, 0) ==
                    Catch::Approx(p.incr(2 * m, 0, 0) + p.incr(2 * m + 1, 0, 0)).epsilon(1e-15));
        CHECK_THROWS_AS(p.coarsen(3), std::invalid_argument);
    }
}

TEST_CASE("sigma fields") {
    BasisSet basis(GridSpec{1.0, 8, 64});
    ModelParams params;  // only the species count matters here
    params.n = 2;

    Array2D nodal(2, basis.nodes(), 0.5);
    SpeciesField u = SpeciesField::from_nodal(basis, nodal);

    SECTION("zero kind vanishes") {
        NoiseModel m;
        m.kind = NoiseKind::zero;
        m.c = Array2D(2, 2, 0.0);
        m.K = 3;
        auto f = sigma_apply(m, u, basis);
        for (double v : f.data) REQUIRE(v == 0.0);
    }
    SECTION("bounded family vanishes at zero state") {
        Array2D zero_nodal(2, basis.nodes(), 0.0);
        SpeciesField uz = SpeciesField::from_nodal(basis, zero_nodal);
        auto f = sigma_apply(bounded_model(2, 0.4, 3), uz, basis);
        for (double v : f.data) REQUIRE(std::abs(v) <= 1e-15);
    }
    SECTION("uniform bound max|c| sqrt(K) sup|e|") {
        NoiseModel m = bounded_model(2, 0.4, 4);
        Rng rng(41);
        const double sup_e = std::sqrt(2.0 / basis.length());
        for (int t = 0; t < 100; ++t) {
            Array2D nd(2, basis.nodes());
            for (int i = 0; i < 2; ++i)
                for (int q = 0; q < basis.nodes(); ++q) nd(i, q) = rng.log_uniform(1e-3, 1e3);
            SpeciesField ur = SpeciesField::from_nodal(basis, nd);
            ur.values = nd;  // bound is pointwise in the nodal state
            auto f = sigma_apply(m, ur, basis);
            double norm_sq_max = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int q = 0; q < basis.nodes(); ++q) {
                        double ssq = 0.0;
                        for (int k = 0; k < m.K; ++k) {
                            const double v = f.at(i, j, k, q);
                            ssq += v * v;
                        }
                        norm_sq_max = std::max(norm_sq_max, ssq);
                    }
            REQUIRE(std::sqrt(norm_sq_max) <= 0.4 * std::sqrt(4.0) * sup_e + 1e-12);
        }
    }
}

TEST_CASE("ito correction") {
    BasisSet basis(GridSpec{1.0, 8, 64});
    SECTION("additive and zero kinds have none") {
        for (NoiseKind kind : {NoiseKind::zero, NoiseKind::additive}) {
            NoiseModel m;
            m.kind = kind;
            m.c = Array2D(1, 1, 0.0);
            m.c(0, 0) = 0.7;
            m.K = 3;
            Array2D u(1, basis.nodes(), 1.3), out(1, basis.nodes());
            ito_correction(m, u, basis, out);
            for (double v : out.flat()) REQUIRE(v == 0.0);
        }
    }
    SECTION("bounded family matches the finite-difference composition") {
        NoiseModel m = bounded_model(1, 0.5, 3);
        Array2D u(1, basis.nodes());
        for (int q = 0; q < basis.nodes(); ++q) u(0, q) = 0.2 + 0.01 * q;
        Array2D out(1, basis.nodes());
        ito_correction(m, u, basis, out);
        const double h = 1e-6;
        for (int q = 0; q < basis.nodes(); ++q) {
            double expect = 0.0;
            for (int k = 0; k < m.K; ++k) {
                const double e = basis.value(k + 1, q);
                const double ds = (m.amp(0, 0, u(0, q) + h) - m.amp(0, 0, u(0, q) - h)) / (2.0 * h);
                expect += -0.5 * ds * e * m.amp(0, 0, u(0, q)) * e;
            }
            REQUIRE(out(0, q) == Catch::Approx(expect).margin(1e-6));
        }
    }
}

TEST_CASE("wong-zakai drift") {
    BasisSet basis(GridSpec{1.0, 8, 64});
    auto path = sample_path(0.5, 5, 1, 2, 9);
    SECTION("zero kind gives the zero field") {
        NoiseModel m;
        m.kind = NoiseKind::zero;
        m.c = Array2D(1, 1, 0.0);
        m.K = 2;
        Array2D u(1, basis.nodes(), 1.0), out(1, basis.nodes(), 7.0);
        wong_zakai_drift(m, u, path, 0.15, basis, out);
        for (double v : out.flat()) REQUIRE(v == 0.0);
    }
    SECTION("linear in the driving increments for additive noise") {
        NoiseModel m;
        m.kind = NoiseKind::additive;
        m.c = Array2D(1, 1, 0.0);
        m.c(0, 0) = 0.8;
        m.K = 2;
        auto doubled = path;
        for (int mm = 0; mm < doubled.M; ++mm)
            for (int k = 0; k < doubled.K; ++k) {
                doubled.incr(mm, 0, k) *= 2.0;
                doubled.cums(mm + 1, 0, k) = doubled.cums(mm, 0, k) + doubled.incr(mm, 0, k);
            }
        Array2D u(1, basis.nodes(), 1.0), d1(1, basis.nodes()), d2(1, basis.nodes());
        wong_zakai_drift(m, u, path, 0.27, basis, d1);
        wong_zakai_drift(m, u, doubled, 0.27, basis, d2);
        for (int q = 0; q < basis.nodes(); ++q)
            REQUIRE(d2(0, q) == Catch::Approx(2.0 * d1(0, q)).margin(1e-14));
    }
    SECTION("single-mode additive drift assembles by hand") {
        NoiseModel m;
        m.kind = NoiseKind::additive;
        m.c = Array2D(1, 1, 0.0);
        m.c(0, 0) = 0.8;
        m.K = 1;
        Array2D u(1, basis.nodes(), 2.0), out(1, basis.nodes());
        const double t = 0.27;
        wong_zakai_drift(m, u, path, t, basis, out);
        const int interval = static_cast<int>(t / path.eta);
        for (int q = 0; q < basis.nodes(); ++q) {
            const double expect = 0.8 * basis.value(1, q) * path.incr(interval, 0, 0) / path.eta;
            REQUIRE(out(0, q) == Catch::Approx(expect).epsilon(1e-13));
        }
    }
}
