#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crossdiff/basis.hpp"
#include "crossdiff/oracle.hpp"
#include "crossdiff/rng.hpp"

using namespace crossdiff;

namespace {

ModelParams heat_only() {
    ModelParams p;
    p.n = 1;
    p.s = 2.0;
    p.a0 = {1.0};
    p.a = Array2D(1, 1, 0.0);
    p.pi = {1.0};
    return p;
}

ModelParams pair_params(double s) {
    ModelParams p;
    p.n = 2;
    p.s = s;
    p.a0 = {1.0, 1.0};
    p.a = Array2D(2, 2);
    p.a(0, 0) = p.a(1, 1) = 1.0;
    p.a(0, 1) = p.a(1, 0) = 0.5;
    p.pi = {1.0, 1.0};
    return p;
}

/// Smooth random positive field: decaying random spectrum over a positive floor.
Array2D random_positive_state(const BasisSet& basis, int n, Rng& rng, double base = 1.0) {
    Array2D coeffs(n, basis.modes(), 0.0);
    for (int i = 0; i < n; ++i) {
        coeffs(i, 0) = base * std::sqrt(basis.length());
        for (int m = 1; m < basis.modes(); ++m)
            coeffs(i, m) = 0.3 * rng.gaussian() * std::pow(2.0, -m);
    }
    return coeffs;
}

}  // namespace

TEST_CASE("basis construction") {
    BasisSet basis(GridSpec{2.0, 16, 64});

    SECTION("grid invariants are enforced") {
        CHECK_THROWS_AS(BasisSet(GridSpec{2.0, 16, 20}), std::invalid_argument);
        CHECK_THROWS_AS(BasisSet(GridSpec{-1.0, 16, 64}), std::invalid_argument);
    }
    SECTION("gram matrix is the identity") {
        // oracle: a doubled-resolution quadrature agrees
        BasisSet dense(GridSpec{2.0, 16, 128});
        for (int j = 0; j < basis.modes(); ++j)
            for (int k = 0; k <= j; ++k) {
                double g = 0.0, gd = 0.0;
                for (int q = 0; q < basis.nodes(); ++q)
                    g += basis.weight(q) * basis.value(j, q) * basis.value(k, q);
                for (int q = 0; q < dense.nodes(); ++q)
                    gd += dense.weight(q) * dense.value(j, q) * dense.value(k, q);
                const double expect = j == k ? 1.0 : 0.0;
                REQUIRE(std::abs(g - expect) <= 1e-10);
                REQUIRE(std::abs(g - gd) <= 1e-10);
            }
    }
    SECTION("constant mode normalization") {
        for (int q = 0; q < basis.nodes(); ++q)
            REQUIRE(basis.value(0, q) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    }
    SECTION("derivatives vanish at the endpoints exactly") {
        for (int m = 0; m < basis.modes(); ++m) {
            CHECK(basis.eval_deriv(m, 0.0) == 0.0);
            CHECK(basis.eval_deriv(m, 2.0) == 0.0);
        }
    }
    SECTION("node count rounds up to panel multiples") {
        BasisSet b2(GridSpec{1.0, 32, 65});
        CHECK(b2.nodes() >= 65);
        CHECK(b2.nodes() % 16 == 0);
    }
}

TEST_CASE("projection") {
    BasisSet basis(GridSpec{1.0, 12, 64});
    SECTION("basis functions project to unit coefficients") {
        for (int k = 0; k < basis.modes(); ++k) {
            std::vector<double> nodal(basis.nodes());
            for (int q = 0; q < basis.nodes(); ++q) nodal[q] = basis.value(k, q);
            std::vector<double> c(basis.modes());
            basis.project(nodal, c);
            for (int m = 0; m < basis.modes(); ++m)
                REQUIRE(std::abs(c[m] - (m == k ? 1.0 : 0.0)) <= 1e-12);
        }
    }
    SECTION("idempotence and non-expansiveness") {
        Rng rng(31);
        for (int t = 0; t < 100; ++t) {
            std::vector<double> f(basis.nodes());
            for (double& v : f) v = rng.gaussian();
            std::vector<double> c1(basis.modes()), synth(basis.nodes()), c2(basis.modes());
            basis.project(f, c1);
            basis.synthesize(c1, synth);
            basis.project(synth, c2);
            for (int m = 0; m < basis.modes(); ++m)
                REQUIRE(std::abs(c2[m] - c1[m]) <= 1e-12 * std::max(1.0, std::abs(c1[m])));
            const double nf = std::sqrt(basis.inner(f, f));
            const double np = std::sqrt(basis.inner(synth, synth));
            REQUIRE(np <= nf + 1e-12);
        }
    }
}

TEST_CASE("divergence assembly") {
    SECTION("constant states have zero flux") {
        BasisSet basis(GridSpec{1.0, 8, 64});
        ModelParams p = pair_params(3.0);
        Array2D nodal(2, basis.nodes(), 1.0);
        SpeciesField u = SpeciesField::from_nodal(basis, nodal);
        for (int i = 0; i < 2; ++i) {
            auto out = assemble_divergence_term(u, i, basis, p, MatrixKind::A);
            for (double v : out) REQUIRE(std::abs(v) <= 1e-12);
        }
    }
    SECTION("pure diffusion reproduces the Neumann eigenvalues") {
        const double L = 2.0;
        BasisSet basis(GridSpec{L, 8, 64});
        ModelParams p = heat_only();
        p.a0 = {0.7};
        for (int m = 1; m < 5; ++m) {
            Array2D coeffs(1, basis.modes(), 0.0);
            coeffs(0, m) = 1.0;
            SpeciesField u = SpeciesField::from_coeffs(basis, coeffs);
            auto out = assemble_divergence_term(u, 0, basis, p, MatrixKind::M);
            const double lam = (m * M_PI / L) * (m * M_PI / L);
            for (int k = 0; k < basis.modes(); ++k) {
                const double expect = k == m ? -p.a0[0] * lam : 0.0;
                REQUIRE(std::abs(out[k] - expect) <= 1e-10 * std::max(1.0, lam));
            }
        }
    }
    SECTION("random positive states match the dense oracle") {
        BasisSet basis(GridSpec{1.0, 16, 64});
        ModelParams p = pair_params(3.0);
        Rng rng(32);
        for (int t = 0; t < 5; ++t) {
            SpeciesField u = SpeciesField::from_coeffs(basis, random_positive_state(basis, 2, rng));
            for (int i = 0; i < 2; ++i) {
                auto fast = assemble_divergence_term(u, i, basis, p, MatrixKind::A);
                auto ref = oracle::dense_weak_form(u, i, basis, p, 4);
                double scale = 0.0;
                for (double v : ref) scale = std::max(scale, std::abs(v));
                for (int m = 0; m < basis.modes(); ++m)
                    REQUIRE(std::abs(fast[m] - ref[m]) <= 1e-8 * std::max(scale, 1e-12));
            }
        }
    }
    SECTION("negative nodal values are rejected for kind A") {
        BasisSet basis(GridSpec{1.0, 8, 64});
        ModelParams p = pair_params(2.0);
        Array2D nodal(2, basis.nodes(), 1.0);
        SpeciesField u = SpeciesField::from_nodal(basis, nodal);
        u.values(0, 3) = -0.5;  // nodal dip below zero, coefficients untouched
        CHECK_THROWS_AS(assemble_divergence_term(u, 0, basis, p, MatrixKind::A), std::domain_error);
        CHECK_NOTHROW(assemble_divergence_term(u, 0, basis, p, MatrixKind::M));
    }
}

TEST_CASE("species mass") {
    const double L = 3.0;
    BasisSet basis(GridSpec{L, 8, 64});
    SECTION("constants integrate to c L") {
        Array2D nodal(2, basis.nodes());
        for (int q = 0; q < basis.nodes(); ++q) { nodal(0, q) = 2.0; nodal(1, q) = 0.25; }
        auto m = species_mass(nodal, basis);
        CHECK(m[0] == Catch::Approx(2.0 * L).epsilon(1e-13));
        CHECK(m[1] == Catch::Approx(0.25 * L).epsilon(1e-13));
    }
    SECTION("zero-mean modes carry no mass") {
        Array2D coeffs(1, basis.modes(), 0.0);
        coeffs(0, 1) = 1.0;
        SpeciesField u = SpeciesField::from_coeffs(basis, coeffs);
        CHECK(std::abs(species_mass(u, basis)[0]) <= 1e-13);
    }
    SECTION("mass equals sqrt(L) times the constant coefficient") {
        Rng rng(33);
        SpeciesField u = SpeciesField::from_coeffs(basis, random_positive_state(basis, 1, rng));
        const double m = species_mass(u, basis)[0];
        CHECK(m == Catch::Approx(std::sqrt(L) * u.coeffs(0, 0)).epsilon(1e-12));
    }
}

TEST_CASE("species field consistency") {
    BasisSet basis(GridSpec{1.0, 10, 64});
    Rng rng(34);
    Array2D nodal(2, basis.nodes());
    for (int i = 0; i < 2; ++i)
        for (int q = 0; q < basis.nodes(); ++q) nodal(i, q) = rng.log_uniform(0.5, 2.0);
    SpeciesField u = SpeciesField::from_nodal(basis, nodal);
    // values and coefficients agree under the projection/synthesis pair
    for (int i = 0; i < 2; ++i) {
        std::vector<double> c(basis.modes()), synth(basis.nodes());
        basis.project(u.values.row(i), c);
        for (int m = 0; m < basis.modes(); ++m)
            REQUIRE(std::abs(c[m] - u.coeffs(i, m)) <= 1e-10 * std::max(1.0, std::abs(c[m])));
        basis.synthesize(u.coeffs.row(i), synth);
        for (int q = 0; q < basis.nodes(); ++q)
            REQUIRE(std::abs(synth[q] - u.values(i, q)) <= 1e-10 * std::max(1.0, std::abs(synth[q])));
    }
}
