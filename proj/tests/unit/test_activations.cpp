#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "searchphase/activations.hpp"
#include "searchphase/errors.hpp"
#include "searchphase/hermite.hpp"

using namespace searchphase;

namespace {

std::vector<double> unit_coefficients(const ActivationSpec& f, int K) {
    return project_activation(f, 1.0, K, cached_gauss_hermite(minimum_quadrature_order(K) + 40)).sigma_k;
}

std::vector<double> sample_points(int n, std::uint64_t seed, double lo = -3.0, double hi = 3.0) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> U(lo, hi);
    std::vector<double> z(n);
    for (auto& v : z) v = U(g);
    return z;
}

}  // namespace

TEST_CASE("builtin catalog metadata") {
    const auto lin = builtin("linear");
    CHECK(lin(1.7) == 1.7);
    CHECK(lin.parity == Parity::odd);
    CHECK(information_exponent(unit_coefficients(lin, 5)) == 1);

    const auto h3 = builtin("hermite(3)");
    CHECK(h3.parity == Parity::odd);
    REQUIRE(h3.pure_hermite_degree);
    CHECK(*h3.pure_hermite_degree == 3);
    for (double z : sample_points(10, 1)) CHECK(h3(z) == doctest::Approx(z * z * z - 3 * z).epsilon(1e-13));
    CHECK(builtin("he3")(0.7) == h3(0.7));

    const auto sg = builtin("sigmoid");
    CHECK(sg.parity == Parity::none);
    CHECK(sg(0.0) == 0.5);
    CHECK(information_exponent(unit_coefficients(sg, 25)) == 1);
    CHECK(information_exponent(unit_coefficients(builtin("erf"), 25)) == 1);
    CHECK(information_exponent(unit_coefficients(builtin("relu"), 25)) == 1);

    CHECK_THROWS_AS(builtin("tanhh"), LookupError);
    CHECK_THROWS_AS(builtin("hermite(x)"), LookupError);
}

TEST_CASE("odd parity holds pointwise") {
    for (const char* name : {"linear", "erf", "hermite(3)", "hermite(5)"}) {
        const auto f = builtin(name);
        REQUIRE(f.parity == Parity::odd);
        for (double z : sample_points(10, 2)) CHECK(std::abs(f(-z) + f(z)) <= 1e-12 * std::max(1.0, std::abs(f(z))));
    }
    const auto h4 = builtin("hermite(4)");
    CHECK(h4.parity == Parity::even);
    for (double z : sample_points(10, 3)) CHECK(h4(-z) == doctest::Approx(h4(z)).epsilon(1e-13));
}

TEST_CASE("pure Hermite builtins agree with the scaled recurrence at r = 1") {
    for (int k = 0; k <= 8; ++k) {
        const auto f = builtin("hermite(" + std::to_string(k) + ")");
        for (double z : sample_points(10, 10 + k)) {
            CHECK(f(z) == eval_scaled_hermite(k, 1.0, z));
            CHECK(f(z) == doctest::Approx(oracle::hermite_explicit(k, 1.0, z)).epsilon(1e-11).scale(1.0));
        }
    }
}

TEST_CASE("analytic derivatives match central differences") {
    for (const char* name : {"linear", "erf", "relu", "sigmoid", "hermite(2)", "hermite(3)", "hermite(6)"}) {
        const auto f = builtin(name);
        REQUIRE(f.has_analytic_derivative());
        for (double z : sample_points(20, 4)) {
            if (std::string(name) == "relu" && std::abs(z) < 1e-3) continue;
            const double h = 1e-5;
            const double fd = (f(z + h) - f(z - h)) / (2 * h);
            INFO(std::string(name) << " z=" << z);
            CHECK(std::abs(f.deriv(z) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
    CHECK(builtin("relu").deriv(0.0) == 0.5);
}

TEST_CASE("label squaring") {
    const auto h3 = builtin("hermite(3)");
    const auto sq = transform_teacher(h3, LabelTransform::square);
    CHECK_FALSE(sq.pure_hermite_degree);
    CHECK(sq.parity == Parity::even);
    for (double z : sample_points(100, 5, -4.0, 4.0)) {
        const double v = h3(z);
        CHECK(sq(z) == v * v);
    }
    CHECK(information_exponent(unit_coefficients(sq, 8)) == 2);

    const auto lin = builtin("linear");
    const auto same = transform_teacher(lin, LabelTransform::identity);
    CHECK(same.name == lin.name);
    CHECK(same.parity == lin.parity);
    CHECK(same(2.5) == 2.5);

    const auto z2 = transform_teacher(lin, LabelTransform::square);
    CHECK(z2(-1.5) == 2.25);
    CHECK(z2.parity == Parity::even);
    CHECK(transform_teacher(builtin("sigmoid"), LabelTransform::square).parity == Parity::none);

    CHECK(apply_label_transform(LabelTransform::square, -3.0) == 9.0);
    CHECK(parse_label_transform("square") == LabelTransform::square);
    CHECK(parse_label_transform("identity") == LabelTransform::identity);
    CHECK_THROWS_AS(parse_label_transform("cube"), LookupError);
}

TEST_CASE("numeric derivative fallback") {
    ActivationSpec f;
    f.name = "cubic";
    f.evaluate = [](double z) { return z * z * z; };
    CHECK_FALSE(f.has_analytic_derivative());
    for (double z : sample_points(10, 6)) CHECK(f.deriv(z) == doctest::Approx(3 * z * z).epsilon(1e-6));
}
