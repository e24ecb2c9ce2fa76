#pragma once

#include <vector>

namespace searchphase {

struct ActivationSpec;

// Hermite polynomials orthogonal under N(0, variance).
struct ScaledHermiteBasis {
    double variance = 1.0;
    int max_degree = 0;

    // He_0..He_{max_degree} at z
    std::vector<double> evaluate(double z) const;
};

double eval_scaled_hermite(int k, double r, double z);

// Probabilists' Gauss-Hermite rule, weights normalised to sum to one.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int order = 0;

    template <class F>
    double expect(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
        return s;
    }
};

QuadratureRule gauss_hermite(int order);
// Shared immutable rule; built once per order, safe to call from any thread.
const QuadratureRule& cached_gauss_hermite(int order);

// sigma_k[k] = E_{z~N(0,r)}[f(z) He_k^[r](z)],
// sigma_bar_k[k] = r^{(k+1)/2} E_{x~N(0,1)}[x He_k(x) f'(sqrt(r) x)].
struct HermiteCoefficients {
    double variance = 1.0;
    std::vector<double> sigma_k;
    std::vector<double> sigma_bar_k;

    int max_degree() const { return static_cast<int>(sigma_k.size()) - 1; }
};

int minimum_quadrature_order(int k_max);

HermiteCoefficients project_activation(const ActivationSpec& f, double r, int k_max,
                                       const QuadratureRule& quad);

struct PureHermiteCoefficient {
    double sigma = 0.0;
    double sigma_bar = 0.0;
};

PureHermiteCoefficient pure_hermite_coefficients(int k_star, double r, int k);

// Closed form when f is a pure Hermite polynomial, quadrature otherwise.
HermiteCoefficients scaled_coefficients(const ActivationSpec& f, double r, int k_max);

// Coefficients c_j with f(z) = sum_j c_j He_j(z) / j!.
std::vector<double> to_standard_basis(const HermiteCoefficients& coeffs);

// Input and output use the same convention as to_standard_basis.
std::vector<double> square_expansion(const std::vector<double>& coeffs);

int information_exponent(const std::vector<double>& coeffs, double tol = 1e-10);

double factorial(int n);

}  // namespace searchphase
