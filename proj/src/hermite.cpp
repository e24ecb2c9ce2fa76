#include "searchphase/hermite.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "searchphase/activations.hpp"
#include "searchphase/errors.hpp"

namespace searchphase {

double factorial(int n) {
    if (n < 0) throw InvalidArgument("factorial of negative number");
    return std::tgamma(static_cast<double>(n) + 1.0);
}

double eval_scaled_hermite(int k, double r, double z) {
    if (k < 0) throw InvalidArgument("Hermite degree must be non-negative");
    if (!(r > 0.0)) throw InvalidArgument("Hermite variance must be positive");
    double prev = 1.0;
    if (k == 0) return prev;
    double cur = z;
    for (int j = 1; j < k; ++j) {
        const double next = z * cur - j * r * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

std::vector<double> ScaledHermiteBasis::evaluate(double z) const {
    if (!(variance > 0.0)) throw InvalidArgument("Hermite variance must be positive");
    if (max_degree < 0) throw InvalidArgument("Hermite degree must be non-negative");
    std::vector<double> he(max_degree + 1);
    he[0] = 1.0;
    if (max_degree >= 1) he[1] = z;
    for (int j = 1; j < max_degree; ++j) he[j + 1] = z * he[j] - j * variance * he[j - 1];
    return he;
}

QuadratureRule gauss_hermite(int order) {
    // beyond ~300 nodes the orthonormal recurrence overflows at the outer nodes
    if (order < 1 || order > 300) throw InvalidArgument("quadrature order must be in [1, 300]");
    const int n = order;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);

    QuadratureRule q;
    q.order = n;
    q.nodes.resize(n);
    q.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = es.eigenvalues()[i];
        double sum_sq = 0.0;
        for (int it = 0; it < 8; ++it) {
            // orthonormal P_k = He_k / sqrt(k!)
            double pm = 0.0, p = 1.0;
            sum_sq = 1.0;
            for (int k = 0; k < n; ++k) {
                const double pn = (x * p - std::sqrt(static_cast<double>(k)) * pm) / std::sqrt(k + 1.0);
                pm = p;
                p = pn;
                if (k + 1 < n) sum_sq += p * p;
            }
            const double dx = p / (std::sqrt(static_cast<double>(n)) * pm);
            x -= dx;
            if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        q.nodes[i] = x;
        q.weights[i] = 1.0 / sum_sq;
    }
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (q.nodes[n - 1 - i] - q.nodes[i]);
        const double w = 0.5 * (q.weights[n - 1 - i] + q.weights[i]);
        q.nodes[i] = -x;
        q.nodes[n - 1 - i] = x;
        q.weights[i] = q.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) q.nodes[n / 2] = 0.0;
    double total = 0.0;
    for (double w : q.weights) total += w;
    for (double& w : q.weights) w /= total;
    return q;
}

const QuadratureRule& cached_gauss_hermite(int order) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<QuadratureRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[order];
    if (!slot) slot = std::make_unique<QuadratureRule>(gauss_hermite(order));
    return *slot;
}

int minimum_quadrature_order(int k_max) { return 2 * k_max + 10; }

HermiteCoefficients project_activation(const ActivationSpec& f, double r, int k_max,
                                       const QuadratureRule& quad) {
    if (!(r > 0.0)) throw InvalidArgument("variance must be positive");
    if (k_max < 0) throw InvalidArgument("K_max must be non-negative");
    if (quad.order < minimum_quadrature_order(k_max))
        throw ConfigurationError("quadrature order " + std::to_string(quad.order) + " too low for K_max=" +
                                 std::to_string(k_max) + " (need " +
                                 std::to_string(minimum_quadrature_order(k_max)) + ")");
    const double sr = std::sqrt(r);
    HermiteCoefficients c;
    c.variance = r;
    c.sigma_k.assign(k_max + 1, 0.0);
    c.sigma_bar_k.assign(k_max + 1, 0.0);
    // Nodes are symmetric: combine x and -x first so parity cancellations are exact.
    const std::size_t n = quad.nodes.size();
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        const double x = quad.nodes[n - 1 - i];
        const bool centre = (2 * i + 1 == n);
        const double w = quad.weights[n - 1 - i] * (centre ? 0.5 : 1.0);
        const double fp = f(sr * x), fm = f(-sr * x);
        const double dp = x * f.deriv(sr * x), dm = -x * f.deriv(-sr * x);
        const double f_even = w * (fp + fm), f_odd = w * (fp - fm);
        const double d_even = w * (dp + dm), d_odd = w * (dp - dm);
        double pm = 0.0, p = 1.0;
        for (int k = 0; k <= k_max; ++k) {
            c.sigma_k[k] += (k % 2 == 0 ? f_even : f_odd) * p;
            c.sigma_bar_k[k] += (k % 2 == 0 ? d_even : d_odd) * p;
            const double pn = x * p - k * pm;
            pm = p;
            p = pn;
        }
    }
    double scale = 1.0;
    for (int k = 0; k <= k_max; ++k) {
        c.sigma_k[k] *= scale;
        c.sigma_bar_k[k] *= scale * sr;
        scale *= sr;
    }
    return c;
}

PureHermiteCoefficient pure_hermite_coefficients(int k_star, double r, int k) {
    if (k < 0 || k > k_star) throw InvalidArgument("need 0 <= k <= k_star");
    if (!(r > 0.0)) throw InvalidArgument("variance must be positive");
    PureHermiteCoefficient out;
    if ((k_star - k) % 2 != 0) return out;
    const double kf = factorial(k_star);
    const double h = 0.5 * (r - 1.0);
    const int j = (k_star - k) / 2;
    out.sigma = kf * std::pow(r, k) * std::pow(h, j) / factorial(j);
    if (k == k_star) {
        out.sigma_bar = k_star * out.sigma;
    } else {
        const int jb = (k_star - 2 - k) / 2;
        out.sigma_bar = kf * std::pow(r, k) * std::pow(h, jb) / factorial(jb) * (k_star * r - k) / (k_star - k);
    }
    return out;
}

HermiteCoefficients scaled_coefficients(const ActivationSpec& f, double r, int k_max) {
    if (f.pure_hermite_degree) {
        const int ks = *f.pure_hermite_degree;
        if (!(r > 0.0)) throw InvalidArgument("variance must be positive");
        HermiteCoefficients c;
        c.variance = r;
        c.sigma_k.assign(k_max + 1, 0.0);
        c.sigma_bar_k.assign(k_max + 1, 0.0);
        for (int k = 0; k <= std::min(ks, k_max); ++k) {
            const auto p = pure_hermite_coefficients(ks, r, k);
            c.sigma_k[k] = p.sigma;
            c.sigma_bar_k[k] = p.sigma_bar;
        }
        return c;
    }
    const int order = std::max(minimum_quadrature_order(k_max), f.smooth ? 80 : 240);
    return project_activation(f, r, k_max, cached_gauss_hermite(order));
}

std::vector<double> to_standard_basis(const HermiteCoefficients& coeffs) {
    const double r = coeffs.variance;
    const int K = coeffs.max_degree();
    const double h = -0.5 * (r - 1.0);
    std::vector<double> c(K + 1, 0.0);
    for (int n = 0; n <= K; ++n) {
        double hp = 1.0;  // h^j / j!
        for (int j = 0; n + 2 * j <= K; ++j) {
            const int k = n + 2 * j;
            c[n] += coeffs.sigma_k[k] / std::pow(r, k) * hp;
            hp *= h / (j + 1);
        }
    }
    return c;
}

std::vector<double> square_expansion(const std::vector<double>& coeffs) {
    const int K = static_cast<int>(coeffs.size()) - 1;
    if (K < 0) return {};
    std::vector<double> out(2 * K + 1, 0.0);
    // He_k He_k' = sum_j j! C(k,j) C(k',j) He_{k+k'-2j}; the 1/(k! k'!) and n! factors are folded in
    for (int k = 0; k <= K; ++k) {
        if (coeffs[k] == 0.0) continue;
        for (int kp = 0; kp <= K; ++kp) {
            if (coeffs[kp] == 0.0) continue;
            const double ck = coeffs[k] * coeffs[kp];
            for (int j = 0; j <= std::min(k, kp); ++j) {
                const int n = k + kp - 2 * j;
                // n! j! C(k,j) C(k',j) / (k! k'!) = n! / (j! (k-j)! (k'-j)!)
                const double w = std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(k - j + 1.0) -
                                          std::lgamma(kp - j + 1.0));
                out[n] += ck * w;
            }
        }
    }
    return out;
}

int information_exponent(const std::vector<double>& coeffs, double tol) {
    for (std::size_t k = 1; k < coeffs.size(); ++k)
        if (std::abs(coeffs[k]) > tol) return static_cast<int>(k);
    throw DegenerateStateError("no Hermite coefficient of degree >= 1 exceeds tolerance");
}

}  // namespace searchphase
