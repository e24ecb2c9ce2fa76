#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "searchphase/activations.hpp"
#include "searchphase/hermite.hpp"

namespace searchphase {

enum class LossKind { mse, correlation };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind k);

struct ModelConfig {
    ActivationSpec teacher;
    ActivationSpec student;
    double mu = 0.5;
    int k_max = 25;
    double delta = 1.0;
    LossKind loss = LossKind::mse;
};

// 1/(k!k) for a pure Hermite student of degree k, else 1.
double default_delta(const ActivationSpec& student);

ModelConfig make_model(const ActivationSpec& teacher, const ActivationSpec& student, double mu,
                       std::optional<int> k_max = std::nullopt, std::optional<double> delta = std::nullopt);
ModelConfig make_matching(const std::string& activation, double mu);

struct OrderParameterState {
    double u = 0.0;
    double m = 0.0;

    double m_eff(double mu) const { return mu + u * m; }
    double r(double mu) const { return mu * mu + u * u + 2.0 * mu * u * m; }
};

struct LossValue {
    double value = 0.0;
    bool converged = true;
};

struct LossGradients {
    double du = 0.0;
    double dm = 0.0;
    bool converged = true;
};

struct SearchPhaseLinearization {
    double mu = 0.0;
    double A = 0.0;
    double B = 0.0;
    double lambda_plus = 0.0;
    double lambda_minus = 0.0;
    double tau = std::numeric_limits<double>::infinity();
    bool converged = true;
};

// Fills eigenvalues and tau from (A, B); tau is +inf when |A| < 1e-10.
SearchPhaseLinearization make_linearization(double A, double B, double mu = 0.0);

// Teacher coefficients are computed once; student coefficients at each r.
class LossModel {
public:
    explicit LossModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<double>& teacher_coefficients() const { return phi_; }

    LossValue loss(const OrderParameterState& s) const;
    LossValue loss_from_overlaps(double m_eff, double r) const;
    LossGradients gradients(const OrderParameterState& s) const;
    SearchPhaseLinearization linearize() const;
    SearchPhaseLinearization linearize_at(double mu) const;

private:
    HermiteCoefficients student_at(double r) const;
    struct Partials {
        double dL_dr = 0.0;
        double dL_dmeff = 0.0;
        bool converged = true;
    };
    Partials partials(double m_eff, double r) const;

    ModelConfig cfg_;
    std::vector<double> phi_;
    bool exact_ = false;  // both sides are polynomials inside the truncation
};

LossValue population_loss(const ModelConfig& cfg, const OrderParameterState& s);
LossGradients loss_gradients(const ModelConfig& cfg, const OrderParameterState& s);
SearchPhaseLinearization linearize_search_phase(const ModelConfig& cfg);

struct SingularityScan {
    double lo = 1e-3;
    double hi = 1.0 - 1e-3;
    double step = 1e-3;
};

// Roots of A(mu) on the scan grid, refined by bisection, sorted.
std::vector<double> find_singularities(const ModelConfig& base, const SingularityScan& scan = {});

std::vector<SearchPhaseLinearization> tau_curve(const ModelConfig& base, const std::vector<double>& mus);

enum class AsymptoticRegime { near_one, near_zero };

double asymptotic_tau(int k_star, double mu, AsymptoticRegime regime);
// (2p-1)! / (p! (p-1)! 2^{2p-1})
double odd_hermite_small_mu_constant(int p);

double even_hermite_mean(int k_star, double r);

struct Potential {
    double V = 0.0;
    double force = 0.0;
};

Potential effective_potential(const SearchPhaseLinearization& lin, double g);

}  // namespace searchphase
