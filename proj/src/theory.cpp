#include "searchphase/theory.hpp"

#include <algorithm>
#include <cmath>

#include "searchphase/errors.hpp"

namespace searchphase {

namespace {

// Flags a series whose last three retained terms are not negligible.
bool tail_small(const std::vector<double>& terms) {
    double sum = 0.0, abs_sum = 0.0;
    for (double t : terms) {
        sum += t;
        abs_sum += std::abs(t);
    }
    const double scale = std::max(std::abs(sum), abs_sum);
    if (scale == 0.0) return true;
    const std::size_t n = terms.size();
    for (std::size_t i = n >= 3 ? n - 3 : 0; i < n; ++i)
        if (std::abs(terms[i]) > 1e-10 * scale) return false;
    return true;
}

double sum_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

LossKind parse_loss_kind(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "correlation") return LossKind::correlation;
    throw LookupError("unknown loss: '" + s + "'");
}

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "correlation"; }

double default_delta(const ActivationSpec& student) {
    if (student.pure_hermite_degree) {
        const int k = *student.pure_hermite_degree;
        if (k >= 1) return 1.0 / (factorial(k) * k);
    }
    return 1.0;
}

ModelConfig make_model(const ActivationSpec& teacher, const ActivationSpec& student, double mu,
                       std::optional<int> k_max, std::optional<double> delta) {
    ModelConfig c;
    c.teacher = teacher;
    c.student = student;
    c.mu = mu;
    if (k_max) c.k_max = *k_max;
    c.delta = delta ? *delta : default_delta(student);
    return c;
}

ModelConfig make_matching(const std::string& activation, double mu) {
    const auto a = builtin(activation);
    return make_model(a, a, mu);
}

SearchPhaseLinearization make_linearization(double A, double B, double mu) {
    SearchPhaseLinearization l;
    l.mu = mu;
    l.A = A;
    l.B = B;
    const double s = std::sqrt(B * B + 4.0 * A * A);
    // pick the cancellation-free branch for each root; lambda+ lambda- = -A^2
    if (B > 0.0) {
        l.lambda_plus = 0.5 * (B + s);
        l.lambda_minus = -2.0 * A * A / (B + s);
    } else {
        l.lambda_plus = (s - B) > 0.0 ? 2.0 * A * A / (s - B) : 0.0;
        l.lambda_minus = 0.5 * (B - s);
    }
    l.tau = std::abs(A) < 1e-10 ? std::numeric_limits<double>::infinity() : 1.0 / l.lambda_plus;
    return l;
}

LossModel::LossModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (!(cfg_.mu > 0.0 && cfg_.mu < 1.0)) throw InvalidArgument("mu must lie in (0,1)");
    if (cfg_.k_max < 1) throw InvalidArgument("K_max must be >= 1");
    if (!(cfg_.delta > 0.0)) throw InvalidArgument("delta must be positive");
    phi_ = scaled_coefficients(cfg_.teacher, 1.0, cfg_.k_max).sigma_k;
    exact_ = cfg_.teacher.polynomial_degree && cfg_.student.polynomial_degree &&
             *cfg_.teacher.polynomial_degree <= cfg_.k_max && *cfg_.student.polynomial_degree <= cfg_.k_max;
}

HermiteCoefficients LossModel::student_at(double r) const {
    return scaled_coefficients(cfg_.student, r, cfg_.k_max);
}

LossValue LossModel::loss_from_overlaps(double m_eff, double r) const {
    if (!(r > 0.0) || !std::isfinite(r)) throw DegenerateStateError("pre-activation variance r must be positive");
    const auto sc = student_at(r);
    const double sr = std::sqrt(r);
    const double rho = m_eff / sr;
    const int K = cfg_.k_max;
    std::vector<double> terms(K + 1);
    double rk2 = 1.0, rhok = 1.0, kf = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k > 0) {
            rk2 *= sr;
            rhok *= rho;
            kf *= k;
        }
        const double c = sc.sigma_k[k] / rk2;
        const double p = phi_[k];
        terms[k] = cfg_.loss == LossKind::mse ? (0.5 * p * p + 0.5 * c * c - p * c * rhok) / kf : -p * c * rhok / kf;
    }
    LossValue out;
    out.value = sum_of(terms) + (cfg_.loss == LossKind::correlation ? 1.0 : 0.0);
    out.converged = exact_ || tail_small(terms);
    return out;
}

LossValue LossModel::loss(const OrderParameterState& s) const {
    return loss_from_overlaps(s.m_eff(cfg_.mu), s.r(cfg_.mu));
}

LossModel::Partials LossModel::partials(double m_eff, double r) const {
    if (!(r > 0.0) || !std::isfinite(r)) throw DegenerateStateError("pre-activation variance r must be positive");
    const auto sc = student_at(r);
    const double sr = std::sqrt(r);
    const double rho = m_eff / sr;
    const int K = cfg_.k_max;
    const bool mse = cfg_.loss == LossKind::mse;
    // with c_k = sigma_k r^{-k/2} and rho = m_eff/sqrt(r):
    // L = sum_k [phi_k^2/2 + c_k^2/2 - phi_k c_k rho^k] / k!,  dc_k/dr = sigma_bar_k / (2 r^{k/2+1})
    std::vector<double> tr(K + 1), tm(K + 1);
    double rk2 = 1.0, rhok = 1.0, rhokm1 = 0.0, kf = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k > 0) {
            rhokm1 = rhok;
            rk2 *= sr;
            rhok *= rho;
            kf *= k;
        }
        const double c = sc.sigma_k[k] / rk2;
        const double dc = sc.sigma_bar_k[k] / (2.0 * rk2 * r);
        const double p = phi_[k];
        const double k_rho = k * rhokm1;  // d(rho^k)/d(rho)
        tr[k] = ((mse ? c * dc : 0.0) - p * dc * rhok + p * c * k_rho * rho / (2.0 * r)) / kf;
        tm[k] = -p * c * k_rho / (sr * kf);
    }
    Partials out;
    out.dL_dr = sum_of(tr);
    out.dL_dmeff = sum_of(tm);
    out.converged = exact_ || (tail_small(tr) && tail_small(tm));
    return out;
}

LossGradients LossModel::gradients(const OrderParameterState& s) const {
    const double mu = cfg_.mu;
    const auto p = partials(s.m_eff(mu), s.r(mu));
    LossGradients g;
    g.du = p.dL_dr * 2.0 * (s.u + mu * s.m) + p.dL_dmeff * s.m;
    g.dm = p.dL_dr * 2.0 * mu * s.u + p.dL_dmeff * s.u;
    g.converged = p.converged;
    return g;
}

SearchPhaseLinearization LossModel::linearize_at(double mu) const {
    if (!(mu > 0.0 && mu < 1.0)) throw InvalidArgument("mu must lie in (0,1)");
    const auto sc = student_at(mu * mu);
    const int K = cfg_.k_max;
    const bool mse = cfg_.loss == LossKind::mse;
    std::vector<double> ta(K + 1), tb(K + 1);
    double mk = 1.0, kf = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k > 0) {
            mk *= mu;
            kf *= k;
        }
        const double c = sc.sigma_k[k] / mk;             // sigma_k / mu^k
        const double cb = sc.sigma_bar_k[k] / (mk * mu);  // sigma_bar_k / mu^{k+1}
        const double p = phi_[k];
        ta[k] = -cb * ((mse ? c : 0.0) - p) / kf;
        double b = mse ? cb * c / (kf * mu) : 0.0;
        if (k >= 1) b += p * k / kf * (c / (mu * mu) - cb / (k * mu));
        tb[k] = -b;
    }
    auto lin = make_linearization(cfg_.delta * sum_of(ta), cfg_.delta * sum_of(tb), mu);
    lin.converged = exact_ || (tail_small(ta) && tail_small(tb));
    return lin;
}

SearchPhaseLinearization LossModel::linearize() const { return linearize_at(cfg_.mu); }

LossValue population_loss(const ModelConfig& cfg, const OrderParameterState& s) { return LossModel(cfg).loss(s); }

LossGradients loss_gradients(const ModelConfig& cfg, const OrderParameterState& s) {
    return LossModel(cfg).gradients(s);
}

SearchPhaseLinearization linearize_search_phase(const ModelConfig& cfg) { return LossModel(cfg).linearize(); }

std::vector<double> find_singularities(const ModelConfig& base, const SingularityScan& scan) {
    if (!(scan.lo > 0.0 && scan.hi < 1.0 && scan.lo < scan.hi)) throw InvalidArgument("scan range must lie in (0,1)");
    if (!(scan.step > 0.0 && scan.step <= 1e-3)) throw InvalidArgument("scan step must be in (0, 1e-3]");
    const LossModel model(base);
    auto A = [&](double mu) { return model.linearize_at(mu).A; };
    const int n = static_cast<int>(std::floor((scan.hi - scan.lo) / scan.step + 1e-9));
    std::vector<double> roots;
    double x0 = scan.lo, a0 = A(x0);
    if (a0 == 0.0) roots.push_back(x0);
    for (int i = 1; i <= n; ++i) {
        const double x1 = std::min(scan.lo + i * scan.step, scan.hi);
        const double a1 = A(x1);
        if (a1 == 0.0) {
            roots.push_back(x1);
        } else if (a0 != 0.0 && std::signbit(a0) != std::signbit(a1)) {
            double lo = x0, hi = x1, alo = a0;
            double mid = 0.5 * (lo + hi);
            for (int it = 0; it < 200; ++it) {
                mid = 0.5 * (lo + hi);
                const double am = A(mid);
                if (std::abs(am) < 1e-10 && hi - lo < 1e-12) break;
                if (am == 0.0) break;
                if (std::signbit(am) == std::signbit(alo)) {
                    lo = mid;
                    alo = am;
                } else {
                    hi = mid;
                }
                if (hi - lo < 1e-15) break;
            }
            roots.push_back(mid);
        }
        x0 = x1;
        a0 = a1;
    }
    std::sort(roots.begin(), roots.end());
    return roots;
}

std::vector<SearchPhaseLinearization> tau_curve(const ModelConfig& base, const std::vector<double>& mus) {
    const LossModel model(base);
    std::vector<SearchPhaseLinearization> out;
    out.reserve(mus.size());
    for (double mu : mus) out.push_back(model.linearize_at(mu));
    return out;
}

double odd_hermite_small_mu_constant(int p) {
    if (p < 1) throw InvalidArgument("p must be >= 1");
    return factorial(2 * p - 1) / (factorial(p) * factorial(p - 1) * std::pow(2.0, 2 * p - 1));
}

double asymptotic_tau(int k_star, double mu, AsymptoticRegime regime) {
    if (k_star < 1) throw InvalidArgument("degree must be >= 1");
    if (!(mu > 0.0 && mu < 1.0)) throw InvalidArgument("mu must lie in (0,1)");
    if (regime == AsymptoticRegime::near_one) {
        const double a = 2.0 * k_star - 1.0;
        const double b = mu * mu - 1.0;
        return 4.0 / (a * a * b * b);
    }
    if (k_star < 3) throw InvalidArgument("small-mu asymptotics need degree >= 3");
    const double B0 = LossModel(make_matching("hermite(" + std::to_string(k_star) + ")", 1e-4)).linearize().B;
    if (k_star % 2 == 0) return 1.0 / B0;
    // A ~ -c_p mu near zero, so tau ~ -B0 / A^2
    const double cp = odd_hermite_small_mu_constant((k_star - 1) / 2);
    return -B0 / (cp * cp * mu * mu);
}

double even_hermite_mean(int k_star, double r) {
    if (k_star < 2 || k_star % 2 != 0) throw InvalidArgument("even_hermite_mean needs an even degree >= 2");
    if (!(r > 0.0)) throw InvalidArgument("variance must be positive");
    const int h = k_star / 2;
    return factorial(k_star) * std::pow(r - 1.0, h) / (std::pow(2.0, h) * factorial(h));
}

Potential effective_potential(const SearchPhaseLinearization& lin, double g) {
    if (!std::isfinite(lin.A)) throw InvalidArgument("A must be finite");
    const double a = std::abs(g);
    const double log_cosh = a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    const double A2 = lin.A * lin.A;
    return {-A2 * log_cosh, A2 * std::tanh(g)};
}

}  // namespace searchphase
