#include "searchphase/ode.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>

#include "searchphase/errors.hpp"

namespace searchphase {

Integrator parse_integrator(const std::string& s) {
    if (s == "rk4") return Integrator::rk4;
    if (s == "explicit_euler" || s == "euler") return Integrator::explicit_euler;
    throw LookupError("unknown integrator: '" + s + "'");
}

std::string to_string(Integrator i) { return i == Integrator::rk4 ? "rk4" : "explicit_euler"; }

std::string to_string(ExitReason e) {
    switch (e) {
        case ExitReason::u_threshold: return "u_threshold";
        case ExitReason::m_threshold: return "m_threshold";
        default: return "horizon";
    }
}

void TrajectoryRecord::push(double t, double uu, double mm, double l) {
    times.push_back(t);
    u.push_back(uu);
    m.push_back(mm);
    m_eff.push_back(mu + uu * mm);
    r.push_back(mu * mu + uu * uu + 2.0 * mu * uu * mm);
    loss.push_back(l);
}

FlowSettings default_flow_settings(const ModelConfig& cfg, double d, double t_max) {
    FlowSettings fs;
    const double tau = linearize_search_phase(cfg).tau;
    fs.dt = std::isfinite(tau) ? std::min(1e-3, tau / 1000.0) : 1e-3;
    fs.t_max = t_max;
    fs.u0 = fs.m0 = 1.0 / std::sqrt(d);
    const double steps = t_max / fs.dt;
    fs.record_every = std::max(1, static_cast<int>(std::ceil(steps / 20000.0)));
    return fs;
}

namespace {

struct Crossing {
    double frac;  // fraction of the step at which the threshold is hit
    ExitReason reason;
};

std::optional<Crossing> threshold_crossing(double u0, double m0, double u1, double m1, double thr) {
    auto frac = [thr](double a, double b) -> std::optional<double> {
        if (std::abs(b) < thr) return std::nullopt;
        if (std::abs(a) >= thr) return 0.0;
        // linear interpolation of |.| inside the step
        return (thr - std::abs(a)) / (std::abs(b) - std::abs(a));
    };
    const auto fu = frac(u0, u1), fm = frac(m0, m1);
    if (!fu && !fm) return std::nullopt;
    if (fu && (!fm || *fu <= *fm)) return Crossing{*fu, ExitReason::u_threshold};
    return Crossing{*fm, ExitReason::m_threshold};
}

}  // namespace

TrajectoryRecord integrate_flow(const ModelConfig& cfg, const FlowSettings& fs) {
    if (!(fs.dt > 0.0) || !(fs.t_max > 0.0)) throw InvalidArgument("dt and t_max must be positive");
    if (!(fs.exit_fraction > 0.0 && fs.exit_fraction <= 1.0)) throw InvalidArgument("exit_fraction must lie in (0,1]");
    if (fs.record_every < 1) throw InvalidArgument("record_every must be >= 1");
    if (std::abs(fs.m0) > 1.0) throw InvalidArgument("|m0| must not exceed 1");
    const LossModel model(cfg);
    const double tau = model.linearize().tau;
    if (std::isfinite(tau) && fs.dt > 0.01 * tau)
        throw ConfigurationError("dt=" + std::to_string(fs.dt) + " exceeds 0.01*tau=" + std::to_string(0.01 * tau));

    const double mu = cfg.mu, delta = cfg.delta;
    const auto r_of = [mu](double u, double m) { return mu * mu + u * u + 2.0 * mu * u * m; };
    if (!(r_of(fs.u0, fs.m0) > 0.0)) throw DegenerateStateError("initial r must be positive");

    std::int64_t step = 0;
    auto rhs = [&](double u, double m, double& du, double& dm) {
        if (r_of(u, m) < 1e-12) throw DegenerateStateError("r collapsed at step " + std::to_string(step));
        const auto g = model.gradients({u, m});
        du = -delta * g.du;
        dm = -delta * (1.0 - m * m) * g.dm;
        if (!std::isfinite(du) || !std::isfinite(dm)) throw NumericalBlowup("non-finite flow", step);
    };

    TrajectoryRecord tr;
    tr.mu = mu;
    double u = fs.u0, m = fs.m0;
    tr.push(0.0, u, m, model.loss({u, m}).value);
    const double thr = fs.exit_fraction * mu;
    if (std::max(std::abs(u), std::abs(m)) >= thr) {
        tr.t_exit = 0.0;
        tr.exit_reason = std::abs(u) >= thr ? ExitReason::u_threshold : ExitReason::m_threshold;
    }
    const auto n_steps = static_cast<std::int64_t>(std::ceil(fs.t_max / fs.dt - 1e-9));
    const double h = fs.dt;
    for (step = 1; step <= n_steps; ++step) {
        double nu, nm;
        if (fs.integrator == Integrator::explicit_euler) {
            double k1u, k1m;
            rhs(u, m, k1u, k1m);
            nu = u + h * k1u;
            nm = m + h * k1m;
        } else {
            double k1u, k1m, k2u, k2m, k3u, k3m, k4u, k4m;
            rhs(u, m, k1u, k1m);
            rhs(u + 0.5 * h * k1u, m + 0.5 * h * k1m, k2u, k2m);
            rhs(u + 0.5 * h * k2u, m + 0.5 * h * k2m, k3u, k3m);
            rhs(u + h * k3u, m + h * k3m, k4u, k4m);
            nu = u + h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
            nm = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m);
        }
        nm = std::clamp(nm, -1.0, 1.0);
        if (!std::isfinite(nu) || !std::isfinite(nm)) throw NumericalBlowup("non-finite state", step);
        const double t = step * h;
        if (!tr.t_exit) {
            if (const auto c = threshold_crossing(u, m, nu, nm, thr)) {
                tr.t_exit = t - h + c->frac * h;
                tr.exit_reason = c->reason;
            }
        }
        u = nu;
        m = nm;
        const bool done = fs.stop_at_exit && tr.t_exit.has_value();
        if (step % fs.record_every == 0 || step == n_steps || done) tr.push(t, u, m, model.loss({u, m}).value);
        if (done) break;
    }
    return tr;
}

TrajectoryRecord integrate_linearized(const SearchPhaseLinearization& lin, double u0, double m0, double t_max,
                                      double record_dt) {
    if (!std::isfinite(lin.A) || !std::isfinite(lin.B)) throw InvalidArgument("A and B must be finite");
    if (!(t_max > 0.0) || !(record_dt > 0.0)) throw InvalidArgument("t_max and record_dt must be positive");
    const double A = lin.A, B = lin.B;

    std::function<std::pair<double, double>(double)> at;
    if (A == 0.0) {
        // decoupled: m frozen, u evolves on its own
        at = [=](double t) { return std::pair{u0 * std::exp(B * t), m0}; };
    } else {
        Eigen::Matrix2d M;
        M << B, A, A, 0.0;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(M);
        const Eigen::Matrix2d V = es.eigenvectors();
        const Eigen::Vector2d lam = es.eigenvalues();
        const Eigen::Vector2d c = V.transpose() * Eigen::Vector2d(u0, m0);
        at = [=](double t) {
            const Eigen::Vector2d x = V * Eigen::Vector2d(c[0] * std::exp(lam[0] * t), c[1] * std::exp(lam[1] * t));
            return std::pair{x[0], x[1]};
        };
    }

    TrajectoryRecord tr;
    tr.mu = lin.mu;
    const auto n = static_cast<std::int64_t>(std::ceil(t_max / record_dt - 1e-9));
    for (std::int64_t i = 0; i <= n; ++i) {
        const double t = std::min(i * record_dt, t_max);
        const auto [u, m] = at(t);
        tr.push(t, u, m, -(0.5 * B * u * u + A * u * m));
    }
    if (lin.mu > 0.0) {
        const double thr = lin.mu;
        auto over = [&](double t) {
            const auto [u, m] = at(t);
            return std::max(std::abs(u), std::abs(m)) >= thr;
        };
        for (std::size_t i = 0; i < tr.size(); ++i) {
            if (std::max(std::abs(tr.u[i]), std::abs(tr.m[i])) < thr) continue;
            double lo = i == 0 ? 0.0 : tr.times[i - 1], hi = tr.times[i];
            if (i == 0) {
                tr.t_exit = 0.0;
            } else {
                for (int it = 0; it < 100 && hi - lo > 1e-13 * hi; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (over(mid) ? hi : lo) = mid;
                }
                tr.t_exit = hi;
            }
            const auto [u, m] = at(*tr.t_exit);
            tr.exit_reason = std::abs(u) >= std::abs(m) ? ExitReason::u_threshold : ExitReason::m_threshold;
            break;
        }
    }
    return tr;
}

double max_loss_increase(const TrajectoryRecord& traj) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < traj.size(); ++i)
        worst = std::max(worst, (traj.loss[i] - traj.loss[i - 1]) / (1.0 + std::abs(traj.loss[i - 1])));
    return worst;
}

DescentReport verify_descent(const TrajectoryRecord& traj, double eta) {
    DescentReport rep;
    std::size_t i0 = traj.size();
    for (std::size_t i = 0; i < traj.size(); ++i)
        if (std::abs(traj.m[i]) >= eta) {
            i0 = i;
            break;
        }
    if (i0 == traj.size()) return rep;
    rep.applicable = true;
    rep.t_cross = traj.times[i0];

    const bool positive = traj.m[i0] > 0.0;
    rep.sign_constant = true;
    rep.loss_monotone = true;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    int n = 0;
    for (std::size_t i = i0; i < traj.size(); ++i) {
        if ((traj.m[i] > 0.0) != positive) rep.sign_constant = false;
        if (i > i0 && traj.loss[i] - traj.loss[i - 1] > 1e-8 * (1.0 + std::abs(traj.loss[i - 1])))
            rep.loss_monotone = false;
        const double gap = 1.0 - std::abs(traj.m[i]);
        if (gap <= 1e-12) continue;  // below the double-precision floor
        const double x = traj.times[i], y = std::log(gap);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        ++n;
    }
    rep.fit_points = n;
    if (n >= 3) {
        const double cov = sxy - sx * sy / n, vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
        if (vx > 0.0) {
            const double slope = cov / vx;
            rep.fitted_rate = -slope;
            rep.r_squared = vy > 0.0 ? cov * cov / (vx * vy) : 1.0;
        }
    }
    rep.linear = rep.r_squared >= 0.99;
    rep.terminal_abs_m_eff = std::abs(traj.m_eff.back());
    return rep;
}

OscillatorTrajectory oscillator_trajectory(const SearchPhaseLinearization& lin, double g0, double gdot0, double dt,
                                           double t_max) {
    if (!std::isfinite(lin.A) || !std::isfinite(lin.B)) throw InvalidArgument("A and B must be finite");
    if (!(dt > 0.0) || !(t_max > 0.0)) throw InvalidArgument("dt and t_max must be positive");
    const double A2 = lin.A * lin.A, B = lin.B;
    auto acc = [&](double g, double v) { return B * v + A2 * std::tanh(g); };
    auto energy = [&](double g, double v) { return 0.5 * v * v + effective_potential(lin, g).V; };

    OscillatorTrajectory o;
    double g = g0, v = gdot0;
    o.t.push_back(0.0);
    o.g.push_back(g);
    o.gdot.push_back(v);
    o.energy.push_back(energy(g, v));
    const auto n = static_cast<std::int64_t>(std::ceil(t_max / dt - 1e-9));
    for (std::int64_t s = 1; s <= n; ++s) {
        const double k1g = v, k1v = acc(g, v);
        const double k2g = v + 0.5 * dt * k1v, k2v = acc(g + 0.5 * dt * k1g, k2g);
        const double k3g = v + 0.5 * dt * k2v, k3v = acc(g + 0.5 * dt * k2g, k3g);
        const double k4g = v + dt * k3v, k4v = acc(g + dt * k3g, k4g);
        const double vprev = v;
        g += dt / 6.0 * (k1g + 2 * k2g + 2 * k3g + k4g);
        v += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        if (!std::isfinite(g) || !std::isfinite(v)) throw NumericalBlowup("oscillator diverged", s);
        const double e = energy(g, v);
        // dE/dt = B gdot^2, compared with a Simpson-like average of gdot^2 across the step
        const double mid_v = 0.5 * (vprev + v);
        const double expect = B * (vprev * vprev + 4 * mid_v * mid_v + v * v) / 6.0;
        const double got = (e - o.energy.back()) / dt;
        o.energy_balance_residual =
            std::max(o.energy_balance_residual, std::abs(got - expect) / std::max(1.0, std::abs(expect)));
        o.t.push_back(s * dt);
        o.g.push_back(g);
        o.gdot.push_back(v);
        o.energy.push_back(e);
    }
    return o;
}

PlateauReport detect_u_plateau(const TrajectoryRecord& traj) {
    PlateauReport rep;
    const std::size_t n = traj.size();
    if (n < 5 || !traj.t_exit) return rep;
    std::vector<double> du(n, 0.0), dabsm(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double dt = traj.times[i + 1] - traj.times[i - 1];
        du[i] = (traj.u[i + 1] - traj.u[i - 1]) / dt;
        dabsm[i] = (std::abs(traj.m[i + 1]) - std::abs(traj.m[i - 1])) / dt;
    }
    double peak = 0.0;
    for (double x : du) peak = std::max(peak, std::abs(x));
    if (peak == 0.0) return rep;
    const double quiet = 0.01 * peak;
    std::size_t i = 1;
    while (i + 1 < n && traj.times[i] < *traj.t_exit) ++i;
    for (; i + 1 < n; ++i) {
        if (!(std::abs(du[i]) < quiet && dabsm[i] > 0.0)) continue;
        std::size_t j = i;
        while (j + 1 < n && std::abs(du[j]) < quiet && dabsm[j] > 0.0) ++j;
        // u must leave the plateau again afterwards
        bool resumes = false;
        for (std::size_t k = j; k + 1 < n; ++k)
            if (std::abs(du[k]) >= quiet) {
                resumes = true;
                break;
            }
        if (resumes && j > i + 1) {
            rep.found = true;
            rep.t_start = traj.times[i];
            rep.t_end = traj.times[j];
            return rep;
        }
        i = j;
    }
    return rep;
}

}  // namespace searchphase
