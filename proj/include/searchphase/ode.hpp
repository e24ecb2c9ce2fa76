#pragma once

#include <optional>
#include <string>
#include <vector>

#include "searchphase/theory.hpp"

namespace searchphase {

enum class Integrator { explicit_euler, rk4 };
enum class ExitReason { u_threshold, m_threshold, horizon };

Integrator parse_integrator(const std::string& s);
std::string to_string(Integrator i);
std::string to_string(ExitReason e);

struct FlowSettings {
    double dt = 1e-3;
    double t_max = 100.0;
    // exit once |u| >= c mu or |m| >= c mu
    double exit_fraction = 1.0;
    double u0 = 0.0;
    double m0 = 0.0;
    Integrator integrator = Integrator::rk4;
    int record_every = 1;
    bool stop_at_exit = false;
};

// dt = min(1e-3, tau/1000), u0 = m0 = 1/sqrt(d); record stride keeps <= ~20k rows.
FlowSettings default_flow_settings(const ModelConfig& cfg, double d = 1000.0, double t_max = 100.0);

struct TrajectoryRecord {
    double mu = 0.0;
    std::vector<double> times;
    std::vector<double> u;
    std::vector<double> m;
    std::vector<double> m_eff;
    std::vector<double> r;
    std::vector<double> loss;
    std::optional<double> t_exit;
    ExitReason exit_reason = ExitReason::horizon;

    std::size_t size() const { return times.size(); }
    void push(double t, double uu, double mm, double l);
};

TrajectoryRecord integrate_flow(const ModelConfig& cfg, const FlowSettings& fs);

// Closed-form solution of (u', m') = (B u + A m, A u). The loss column holds
// the quadratic model -(B u^2/2 + A u m) of the linearised flow.
TrajectoryRecord integrate_linearized(const SearchPhaseLinearization& lin, double u0, double m0, double t_max,
                                      double record_dt = 1e-2);

struct DescentReport {
    bool applicable = false;
    double t_cross = 0.0;
    double fitted_rate = 0.0;
    double r_squared = 0.0;
    bool linear = false;  // r_squared >= 0.99
    bool sign_constant = false;
    bool loss_monotone = false;
    double terminal_abs_m_eff = 0.0;
    int fit_points = 0;
};

DescentReport verify_descent(const TrajectoryRecord& traj, double eta);

// Largest per-step loss increase relative to 1 + |loss|.
double max_loss_increase(const TrajectoryRecord& traj);

struct OscillatorTrajectory {
    std::vector<double> t;
    std::vector<double> g;
    std::vector<double> gdot;
    std::vector<double> energy;
    // max |dE/dt - B gdot^2| over steps, relative to max(1, |B gdot^2|)
    double energy_balance_residual = 0.0;
};

OscillatorTrajectory oscillator_trajectory(const SearchPhaseLinearization& lin, double g0, double gdot0, double dt,
                                           double t_max);

struct PlateauReport {
    bool found = false;
    double t_start = 0.0;
    double t_end = 0.0;
};

// After exit: |u'| < 0.01 max|u'| while |m| still grows, and u later moves again.
PlateauReport detect_u_plateau(const TrajectoryRecord& traj);

}  // namespace searchphase
