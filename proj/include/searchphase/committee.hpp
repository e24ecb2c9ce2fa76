#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "searchphase/sgd.hpp"

namespace searchphase {

// multi_output: one output per teacher direction, loss (1/2K) sum_k (y_k - yhat_k)^2,
// which is the population loss the order-parameter ODEs are derived from.
// summed: y = K^{-1/2} sum_k sigma(w*_k . x) against the analogous student sum.
enum class Readout { multi_output, summed };
// frozen: the displayed overlap equations with Q = I held fixed.
// evolving: exact gradient flow of the multi-output loss with Q as state.
enum class QMode { frozen, evolving };

Readout parse_readout(const std::string& s);
QMode parse_q_mode(const std::string& s);
std::string to_string(Readout r);
std::string to_string(QMode q);

struct CommitteeConfig {
    int K = 4;
    int R = 1;
    std::int64_t d = 1000;
    // mu_k = 1 freezes direction k (w~_k = w*_k, no gradient)
    std::vector<double> mu_k = {0.5, 0.5, 1.0, 1.0};
    std::string activation = "linear";
    double lr = 0.2;
    std::int64_t batch = 500;
    std::int64_t epochs = 1000;
    std::uint64_t seed = 0;
    Readout readout = Readout::multi_output;
    Sampler sampler = Sampler::full;
    std::int64_t n_test = 10000;  // 0 disables test MSE
    double onset_threshold = 0.2;
    bool stop_at_onset = false;
    std::int64_t stop_delay = 0;
};

void validate(const CommitteeConfig& cfg);

// K = 4, two adapted directions at mu, the rest frozen.
CommitteeConfig standard_committee(double mu, int R);

std::vector<int> adapted_directions(const CommitteeConfig& cfg);

struct CommitteeState {
    Eigen::MatrixXd U;  // K x R
    Eigen::MatrixXd M;  // K x R, m_{k,r}
    Eigen::MatrixXd Q;  // R x R

    Eigen::MatrixXd C() const { return U.transpose() * U; }
    Eigen::VectorXd m_eff(const std::vector<double>& mu_k) const;
};

// u = m = d^{-1/2} on adapted directions, q_rs = (#adapted)/d off the diagonal;
// the same state committee_sgd starts from.
CommitteeState committee_initial_state(const CommitteeConfig& cfg);

// (1/2K)[sum D_k^2 + sum u_kr u_ks q_rs - 2 sum D_k u_kr m_kr]
double committee_loss(const CommitteeState& s, const CommitteeConfig& cfg);

struct CommitteeDerivative {
    Eigen::MatrixXd dU;
    Eigen::MatrixXd dM;
    Eigen::MatrixXd dQ;
};

// decouple drops the C coupling (C = 0) in the frozen equations.
CommitteeDerivative committee_rhs(const CommitteeState& s, const CommitteeConfig& cfg, QMode mode,
                                  bool decouple = false);

// One RK4 step.
CommitteeState committee_ode_step(const CommitteeState& s, const CommitteeConfig& cfg, double dt,
                                  QMode mode = QMode::frozen, bool decouple = false);

struct CommitteeOdeTrajectory {
    std::vector<double> times;
    std::vector<CommitteeState> states;
    std::vector<double> loss;

    std::size_t size() const { return times.size(); }
};

CommitteeOdeTrajectory integrate_committee(const CommitteeConfig& cfg, const CommitteeState& s0, double dt,
                                           double t_max, QMode mode = QMode::frozen, bool decouple = false,
                                           int record_every = 1);

struct LinearRate {
    int k = 0;
    double mu = 0.0;
    double lambda_plus = 0.0;
    double tau = 0.0;  // +inf for mu = 1
};

// lambda_{k,+} = (-1 + sqrt(1 + 4 D_k^2)) / (2K); independent of R.
std::vector<LinearRate> committee_linear_rates(const CommitteeConfig& cfg);

struct CommitteeTrajectory {
    std::vector<std::int64_t> epoch;
    std::vector<double> t_flow;
    std::vector<double> test_mse;
    std::vector<Eigen::VectorXd> test_mse_k;  // per direction (multi_output only)
    std::vector<Eigen::VectorXd> m_eff;
    std::vector<Eigen::MatrixXd> M;
    std::vector<Eigen::MatrixXd> U;
    std::vector<Eigen::MatrixXd> Q;
    // first epoch with max over adapted (k, r) of |m_{k,r}| >= onset_threshold
    std::optional<std::int64_t> onset_epoch;

    std::size_t size() const { return epoch.size(); }
};

CommitteeTrajectory committee_sgd(const CommitteeConfig& cfg, std::int64_t record_every);

std::vector<std::pair<std::string, std::string>> describe(const CommitteeConfig& cfg);

}  // namespace searchphase
