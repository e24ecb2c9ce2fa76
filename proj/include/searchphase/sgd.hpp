#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "searchphase/activations.hpp"
#include "searchphase/theory.hpp"

namespace searchphase {

enum class PretrainModel { aligned, mixed };
// full: draw every x in R^d. projected: draw the coordinates of x in the span of
// the model vectors plus a single complement vector for the batch gradient; the
// update has the same law as the full sampler at O(Bk + d) cost per step.
enum class Sampler { full, projected };
enum class StopRule { horizon, empirical_exit, theory_exit };

PretrainModel parse_pretrain_model(const std::string& s);
Sampler parse_sampler(const std::string& s);
StopRule parse_stop_rule(const std::string& s);
std::string to_string(PretrainModel p);
std::string to_string(Sampler s);
std::string to_string(StopRule s);

// Two-stage procedure: train on transformed labels, then on the original ones.
struct Curriculum {
    LabelTransform stage_one = LabelTransform::square;
    std::optional<std::int64_t> switch_epoch;
    std::optional<double> m_switch;
};

struct SimConfig {
    ActivationSpec teacher = builtin("linear");
    ActivationSpec student = builtin("linear");
    std::int64_t d = 1000;
    std::int64_t batch = 500;
    double lr = 0.2;
    std::int64_t epochs = 1000;
    double mu = 0.5;
    PretrainModel pretrain_model = PretrainModel::aligned;
    LossKind loss = LossKind::mse;
    LabelTransform teacher_transform = LabelTransform::identity;
    std::uint64_t seed = 0;
    std::optional<Curriculum> curriculum;
    Sampler sampler = Sampler::full;
    std::int64_t n_test = 10000;  // 0 disables test MSE
    double empirical_exit = 0.98;
    StopRule stop = StopRule::horizon;
    std::int64_t stop_delay = 0;  // extra epochs after the stop event
};

// Throws ValidationError listing every offending field.
void validate(const SimConfig& cfg);

// delta of the student (1/(k!k) for pure Hermite, else 1).
double sim_delta(const SimConfig& cfg);
// Flow time advanced by one SGD step: lr / delta.
double flow_time_per_step(const SimConfig& cfg);
// Learning rate base_lr * delta_k, so one step advances flow time by base_lr.
double scaled_lr(double base_lr, const ActivationSpec& student);

struct SimState {
    Eigen::VectorXd omega_star;
    Eigen::VectorXd omega;
    double u = 0.0;
    std::optional<Eigen::VectorXd> xi;
    std::int64_t step = 0;
    std::int64_t samples = 0;
    int stage = 1;  // 2 after a curriculum switch

    double m() const { return omega.dot(omega_star); }
};

// Frozen pre-trained vector: mu w* (aligned) or mu w* + (1 - mu) xi (mixed).
Eigen::VectorXd pretrained_vector(const SimState& s, const SimConfig& cfg);
// m_eff = (w~ + u w) . w*, r = |w~ + u w|^2
double effective_alignment(const SimState& s, const SimConfig& cfg);
double preactivation_variance(const SimState& s, const SimConfig& cfg);

// Label transform in force for the current stage.
LabelTransform active_transform(const SimState& s, const SimConfig& cfg);

SimState init_state(const SimConfig& cfg);

struct BatchGradient {
    double du = 0.0;
    Eigen::VectorXd domega;  // Euclidean gradient in R^d, before projection
    double train_mse = 0.0;
};

// Batch-mean gradient of the per-sample loss on explicit inputs (rows of x).
BatchGradient batch_gradient(const SimState& s, const SimConfig& cfg, const Eigen::MatrixXd& x);

// Apply a gradient: plain step on u, tangent step then renormalisation on omega.
void apply_gradient(SimState& s, const SimConfig& cfg, const BatchGradient& g);

// One step on an explicit batch.
SimState sgd_step(const SimState& s, const SimConfig& cfg, const Eigen::MatrixXd& x, double* train_mse = nullptr);

// One step with a batch drawn from the (seed, train, step) stream using cfg.sampler.
double sgd_step_streamed(SimState& s, const SimConfig& cfg);

Eigen::MatrixXd draw_batch(const SimConfig& cfg, std::int64_t step);

struct TestMse {
    double value = 0.0;
    double stderr_ = 0.0;
    double series = 0.0;  // 2 x population loss at the same (m_eff, r)
    bool series_converged = true;
};

// Fresh samples from the (seed, test, counter) stream, labels with cfg.teacher_transform.
TestMse measure_test_mse(const SimState& s, const SimConfig& cfg, std::int64_t n_test, std::uint64_t counter = 0);

struct SgdTrajectory {
    std::vector<std::int64_t> epoch;
    std::vector<double> t_flow;
    std::vector<double> m;
    std::vector<double> u;
    std::vector<double> m_eff;
    std::vector<double> r;
    std::vector<double> train_mse;
    std::vector<double> test_mse;
    // first epoch with m >= empirical_exit (|m| for even students)
    std::optional<std::int64_t> empirical_exit_epoch;
    // first epoch with max(|u|, |m|) >= mu
    std::optional<std::int64_t> theory_exit_epoch;
    std::optional<std::int64_t> switch_epoch;
    std::int64_t samples = 0;
    SimState final_state;

    std::size_t size() const { return epoch.size(); }
};

SgdTrajectory run_simulation(const SimConfig& cfg, std::int64_t record_every);

// One-line summary of the config for CSV headers.
std::vector<std::pair<std::string, std::string>> describe(const SimConfig& cfg);

}  // namespace searchphase
