#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "searchphase/committee.hpp"
#include "searchphase/csv.hpp"
#include "searchphase/sgd.hpp"
#include "searchphase/svg.hpp"
#include "searchphase/theory.hpp"

namespace searchphase {

enum class PlanKind { tau_curve, singularity_scan, ode_run, sgd_run, committee_run, curriculum_run, compare };
enum class Emit { csv, svg, both };

PlanKind parse_plan_kind(const std::string& s);
std::string to_string(PlanKind k);
Emit parse_emit(const std::string& s);
std::string to_string(Emit e);

struct ExperimentPlan {
    PlanKind kind = PlanKind::tau_curve;
    // [model] keys, kept as text until a cell is built
    std::map<std::string, std::string> settings;
    std::vector<double> mus;
    std::vector<std::string> activations;
    std::vector<int> ranks;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    Emit emit = Emit::csv;
};

// Built-in sweep for each kind (figure-style grids).
ExperimentPlan default_plan(PlanKind kind);

// INI text: [plan] kind/output/emit, [model] settings, one section per sweep
// axis ([mu], [activation], [rank], [seed]) holding either `values = a, b, c`
// or `start`, `stop`, `step`. Axes not given keep the kind's defaults.
ExperimentPlan parse_plan(const std::string& ini_text, std::optional<PlanKind> kind = std::nullopt);
ExperimentPlan load_plan(const std::string& path, std::optional<PlanKind> kind = std::nullopt);

// "section.key=value"; a bare key means [model].
void apply_override(ExperimentPlan& plan, const std::string& assignment);

// Throws ValidationError listing every offending field.
void validate(const ExperimentPlan& plan);

std::string plan_hash(const ExperimentPlan& plan);

// Builders shared by the CLI and the plan runner.
ModelConfig model_for(const ExperimentPlan& plan, const std::string& activation, double mu);
SimConfig sim_for(const ExperimentPlan& plan, const std::string& activation, double mu, std::uint64_t seed);
CommitteeConfig committee_for(const ExperimentPlan& plan, const std::string& activation, double mu, int R,
                              std::uint64_t seed);

struct CellResult {
    std::string id;
    std::map<std::string, std::string> params;
    std::string config_hash;
    bool ok = false;
    std::string error;
    std::string error_kind;  // validation, numerical_blowup, degenerate_state, other
    std::vector<std::string> files;
    double wall_time_s = 0.0;
};

struct Manifest {
    std::string plan_hash;
    PlanKind kind = PlanKind::tau_curve;
    std::string output_dir;
    std::vector<CellResult> cells;
    std::vector<std::string> files;  // every artifact, cells and plan-level
    double wall_time_s = 0.0;

    bool all_ok() const;
    bool any_blowup() const;
    std::string to_json() const;
};

// Worker count: SEARCHPHASE_THREADS if set, else hardware concurrency.
unsigned worker_threads();

// Runs every cell (concurrently), writes CSV/SVG files and manifest.json.
Manifest run_plan(const ExperimentPlan& plan, unsigned threads = 0);

// Cell tables, also used directly by tests and the Python module.
CsvTable tau_table(const ExperimentPlan& plan, const std::string& activation);
CsvTable singularity_table(const ExperimentPlan& plan, const std::string& activation);
CsvTable ode_table(const ExperimentPlan& plan, const std::string& activation, double mu);
CsvTable sgd_table(const SimConfig& cfg, const SgdTrajectory& tr);
CsvTable committee_table(const CommitteeConfig& cfg, const CommitteeTrajectory& tr);

PlotSpec plot_for(PlanKind kind, const CsvTable& table);

struct CompareMapping {
    double d = 1000.0;
    double flow_time_per_step = 0.2;  // lr / delta
    std::string exit_column = "empirical_exit_epoch";
};

struct CompareReport {
    std::vector<double> mu;
    std::vector<double> tau;
    std::vector<double> predicted;  // (tau/2) log d in epochs
    std::vector<double> observed;   // mean exit epoch over rows with that mu
    std::vector<double> fitted;     // scale * predicted + offset
    std::vector<double> rel_residual;
    double spearman = 0.0;  // between tau and observed
    double scale = 0.0;
    double offset = 0.0;
    double max_abs_rel_residual = 0.0;
    bool dip_theory = false;
    bool dip_experiment = false;
    std::vector<double> flagged_mu;  // infinite tau or no observed exit

    CsvTable table() const;
};

// theory: columns mu, tau. experiment: columns mu and mapping.exit_column.
// Throws AlignmentError when the mu grids differ.
CompareReport compare_theory_experiment(const CsvTable& theory, const CsvTable& experiment,
                                        const CompareMapping& mapping);

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace searchphase
