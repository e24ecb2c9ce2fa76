#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "searchphase/errors.hpp"
#include "searchphase/plan.hpp"

using namespace searchphase;

namespace {

enum Exit { kOk = 0, kValidation = 1, kPartial = 2, kBlowup = 3 };

struct Common {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::string format;
    std::vector<std::string> sets;
    std::vector<double> mus;
    std::vector<std::string> activations;
    std::vector<int> ranks;
    unsigned threads = 0;
};

void add_common(CLI::App* sub, Common& c, bool with_rank) {
    sub->add_option("--config", c.config, "INI plan file");
    sub->add_option("--seed", c.seeds, "seed(s); replaces the seed axis");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--format", c.format, "csv, svg or both")->check(CLI::IsMember({"csv", "svg", "both"}));
    sub->add_option("--set", c.sets, "override, e.g. lr=0.1 or plan.emit=svg")->take_all();
    sub->add_option("--mu", c.mus, "mu value(s); replaces the mu axis");
    sub->add_option("--activation", c.activations, "activation name(s); replaces the activation axis");
    if (with_rank) sub->add_option("--rank", c.ranks, "rank(s); replaces the rank axis");
    sub->add_option("--threads", c.threads, "worker threads (default SEARCHPHASE_THREADS or all cores)");
}

ExperimentPlan build_plan(PlanKind kind, const Common& c) {
    ExperimentPlan plan = c.config.empty() ? default_plan(kind) : load_plan(c.config, kind);
    for (const auto& s : c.sets) apply_override(plan, s);
    if (!c.seeds.empty()) plan.seeds = c.seeds;
    if (!c.mus.empty()) plan.mus = c.mus;
    if (!c.activations.empty()) plan.activations = c.activations;
    if (!c.ranks.empty()) plan.ranks = c.ranks;
    if (!c.out.empty()) plan.output_dir = c.out;
    if (!c.format.empty()) plan.emit = parse_emit(c.format);
    validate(plan);
    return plan;
}

int report(const Manifest& m) {
    for (const auto& cell : m.cells) {
        std::cout << (cell.ok ? "ok     " : "FAILED ") << cell.id;
        if (!cell.ok) std::cout << "  [" << cell.error_kind << "] " << cell.error;
        std::cout << "\n";
    }
    std::cout << m.files.size() << " files in " << m.output_dir << " (plan " << m.plan_hash << ")\n";
    if (m.all_ok()) return kOk;
    return m.any_blowup() ? kBlowup : kPartial;
}

struct FileCompare {
    std::string theory, experiment, out, column = "empirical_exit_epoch";
    double d = 1000.0;
    std::optional<double> step, lr, delta;
};

int compare_files(const FileCompare& f) {
    CompareMapping mapping;
    mapping.d = f.d;
    mapping.exit_column = f.column;
    if (f.step) {
        mapping.flow_time_per_step = *f.step;
    } else if (f.lr && f.delta) {
        mapping.flow_time_per_step = *f.lr / *f.delta;
    } else if (f.lr || f.delta) {
        throw ValidationError({"compare: --lr and --delta go together"});
    }
    const auto theory = parse_csv(read_text_file(f.theory));
    const auto experiment = parse_csv(read_text_file(f.experiment));
    const auto rep = compare_theory_experiment(theory, experiment, mapping);
    const std::string csv = to_csv(rep.table());
    if (f.out.empty())
        std::cout << csv;
    else
        write_text_file(f.out, csv);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Search-phase escape times: theory, ODE flow and SGD experiments"};
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        PlanKind kind;
        const char* help;
    };
    const std::vector<Entry> entries = {
        {"tau", PlanKind::tau_curve, "escape-time curve tau(mu) per activation"},
        {"singularity", PlanKind::singularity_scan, "roots of the linear coefficient A(mu)"},
        {"ode", PlanKind::ode_run, "integrate the order-parameter flow"},
        {"sgd", PlanKind::sgd_run, "online SGD simulations"},
        {"committee", PlanKind::committee_run, "multi-index committee SGD"},
        {"curriculum", PlanKind::curriculum_run, "single-stage vs two-stage training"},
    };
    std::vector<Common> commons(entries.size() + 1);
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto* sub = app.add_subcommand(entries[i].name, entries[i].help);
        add_common(sub, commons[i], entries[i].kind == PlanKind::committee_run);
        subs.push_back(sub);
    }

    auto* cmp = app.add_subcommand("compare", "theory vs SGD exit epochs (runs a plan, or compares two CSV files)");
    Common& cmp_common = commons.back();
    add_common(cmp, cmp_common, false);
    FileCompare files;
    cmp->add_option("--theory", files.theory, "tau-curve CSV (columns mu, tau)");
    cmp->add_option("--experiment", files.experiment, "CSV with mu and exit epochs");
    cmp->add_option("--column", files.column, "exit-epoch column of the experiment CSV");
    cmp->add_option("--d", files.d, "dimension used for the log d / 2 scale");
    cmp->add_option("--step", files.step, "flow time per SGD step");
    cmp->add_option("--lr", files.lr, "learning rate (with --delta)");
    cmp->add_option("--delta", files.delta, "time scale delta (with --lr)");
    cmp->add_option("--report", files.out, "write the report CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (cmp->parsed()) {
            if (!files.theory.empty() || !files.experiment.empty()) {
                if (files.theory.empty() || files.experiment.empty())
                    throw ValidationError({"compare: --theory and --experiment go together"});
                return compare_files(files);
            }
            const auto plan = build_plan(PlanKind::compare, cmp_common);
            return report(run_plan(plan, cmp_common.threads));
        }
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            const auto plan = build_plan(entries[i].kind, commons[i]);
            return report(run_plan(plan, commons[i].threads));
        }
    } catch (const ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kValidation;
    } catch (const LookupError& e) {
        std::cerr << "invalid configuration: " << e.what() << "\n";
        return kValidation;
    } catch (const AlignmentError& e) {
        std::cerr << "alignment error: " << e.what() << "\n";
        return kValidation;
    } catch (const NumericalBlowup& e) {
        std::cerr << "numerical blowup: " << e.what() << "\n";
        return kBlowup;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kPartial;
    }
    return kOk;
}
