#include "searchphase/plan.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/statistics/bivariate_statistics.hpp>
#include <boost/math/statistics/linear_regression.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "searchphase/errors.hpp"
#include "searchphase/ode.hpp"

namespace searchphase {

namespace fs = std::filesystem;

PlanKind parse_plan_kind(const std::string& s) {
    static const std::map<std::string, PlanKind> names = {
        {"tau_curve", PlanKind::tau_curve},         {"tau", PlanKind::tau_curve},
        {"singularity_scan", PlanKind::singularity_scan}, {"singularity", PlanKind::singularity_scan},
        {"ode_run", PlanKind::ode_run},             {"ode", PlanKind::ode_run},
        {"sgd_run", PlanKind::sgd_run},             {"sgd", PlanKind::sgd_run},
        {"committee_run", PlanKind::committee_run}, {"committee", PlanKind::committee_run},
        {"curriculum_run", PlanKind::curriculum_run}, {"curriculum", PlanKind::curriculum_run},
        {"compare", PlanKind::compare}};
    const auto it = names.find(s);
    if (it == names.end()) throw LookupError("unknown plan kind: '" + s + "'");
    return it->second;
}

std::string to_string(PlanKind k) {
    switch (k) {
        case PlanKind::tau_curve: return "tau_curve";
        case PlanKind::singularity_scan: return "singularity_scan";
        case PlanKind::ode_run: return "ode_run";
        case PlanKind::sgd_run: return "sgd_run";
        case PlanKind::committee_run: return "committee_run";
        case PlanKind::curriculum_run: return "curriculum_run";
        default: return "compare";
    }
}

Emit parse_emit(const std::string& s) {
    if (s == "csv") return Emit::csv;
    if (s == "svg") return Emit::svg;
    if (s == "both") return Emit::both;
    throw LookupError("unknown emit format: '" + s + "' (csv, svg, both)");
}

std::string to_string(Emit e) { return e == Emit::csv ? "csv" : (e == Emit::svg ? "svg" : "both"); }

namespace {

std::vector<double> grid(double lo, double hi, double step) {
    std::vector<double> g;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) g.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
    return g;
}

const std::set<std::string>& allowed_keys(PlanKind k) {
    static const std::set<std::string> theory = {"teacher", "teacher_transform", "k_max", "delta"};
    static const std::set<std::string> singular = {"teacher", "teacher_transform", "k_max", "delta",
                                                   "scan_lo", "scan_hi",           "scan_step"};
    static const std::set<std::string> ode = {"teacher", "teacher_transform", "k_max",        "delta",
                                              "d",       "dt",                "t_max",        "integrator",
                                              "exit_fraction", "record_every", "stop_at_exit"};
    static const std::set<std::string> sgd = {"teacher", "teacher_transform", "d",       "batch",          "lr",
                                              "lr_base", "epochs",            "pretrain_model", "loss",
                                              "sampler", "n_test",            "empirical_exit", "stop",
                                              "stop_delay", "record_every"};
    static const std::set<std::string> curriculum = [] {
        auto s = sgd;
        s.insert({"stage_one", "switch_epoch", "m_switch"});
        return s;
    }();
    static const std::set<std::string> committee = {"K",      "adapted", "d",        "lr",
                                                    "batch",  "epochs",  "readout",  "sampler",
                                                    "n_test", "onset_threshold", "stop_at_onset", "stop_delay",
                                                    "record_every"};
    static const std::set<std::string> compare = [] {
        auto s = sgd;
        s.insert({"k_max"});
        return s;
    }();
    switch (k) {
        case PlanKind::tau_curve: return theory;
        case PlanKind::singularity_scan: return singular;
        case PlanKind::ode_run: return ode;
        case PlanKind::sgd_run: return sgd;
        case PlanKind::curriculum_run: return curriculum;
        case PlanKind::committee_run: return committee;
        default: return compare;
    }
}

bool uses_mu(PlanKind k) { return k != PlanKind::singularity_scan; }
bool uses_seed(PlanKind k) {
    return k == PlanKind::sgd_run || k == PlanKind::committee_run || k == PlanKind::curriculum_run ||
           k == PlanKind::compare;
}

// Typed access to [model] settings; problems are collected, not thrown.
class Reader {
public:
    Reader(const std::map<std::string, std::string>& s, std::vector<std::string>& errors) : s_(s), errors_(errors) {}

    bool has(const std::string& key) const { return s_.count(key) > 0; }

    double num(const std::string& key, double def) const {
        const auto it = s_.find(key);
        if (it == s_.end()) return def;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            errors_.push_back("model." + key + ": not a number ('" + it->second + "')");
            return def;
        }
    }

    long long integer(const std::string& key, long long def) const {
        const auto it = s_.find(key);
        if (it == s_.end()) return def;
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            errors_.push_back("model." + key + ": not an integer ('" + it->second + "')");
            return def;
        }
    }

    std::string text(const std::string& key, const std::string& def) const {
        const auto it = s_.find(key);
        return it == s_.end() ? def : it->second;
    }

    bool flag(const std::string& key, bool def) const {
        const auto it = s_.find(key);
        if (it == s_.end()) return def;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        errors_.push_back("model." + key + ": not a boolean ('" + it->second + "')");
        return def;
    }

    template <class F>
    auto parsed(const std::string& key, F parse, decltype(parse(std::string())) def) const {
        const auto it = s_.find(key);
        if (it == s_.end()) return def;
        try {
            return parse(it->second);
        } catch (const std::exception& e) {
            errors_.push_back("model." + key + ": " + e.what());
            return def;
        }
    }

private:
    const std::map<std::string, std::string>& s_;
    std::vector<std::string>& errors_;
};

void throw_if(const std::vector<std::string>& errors) {
    if (!errors.empty()) throw ValidationError(errors);
}

FlowSettings flow_for(const ExperimentPlan& plan, const ModelConfig& model, double& d) {
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    d = rd.num("d", 1000.0);
    const double t_max = rd.num("t_max", 100.0);
    if (!(d >= 2)) errors.push_back("model.d: must be >= 2");
    if (!(t_max > 0)) errors.push_back("model.t_max: must be positive");
    throw_if(errors);
    FlowSettings fs = default_flow_settings(model, d, t_max);
    fs.dt = rd.num("dt", fs.dt);
    fs.exit_fraction = rd.num("exit_fraction", fs.exit_fraction);
    fs.integrator = rd.parsed("integrator", parse_integrator, fs.integrator);
    fs.record_every = static_cast<int>(rd.integer("record_every", fs.record_every));
    fs.stop_at_exit = rd.flag("stop_at_exit", false);
    if (!(fs.dt > 0 && fs.dt <= t_max)) errors.push_back("model.dt: must lie in (0, t_max]");
    if (!(fs.exit_fraction > 0 && fs.exit_fraction <= 1)) errors.push_back("model.exit_fraction: must lie in (0, 1]");
    if (fs.record_every < 1) errors.push_back("model.record_every: must be >= 1");
    throw_if(errors);
    return fs;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string canonical(const ExperimentPlan& p, bool with_axes) {
    std::string s = "kind=" + to_string(p.kind) + "\n";
    for (const auto& [k, v] : p.settings) s += "model." + k + "=" + v + "\n";
    if (with_axes) {
        s += "mu=";
        for (double m : p.mus) s += format_number(m) + ",";
        s += "\nactivation=";
        for (const auto& a : p.activations) s += a + ",";
        s += "\nrank=";
        for (int r : p.ranks) s += std::to_string(r) + ",";
        s += "\nseed=";
        for (auto x : p.seeds) s += std::to_string(x) + ",";
        s += "\nemit=" + to_string(p.emit) + "\n";
    }
    return s;
}

std::string slug(const std::string& s) {
    std::string o;
    for (char c : s)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') o += c;
    return o;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& x : out) {
        const auto a = x.find_first_not_of(" \t"), b = x.find_last_not_of(" \t");
        x = a == std::string::npos ? "" : x.substr(a, b - a + 1);
    }
    out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
    return out;
}

void set_axis(ExperimentPlan& plan, const std::string& axis, const std::string& key, const std::string& value,
              std::map<std::string, std::map<std::string, std::string>>& ranged, std::vector<std::string>& errors) {
    if (key == "values") {
        const auto items = split_list(value);
        try {
            if (axis == "mu") {
                plan.mus.clear();
                for (const auto& x : items) plan.mus.push_back(std::stod(x));
            } else if (axis == "activation") {
                plan.activations = items;
            } else if (axis == "rank") {
                plan.ranks.clear();
                for (const auto& x : items) plan.ranks.push_back(std::stoi(x));
            } else {
                plan.seeds.clear();
                for (const auto& x : items) plan.seeds.push_back(std::stoull(x));
            }
        } catch (const std::exception&) {
            errors.push_back(axis + ".values: cannot parse '" + value + "'");
        }
    } else if ((key == "start" || key == "stop" || key == "step") && axis == "mu") {
        ranged[axis][key] = value;
    } else {
        errors.push_back(axis + "." + key + ": unknown key");
    }
}

void finish_ranges(ExperimentPlan& plan, std::map<std::string, std::map<std::string, std::string>>& ranged,
                   std::vector<std::string>& errors) {
    const auto it = ranged.find("mu");
    if (it == ranged.end()) return;
    const auto& r = it->second;
    if (!r.count("start") || !r.count("stop") || !r.count("step")) {
        errors.push_back("mu: a range needs start, stop and step");
        return;
    }
    try {
        const double lo = std::stod(r.at("start")), hi = std::stod(r.at("stop")), st = std::stod(r.at("step"));
        if (!(st > 0) || hi < lo) {
            errors.push_back("mu: need step > 0 and stop >= start");
            return;
        }
        plan.mus = grid(lo, hi, st);
    } catch (const std::exception&) {
        errors.push_back("mu: range values must be numbers");
    }
}

}  // namespace

ExperimentPlan default_plan(PlanKind kind) {
    ExperimentPlan p;
    p.kind = kind;
    p.seeds = {0};
    switch (kind) {
        case PlanKind::tau_curve:
            p.activations = {"linear", "erf", "sigmoid", "relu"};
            p.mus = grid(0.02, 0.98, 0.02);
            break;
        case PlanKind::singularity_scan:
            p.activations = {"hermite(3)", "hermite(5)", "hermite(7)", "hermite(9)"};
            break;
        case PlanKind::ode_run:
            p.activations = {"linear"};
            p.mus = {0.5};
            break;
        case PlanKind::sgd_run:
            p.activations = {"linear"};
            p.mus = {0.1, 0.5, 0.8, 0.9};
            p.settings = {{"epochs", "4000"}, {"record_every", "10"}};
            break;
        case PlanKind::committee_run:
            p.activations = {"linear"};
            p.mus = {0.1, 0.5, 0.9};
            p.ranks = {1, 2, 3};
            p.settings = {{"epochs", "5000"}, {"record_every", "25"}, {"n_test", "2000"}};
            break;
        case PlanKind::curriculum_run:
            p.activations = {"hermite(3)"};
            p.mus = {0.325};
            p.settings = {{"lr_base", "0.01"},   {"batch", "1000"},         {"epochs", "60000"},
                          {"m_switch", "0.5"},    {"sampler", "projected"},  {"record_every", "500"},
                          {"n_test", "2000"}};
            break;
        case PlanKind::compare:
            p.activations = {"linear"};
            p.mus = grid(0.1, 0.9, 0.1);
            p.seeds = {0, 1, 2};
            p.settings = {{"epochs", "20000"}, {"sampler", "projected"}, {"n_test", "0"}};
            break;
    }
    return p;
}

ExperimentPlan parse_plan(const std::string& ini_text, std::optional<PlanKind> kind) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(ini_text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ValidationError({std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
    }
    std::vector<std::string> errors;
    std::optional<PlanKind> file_kind;
    if (const auto plan_sec = tree.get_child_optional("plan")) {
        if (const auto k = plan_sec->get_optional<std::string>("kind")) {
            try {
                file_kind = parse_plan_kind(*k);
            } catch (const LookupError& e) {
                errors.push_back(std::string("plan.kind: ") + e.what());
            }
        }
    }
    if (kind && file_kind && *kind != *file_kind)
        errors.push_back("plan.kind: file says " + to_string(*file_kind) + " but the command is " + to_string(*kind));
    ExperimentPlan plan = default_plan(kind ? *kind : file_kind.value_or(PlanKind::tau_curve));
    if (!kind && !file_kind) errors.push_back("plan.kind: missing");

    std::map<std::string, std::map<std::string, std::string>> ranged;
    bool model_seen = false;
    for (const auto& [section, body] : tree) {
        if (!body.data().empty() && body.empty()) {
            errors.push_back(section + ": key outside a section");
            continue;
        }
        if (section == "plan") {
            for (const auto& [k, v] : body) {
                const auto val = v.get_value<std::string>();
                if (k == "kind") continue;
                if (k == "output")
                    plan.output_dir = val;
                else if (k == "emit") {
                    try {
                        plan.emit = parse_emit(val);
                    } catch (const LookupError& e) {
                        errors.push_back(std::string("plan.emit: ") + e.what());
                    }
                } else
                    errors.push_back("plan." + k + ": unknown key");
            }
        } else if (section == "model") {
            if (!model_seen) plan.settings.clear();  // a [model] section replaces the kind's defaults wholesale
            model_seen = true;
            for (const auto& [k, v] : body) plan.settings[k] = v.get_value<std::string>();
        } else if (section == "mu" || section == "activation" || section == "rank" || section == "seed") {
            for (const auto& [k, v] : body) set_axis(plan, section, k, v.get_value<std::string>(), ranged, errors);
        } else {
            errors.push_back(section + ": unknown section");
        }
    }
    finish_ranges(plan, ranged, errors);
    throw_if(errors);
    return plan;
}

ExperimentPlan load_plan(const std::string& path, std::optional<PlanKind> kind) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const LookupError& e) {
        throw ValidationError({std::string("config: ") + e.what()});
    }
    return parse_plan(text, kind);
}

void apply_override(ExperimentPlan& plan, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError({"--set: expected key=value, got '" + assignment + "'"});
    std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::string section = "model";
    if (const auto dot = key.find('.'); dot != std::string::npos) {
        section = key.substr(0, dot);
        key = key.substr(dot + 1);
    }
    std::vector<std::string> errors;
    if (section == "model") {
        plan.settings[key] = value;
    } else if (section == "plan") {
        if (key == "output")
            plan.output_dir = value;
        else if (key == "emit")
            plan.emit = parse_emit(value);
        else
            errors.push_back("plan." + key + ": unknown key");
    } else if (section == "mu" || section == "activation" || section == "rank" || section == "seed") {
        std::map<std::string, std::map<std::string, std::string>> ranged;
        set_axis(plan, section, key, value, ranged, errors);
    } else {
        errors.push_back(section + ": unknown section");
    }
    throw_if(errors);
}

void validate(const ExperimentPlan& plan) {
    std::vector<std::string> errors;
    const auto& allowed = allowed_keys(plan.kind);
    for (const auto& [k, v] : plan.settings)
        if (!allowed.count(k)) errors.push_back("model." + k + ": not a setting of " + to_string(plan.kind));
    if (plan.activations.empty()) errors.push_back("activation: grid is empty");
    for (const auto& a : plan.activations) {
        try {
            builtin(a);
        } catch (const std::exception& e) {
            errors.push_back("activation: " + std::string(e.what()));
        }
    }
    if (uses_mu(plan.kind)) {
        if (plan.mus.empty()) errors.push_back("mu: grid is empty");
        for (double m : plan.mus)
            if (!(m > 0.0 && m < 1.0)) {
                errors.push_back("mu: values must lie in (0,1), got " + format_number(m));
                break;
            }
    }
    if (plan.kind == PlanKind::committee_run) {
        if (plan.ranks.empty()) errors.push_back("rank: grid is empty");
        for (int r : plan.ranks)
            if (r < 1) errors.push_back("rank: values must be >= 1");
    }
    if (uses_seed(plan.kind) && plan.seeds.empty()) errors.push_back("seed: grid is empty");
    if (plan.output_dir.empty()) errors.push_back("plan.output: empty path");
    throw_if(errors);

    // Build one representative config per kind so bad values surface before any work starts.
    const auto& act = plan.activations.front();
    const double mu = plan.mus.empty() ? 0.5 : plan.mus.front();
    switch (plan.kind) {
        case PlanKind::tau_curve:
        case PlanKind::singularity_scan:
        case PlanKind::ode_run: {
            double d = 0.0;
            flow_for(plan, model_for(plan, act, mu), d);
            break;
        }
        case PlanKind::committee_run:
            for (int r : plan.ranks) validate(committee_for(plan, act, mu, r, plan.seeds.front()));
            break;
        default: validate(sim_for(plan, act, mu, plan.seeds.front()));
    }
}

std::string plan_hash(const ExperimentPlan& plan) { return hex(fnv1a(canonical(plan, true))); }

ModelConfig model_for(const ExperimentPlan& plan, const std::string& activation, double mu) {
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    const ActivationSpec student = builtin(activation);
    ActivationSpec teacher = rd.has("teacher") ? builtin(rd.text("teacher", activation)) : student;
    teacher = transform_teacher(teacher, rd.parsed("teacher_transform", parse_label_transform, LabelTransform::identity));
    const auto k_max = rd.integer("k_max", 25);
    if (k_max < 1 || k_max > 80) errors.push_back("model.k_max: must lie in [1, 80]");
    std::optional<double> delta;
    if (rd.has("delta")) {
        delta = rd.num("delta", 1.0);
        if (!(*delta > 0)) errors.push_back("model.delta: must be positive");
    }
    throw_if(errors);
    return make_model(teacher, student, mu, static_cast<int>(k_max), delta);
}

SimConfig sim_for(const ExperimentPlan& plan, const std::string& activation, double mu, std::uint64_t seed) {
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    SimConfig c;
    c.student = builtin(activation);
    c.teacher = rd.has("teacher") ? builtin(rd.text("teacher", activation)) : c.student;
    c.teacher_transform = rd.parsed("teacher_transform", parse_label_transform, LabelTransform::identity);
    c.mu = mu;
    c.seed = seed;
    c.d = rd.integer("d", c.d);
    c.batch = rd.integer("batch", c.batch);
    if (rd.has("lr") && rd.has("lr_base")) errors.push_back("model.lr_base: give lr or lr_base, not both");
    c.lr = rd.has("lr_base") ? scaled_lr(rd.num("lr_base", 0.01), c.student) : rd.num("lr", c.lr);
    c.epochs = rd.integer("epochs", c.epochs);
    c.pretrain_model = rd.parsed("pretrain_model", parse_pretrain_model, c.pretrain_model);
    c.loss = rd.parsed("loss", parse_loss_kind, c.loss);
    c.sampler = rd.parsed("sampler", parse_sampler, c.sampler);
    c.n_test = rd.integer("n_test", c.n_test);
    c.empirical_exit = rd.num("empirical_exit", c.empirical_exit);
    c.stop = rd.parsed("stop", parse_stop_rule, c.stop);
    c.stop_delay = rd.integer("stop_delay", c.stop_delay);
    if (plan.kind == PlanKind::curriculum_run) {
        Curriculum cur;
        cur.stage_one = rd.parsed("stage_one", parse_label_transform, LabelTransform::square);
        if (rd.has("switch_epoch")) cur.switch_epoch = rd.integer("switch_epoch", 0);
        if (rd.has("m_switch")) cur.m_switch = rd.num("m_switch", 0.5);
        c.curriculum = cur;
    }
    if (rd.integer("record_every", 1) < 1) errors.push_back("model.record_every: must be >= 1");
    throw_if(errors);
    validate(c);
    return c;
}

CommitteeConfig committee_for(const ExperimentPlan& plan, const std::string& activation, double mu, int R,
                              std::uint64_t seed) {
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    CommitteeConfig c;
    c.K = static_cast<int>(rd.integer("K", 4));
    const auto adapted = rd.integer("adapted", 2);
    if (adapted < 1 || adapted > c.K) errors.push_back("model.adapted: must lie in [1, K]");
    c.mu_k.assign(static_cast<std::size_t>(std::max(c.K, 0)), 1.0);
    for (long long k = 0; k < std::min<long long>(adapted, c.K); ++k) c.mu_k[static_cast<std::size_t>(k)] = mu;
    c.R = R;
    c.activation = activation;
    c.seed = seed;
    c.d = rd.integer("d", c.d);
    c.lr = rd.num("lr", c.lr);
    c.batch = rd.integer("batch", c.batch);
    c.epochs = rd.integer("epochs", c.epochs);
    c.readout = rd.parsed("readout", parse_readout, c.readout);
    c.sampler = rd.parsed("sampler", parse_sampler, c.sampler);
    c.n_test = rd.integer("n_test", c.n_test);
    c.onset_threshold = rd.num("onset_threshold", c.onset_threshold);
    c.stop_at_onset = rd.flag("stop_at_onset", c.stop_at_onset);
    c.stop_delay = rd.integer("stop_delay", c.stop_delay);
    if (rd.integer("record_every", 1) < 1) errors.push_back("model.record_every: must be >= 1");
    throw_if(errors);
    validate(c);
    return c;
}

// ---------------------------------------------------------------- tables

namespace {

void add_meta(CsvTable& t, const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& p : kv) t.meta.push_back(p);
}

std::string opt_text(const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : "none"; }

std::int64_t record_stride(const ExperimentPlan& plan, std::int64_t epochs) {
    const auto it = plan.settings.find("record_every");
    if (it != plan.settings.end()) return std::stoll(it->second);
    return std::max<std::int64_t>(1, epochs / 2000);
}

std::vector<std::pair<std::string, std::string>> model_meta(const ModelConfig& m) {
    return {{"teacher", m.teacher.name},
            {"student", m.student.name},
            {"k_max", std::to_string(m.k_max)},
            {"delta", format_number(m.delta)}};
}

}  // namespace

CsvTable tau_table(const ExperimentPlan& plan, const std::string& activation) {
    const ModelConfig base = model_for(plan, activation, plan.mus.front());
    CsvTable t;
    t.meta = {{"kind", "tau_curve"}};
    add_meta(t, model_meta(base));
    t.columns = {"mu", "A", "B", "lambda_plus", "tau", "converged_flag"};
    for (const auto& lin : tau_curve(base, plan.mus))
        t.add_row({lin.mu, lin.A, lin.B, lin.lambda_plus, lin.tau, static_cast<long long>(lin.converged)});
    return t;
}

CsvTable singularity_table(const ExperimentPlan& plan, const std::string& activation) {
    const ModelConfig base = model_for(plan, activation, 0.5);
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    SingularityScan scan;
    scan.lo = rd.num("scan_lo", scan.lo);
    scan.hi = rd.num("scan_hi", scan.hi);
    scan.step = rd.num("scan_step", scan.step);
    if (!(scan.lo > 0 && scan.hi < 1 && scan.lo < scan.hi)) errors.push_back("model.scan_lo/scan_hi: need 0 < lo < hi < 1");
    if (!(scan.step > 0 && scan.step <= 1e-3)) errors.push_back("model.scan_step: must lie in (0, 1e-3]");
    throw_if(errors);
    const auto roots = find_singularities(base, scan);
    CsvTable t;
    t.meta = {{"kind", "singularity_scan"}};
    add_meta(t, model_meta(base));
    t.meta.emplace_back("scan", format_number(scan.lo) + ".." + format_number(scan.hi) + " step " +
                                    format_number(scan.step));
    t.meta.emplace_back("root_count", std::to_string(roots.size()));
    t.columns = {"root_index", "mu", "A"};
    LossModel lm(base);
    for (std::size_t i = 0; i < roots.size(); ++i)
        t.add_row({static_cast<long long>(i), roots[i], lm.linearize_at(roots[i]).A});
    return t;
}

CsvTable ode_table(const ExperimentPlan& plan, const std::string& activation, double mu) {
    const ModelConfig model = model_for(plan, activation, mu);
    std::vector<std::string> errors;
    Reader rd(plan.settings, errors);
    double d = 0.0;
    const FlowSettings fs = flow_for(plan, model, d);
    const auto lin = linearize_search_phase(model);
    const auto tr = integrate_flow(model, fs);
    CsvTable t;
    t.meta = {{"kind", "ode_run"}};
    add_meta(t, model_meta(model));
    t.meta.insert(t.meta.end(), {{"mu", format_number(mu)},
                                 {"d", format_number(d)},
                                 {"dt", format_number(fs.dt)},
                                 {"integrator", to_string(fs.integrator)},
                                 {"A", format_number(lin.A)},
                                 {"B", format_number(lin.B)},
                                 {"tau", format_number(lin.tau)},
                                 {"t_exit", tr.t_exit ? format_number(*tr.t_exit) : "none"},
                                 {"exit_reason", to_string(tr.exit_reason)}});
    t.columns = {"t", "u", "m", "m_eff", "r", "loss"};
    for (std::size_t i = 0; i < tr.size(); ++i) t.add_row({tr.times[i], tr.u[i], tr.m[i], tr.m_eff[i], tr.r[i], tr.loss[i]});
    return t;
}

CsvTable sgd_table(const SimConfig& cfg, const SgdTrajectory& tr) {
    CsvTable t;
    t.meta = {{"kind", cfg.curriculum ? "curriculum_run" : "sgd_run"}};
    add_meta(t, describe(cfg));
    t.meta.insert(t.meta.end(), {{"empirical_exit_epoch", opt_text(tr.empirical_exit_epoch)},
                                 {"theory_exit_epoch", opt_text(tr.theory_exit_epoch)},
                                 {"switch_epoch", opt_text(tr.switch_epoch)},
                                 {"samples", std::to_string(tr.samples)}});
    t.columns = {"t_epoch", "m", "u", "m_eff", "r", "train_mse", "test_mse", "t_flow", "abs_m", "abs_m_eff"};
    for (std::size_t i = 0; i < tr.size(); ++i)
        t.add_row({static_cast<long long>(tr.epoch[i]), tr.m[i], tr.u[i], tr.m_eff[i], tr.r[i], tr.train_mse[i],
                   tr.test_mse[i], tr.t_flow[i], std::abs(tr.m[i]), std::abs(tr.m_eff[i])});
    return t;
}

CsvTable committee_table(const CommitteeConfig& cfg, const CommitteeTrajectory& tr) {
    CsvTable t;
    t.meta = {{"kind", "committee_run"}};
    add_meta(t, describe(cfg));
    t.meta.emplace_back("onset_epoch", opt_text(tr.onset_epoch));
    t.columns = {"epoch", "t_flow", "test_mse"};
    for (int k = 1; k <= cfg.K; ++k) t.columns.push_back("m_eff_" + std::to_string(k));
    for (int k = 1; k <= cfg.K; ++k) t.columns.push_back("test_mse_" + std::to_string(k));
    t.columns.insert(t.columns.end(), {"max_abs_m", "max_abs_q"});
    const auto adapted = adapted_directions(cfg);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        std::vector<Cell> row = {static_cast<long long>(tr.epoch[i]), tr.t_flow[i], tr.test_mse[i]};
        for (int k = 0; k < cfg.K; ++k) row.emplace_back(tr.m_eff[i][k]);
        for (int k = 0; k < cfg.K; ++k) row.emplace_back(tr.test_mse_k[i][k]);
        double mx = 0.0;
        for (int k : adapted) mx = std::max(mx, tr.M[i].row(k).cwiseAbs().maxCoeff());
        Eigen::MatrixXd off = tr.Q[i];
        off.diagonal().setZero();
        row.emplace_back(mx);
        row.emplace_back(off.size() ? off.cwiseAbs().maxCoeff() : 0.0);
        t.add_row(row);
    }
    return t;
}

PlotSpec plot_for(PlanKind kind, const CsvTable& table) {
    PlotSpec p;
    const auto* teacher = table.meta_value("teacher");
    const auto* student = table.meta_value("student");
    const std::string who = student ? *student + (teacher && *teacher != *student ? " / " + *teacher : "") : "";
    switch (kind) {
        case PlanKind::tau_curve:
            p.x = "mu";
            p.y = {"tau"};
            p.log_y = true;
            p.title = "tau(mu) " + who;
            break;
        case PlanKind::singularity_scan:
            p.x = "root_index";
            p.y = {"mu"};
            p.title = "roots of A(mu) " + who;
            break;
        case PlanKind::ode_run:
            p.x = "t";
            p.y = {"u", "m", "m_eff"};
            p.title = "order parameters " + who;
            break;
        case PlanKind::sgd_run:
        case PlanKind::curriculum_run:
            p.x = "t_epoch";
            p.y = {"m", "m_eff", "test_mse"};
            p.title = "SGD " + who;
            break;
        case PlanKind::committee_run:
            p.x = "epoch";
            p.y = {"test_mse", "max_abs_m"};
            p.title = "committee";
            break;
        case PlanKind::compare:
            p.x = "mu";
            p.y = {"observed", "fitted"};
            p.title = "exit epochs vs theory";
            break;
    }
    return p;
}

// ---------------------------------------------------------------- comparison

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs two equal series of length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    return boost::math::statistics::correlation_coefficient(ranks(a), ranks(b));
}

namespace {

// Dip: the smallest value sits after the first grid point by a visible margin.
bool has_dip(const std::vector<double>& v) {
    if (v.size() < 3) return false;
    const auto it = std::min_element(v.begin(), v.end());
    return it != v.begin() && *it < v.front() * (1.0 - 1e-3);
}

}  // namespace

CompareReport compare_theory_experiment(const CsvTable& theory, const CsvTable& experiment,
                                        const CompareMapping& mapping) {
    const auto t_mu = theory.numeric_column("mu");
    const auto t_tau = theory.numeric_column("tau");
    const auto e_mu = experiment.numeric_column("mu");
    const auto e_exit = experiment.numeric_column(mapping.exit_column);
    if (!(mapping.d > 1) || !(mapping.flow_time_per_step > 0)) throw InvalidArgument("mapping needs d > 1 and a positive step");

    auto same = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); };
    std::vector<double> grid_t = t_mu, grid_e;
    for (double m : e_mu)
        if (std::none_of(grid_e.begin(), grid_e.end(), [&](double g) { return same(g, m); })) grid_e.push_back(m);
    std::sort(grid_e.begin(), grid_e.end());
    std::sort(grid_t.begin(), grid_t.end());
    bool match = grid_t.size() == grid_e.size();
    for (std::size_t i = 0; match && i < grid_t.size(); ++i) match = same(grid_t[i], grid_e[i]);
    if (!match) throw AlignmentError("theory and experiment mu grids differ");

    CompareReport rep;
    const double log_d = std::log(mapping.d);
    for (std::size_t i = 0; i < t_mu.size(); ++i) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t j = 0; j < e_mu.size(); ++j)
            if (same(e_mu[j], t_mu[i]) && std::isfinite(e_exit[j])) {
                sum += e_exit[j];
                ++n;
            }
        rep.mu.push_back(t_mu[i]);
        rep.tau.push_back(t_tau[i]);
        rep.predicted.push_back(0.5 * t_tau[i] * log_d / mapping.flow_time_per_step);
        rep.observed.push_back(n ? sum / n : std::numeric_limits<double>::quiet_NaN());
        if (!std::isfinite(t_tau[i]) || n == 0) rep.flagged_mu.push_back(t_mu[i]);
    }

    std::vector<double> px, oy;
    for (std::size_t i = 0; i < rep.mu.size(); ++i)
        if (std::isfinite(rep.predicted[i]) && std::isfinite(rep.observed[i])) {
            px.push_back(rep.predicted[i]);
            oy.push_back(rep.observed[i]);
        }
    if (px.size() < 2) throw AlignmentError("fewer than two comparable mu values");
    const bool flat = std::all_of(px.begin(), px.end(), [&](double v) { return v == px.front(); });
    if (flat) {
        rep.scale = 0.0;
        rep.offset = std::accumulate(oy.begin(), oy.end(), 0.0) / static_cast<double>(oy.size());
    } else {
        const auto [c0, c1] = boost::math::statistics::simple_ordinary_least_squares(px, oy);
        rep.offset = c0;
        rep.scale = c1;
    }
    for (std::size_t i = 0; i < rep.mu.size(); ++i) {
        const double f = rep.scale * rep.predicted[i] + rep.offset;
        rep.fitted.push_back(f);
        const double res = std::isfinite(rep.observed[i]) && std::isfinite(f)
                               ? (rep.observed[i] - f) / std::max(std::abs(rep.observed[i]), 1e-300)
                               : std::numeric_limits<double>::quiet_NaN();
        rep.rel_residual.push_back(res);
        if (std::isfinite(res)) rep.max_abs_rel_residual = std::max(rep.max_abs_rel_residual, std::abs(res));
    }
    std::vector<double> tt, oo;
    for (std::size_t i = 0; i < rep.mu.size(); ++i)
        if (std::isfinite(rep.tau[i]) && std::isfinite(rep.observed[i])) {
            tt.push_back(rep.tau[i]);
            oo.push_back(rep.observed[i]);
        }
    rep.spearman = spearman_correlation(tt, oo);
    rep.dip_theory = has_dip(tt);
    rep.dip_experiment = has_dip(oo);
    return rep;
}

CsvTable CompareReport::table() const {
    CsvTable t;
    std::string flagged;
    for (double m : flagged_mu) flagged += (flagged.empty() ? "" : " ") + format_number(m);
    t.meta = {{"kind", "compare"},
              {"spearman", format_number(spearman)},
              {"scale", format_number(scale)},
              {"offset", format_number(offset)},
              {"max_abs_rel_residual", format_number(max_abs_rel_residual)},
              {"dip_theory", dip_theory ? "true" : "false"},
              {"dip_experiment", dip_experiment ? "true" : "false"},
              {"dip_consistent", dip_theory == dip_experiment ? "true" : "false"},
              {"flagged_mu", flagged.empty() ? "none" : flagged}};
    t.columns = {"mu", "tau", "predicted", "observed", "fitted", "rel_residual"};
    for (std::size_t i = 0; i < mu.size(); ++i)
        t.add_row({mu[i], tau[i], predicted[i], observed[i], fitted[i], rel_residual[i]});
    return t;
}

// ---------------------------------------------------------------- runner

bool Manifest::all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
}

bool Manifest::any_blowup() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.error_kind == "numerical_blowup"; });
}

std::string Manifest::to_json() const {
    nlohmann::ordered_json j;
    j["plan_hash"] = plan_hash;
    j["kind"] = to_string(kind);
    j["output_dir"] = output_dir;
    j["status"] = all_ok() ? "ok" : "partial_failure";
    j["wall_time_s"] = wall_time_s;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : cells) {
        nlohmann::ordered_json cj;
        cj["id"] = c.id;
        cj["params"] = c.params;
        cj["config_hash"] = c.config_hash;
        cj["status"] = c.ok ? "ok" : "failed";
        if (!c.ok) {
            cj["error_kind"] = c.error_kind;
            cj["error"] = c.error;
        }
        cj["files"] = c.files;
        cj["wall_time_s"] = c.wall_time_s;
        j["cells"].push_back(cj);
    }
    j["files"] = files;
    return j.dump(2) + "\n";
}

unsigned worker_threads() {
    if (const char* env = std::getenv("SEARCHPHASE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct CellTask {
    std::string id;
    std::map<std::string, std::string> params;
    std::function<CsvTable()> run;
};

std::string mu_text(double mu) { return format_number(mu); }

std::vector<CellTask> make_cells(const ExperimentPlan& plan) {
    std::vector<CellTask> cells;
    const auto kind = plan.kind;
    for (const auto& act : plan.activations) {
        const std::string a = slug(act);
        switch (kind) {
            case PlanKind::tau_curve:
                cells.push_back({"tau_" + a, {{"activation", act}}, [&plan, act] { return tau_table(plan, act); }});
                break;
            case PlanKind::singularity_scan:
                cells.push_back({"singularity_" + a, {{"activation", act}},
                                 [&plan, act] { return singularity_table(plan, act); }});
                break;
            case PlanKind::ode_run:
                for (double mu : plan.mus)
                    cells.push_back({"ode_" + a + "_mu" + mu_text(mu),
                                     {{"activation", act}, {"mu", mu_text(mu)}},
                                     [&plan, act, mu] { return ode_table(plan, act, mu); }});
                break;
            case PlanKind::sgd_run:
                for (double mu : plan.mus)
                    for (auto seed : plan.seeds)
                        cells.push_back({"sgd_" + a + "_mu" + mu_text(mu) + "_seed" + std::to_string(seed),
                                         {{"activation", act}, {"mu", mu_text(mu)}, {"seed", std::to_string(seed)}},
                                         [&plan, act, mu, seed] {
                                             const auto cfg = sim_for(plan, act, mu, seed);
                                             return sgd_table(cfg, run_simulation(cfg, record_stride(plan, cfg.epochs)));
                                         }});
                break;
            case PlanKind::curriculum_run:
                for (double mu : plan.mus)
                    for (auto seed : plan.seeds)
                        for (const std::string schedule : {"single", "two_stage"})
                            cells.push_back(
                                {"curriculum_" + a + "_mu" + mu_text(mu) + "_seed" + std::to_string(seed) + "_" + schedule,
                                 {{"activation", act}, {"mu", mu_text(mu)}, {"seed", std::to_string(seed)}, {"schedule", schedule}},
                                 [&plan, act, mu, seed, schedule] {
                                     auto cfg = sim_for(plan, act, mu, seed);
                                     if (schedule == "single") cfg.curriculum.reset();
                                     auto t = sgd_table(cfg, run_simulation(cfg, record_stride(plan, cfg.epochs)));
                                     t.meta.front().second = "curriculum_run";
                                     t.meta.emplace_back("schedule", schedule);
                                     return t;
                                 }});
                break;
            case PlanKind::committee_run:
                for (double mu : plan.mus)
                    for (int R : plan.ranks)
                        for (auto seed : plan.seeds)
                            cells.push_back(
                                {"committee_" + a + "_mu" + mu_text(mu) + "_R" + std::to_string(R) + "_seed" + std::to_string(seed),
                                 {{"activation", act}, {"mu", mu_text(mu)}, {"R", std::to_string(R)}, {"seed", std::to_string(seed)}},
                                 [&plan, act, mu, R, seed] {
                                     const auto cfg = committee_for(plan, act, mu, R, seed);
                                     return committee_table(cfg, committee_sgd(cfg, record_stride(plan, cfg.epochs)));
                                 }});
                break;
            case PlanKind::compare:
                cells.push_back({"compare_" + a, {{"activation", act}}, [&plan, act] {
                                     ExperimentPlan theory = plan;
                                     theory.kind = PlanKind::tau_curve;
                                     theory.settings.clear();
                                     if (plan.settings.count("k_max")) theory.settings["k_max"] = plan.settings.at("k_max");
                                     if (plan.settings.count("teacher")) theory.settings["teacher"] = plan.settings.at("teacher");
                                     if (plan.settings.count("teacher_transform"))
                                         theory.settings["teacher_transform"] = plan.settings.at("teacher_transform");
                                     const CsvTable th = tau_table(theory, act);

                                     CsvTable ex;
                                     ex.columns = {"mu", "seed", "empirical_exit_epoch"};
                                     double step = 0.0, d = 0.0;
                                     for (double mu : plan.mus)
                                         for (auto seed : plan.seeds) {
                                             auto cfg = sim_for(plan, act, mu, seed);
                                             if (!plan.settings.count("stop")) cfg.stop = StopRule::empirical_exit;
                                             const auto tr = run_simulation(cfg, std::max<std::int64_t>(1, cfg.epochs));
                                             step = flow_time_per_step(cfg);
                                             d = static_cast<double>(cfg.d);
                                             ex.add_row({mu, static_cast<long long>(seed),
                                                         tr.empirical_exit_epoch ? static_cast<double>(*tr.empirical_exit_epoch)
                                                                                 : std::numeric_limits<double>::quiet_NaN()});
                                         }
                                     const auto rep = compare_theory_experiment(th, ex, {d, step, "empirical_exit_epoch"});
                                     auto t = rep.table();
                                     t.meta.insert(t.meta.begin() + 1, {{"activation", act},
                                                                        {"d", format_number(d)},
                                                                        {"flow_time_per_step", format_number(step)}});
                                     return t;
                                 }});
                break;
        }
    }
    return cells;
}

// Plan-level summary built from cell metadata, in cell order.
std::optional<CsvTable> summary(const ExperimentPlan& plan, const std::vector<CellTask>& tasks,
                                const std::vector<std::optional<CsvTable>>& tables) {
    CsvTable s;
    s.meta = {{"kind", to_string(plan.kind) + "_summary"}};
    auto meta = [](const CsvTable& t, const std::string& k) {
        const auto* v = t.meta_value(k);
        return v && *v != "none" ? *v : std::string("nan");
    };
    auto last = [](const CsvTable& t, const std::string& col) {
        const auto v = t.numeric_column(col);
        return v.empty() ? std::string("nan") : format_number(v.back());
    };
    switch (plan.kind) {
        case PlanKind::sgd_run:
        case PlanKind::curriculum_run: {
            s.columns = {"activation", "mu", "seed"};
            if (plan.kind == PlanKind::curriculum_run) s.columns.push_back("schedule");
            s.columns.insert(s.columns.end(), {"empirical_exit_epoch", "theory_exit_epoch", "switch_epoch", "final_m",
                                               "final_m_eff"});
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                if (!tables[i]) continue;
                const auto& t = *tables[i];
                std::vector<Cell> row = {tasks[i].params.at("activation"), tasks[i].params.at("mu"),
                                         tasks[i].params.at("seed")};
                if (plan.kind == PlanKind::curriculum_run) row.emplace_back(tasks[i].params.at("schedule"));
                row.insert(row.end(), {meta(t, "empirical_exit_epoch"), meta(t, "theory_exit_epoch"),
                                       meta(t, "switch_epoch"), last(t, "m"), last(t, "m_eff")});
                s.add_row(row);
            }
            return s;
        }
        case PlanKind::committee_run:
            s.columns = {"activation", "mu", "R", "seed", "onset_epoch", "final_test_mse"};
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                if (!tables[i]) continue;
                const auto& p = tasks[i].params;
                s.add_row({p.at("activation"), p.at("mu"), p.at("R"), p.at("seed"), meta(*tables[i], "onset_epoch"),
                           last(*tables[i], "test_mse")});
            }
            return s;
        default: return std::nullopt;
    }
}

std::string classify(const std::exception_ptr& e, std::string& message) {
    try {
        std::rethrow_exception(e);
    } catch (const ValidationError& x) {
        message = x.what();
        return "validation";
    } catch (const NumericalBlowup& x) {
        message = x.what();
        return "numerical_blowup";
    } catch (const DegenerateStateError& x) {
        message = x.what();
        return "degenerate_state";
    } catch (const std::exception& x) {
        message = x.what();
        return "other";
    }
}

}  // namespace

Manifest run_plan(const ExperimentPlan& plan, unsigned threads) {
    validate(plan);
    const auto t0 = std::chrono::steady_clock::now();
    std::error_code ec;
    fs::create_directories(plan.output_dir, ec);
    if (ec || !fs::is_directory(plan.output_dir))
        throw ValidationError({"plan.output: cannot create directory '" + plan.output_dir + "'"});
    {
        const fs::path probe = fs::path(plan.output_dir) / ".write_probe";
        try {
            write_text_file(probe.string(), "");
        } catch (const std::exception&) {
            throw ValidationError({"plan.output: directory '" + plan.output_dir + "' is not writable"});
        }
        fs::remove(probe, ec);
    }

    const auto tasks = make_cells(plan);
    const std::string base_canon = canonical(plan, false);
    std::vector<CellResult> results(tasks.size());
    std::vector<std::optional<CsvTable>> tables(tasks.size());
    std::atomic<std::size_t> next{0};
    const bool want_csv = plan.emit != Emit::svg, want_svg = plan.emit != Emit::csv;

    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const auto& task = tasks[i];
            CellResult& r = results[i];
            r.id = task.id;
            r.params = task.params;
            std::string canon = base_canon;
            for (const auto& [k, v] : task.params) canon += "cell." + k + "=" + v + "\n";
            r.config_hash = hex(fnv1a(canon));
            const auto c0 = std::chrono::steady_clock::now();
            try {
                CsvTable t = task.run();
                t.meta.emplace_back("config_hash", r.config_hash);
                const std::string csv = to_csv(t);
                // SVG is rendered from the CSV text, never from in-memory state
                if (want_csv) {
                    write_text_file((fs::path(plan.output_dir) / (task.id + ".csv")).string(), csv);
                    r.files.push_back(task.id + ".csv");
                }
                if (want_svg) {
                    write_text_file((fs::path(plan.output_dir) / (task.id + ".svg")).string(),
                                    render_svg(csv, plot_for(plan.kind, t)));
                    r.files.push_back(task.id + ".svg");
                }
                tables[i] = std::move(t);
                r.ok = true;
            } catch (...) {
                r.ok = false;
                r.error_kind = classify(std::current_exception(), r.error);
            }
            r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(threads ? threads : worker_threads(),
                                                       static_cast<unsigned>(std::max<std::size_t>(1, tasks.size()))));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    Manifest m;
    m.plan_hash = plan_hash(plan);
    m.kind = plan.kind;
    m.output_dir = plan.output_dir;
    m.cells = std::move(results);
    for (const auto& c : m.cells) m.files.insert(m.files.end(), c.files.begin(), c.files.end());
    if (auto s = summary(plan, tasks, tables)) {
        s->meta.emplace_back("plan_hash", m.plan_hash);
        write_text_file((fs::path(plan.output_dir) / "summary.csv").string(), to_csv(*s));
        m.files.push_back("summary.csv");
    }
    m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text_file((fs::path(plan.output_dir) / "manifest.json").string(), m.to_json());
    return m;
}

}  // namespace searchphase
