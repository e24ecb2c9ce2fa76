#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <set>

#include "searchphase/errors.hpp"
#include "searchphase/plan.hpp"

using namespace searchphase;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("searchphase_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

bool mentions(const ValidationError& e, const std::string& field) {
    return std::any_of(e.fields().begin(), e.fields().end(),
                       [&](const std::string& f) { return f.rfind(field, 0) == 0; });
}

std::vector<std::string> fields_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ValidationError& e) {
        return e.fields();
    }
    return {};
}

// rank by counting, ties get the mean of their positions
std::vector<double> naive_ranks(const std::vector<double>& v) {
    std::vector<double> r;
    for (double x : v) {
        double less = 0, equal = 0;
        for (double y : v) {
            less += y < x;
            equal += y == x;
        }
        r.push_back(less + (equal + 1.0) / 2.0);
    }
    return r;
}

double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

ExperimentPlan small_sgd_plan(const fs::path& out) {
    auto plan = default_plan(PlanKind::sgd_run);
    plan.settings = {{"d", "200"}, {"batch", "100"}, {"epochs", "150"}, {"sampler", "projected"},
                     {"n_test", "500"}, {"record_every", "5"}};
    plan.mus = {0.3, 0.6};
    plan.seeds = {0, 1};
    plan.output_dir = out.string();
    plan.emit = Emit::both;
    return plan;
}

std::set<std::string> dir_listing(const fs::path& dir) {
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
    return names;
}

}  // namespace

TEST_CASE("INI plans: sections, ranges and per-axis values") {
    const auto plan = parse_plan(R"([plan]
kind = committee
output = results/c
emit = both
[model]
d = 500
epochs = 200
[mu]
start = 0.1
stop = 0.5
step = 0.2
[rank]
values = 1, 3
[seed]
values = 4, 5, 6
[activation]
values = linear
)");
    CHECK(plan.kind == PlanKind::committee_run);
    CHECK(plan.output_dir == "results/c");
    CHECK(plan.emit == Emit::both);
    CHECK(plan.settings.at("d") == "500");
    REQUIRE(plan.mus.size() == 3);
    CHECK(plan.mus[0] == doctest::Approx(0.1));
    CHECK(plan.mus[2] == doctest::Approx(0.5));
    CHECK(plan.ranks == std::vector<int>{1, 3});
    CHECK(plan.seeds == std::vector<std::uint64_t>{4, 5, 6});
    CHECK_NOTHROW(validate(plan));

    // activation names with parentheses survive the list split
    const auto sing = parse_plan("[plan]\nkind = singularity\n[activation]\nvalues = hermite(3), hermite(5)\n");
    CHECK(sing.activations == std::vector<std::string>{"hermite(3)", "hermite(5)"});
}

TEST_CASE("validation lists every offending field") {
    const auto f = fields_of([] {
        parse_plan("[plan]\nkind = sgd\ncolour = red\n[bogus]\nx = 1\n[mu]\nvalues = 0.1, zz\n");
    });
    CHECK(std::find(f.begin(), f.end(), "plan.colour: unknown key") != f.end());
    CHECK(std::find(f.begin(), f.end(), "bogus: unknown section") != f.end());
    CHECK(std::any_of(f.begin(), f.end(), [](const std::string& s) { return s.rfind("mu.values", 0) == 0; }));

    auto plan = default_plan(PlanKind::tau_curve);
    plan.mus.clear();
    plan.activations = {"linear", "nosuch"};
    try {
        validate(plan);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(mentions(e, "mu"));
        CHECK(mentions(e, "activation"));
    }

    auto sgd = default_plan(PlanKind::sgd_run);
    sgd.settings = {{"lr", "-1"}, {"batch", "0"}, {"k_max", "3"}};
    const auto g = fields_of([&] { validate(sgd); });
    CHECK(std::any_of(g.begin(), g.end(), [](const std::string& s) { return s.find("k_max") != std::string::npos; }));

    sgd.settings = {{"lr", "-1"}, {"batch", "0"}};
    const auto h = fields_of([&] { validate(sgd); });
    CHECK(h.size() >= 2);

    auto mu_range = default_plan(PlanKind::ode_run);
    mu_range.mus = {0.5, 1.0};
    CHECK_THROWS_AS(validate(mu_range), ValidationError);

    CHECK_THROWS_AS(parse_plan("[model]\nd = 10\n"), ValidationError);  // no kind anywhere
    CHECK_THROWS_AS(parse_plan("[plan]\nkind = sgd\n", PlanKind::tau_curve), ValidationError);
}

TEST_CASE("overrides and plan hash") {
    auto plan = default_plan(PlanKind::sgd_run);
    const auto h0 = plan_hash(plan);
    CHECK(h0.size() == 16);
    CHECK(plan_hash(default_plan(PlanKind::sgd_run)) == h0);

    apply_override(plan, "lr=0.1");
    CHECK(plan.settings.at("lr") == "0.1");
    CHECK(plan_hash(plan) != h0);
    apply_override(plan, "plan.emit=svg");
    CHECK(plan.emit == Emit::svg);
    apply_override(plan, "mu.values=0.2,0.4");
    CHECK(plan.mus == std::vector<double>{0.2, 0.4});
    CHECK_THROWS_AS(apply_override(plan, "no_equals_sign"), ValidationError);
    CHECK_THROWS_AS(apply_override(plan, "nosection.key=1"), ValidationError);

    // lr_base is scaled by the student's delta
    auto he = default_plan(PlanKind::sgd_run);
    he.settings = {{"lr_base", "0.01"}};
    const auto cfg = sim_for(he, "hermite(3)", 0.5, 0);
    CHECK(cfg.lr == doctest::Approx(0.01 / 18.0).epsilon(1e-14));
    he.settings["lr"] = "0.1";
    CHECK_THROWS_AS(sim_for(he, "hermite(3)", 0.5, 0), ValidationError);
}

TEST_CASE("CSV format: metadata header, LF endings, 12 significant digits") {
    CsvTable t;
    t.meta = {{"kind", "demo"}};
    t.columns = {"a", "b", "c"};
    t.add_row({1.0 / 3.0, static_cast<long long>(7), std::string("x")});
    t.add_row({std::numeric_limits<double>::infinity(), static_cast<long long>(-1), std::string("y")});
    const std::string csv = to_csv(t);
    CHECK(csv == "# kind: demo\na,b,c\n0.333333333333,7,x\ninf,-1,y\n");
    const auto back = parse_csv(csv);
    CHECK(back.columns == t.columns);
    CHECK(back.rows == t.rows);
    CHECK(*back.meta_value("kind") == "demo");
    CHECK_THROWS_AS(parse_csv("a,b\n1,2,3\n"), AlignmentError);
    t.add_row({std::string("p,q"), 1.0, 2.0});
    CHECK_THROWS_AS(to_csv(t), InvalidArgument);
}

TEST_CASE("tau plan: one CSV per cell, complete manifest, closed-form values") {
    const auto out = scratch("tau");
    auto plan = default_plan(PlanKind::tau_curve);
    plan.mus = {0.25, 0.5, 0.75};
    plan.output_dir = out.string();
    plan.emit = Emit::both;
    const auto man = run_plan(plan, 2);
    REQUIRE(man.all_ok());
    CHECK(man.cells.size() == plan.activations.size());

    // every listed file exists and every file is listed
    std::set<std::string> listed(man.files.begin(), man.files.end());
    listed.insert("manifest.json");
    CHECK(dir_listing(out) == listed);
    for (const auto& c : man.cells) CHECK(c.files.size() == 2);

    const auto j = nlohmann::json::parse(read_text_file((out / "manifest.json").string()));
    CHECK(j["plan_hash"] == plan_hash(plan));
    CHECK(j["status"] == "ok");
    CHECK(j["cells"].size() == plan.activations.size());
    for (const auto& c : j["cells"]) {
        CHECK(c["status"] == "ok");
        CHECK(c["config_hash"].get<std::string>().size() == 16);
        CHECK(c.contains("wall_time_s"));
    }

    const auto lin = parse_csv(read_text_file((out / "tau_linear.csv").string()));
    CHECK(lin.columns == std::vector<std::string>{"mu", "A", "B", "lambda_plus", "tau", "converged_flag"});
    const auto mu = lin.numeric_column("mu"), tau = lin.numeric_column("tau");
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double a = 1.0 - mu[i];
        CHECK(tau[i] == doctest::Approx((1.0 + std::sqrt(1.0 + 4.0 * a * a)) / (2.0 * a * a)).epsilon(1e-11));
    }
}

TEST_CASE("SVG files are a pure function of the CSV") {
    const auto out = scratch("svg");
    auto plan = small_sgd_plan(out);
    plan.mus = {0.5};
    plan.seeds = {0};
    const auto man = run_plan(plan, 1);
    REQUIRE(man.all_ok());
    const auto id = man.cells.front().id;
    const auto csv = read_text_file((out / (id + ".csv")).string());
    const auto svg = read_text_file((out / (id + ".svg")).string());
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(render_svg(csv, plot_for(PlanKind::sgd_run, parse_csv(csv))) == svg);
    CHECK(render_svg(csv, plot_for(PlanKind::sgd_run, parse_csv(csv))) == render_svg(csv, plot_for(PlanKind::sgd_run, parse_csv(csv))));
}

TEST_CASE("re-running a plan reproduces byte-identical CSVs regardless of thread count") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    auto pa = small_sgd_plan(a);
    auto pb = small_sgd_plan(b);
    const auto ma = run_plan(pa, 1);
    const auto mb = run_plan(pb, 4);
    REQUIRE(ma.all_ok());
    REQUIRE(mb.all_ok());
    REQUIRE(ma.files == mb.files);
    CHECK(std::count(ma.files.begin(), ma.files.end(), "summary.csv") == 1);
    for (const auto& f : ma.files) CHECK(read_text_file((a / f).string()) == read_text_file((b / f).string()));
    CHECK(ma.plan_hash == mb.plan_hash);

    // the seed axis matters
    const auto c = scratch("det_c");
    auto pc = small_sgd_plan(c);
    pc.seeds = {7, 8};
    const auto mc = run_plan(pc, 2);
    CHECK(read_text_file((a / ma.cells[0].files[0]).string()) != read_text_file((c / mc.cells[0].files[0]).string()));
}

TEST_CASE("failed cells are marked in the manifest") {
    const auto out = scratch("fail");
    auto plan = default_plan(PlanKind::sgd_run);
    plan.settings = {{"d", "100"}, {"batch", "50"}, {"epochs", "1000"}, {"lr", "1e6"}, {"n_test", "0"}};
    plan.activations = {"hermite(5)"};
    plan.mus = {0.5};
    plan.output_dir = out.string();
    const auto man = run_plan(plan, 1);
    CHECK_FALSE(man.all_ok());
    CHECK(man.any_blowup());
    REQUIRE(man.cells.size() == 1);
    CHECK(man.cells[0].error_kind == "numerical_blowup");
    CHECK(man.cells[0].files.empty());
    const auto j = nlohmann::json::parse(read_text_file((out / "manifest.json").string()));
    CHECK(j["status"] == "partial_failure");
    CHECK(j["cells"][0]["status"] == "failed");
    for (const auto& f : man.files) CHECK(fs::exists(out / f));
}

TEST_CASE("singularity plan: root table inside (0,1)") {
    const auto out = scratch("sing");
    auto plan = default_plan(PlanKind::singularity_scan);
    plan.activations = {"hermite(3)", "hermite(5)"};
    plan.output_dir = out.string();
    const auto man = run_plan(plan, 2);
    REQUIRE(man.all_ok());
    for (const auto& act : {"hermite3", "hermite5"}) {
        const auto t = parse_csv(read_text_file((out / (std::string("singularity_") + act + ".csv")).string()));
        const auto roots = t.numeric_column("mu");
        CHECK(!roots.empty());
        CHECK(std::to_string(roots.size()) == *t.meta_value("root_count"));
        for (double r : roots) {
            CHECK(r > 0.0);
            CHECK(r < 1.0);
        }
    }
}

TEST_CASE("spearman correlation against a counting oracle") {
    const std::vector<double> a = {1, 2, 2, 3, 7, 0.5}, b = {1, 3, 2, 4, 4, -2};
    CHECK(spearman_correlation(a, b) == doctest::Approx(naive_pearson(naive_ranks(a), naive_ranks(b))).epsilon(1e-12));
    CHECK(spearman_correlation({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
    CHECK(spearman_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(spearman_correlation({1}, {1}), InvalidArgument);
}

TEST_CASE("compare: exact affine data gives zero residual, mismatched grids are rejected") {
    CsvTable theory;
    theory.columns = {"mu", "tau"};
    CsvTable exp;
    exp.columns = {"mu", "seed", "empirical_exit_epoch"};
    const CompareMapping map{1000.0, 0.2, "empirical_exit_epoch"};
    for (double mu : {0.1, 0.3, 0.5}) {
        const double tau = 1.0 / (1.0 - mu);
        theory.add_row({mu, tau});
        const double predicted = 0.5 * tau * std::log(1000.0) / 0.2;
        // two seeds straddling an affine image of the prediction
        exp.add_row({mu, 0LL, 3.0 * predicted + 11.0 - 1.0});
        exp.add_row({mu, 1LL, 3.0 * predicted + 11.0 + 1.0});
    }
    const auto rep = compare_theory_experiment(theory, exp, map);
    CHECK(rep.scale == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(rep.offset == doctest::Approx(11.0).epsilon(1e-8));
    CHECK(rep.max_abs_rel_residual < 1e-10);
    CHECK(rep.spearman == doctest::Approx(1.0));
    CHECK(rep.flagged_mu.empty());

    CsvTable shifted = exp;
    shifted.rows[0][0] = "0.15";
    CHECK_THROWS_AS(compare_theory_experiment(theory, shifted, map), AlignmentError);

    // a mu with no exit is flagged, not fatal
    CsvTable missing = exp;
    missing.rows[4][2] = "nan";
    missing.rows[5][2] = "nan";
    const auto rep2 = compare_theory_experiment(theory, missing, map);
    CHECK(rep2.flagged_mu == std::vector<double>{0.5});
}

TEST_CASE("compare plan: linear matching exit epochs rank-agree with tau") {
    const auto out = scratch("compare");
    auto plan = default_plan(PlanKind::compare);
    plan.output_dir = out.string();
    const auto man = run_plan(plan, 0);
    REQUIRE(man.all_ok());
    const auto t = parse_csv(read_text_file((out / "compare_linear.csv").string()));
    CHECK(std::stod(*t.meta_value("spearman")) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*t.meta_value("flagged_mu") == "none");
    const auto obs = t.numeric_column("observed");
    CHECK(obs.size() == 9);
    CHECK(std::is_sorted(obs.begin(), obs.end()));
}

TEST_CASE("compare: relu tau curve has its small-mu dip detected") {
    ExperimentPlan plan = default_plan(PlanKind::tau_curve);
    plan.mus = {0.02, 0.1, 0.2, 0.3, 0.5};
    const auto theory = tau_table(plan, "relu");
    // observed epochs are a monotone image of tau, so the dip must carry over
    CsvTable exp;
    exp.columns = {"mu", "empirical_exit_epoch"};
    const auto mu = theory.numeric_column("mu"), tau = theory.numeric_column("tau");
    for (std::size_t i = 0; i < mu.size(); ++i) exp.add_row({mu[i], 100.0 * tau[i]});
    const auto rep = compare_theory_experiment(theory, exp, {});
    CHECK(rep.dip_theory);
    CHECK(rep.dip_experiment);
    CHECK(*rep.table().meta_value("dip_consistent") == "true");

    // a monotone experiment is reported as inconsistent with the dip
    CsvTable flat;
    flat.columns = exp.columns;
    for (std::size_t i = 0; i < mu.size(); ++i) flat.add_row({mu[i], 100.0 + static_cast<double>(i)});
    CHECK(*compare_theory_experiment(theory, flat, {}).table().meta_value("dip_consistent") == "false");
}
