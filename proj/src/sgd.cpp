#include "searchphase/sgd.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "searchphase/errors.hpp"
#include "searchphase/rng.hpp"

namespace searchphase {

PretrainModel parse_pretrain_model(const std::string& s) {
    if (s == "aligned") return PretrainModel::aligned;
    if (s == "mixed") return PretrainModel::mixed;
    throw LookupError("unknown pretrain model: '" + s + "'");
}

Sampler parse_sampler(const std::string& s) {
    if (s == "full") return Sampler::full;
    if (s == "projected") return Sampler::projected;
    throw LookupError("unknown sampler: '" + s + "'");
}

StopRule parse_stop_rule(const std::string& s) {
    if (s == "horizon" || s == "never") return StopRule::horizon;
    if (s == "empirical_exit") return StopRule::empirical_exit;
    if (s == "theory_exit") return StopRule::theory_exit;
    throw LookupError("unknown stop rule: '" + s + "'");
}

std::string to_string(PretrainModel p) { return p == PretrainModel::aligned ? "aligned" : "mixed"; }
std::string to_string(Sampler s) { return s == Sampler::full ? "full" : "projected"; }
std::string to_string(StopRule s) {
    switch (s) {
        case StopRule::empirical_exit: return "empirical_exit";
        case StopRule::theory_exit: return "theory_exit";
        default: return "horizon";
    }
}

void validate(const SimConfig& cfg) {
    std::vector<std::string> bad;
    if (cfg.d < 2) bad.push_back("d: must be >= 2");
    if (cfg.batch < 1) bad.push_back("batch: must be >= 1");
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) bad.push_back("lr: must be a positive finite number");
    if (cfg.epochs < 0) bad.push_back("epochs: must be >= 0");
    if (!(cfg.mu > 0.0 && cfg.mu < 1.0)) bad.push_back("mu: must lie in (0,1)");
    if (cfg.n_test < 0) bad.push_back("n_test: must be >= 0");
    if (!(cfg.empirical_exit > 0.0 && cfg.empirical_exit <= 1.0)) bad.push_back("empirical_exit: must lie in (0,1]");
    if (cfg.stop_delay < 0) bad.push_back("stop_delay: must be >= 0");
    if (!cfg.teacher.evaluate) bad.push_back("teacher: missing activation");
    if (!cfg.student.evaluate) bad.push_back("student: missing activation");
    if (cfg.curriculum) {
        const auto& c = *cfg.curriculum;
        if (!c.switch_epoch && !c.m_switch) bad.push_back("curriculum: needs switch_epoch or m_switch");
        if (c.switch_epoch && *c.switch_epoch < 0) bad.push_back("curriculum.switch_epoch: must be >= 0");
        if (c.m_switch && !(*c.m_switch > 0.0 && *c.m_switch <= 1.0))
            bad.push_back("curriculum.m_switch: must lie in (0,1]");
    }
    if (!bad.empty()) throw ValidationError(bad);
}

double sim_delta(const SimConfig& cfg) { return default_delta(cfg.student); }
double flow_time_per_step(const SimConfig& cfg) { return cfg.lr / sim_delta(cfg); }
double scaled_lr(double base_lr, const ActivationSpec& student) { return base_lr * default_delta(student); }

Eigen::VectorXd pretrained_vector(const SimState& s, const SimConfig& cfg) {
    if (cfg.pretrain_model == PretrainModel::mixed && s.xi) return cfg.mu * s.omega_star + (1.0 - cfg.mu) * *s.xi;
    return cfg.mu * s.omega_star;
}

double effective_alignment(const SimState& s, const SimConfig& cfg) {
    return (pretrained_vector(s, cfg) + s.u * s.omega).dot(s.omega_star);
}

double preactivation_variance(const SimState& s, const SimConfig& cfg) {
    return (pretrained_vector(s, cfg) + s.u * s.omega).squaredNorm();
}

LabelTransform active_transform(const SimState& s, const SimConfig& cfg) {
    if (cfg.curriculum && s.stage == 1) return cfg.curriculum->stage_one;
    return cfg.teacher_transform;
}

SimState init_state(const SimConfig& cfg) {
    validate(cfg);
    SimState s;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    NormalSource teacher(cfg.seed, Stream::teacher, 0);
    s.omega_star = random_unit_vector(teacher, d);

    NormalSource student(cfg.seed, Stream::student, 0);
    Eigen::VectorXd perp;
    do {
        perp = random_unit_vector(student, d);
        perp -= perp.dot(s.omega_star) * s.omega_star;
    } while (perp.norm() < 1e-8);
    perp.normalize();
    const double m0 = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    s.omega = m0 * s.omega_star + std::sqrt(1.0 - m0 * m0) * perp;
    s.u = m0;
    if (cfg.pretrain_model == PretrainModel::mixed) {
        NormalSource xs(cfg.seed, Stream::xi, 0);
        s.xi = random_unit_vector(xs, d);
    }
    return s;
}

namespace {

// Per-sample dloss/dpreactivation and batch statistics from the three projections.
struct SampleTerms {
    Eigen::VectorXd coef;
    double du = 0.0;
    double mse = 0.0;
};

SampleTerms sample_terms(const SimConfig& cfg, LabelTransform tr, double u, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& s, const Eigen::VectorXd& p) {
    const auto n = t.size();
    SampleTerms out;
    out.coef.resize(n);
    double du = 0.0, mse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pre = p[i] + u * s[i];
        const double y = apply_label_transform(tr, cfg.teacher(t[i]));
        const double eps = y - cfg.student(pre);
        const double dsig = cfg.student.deriv(pre);
        const double c = cfg.loss == LossKind::mse ? -eps * dsig : -y * dsig;
        out.coef[i] = c;
        du += c * s[i];
        mse += eps * eps;
    }
    out.du = du / static_cast<double>(n);
    out.mse = mse / static_cast<double>(n);
    return out;
}

// Orthonormal basis of span{w*, w, xi} with the coordinates of each vector in it.
struct SpanBasis {
    Eigen::MatrixXd E;       // d x k
    Eigen::VectorXd a_star;  // k
    Eigen::VectorXd a_omega;
    Eigen::VectorXd a_xi;
};

SpanBasis span_basis(const SimState& s) {
    std::vector<const Eigen::VectorXd*> vs = {&s.omega_star, &s.omega};
    if (s.xi) vs.push_back(&*s.xi);
    const auto d = s.omega_star.size();
    Eigen::MatrixXd E(d, static_cast<Eigen::Index>(vs.size()));
    Eigen::Index k = 0;
    for (const auto* v : vs) {
        Eigen::VectorXd r = *v;
        for (Eigen::Index j = 0; j < k; ++j) r -= E.col(j).dot(r) * E.col(j);
        const double n = r.norm();
        if (n > 1e-12 * v->norm()) E.col(k++) = r / n;
    }
    SpanBasis b;
    b.E = E.leftCols(k);
    b.a_star = b.E.transpose() * s.omega_star;
    b.a_omega = b.E.transpose() * s.omega;
    if (s.xi) b.a_xi = b.E.transpose() * *s.xi;
    return b;
}

BatchGradient projected_gradient(const SimState& s, const SimConfig& cfg, std::uint64_t counter) {
    const SpanBasis b = span_basis(s);
    const auto B = static_cast<Eigen::Index>(cfg.batch);
    NormalSource src(cfg.seed, Stream::train, counter);
    const Eigen::MatrixXd Z = src.matrix(B, b.E.cols());
    const Eigen::VectorXd t = Z * b.a_star, sv = Z * b.a_omega;
    Eigen::VectorXd p = cfg.mu * t;
    if (cfg.pretrain_model == PretrainModel::mixed && s.xi) p += (1.0 - cfg.mu) * (Z * b.a_xi);
    const auto terms = sample_terms(cfg, active_transform(s, cfg), s.u, t, sv, p);

    // sum_i c_i x_i = E Z^T c + |c| P_perp g with g ~ N(0, I_d)
    Eigen::VectorXd g = src.vector(s.omega.size());
    g -= b.E * (b.E.transpose() * g);
    BatchGradient out;
    out.du = terms.du;
    out.train_mse = terms.mse;
    out.domega = (s.u / static_cast<double>(B)) * (b.E * (Z.transpose() * terms.coef) + terms.coef.norm() * g);
    return out;
}

TestMse test_mse_with(const SimState& s, const SimConfig& cfg, std::int64_t n_test, std::uint64_t counter,
                      const LossModel* model) {
    if (n_test < 1) throw InvalidArgument("n_test must be >= 1");
    const SpanBasis b = span_basis(s);
    NormalSource src(cfg.seed, Stream::test, counter);
    const Eigen::MatrixXd Z = src.matrix(static_cast<Eigen::Index>(n_test), b.E.cols());
    const Eigen::VectorXd t = Z * b.a_star, sv = Z * b.a_omega;
    Eigen::VectorXd p = cfg.mu * t;
    if (cfg.pretrain_model == PretrainModel::mixed && s.xi) p += (1.0 - cfg.mu) * (Z * b.a_xi);
    double sum = 0.0, sum2 = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        const double y = apply_label_transform(cfg.teacher_transform, cfg.teacher(t[i]));
        const double e = y - cfg.student(p[i] + s.u * sv[i]);
        sum += e * e;
        sum2 += e * e * e * e;
    }
    const double n = static_cast<double>(n_test);
    TestMse out;
    out.value = sum / n;
    const double var = std::max(0.0, sum2 / n - out.value * out.value);
    out.stderr_ = n > 1 ? std::sqrt(var / (n - 1)) : std::numeric_limits<double>::infinity();
    if (model) {
        const auto l = model->loss_from_overlaps(effective_alignment(s, cfg), preactivation_variance(s, cfg));
        out.series = 2.0 * l.value;
        out.series_converged = l.converged;
    } else {
        out.series = std::numeric_limits<double>::quiet_NaN();
        out.series_converged = false;
    }
    return out;
}

std::unique_ptr<LossModel> series_model(const SimConfig& cfg) {
    try {
        ModelConfig mc = make_model(transform_teacher(cfg.teacher, cfg.teacher_transform), cfg.student, cfg.mu);
        mc.loss = LossKind::mse;
        return std::make_unique<LossModel>(mc);
    } catch (const std::exception&) {
        return nullptr;  // no series comparison for this pair
    }
}

}  // namespace

BatchGradient batch_gradient(const SimState& s, const SimConfig& cfg, const Eigen::MatrixXd& x) {
    if (x.cols() != s.omega.size() || x.rows() < 1) throw InvalidArgument("batch must be B x d with B >= 1");
    const Eigen::VectorXd t = x * s.omega_star, sv = x * s.omega, p = x * pretrained_vector(s, cfg);
    const auto terms = sample_terms(cfg, active_transform(s, cfg), s.u, t, sv, p);
    BatchGradient out;
    out.du = terms.du;
    out.train_mse = terms.mse;
    out.domega = (s.u / static_cast<double>(x.rows())) * (x.transpose() * terms.coef);
    return out;
}

void apply_gradient(SimState& s, const SimConfig& cfg, const BatchGradient& g) {
    if (!std::isfinite(g.du) || !std::isfinite(g.domega.squaredNorm()))
        throw NumericalBlowup("non-finite gradient", s.step);
    const Eigen::VectorXd tangent = g.domega - g.domega.dot(s.omega) * s.omega;
    s.omega -= cfg.lr * tangent;
    s.omega.normalize();
    s.u -= cfg.lr * g.du;
    if (!std::isfinite(s.u) || !s.omega.allFinite()) throw NumericalBlowup("non-finite state", s.step);
    ++s.step;
    s.samples += cfg.batch;
}

SimState sgd_step(const SimState& s, const SimConfig& cfg, const Eigen::MatrixXd& x, double* train_mse) {
    SimState next = s;
    const auto g = batch_gradient(s, cfg, x);
    apply_gradient(next, cfg, g);
    next.samples = s.samples + x.rows();
    if (train_mse) *train_mse = g.train_mse;
    return next;
}

Eigen::MatrixXd draw_batch(const SimConfig& cfg, std::int64_t step) {
    NormalSource src(cfg.seed, Stream::train, static_cast<std::uint64_t>(step));
    return src.matrix(static_cast<Eigen::Index>(cfg.batch), static_cast<Eigen::Index>(cfg.d));
}

double sgd_step_streamed(SimState& s, const SimConfig& cfg) {
    const BatchGradient g = cfg.sampler == Sampler::full
                                ? batch_gradient(s, cfg, draw_batch(cfg, s.step))
                                : projected_gradient(s, cfg, static_cast<std::uint64_t>(s.step));
    apply_gradient(s, cfg, g);
    return g.train_mse;
}

TestMse measure_test_mse(const SimState& s, const SimConfig& cfg, std::int64_t n_test, std::uint64_t counter) {
    const auto model = series_model(cfg);
    return test_mse_with(s, cfg, n_test, counter, model.get());
}

SgdTrajectory run_simulation(const SimConfig& cfg, std::int64_t record_every) {
    if (record_every < 1) throw InvalidArgument("record_every must be >= 1");
    SimState s = init_state(cfg);
    const auto model = cfg.n_test > 0 ? series_model(cfg) : nullptr;
    const double dt = flow_time_per_step(cfg);
    const bool even_student = cfg.student.parity == Parity::even;

    SgdTrajectory tr;
    double train_acc = 0.0;
    std::int64_t train_n = 0;
    auto record = [&] {
        tr.epoch.push_back(s.step);
        tr.t_flow.push_back(static_cast<double>(s.step) * dt);
        tr.m.push_back(s.m());
        tr.u.push_back(s.u);
        tr.m_eff.push_back(effective_alignment(s, cfg));
        tr.r.push_back(preactivation_variance(s, cfg));
        tr.train_mse.push_back(train_n > 0 ? train_acc / static_cast<double>(train_n)
                                           : std::numeric_limits<double>::quiet_NaN());
        tr.test_mse.push_back(cfg.n_test > 0
                                  ? test_mse_with(s, cfg, cfg.n_test, static_cast<std::uint64_t>(s.step), model.get()).value
                                  : std::numeric_limits<double>::quiet_NaN());
        train_acc = 0.0;
        train_n = 0;
    };
    record();

    std::optional<std::int64_t> stop_at;
    while (s.step < cfg.epochs) {
        if (cfg.curriculum && s.stage == 1) {
            const auto& c = *cfg.curriculum;
            if ((c.switch_epoch && s.step >= *c.switch_epoch) || (c.m_switch && s.m() >= *c.m_switch)) {
                s.stage = 2;
                tr.switch_epoch = s.step;
            }
        }
        train_acc += sgd_step_streamed(s, cfg);
        ++train_n;

        const double m = s.m();
        const double m_test = even_student ? std::abs(m) : m;
        if (!tr.empirical_exit_epoch && m_test >= cfg.empirical_exit) tr.empirical_exit_epoch = s.step;
        if (!tr.theory_exit_epoch && std::max(std::abs(s.u), std::abs(m)) >= cfg.mu) tr.theory_exit_epoch = s.step;
        if (!stop_at) {
            if (cfg.stop == StopRule::empirical_exit && tr.empirical_exit_epoch)
                stop_at = *tr.empirical_exit_epoch + cfg.stop_delay;
            if (cfg.stop == StopRule::theory_exit && tr.theory_exit_epoch)
                stop_at = *tr.theory_exit_epoch + cfg.stop_delay;
        }
        const bool last = s.step == cfg.epochs || (stop_at && s.step >= *stop_at);
        if (s.step % record_every == 0 || last) record();
        if (last) break;
    }
    tr.samples = s.samples;
    tr.final_state = std::move(s);
    return tr;
}

std::vector<std::pair<std::string, std::string>> describe(const SimConfig& cfg) {
    auto num = [](double x) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return std::string(buf);
    };
    std::vector<std::pair<std::string, std::string>> kv = {
        {"teacher", cfg.teacher.name},
        {"student", cfg.student.name},
        {"d", std::to_string(cfg.d)},
        {"batch", std::to_string(cfg.batch)},
        {"lr", num(cfg.lr)},
        {"epochs", std::to_string(cfg.epochs)},
        {"mu", num(cfg.mu)},
        {"pretrain_model", to_string(cfg.pretrain_model)},
        {"loss", to_string(cfg.loss)},
        {"teacher_transform", to_string(cfg.teacher_transform)},
        {"seed", std::to_string(cfg.seed)},
        {"sampler", to_string(cfg.sampler)},
        {"n_test", std::to_string(cfg.n_test)},
        {"empirical_exit", num(cfg.empirical_exit)},
        {"stop", to_string(cfg.stop)},
        {"stop_delay", std::to_string(cfg.stop_delay)},
        {"delta", num(sim_delta(cfg))},
    };
    if (cfg.curriculum) {
        kv.emplace_back("curriculum.stage_one", to_string(cfg.curriculum->stage_one));
        if (cfg.curriculum->switch_epoch)
            kv.emplace_back("curriculum.switch_epoch", std::to_string(*cfg.curriculum->switch_epoch));
        if (cfg.curriculum->m_switch) kv.emplace_back("curriculum.m_switch", num(*cfg.curriculum->m_switch));
    }
    return kv;
}

}  // namespace searchphase
