#include "searchphase/committee.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>
#include <cstdio>
#include <limits>

#include "searchphase/errors.hpp"
#include "searchphase/rng.hpp"

namespace searchphase {

Readout parse_readout(const std::string& s) {
    if (s == "multi_output") return Readout::multi_output;
    if (s == "summed") return Readout::summed;
    throw LookupError("unknown readout: '" + s + "'");
}

QMode parse_q_mode(const std::string& s) {
    if (s == "frozen") return QMode::frozen;
    if (s == "evolving") return QMode::evolving;
    throw LookupError("unknown q mode: '" + s + "'");
}

std::string to_string(Readout r) { return r == Readout::multi_output ? "multi_output" : "summed"; }
std::string to_string(QMode q) { return q == QMode::frozen ? "frozen" : "evolving"; }

void validate(const CommitteeConfig& cfg) {
    std::vector<std::string> bad;
    if (cfg.K < 1) bad.push_back("K: must be >= 1");
    if (cfg.R < 1) bad.push_back("R: must be >= 1");
    if (cfg.R > cfg.K || cfg.R > cfg.d) bad.push_back("R: must not exceed min(K, d)");
    if (cfg.d < cfg.K + cfg.R) bad.push_back("d: must be >= K + R");
    if (static_cast<int>(cfg.mu_k.size()) != cfg.K) bad.push_back("mu_k: needs exactly K entries");
    for (double m : cfg.mu_k)
        if (!(m > 0.0 && m <= 1.0)) {
            bad.push_back("mu_k: entries must lie in (0,1]");
            break;
        }
    if (cfg.activation != "linear" && cfg.activation != "relu") bad.push_back("activation: linear or relu");
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) bad.push_back("lr: must be a positive finite number");
    if (cfg.batch < 1) bad.push_back("batch: must be >= 1");
    if (cfg.epochs < 0) bad.push_back("epochs: must be >= 0");
    if (cfg.n_test < 0) bad.push_back("n_test: must be >= 0");
    if (!(cfg.onset_threshold > 0.0 && cfg.onset_threshold <= 1.0)) bad.push_back("onset_threshold: must lie in (0,1]");
    if (cfg.stop_delay < 0) bad.push_back("stop_delay: must be >= 0");
    if (!bad.empty()) throw ValidationError(bad);
}

CommitteeConfig standard_committee(double mu, int R) {
    CommitteeConfig c;
    c.K = 4;
    c.R = R;
    c.mu_k = {mu, mu, 1.0, 1.0};
    return c;
}

std::vector<int> adapted_directions(const CommitteeConfig& cfg) {
    std::vector<int> a;
    for (int k = 0; k < cfg.K; ++k)
        if (cfg.mu_k[static_cast<std::size_t>(k)] < 1.0) a.push_back(k);
    return a;
}

Eigen::VectorXd CommitteeState::m_eff(const std::vector<double>& mu_k) const {
    Eigen::VectorXd out(U.rows());
    for (Eigen::Index k = 0; k < U.rows(); ++k) out[k] = mu_k[static_cast<std::size_t>(k)] + U.row(k).dot(M.row(k));
    return out;
}

CommitteeState committee_initial_state(const CommitteeConfig& cfg) {
    validate(cfg);
    const auto adapted = adapted_directions(cfg);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    CommitteeState st;
    st.U = Eigen::MatrixXd::Zero(cfg.K, cfg.R);
    st.M = Eigen::MatrixXd::Zero(cfg.K, cfg.R);
    for (int k : adapted) {
        st.U.row(k).setConstant(s);
        st.M.row(k).setConstant(s);
    }
    const double off = static_cast<double>(adapted.size()) / static_cast<double>(cfg.d);
    st.Q = Eigen::MatrixXd::Constant(cfg.R, cfg.R, off);
    st.Q.diagonal().setOnes();
    return st;
}

namespace {

Eigen::VectorXd deltas(const CommitteeConfig& cfg) {
    Eigen::VectorXd D(cfg.K);
    for (int k = 0; k < cfg.K; ++k) D[k] = 1.0 - cfg.mu_k[static_cast<std::size_t>(k)];
    return D;
}

Eigen::MatrixXd adapted_mask(const CommitteeConfig& cfg) {
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(cfg.K, cfg.R);
    for (int k : adapted_directions(cfg)) mask.row(k).setOnes();
    return mask;
}

}  // namespace

double committee_loss(const CommitteeState& s, const CommitteeConfig& cfg) {
    const Eigen::VectorXd D = deltas(cfg);
    double l = D.squaredNorm();
    l += (s.U * s.Q).cwiseProduct(s.U).sum();
    l -= 2.0 * (D.asDiagonal() * s.U.cwiseProduct(s.M)).sum();
    return l / (2.0 * cfg.K);
}

CommitteeDerivative committee_rhs(const CommitteeState& s, const CommitteeConfig& cfg, QMode mode, bool decouple) {
    const double invK = 1.0 / cfg.K;
    const Eigen::VectorXd D = deltas(cfg);
    const Eigen::MatrixXd mask = adapted_mask(cfg);
    const Eigen::MatrixXd C = decouple ? Eigen::MatrixXd::Zero(cfg.R, cfg.R) : s.C();
    const auto R = cfg.R;
    CommitteeDerivative out;
    out.dQ = Eigen::MatrixXd::Zero(R, R);

    if (mode == QMode::frozen) {
        // u' = (D m - u)/K, m' = (D u (1 - m^2) - sum_{s != r} C_rs m_ks)/K
        out.dU = (invK * (D.asDiagonal() * s.M - s.U)).cwiseProduct(mask);
        out.dM.resize(cfg.K, R);
        for (int k = 0; k < cfg.K; ++k)
            for (int r = 0; r < R; ++r) {
                double cross = 0.0;
                for (int q = 0; q < R; ++q)
                    if (q != r) cross += C(r, q) * s.M(k, q);
                const double m = s.M(k, r);
                out.dM(k, r) = invK * (D[k] * s.U(k, r) * (1.0 - m * m) - cross);
            }
        return out;
    }

    // Exact flow. With grad_r L = (1/K)[sum_s C_rs w_s - sum_j D_j u_jr w*_j]:
    //   a(k,r) = w*_k . grad_r L,  b(p,r) = w_p . grad_r L
    out.dU = (-invK * (s.U * s.Q - D.asDiagonal() * s.M)).cwiseProduct(mask);
    const Eigen::MatrixXd DU = D.asDiagonal() * s.U;                      // K x R
    const Eigen::MatrixXd a = invK * (s.M * C - DU);                       // (k, r): C symmetric
    const Eigen::MatrixXd b = invK * (s.Q * C - s.M.transpose() * DU);    // (p, r)
    out.dM.resize(cfg.K, R);
    for (int k = 0; k < cfg.K; ++k)
        for (int r = 0; r < R; ++r) out.dM(k, r) = -(a(k, r) - s.M(k, r) * b(r, r));
    for (int r = 0; r < R; ++r)
        for (int p = 0; p < R; ++p) {
            if (r == p) continue;
            out.dQ(r, p) = -(b(p, r) - s.Q(r, p) * b(r, r)) - (b(r, p) - s.Q(r, p) * b(p, p));
        }
    return out;
}

CommitteeState committee_ode_step(const CommitteeState& s, const CommitteeConfig& cfg, double dt, QMode mode,
                                  bool decouple) {
    auto add = [](const CommitteeState& x, const CommitteeDerivative& k, double h) {
        CommitteeState y = x;
        y.U += h * k.dU;
        y.M += h * k.dM;
        y.Q += h * k.dQ;
        return y;
    };
    const auto k1 = committee_rhs(s, cfg, mode, decouple);
    const auto k2 = committee_rhs(add(s, k1, 0.5 * dt), cfg, mode, decouple);
    const auto k3 = committee_rhs(add(s, k2, 0.5 * dt), cfg, mode, decouple);
    const auto k4 = committee_rhs(add(s, k3, dt), cfg, mode, decouple);
    CommitteeState out = s;
    out.U += dt / 6.0 * (k1.dU + 2.0 * k2.dU + 2.0 * k3.dU + k4.dU);
    out.M += dt / 6.0 * (k1.dM + 2.0 * k2.dM + 2.0 * k3.dM + k4.dM);
    out.Q += dt / 6.0 * (k1.dQ + 2.0 * k2.dQ + 2.0 * k3.dQ + k4.dQ);
    if (!out.U.allFinite() || !out.M.allFinite() || !out.Q.allFinite())
        throw NumericalBlowup("committee ODE diverged", 0);
    return out;
}

CommitteeOdeTrajectory integrate_committee(const CommitteeConfig& cfg, const CommitteeState& s0, double dt,
                                           double t_max, QMode mode, bool decouple, int record_every) {
    validate(cfg);
    if (!(dt > 0.0) || !(t_max > 0.0)) throw InvalidArgument("dt and t_max must be positive");
    if (record_every < 1) throw InvalidArgument("record_every must be >= 1");
    CommitteeOdeTrajectory tr;
    CommitteeState s = s0;
    if (mode == QMode::frozen) s.Q = Eigen::MatrixXd::Identity(cfg.R, cfg.R);
    tr.times.push_back(0.0);
    tr.states.push_back(s);
    tr.loss.push_back(committee_loss(s, cfg));
    const auto n = static_cast<std::int64_t>(std::ceil(t_max / dt - 1e-9));
    for (std::int64_t i = 1; i <= n; ++i) {
        try {
            s = committee_ode_step(s, cfg, dt, mode, decouple);
        } catch (const NumericalBlowup&) {
            throw NumericalBlowup("committee ODE diverged", i);
        }
        if (i % record_every == 0 || i == n) {
            tr.times.push_back(static_cast<double>(i) * dt);
            tr.states.push_back(s);
            tr.loss.push_back(committee_loss(s, cfg));
        }
    }
    return tr;
}

std::vector<LinearRate> committee_linear_rates(const CommitteeConfig& cfg) {
    validate(cfg);
    std::vector<LinearRate> out;
    for (int k = 0; k < cfg.K; ++k) {
        LinearRate lr;
        lr.k = k;
        lr.mu = cfg.mu_k[static_cast<std::size_t>(k)];
        const double D = 1.0 - lr.mu;
        // (sqrt(1 + 4D^2) - 1) written without cancellation
        lr.lambda_plus = (4.0 * D * D / (std::sqrt(1.0 + 4.0 * D * D) + 1.0)) / (2.0 * cfg.K);
        lr.tau = D == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / lr.lambda_plus;
        out.push_back(lr);
    }
    return out;
}

namespace {

struct SimCommittee {
    Eigen::MatrixXd Wstar;  // d x K, orthonormal columns
    Eigen::MatrixXd Omega;  // d x R, unit columns
    Eigen::MatrixXd U;      // K x R
};

struct Projections {
    Eigen::MatrixXd T;  // B x K teacher preactivations
    Eigen::MatrixXd S;  // B x R
};

struct Grad {
    Eigen::MatrixXd dU;     // K x R
    Eigen::MatrixXd coefs;  // B x R: column r multiplies x_i in the Omega gradient
};

double act(const ActivationSpec& a, double z) { return a(z); }

Grad sample_grad(const CommitteeConfig& cfg, const ActivationSpec& a, const SimCommittee& s, const Projections& p,
                 const Eigen::MatrixXd& mask) {
    const auto B = p.T.rows();
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(cfg.mu_k.data(), cfg.K);
    const Eigen::MatrixXd pre = p.T * mu.asDiagonal() + p.S * s.U.transpose();  // B x K
    Eigen::MatrixXd c(B, cfg.K);  // dloss/dpre_ik
    const double invK = 1.0 / cfg.K, isK = 1.0 / std::sqrt(static_cast<double>(cfg.K));
    for (Eigen::Index i = 0; i < B; ++i) {
        if (cfg.readout == Readout::multi_output) {
            for (int k = 0; k < cfg.K; ++k) {
                const double e = act(a, p.T(i, k)) - act(a, pre(i, k));
                c(i, k) = -invK * e * a.deriv(pre(i, k));
            }
        } else {
            double y = 0.0, yh = 0.0;
            for (int k = 0; k < cfg.K; ++k) {
                y += act(a, p.T(i, k));
                yh += act(a, pre(i, k));
            }
            const double e = isK * (y - yh);
            for (int k = 0; k < cfg.K; ++k) c(i, k) = -e * isK * a.deriv(pre(i, k));
        }
    }
    Grad g;
    g.dU = (c.transpose() * p.S / static_cast<double>(B)).cwiseProduct(mask);
    g.coefs = c * s.U / static_cast<double>(B);
    return g;
}

// Returns (mean loss-scale MSE, per-direction MSE) on the given projections.
std::pair<double, Eigen::VectorXd> mse_on(const CommitteeConfig& cfg, const ActivationSpec& a, const SimCommittee& s,
                                          const Projections& p) {
    const auto B = p.T.rows();
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(cfg.mu_k.data(), cfg.K);
    const Eigen::MatrixXd pre = p.T * mu.asDiagonal() + p.S * s.U.transpose();
    Eigen::VectorXd per = Eigen::VectorXd::Zero(cfg.K);
    double summed = 0.0;
    for (Eigen::Index i = 0; i < B; ++i) {
        double e_sum = 0.0;
        for (int k = 0; k < cfg.K; ++k) {
            const double e = act(a, p.T(i, k)) - act(a, pre(i, k));
            per[k] += e * e;
            e_sum += e;
        }
        summed += e_sum * e_sum / cfg.K;
    }
    per /= static_cast<double>(B);
    const double total = cfg.readout == Readout::multi_output ? per.mean() : summed / static_cast<double>(B);
    return {total, per};
}

struct Span {
    Eigen::MatrixXd E;   // d x k orthonormal
    Eigen::MatrixXd As;  // k x K coordinates of w*
    Eigen::MatrixXd Ao;  // k x R coordinates of Omega
};

Span span_of(const SimCommittee& s) {
    const auto d = s.Wstar.rows();
    Eigen::MatrixXd V(d, s.Wstar.cols() + s.Omega.cols());
    V << s.Wstar, s.Omega;
    Eigen::MatrixXd E(d, V.cols());
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        Eigen::VectorXd r = V.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index i = 0; i < k; ++i) r -= E.col(i).dot(r) * E.col(i);
        const double n = r.norm();
        if (n > 1e-10 * V.col(j).norm()) E.col(k++) = r / n;
    }
    Span sp;
    sp.E = E.leftCols(k);
    sp.As = sp.E.transpose() * s.Wstar;
    sp.Ao = sp.E.transpose() * s.Omega;
    return sp;
}

// Symmetric square root factor L with L L^T = G for a PSD Gram matrix.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& G) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

SimCommittee init_sim(const CommitteeConfig& cfg) {
    const auto d = static_cast<Eigen::Index>(cfg.d);
    SimCommittee s;
    NormalSource ts(cfg.seed, Stream::committee_teacher, 0);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(ts.matrix(d, cfg.K));
    s.Wstar = qr.householderQ() * Eigen::MatrixXd::Identity(d, cfg.K);

    NormalSource ss(cfg.seed, Stream::committee_student, 0);
    Eigen::MatrixXd G = ss.matrix(d, cfg.R);
    G -= s.Wstar * (s.Wstar.transpose() * G);
    Eigen::HouseholderQR<Eigen::MatrixXd> qs(G);
    Eigen::MatrixXd V = qs.householderQ() * Eigen::MatrixXd::Identity(d, cfg.R);
    V -= s.Wstar * (s.Wstar.transpose() * V);  // clean round-off leakage
    for (Eigen::Index r = 0; r < V.cols(); ++r) V.col(r).normalize();

    const auto adapted = adapted_directions(cfg);
    const double m0 = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    Eigen::VectorXd lead = Eigen::VectorXd::Zero(d);
    for (int k : adapted) lead += m0 * s.Wstar.col(k);
    const double rest = std::sqrt(std::max(0.0, 1.0 - static_cast<double>(adapted.size()) * m0 * m0));
    s.Omega.resize(d, cfg.R);
    for (int r = 0; r < cfg.R; ++r) s.Omega.col(r) = lead + rest * V.col(r);
    s.U = Eigen::MatrixXd::Zero(cfg.K, cfg.R);
    for (int k : adapted) s.U.row(k).setConstant(m0);
    return s;
}

}  // namespace

CommitteeTrajectory committee_sgd(const CommitteeConfig& cfg, std::int64_t record_every) {
    validate(cfg);
    if (record_every < 1) throw InvalidArgument("record_every must be >= 1");
    const ActivationSpec a = builtin(cfg.activation);
    const Eigen::MatrixXd mask = adapted_mask(cfg);
    const auto adapted = adapted_directions(cfg);
    SimCommittee s = init_sim(cfg);
    const auto B = static_cast<Eigen::Index>(cfg.batch);
    const auto d = static_cast<Eigen::Index>(cfg.d);
    std::int64_t step = 0;

    CommitteeTrajectory tr;
    auto record = [&] {
        tr.epoch.push_back(step);
        tr.t_flow.push_back(static_cast<double>(step) * cfg.lr);
        const Eigen::MatrixXd M = s.Wstar.transpose() * s.Omega;
        Eigen::VectorXd me(cfg.K);
        for (int k = 0; k < cfg.K; ++k) me[k] = cfg.mu_k[static_cast<std::size_t>(k)] + s.U.row(k).dot(M.row(k));
        tr.M.push_back(M);
        tr.U.push_back(s.U);
        tr.Q.push_back(s.Omega.transpose() * s.Omega);
        tr.m_eff.push_back(me);
        if (cfg.n_test > 0) {
            const Span sp = span_of(s);
            NormalSource src(cfg.seed, Stream::committee_test, static_cast<std::uint64_t>(step));
            const Eigen::MatrixXd Z = src.matrix(static_cast<Eigen::Index>(cfg.n_test), sp.E.cols());
            const auto [total, per] = mse_on(cfg, a, s, {Z * sp.As, Z * sp.Ao});
            tr.test_mse.push_back(total);
            tr.test_mse_k.push_back(per);
        } else {
            tr.test_mse.push_back(std::numeric_limits<double>::quiet_NaN());
            tr.test_mse_k.push_back(Eigen::VectorXd::Constant(cfg.K, std::numeric_limits<double>::quiet_NaN()));
        }
    };
    record();

    std::optional<std::int64_t> stop_at;
    while (step < cfg.epochs) {
        Grad g;
        Eigen::MatrixXd dOmega;
        if (cfg.sampler == Sampler::full) {
            NormalSource src(cfg.seed, Stream::committee_train, static_cast<std::uint64_t>(step));
            const Eigen::MatrixXd X = src.matrix(B, d);
            g = sample_grad(cfg, a, s, {X * s.Wstar, X * s.Omega}, mask);
            dOmega = X.transpose() * g.coefs;
        } else {
            const Span sp = span_of(s);
            NormalSource src(cfg.seed, Stream::committee_train, static_cast<std::uint64_t>(step));
            const Eigen::MatrixXd Z = src.matrix(B, sp.E.cols());
            g = sample_grad(cfg, a, s, {Z * sp.As, Z * sp.Ao}, mask);
            // complement part of sum_i c_ir x_i: jointly Gaussian with covariance (c^T c) (x) P_perp
            Eigen::MatrixXd N = src.matrix(d, cfg.R);
            N -= sp.E * (sp.E.transpose() * N);
            dOmega = sp.E * (Z.transpose() * g.coefs) + N * psd_factor(g.coefs.transpose() * g.coefs);
        }
        if (!g.dU.allFinite() || !dOmega.allFinite()) throw NumericalBlowup("non-finite committee gradient", step);
        for (int r = 0; r < cfg.R; ++r) {
            Eigen::VectorXd t = dOmega.col(r);
            t -= t.dot(s.Omega.col(r)) * s.Omega.col(r);
            s.Omega.col(r) -= cfg.lr * t;
            s.Omega.col(r).normalize();
        }
        s.U -= cfg.lr * g.dU;
        ++step;

        if (!tr.onset_epoch) {
            double peak = 0.0;
            for (int k : adapted) peak = std::max(peak, (s.Wstar.col(k).transpose() * s.Omega).cwiseAbs().maxCoeff());
            if (peak >= cfg.onset_threshold) tr.onset_epoch = step;
        }
        if (!stop_at && cfg.stop_at_onset && tr.onset_epoch) stop_at = *tr.onset_epoch + cfg.stop_delay;
        const bool last = step == cfg.epochs || (stop_at && step >= *stop_at);
        if (step % record_every == 0 || last) record();
        if (last) break;
    }
    return tr;
}

std::vector<std::pair<std::string, std::string>> describe(const CommitteeConfig& cfg) {
    auto num = [](double x) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return std::string(buf);
    };
    std::string mus;
    for (std::size_t i = 0; i < cfg.mu_k.size(); ++i) mus += (i ? " " : "") + num(cfg.mu_k[i]);
    return {
        {"K", std::to_string(cfg.K)},
        {"R", std::to_string(cfg.R)},
        {"d", std::to_string(cfg.d)},
        {"mu_k", mus},
        {"activation", cfg.activation},
        {"lr", num(cfg.lr)},
        {"batch", std::to_string(cfg.batch)},
        {"epochs", std::to_string(cfg.epochs)},
        {"seed", std::to_string(cfg.seed)},
        {"readout", to_string(cfg.readout)},
        {"sampler", to_string(cfg.sampler)},
        {"n_test", std::to_string(cfg.n_test)},
        {"onset_threshold", num(cfg.onset_threshold)},
    };
}

}  // namespace searchphase
