#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "crossdiff/basis.hpp"
#include "crossdiff/config.hpp"
#include "crossdiff/linalg.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/monitors.hpp"
#include "crossdiff/noise.hpp"

namespace crossdiff {

struct StepError : std::runtime_error {
    double residual;
    bool blowup;
    StepError(const std::string& what, double resid, bool blew = false)
        : std::runtime_error(what), residual(resid), blowup(blew) {}
};

/**
 * Dual-variable state w = h'_s(u). `w` and `coeffs` are the nodal/Galerkin
 * representations of the dual field; `u` caches the strictly positive primal
 * reconstruction at the nodes.
 */
struct EntropyField {
    Array2D w;       // n x Q
    Array2D coeffs;  // n x N
    Array2D u;       // n x Q, u = (h'_s)^{-1}(w) nodally

    /// Builds the dual state of a primal field, flooring it at `floor` first
    /// (projections of nonnegative data can dip marginally below zero).
    static EntropyField from_primal(const Array2D& u_nodal, const BasisSet& basis, const ModelParams& p,
                                    double floor = 1e-12) {
        EntropyField f;
        const int n = static_cast<int>(u_nodal.rows());
        const int Q = basis.nodes();
        f.u = u_nodal;
        f.w = Array2D(n, Q);
        f.coeffs = Array2D(n, basis.modes());
        for (int i = 0; i < n; ++i) {
            for (int q = 0; q < Q; ++q) {
                f.u(i, q) = std::max(u_nodal(i, q), floor);
                f.w(i, q) = entropy_gradient_scalar(f.u(i, q), p.pi[i], p.s);
            }
            basis.project(f.w.row(i), f.coeffs.row(i));
        }
        return f;
    }
};

/// Drift callback f(u, t): fills an n x Q nodal field. Null means zero drift.
using DriftEval = std::function<void(const Array2D& u_nodal, double t, Array2D& out)>;

struct NewtonStats {
    int iterations = 0;
    bool used_continuation = false;
    double final_residual = 0.0;
};

namespace detail {

/// Residual/Jacobian assembly for the dual-variable implicit step. The
/// residual of coefficients W (species-major) at load parameter theta is
///   R[i,m] = int [ (u(w)-u_prev)/tau + theta (eps w - f(u(w),t_k)) ] e_m
///          + theta int sum_j B_ij(w) grad w_j grad e_m,
/// theta = 1 being the actual step. Smaller theta interpolates back to the
/// previous state (at theta -> 0 the solution is w_prev itself), so ramping
/// theta tracks a well-conditioned path from the warm start; the mass term is
/// kept whole to keep the linearizations uniformly nonsingular.
class EntropyStepSystem {
public:
    EntropyStepSystem(const Array2D& u_prev, const DriftEval& drift, double t_k, const StepConfig& cfg,
                      const BasisSet& basis, const ModelParams& p)
        : u_prev_(u_prev), drift_(drift), t_k_(t_k), cfg_(cfg), basis_(basis), p_(p),
          n_(p.n), N_(basis.modes()), Q_(basis.nodes()),
          w_(n_, Q_), dw_(n_, Q_), u_(n_, Q_), uprime_(n_, Q_), usm1_(n_, Q_), gslope_(n_, Q_),
          f_(n_, Q_), fpert_(n_, Q_), flux_(n_, Q_) {}

    int size() const { return n_ * N_; }

    /// Recomputes the nodal state caches from coefficients.
    void set_state(const std::vector<double>& W) {
        const double s = p_.s;
        for (int i = 0; i < n_; ++i) {
            std::span<const double> ci(W.data() + i * N_, N_);
            basis_.synthesize(ci, w_.row(i));
            basis_.synthesize_deriv(ci, dw_.row(i));
            for (int q = 0; q < Q_; ++q) {
                const double u = entropy_gradient_inverse_scalar(w_(i, q), p_.pi[i], s, 1e-13);
                u_(i, q) = u;
                const double um1 = rpow(u, s - 1.0);
                usm1_(i, q) = um1;
                const double denom = p_.pi[i] * (1.0 + (s - 1.0) * um1);
                gslope_(i, q) = u / denom;  // du/dw = 1/h''
                uprime_(i, q) = gslope_(i, q);
            }
        }
        if (drift_) drift_(u_, t_k_, f_);
        else f_.fill(0.0);
    }

    void residual(const std::vector<double>& W, double theta, std::vector<double>& R) {
        set_state(W);
        residual_from_state(theta, R);
    }

    /// Assembles the Jacobian at the current state (set_state must be current):
    /// analytic mass/eps/transport blocks plus finite-difference columns for
    /// the drift's state dependence.
    void jacobian(const std::vector<double>& W, double theta, Array2D& J) {
        const double inv_tau = 1.0 / cfg_.tau;
        J = Array2D(size(), size(), 0.0);

        compute_flux();
        std::vector<double> Cq(Q_);
        for (int i = 0; i < n_; ++i) {
            // mass + regularization block (diagonal in species)
            for (int q = 0; q < Q_; ++q)
                Cq[q] = basis_.weight(q) * (inv_tau * uprime_(i, q) + theta * cfg_.epsilon);
            accumulate_block(J, i, i, Cq, BlockShape::value_value);

            for (int l = 0; l < n_; ++l) {
                // linear transport part: B_il grad(delta w_l) tested against grad e_m
                for (int q = 0; q < Q_; ++q)
                    Cq[q] = basis_.weight(q) * theta * transport_entry(i, l, q);
                accumulate_block(J, i, l, Cq, BlockShape::deriv_deriv);

                // chain-rule part: dB/du_l grad w_j, entering through u'(w) e_m'
                for (int q = 0; q < Q_; ++q)
                    Cq[q] = basis_.weight(q) * theta * transport_derivative(i, l, q) * uprime_(l, q);
                accumulate_block(J, i, l, Cq, BlockShape::value_deriv);
            }
        }

        if (drift_) add_drift_columns(W, theta, J);
    }

    void residual_from_state(double theta, std::vector<double>& R) {
        R.assign(size(), 0.0);
        const double inv_tau = 1.0 / cfg_.tau;
        compute_flux();
        for (int i = 0; i < n_; ++i)
            for (int m = 0; m < N_; ++m) {
                double acc = 0.0;
                for (int q = 0; q < Q_; ++q) {
                    const double wq = basis_.weight(q);
                    const double gm = inv_tau * (u_(i, q) - u_prev_(i, q)) +
                                      theta * (cfg_.epsilon * w_(i, q) - f_(i, q));
                    acc += wq * (gm * basis_.value(m, q) + theta * flux_(i, q) * basis_.deriv(m, q));
                }
                R[i * N_ + m] = acc;
            }
    }

    const Array2D& primal() const { return u_; }
    const Array2D& dual_nodal() const { return w_; }

private:
    enum class BlockShape { value_value, deriv_deriv, value_deriv };

    /// J block (i, l) += sum_q C_q * test(m, q) * trial(m', q).
    void accumulate_block(Array2D& J, int i, int l, const std::vector<double>& Cq, BlockShape shape) {
        const Array2D& test_tab = shape == BlockShape::value_value ? basis_.values_table() : basis_.derivs_table();
        const Array2D& trial_tab = shape == BlockShape::deriv_deriv ? basis_.derivs_table() : basis_.values_table();
        for (int m = 0; m < N_; ++m) {
            const int row = i * N_ + m;
            std::span<const double> trow = test_tab.row(m);
            for (int mp = 0; mp < N_; ++mp) {
                std::span<const double> prow = trial_tab.row(mp);
                double acc = 0.0;
                for (int q = 0; q < Q_; ++q) acc += Cq[q] * trow[q] * prow[q];
                J(row, l * N_ + mp) += acc;
            }
        }
    }

    double a_entry(int i, int j, int q) const {
        const double s = p_.s;
        if (i == j) {
            double d = p_.a0[i] + (s + 1.0) * p_.a(i, i) * usm1_(i, q) * u_(i, q);
            for (int k = 0; k < n_; ++k)
                if (k != i) d += p_.a(i, k) * usm1_(k, q) * u_(k, q);
            return d;
        }
        return s * p_.a(i, j) * u_(i, q) * usm1_(j, q);
    }

    double transport_entry(int i, int j, int q) const { return a_entry(i, j, q) * gslope_(j, q); }

    void compute_flux() {
        for (int i = 0; i < n_; ++i)
            for (int q = 0; q < Q_; ++q) {
                double acc = 0.0;
                for (int j = 0; j < n_; ++j) acc += transport_entry(i, j, q) * dw_(j, q);
                flux_(i, q) = acc;
            }
    }

    /// d/du_l of sum_j B_ij(u) grad w_j at node q (B = A diag(1/h'')).
    double transport_derivative(int i, int l, int q) const {
        const double s = p_.s;
        const double u_l = u_(l, q);
        const double um1_l = usm1_(l, q);
        const double denom_l = 1.0 + (s - 1.0) * um1_l;
        const double gp_l = (1.0 - (s - 1.0) * (s - 2.0) * um1_l) / (p_.pi[l] * denom_l * denom_l);
        double acc = a_entry(i, l, q) * gp_l * dw_(l, q);
        if (l == i) {
            acc += s * (s + 1.0) * p_.a(i, i) * usm1_(i, q) * gslope_(i, q) * dw_(i, q);
            for (int j = 0; j < n_; ++j)
                if (j != i) acc += s * p_.a(i, j) * usm1_(j, q) * gslope_(j, q) * dw_(j, q);
        } else {
            acc += s * p_.a(i, l) * um1_l * gslope_(i, q) * dw_(i, q);
            const double um2_l = um1_l / u_l;
            acc += s * (s - 1.0) * p_.a(i, l) * u_(i, q) * um2_l * gslope_(l, q) * dw_(l, q);
        }
        return acc;
    }

    /// Finite-difference columns for the drift term, perturbing the primal
    /// state along the chain u' e_m' (first-order image of a coefficient bump).
    void add_drift_columns(const std::vector<double>& W, double theta, Array2D& J) {
        std::vector<double> base(size()), col(size());
        project_field(f_, base);
        Array2D usave = u_;
        for (int l = 0; l < n_; ++l)
            for (int mp = 0; mp < N_; ++mp) {
                const double h = 1.5e-8 * (1.0 + std::abs(W[l * N_ + mp]));
                for (int q = 0; q < Q_; ++q)
                    u_(l, q) = usave(l, q) + h * uprime_(l, q) * basis_.value(mp, q);
                drift_(u_, t_k_, fpert_);
                project_field(fpert_, col);
                for (int row = 0; row < size(); ++row)
                    J(row, l * N_ + mp) -= theta * (col[row] - base[row]) / h;
                for (int q = 0; q < Q_; ++q) u_(l, q) = usave(l, q);
            }
    }

    void project_field(const Array2D& field, std::vector<double>& out) const {
        for (int i = 0; i < n_; ++i) {
            std::span<double> dst(out.data() + i * N_, N_);
            basis_.project(field.row(i), dst);
        }
    }

    const Array2D& u_prev_;
    const DriftEval& drift_;
    double t_k_;
    const StepConfig& cfg_;
    const BasisSet& basis_;
    const ModelParams& p_;
    int n_, N_, Q_;
    Array2D w_, dw_, u_, uprime_, usm1_, gslope_, f_, fpert_, flux_;
};

inline bool newton_solve(EntropyStepSystem& sys, std::vector<double>& W, double theta,
                         const StepConfig& cfg, NewtonStats* stats, double* out_resid) {
    std::vector<double> R, Rtry, delta, Wtry;
    sys.residual(W, theta, R);
    double nR = norm2(R);
    for (int it = 0; it < cfg.newton_max_iter; ++it) {
        if (!std::isfinite(nR)) return false;
        if (nR <= cfg.newton_tol) {
            if (out_resid) *out_resid = nR;
            return true;
        }
        Array2D J;
        sys.jacobian(W, theta, J);
        delta = R;
        for (double& d : delta) d = -d;
        try {
            lu_solve(J, delta);
        } catch (const std::exception&) {
            return false;
        }
        bool accepted = false;
        double lam = 1.0;
        for (int ls = 0; ls < 24; ++ls, lam *= 0.5) {
            Wtry = W;
            for (int k = 0; k < sys.size(); ++k) Wtry[k] += lam * delta[k];
            sys.residual(Wtry, theta, Rtry);
            const double nTry = norm2(Rtry);
            if (std::isfinite(nTry) && nTry <= (1.0 - 1e-4 * lam) * nR) {
                W.swap(Wtry);
                R.swap(Rtry);
                nR = nTry;
                accepted = true;
                break;
            }
        }
        if (stats) ++stats->iterations;
        if (!accepted) {
            if (out_resid) *out_resid = nR;
            return false;
        }
    }
    if (out_resid) *out_resid = nR;
    return nR <= cfg.newton_tol;
}

}  // namespace detail

/**
 * One implicit Euler step of the dual-variable scheme: solves the discrete
 * weak system for w^k in the Galerkin space (mass difference of u(w^k),
 * entropy-transport term B(w^k) grad w^k, eps-regularization, drift frozen at
 * t_k) with damped Newton; on stall, restarts with a homotopy in the load
 * parameter ramped over cfg.continuation_steps. The returned state has a
 * strictly positive primal reconstruction by construction of the dual map.
 */
inline EntropyField entropy_implicit_step(const EntropyField& w_prev, const DriftEval& drift, double t_k,
                                          const StepConfig& cfg, const BasisSet& basis,
                                          const ModelParams& p, NewtonStats* stats = nullptr) {
    detail::EntropyStepSystem sys(w_prev.u, drift, t_k, cfg, basis, p);
    NewtonStats local;
    NewtonStats* st = stats ? stats : &local;
    st->iterations = 0;
    st->used_continuation = false;

    std::vector<double> W(w_prev.coeffs.flat().begin(), w_prev.coeffs.flat().end());
    double resid = 0.0;
    bool ok = detail::newton_solve(sys, W, 1.0, cfg, st, &resid);
    if (!ok) {
        st->used_continuation = true;
        W.assign(w_prev.coeffs.flat().begin(), w_prev.coeffs.flat().end());
        ok = true;
        for (int m = 1; m <= cfg.continuation_steps && ok; ++m) {
            const double theta = static_cast<double>(m) / cfg.continuation_steps;
            ok = detail::newton_solve(sys, W, theta, cfg, st, &resid);
        }
        if (!ok)
            throw StepError("entropy_implicit_step: Newton diverged after continuation", resid);
    }
    st->final_residual = resid;

    EntropyField next;
    next.coeffs = Array2D(p.n, basis.modes());
    std::copy(W.begin(), W.end(), next.coeffs.flat().begin());
    next.w = Array2D(p.n, basis.nodes());
    next.u = Array2D(p.n, basis.nodes());
    for (int i = 0; i < p.n; ++i) {
        basis.synthesize(next.coeffs.row(i), next.w.row(i));
        for (int q = 0; q < basis.nodes(); ++q) {
            next.u(i, q) = entropy_gradient_inverse_scalar(next.w(i, q), p.pi[i], p.s, 1e-13);
            // positivity is structural; anything this small means underflow
            if (!(next.u(i, q) > 1e-300))
                throw StepError("entropy_implicit_step: primal state underflow", resid);
        }
    }
    return next;
}

/**
 * Semi-implicit Euler-Maruyama step on the absolute-value system: the linear
 * stiff part a_i0 Laplacian is implicit in coefficient space, the nonlinear
 * divergence (matrix M, defined for signed states) and the noise increment are
 * explicit. Output may undershoot zero; that is expected for this scheme.
 */
inline SpeciesField euler_maruyama_step(const SpeciesField& u_prev, const Array2D& dW, double dt,
                                        const BasisSet& basis, const ModelParams& p,
                                        const NoiseModel& model) {
    const int n = p.n;
    const int N = basis.modes();
    const int Q = basis.nodes();
    if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama_step: dt must be > 0");

    Array2D coeffs(n, N);
    std::vector<double> div(N), noise_field(Q), noise_coeff(N);
    for (int i = 0; i < n; ++i) {
        assemble_divergence_term(u_prev, i, basis, p, MatrixKind::M, div);
        noise_coeff.assign(N, 0.0);
        if (!model.is_zero()) {
            for (int q = 0; q < Q; ++q) {
                double acc = 0.0;
                for (int k = 0; k < model.K; ++k) {
                    double gk = 0.0;
                    for (int j = 0; j < n; ++j) gk += model.c(i, j) * dW(j, k);
                    acc += gk * basis.value(k + 1, q);
                }
                const double g = model.kind == NoiseKind::additive
                                     ? 1.0
                                     : NoiseModel::phi(std::abs(u_prev.values(i, q)));
                noise_field[q] = g * acc;
            }
            basis.project(noise_field, noise_coeff);
        }
        for (int m = 0; m < N; ++m) {
            const double lam = basis.laplace_eig(m);
            // remove the implicit a_i0 part from the explicit assembly
            const double expl = div[m] + p.a0[i] * lam * u_prev.coeffs(i, m);
            const double num = u_prev.coeffs(i, m) + dt * expl + noise_coeff[m];
            coeffs(i, m) = num / (1.0 + dt * p.a0[i] * lam);
            if (!std::isfinite(coeffs(i, m)))
                throw StepError("euler_maruyama_step: non-finite state", 0.0, true);
        }
    }
    return SpeciesField::from_coeffs(basis, coeffs);
}

/**
 * Semi-implicit step of the transformed system in v = u^{s/2}: transport by
 * A^H(v), the gradient correction G(v) A^H(v) grad v, and the drift mapped
 * through H^{-1}(v). Used for cross-validation of the direct schemes.
 */
inline SpeciesField transformed_step(const SpeciesField& v_prev, const DriftEval& u_drift, double t_k,
                                     double dt, const BasisSet& basis, const ModelParams& p) {
    const int n = p.n;
    const int N = basis.modes();
    const int Q = basis.nodes();
    const double s = p.s;
    for (int i = 0; i < n; ++i)
        for (int q = 0; q < Q; ++q)
            if (!(v_prev.values(i, q) > 0.0))
                throw StepError("transformed_step: nonpositive nodal value", 0.0);

    Array2D dv(n, Q);
    for (int i = 0; i < n; ++i) basis.synthesize_deriv(v_prev.coeffs.row(i), dv.row(i));

    Array2D u_nodal(n, Q), f(n, Q, 0.0);
    for (int i = 0; i < n; ++i)
        for (int q = 0; q < Q; ++q) u_nodal(i, q) = rpow(v_prev.values(i, q), 2.0 / s);
    if (u_drift) u_drift(u_nodal, t_k, f);

    Array2D coeffs(n, N);
    std::vector<double> vs(n);
    std::vector<double> rhs_field(Q), rhs_coeff(N), flux(Q);
    for (int i = 0; i < n; ++i) {
        // flux_i = sum_j A^H_ij(v) dv_j, assembled pseudo-spectrally
        for (int q = 0; q < Q; ++q) {
            for (int j = 0; j < n; ++j) vs[j] = v_prev.values(j, q);
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                double ahij;
                if (i == j) {
                    ahij = p.a0[i] + (s + 1.0) * p.a(i, i) * vs[i] * vs[i];
                    for (int k = 0; k < n; ++k)
                        if (k != i) ahij += p.a(i, k) * vs[k] * vs[k];
                } else {
                    ahij = s * p.a(i, j) * vs[i] * vs[j];
                }
                acc += ahij * dv(j, q);
            }
            flux[q] = acc;
            // -G A^H grad v + H^{-1} f, nodal
            const double gcorr = (1.0 - 2.0 / s) * dv(i, q) / v_prev.values(i, q) * acc;
            const double hinv = 0.5 * s * rpow(v_prev.values(i, q), 1.0 - 2.0 / s);
            rhs_field[q] = -gcorr + hinv * f(i, q);
        }
        basis.project(rhs_field, rhs_coeff);
        for (int m = 0; m < N; ++m) {
            double divm = 0.0;
            for (int q = 0; q < Q; ++q) divm += basis.weight(q) * flux[q] * basis.deriv(m, q);
            divm = -divm;
            const double lam = basis.laplace_eig(m);
            const double expl = divm + p.a0[i] * lam * v_prev.coeffs(i, m);
            const double num = v_prev.coeffs(i, m) + dt * (expl + rhs_coeff[m]);
            coeffs(i, m) = num / (1.0 + dt * p.a0[i] * lam);
            if (!std::isfinite(coeffs(i, m)))
                throw StepError("transformed_step: non-finite state", 0.0, true);
        }
    }
    return SpeciesField::from_coeffs(basis, coeffs);
}

/// Full per-path trajectory: times, monitors (stride 1), transformed-norm
/// track for the higher moments, Newton diagnostics, final nodal state, and a
/// truncation flag when a step failed (the record stops there).
struct TrajectoryRecord {
    SchemeKind scheme = SchemeKind::entropy;
    std::vector<double> times;
    std::vector<MonitorRow> monitors;
    std::vector<double> vsq;  // ||u^{s/2}||^2 per stored step
    std::vector<int> newton_iters;
    Array2D final_u;  // nodal
    bool truncated = false;
    double truncation_time = 0.0;
    std::vector<Array2D> snapshots;
};

/**
 * Advances one path over [0, T]. Initial data is projected onto the Galerkin
 * space; the dual-variable scheme starts from the floored primal state (the
 * projection may graze zero). The Wong-Zakai drift is frozen at the left
 * endpoint of each step. Deterministic in (config, seed). Step failures
 * truncate the record instead of aborting.
 */
inline TrajectoryRecord run_path(const RunConfig& cfg, std::uint64_t seed,
                                 const BrownianPath* forced_path = nullptr) {
    const BasisSet basis(cfg.grid);
    const ModelParams& p = cfg.params;
    const int n = p.n;
    const int Q = basis.nodes();

    Array2D init(n, Q);
    for (int i = 0; i < n; ++i)
        for (int q = 0; q < Q; ++q) init(i, q) = cfg.initial.eval(i, basis.node(q), cfg.grid.L);
    SpeciesField u0 = SpeciesField::from_nodal(basis, init);

    TrajectoryRecord rec;
    rec.scheme = cfg.scheme;

    const long L = cfg.T > 0.0 ? std::lround(cfg.T / cfg.step.tau) : 0;
    const bool noisy = !cfg.noise.is_zero();
    std::optional<BrownianPath> own_path;
    const BrownianPath* path = forced_path;
    if (noisy && path == nullptr && cfg.T > 0.0) {
        own_path.emplace(sample_path(cfg.T, static_cast<int>(std::lround(cfg.T / cfg.eta)), n,
                                     cfg.noise.K, seed));
        path = &*own_path;
    }

    DriftEval drift;
    if (noisy && cfg.T > 0.0)
        drift = [&cfg, path, &basis](const Array2D& u_nodal, double t, Array2D& out) {
            wong_zakai_drift(cfg.noise, u_nodal, *path, t, basis, out);
        };

    auto push_row = [&](double t, const Array2D& u_nodal, int iters) {
        rec.times.push_back(t);
        rec.monitors.push_back(compute_monitors(u_nodal, basis, p));
        rec.monitors.back().t = t;
        rec.vsq.push_back(vsq_integral(u_nodal, basis, p));
        if (iters >= 0) rec.newton_iters.push_back(iters);
        if (cfg.snapshot_stride > 0 &&
            (rec.times.size() - 1) % static_cast<std::size_t>(cfg.snapshot_stride) == 0)
            rec.snapshots.push_back(u_nodal);
    };

    if (cfg.scheme == SchemeKind::entropy) {
        EntropyField state = EntropyField::from_primal(u0.values, basis, p);
        push_row(0.0, state.u, -1);
        for (long k = 0; k < L; ++k) {
            const double t_k = k * cfg.step.tau;
            NewtonStats stats;
            try {
                state = entropy_implicit_step(state, drift, t_k, cfg.step, basis, p, &stats);
            } catch (const StepError&) {
                rec.truncated = true;
                rec.truncation_time = t_k;
                break;
            }
            push_row((k + 1) * cfg.step.tau, state.u, stats.iterations);
        }
        rec.final_u = state.u;
    } else if (cfg.scheme == SchemeKind::euler_maruyama) {
        SpeciesField state = u0;
        push_row(0.0, state.values, -1);
        Array2D dW(n, std::max(cfg.noise.K, 1), 0.0);
        for (long k = 0; k < L; ++k) {
            const double t_k = k * cfg.step.tau;
            if (noisy)
                for (int j = 0; j < n; ++j)
                    for (int kk = 0; kk < cfg.noise.K; ++kk)
                        dW(j, kk) = wong_zakai_increment(*path, j, kk, t_k, t_k + cfg.step.tau);
            try {
                state = euler_maruyama_step(state, dW, cfg.step.tau, basis, p, cfg.noise);
            } catch (const StepError&) {
                rec.truncated = true;
                rec.truncation_time = t_k;
                break;
            }
            push_row((k + 1) * cfg.step.tau, state.values, -1);
        }
        rec.final_u = state.values;
    } else {
        // transformed scheme: state is v = u^{s/2}
        Array2D v_init(n, Q);
        for (int i = 0; i < n; ++i)
            for (int q = 0; q < Q; ++q)
                v_init(i, q) = rpow(std::max(init(i, q), 1e-12), 0.5 * p.s);
        SpeciesField v = SpeciesField::from_nodal(basis, v_init);
        for (int i = 0; i < n; ++i)
            for (int q = 0; q < Q; ++q) v.values(i, q) = std::max(v.values(i, q), 1e-12);

        Array2D u_nodal(n, Q);
        auto to_primal = [&](const SpeciesField& vf) {
            for (int i = 0; i < n; ++i)
                for (int q = 0; q < Q; ++q) u_nodal(i, q) = rpow(std::abs(vf.values(i, q)), 2.0 / p.s);
        };
        to_primal(v);
        push_row(0.0, u_nodal, -1);
        for (long k = 0; k < L; ++k) {
            const double t_k = k * cfg.step.tau;
            try {
                v = transformed_step(v, drift, t_k, cfg.step.tau, basis, p);
            } catch (const StepError&) {
                rec.truncated = true;
                rec.truncation_time = t_k;
                break;
            }
            to_primal(v);
            push_row((k + 1) * cfg.step.tau, u_nodal, -1);
        }
        rec.final_u = u_nodal;
    }
    return rec;
}

}  // namespace crossdiff
