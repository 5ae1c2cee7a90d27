#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "crossdiff/steppers.hpp"

namespace crossdiff {

/// Monte Carlo estimate of one moment across paths.
struct EnsembleEstimate {
    std::string name;
    double mean = 0.0;
    double std_error = 0.0;
    long paths = 0;
    long truncated_paths = 0;
};

namespace detail {

/// Runs fn(i) for i in [0, count) on `threads` workers; results must be
/// written to pre-sized slots so reductions can happen in index order. The
/// first exception raised by any worker is rethrown on the caller after all
/// workers have drained.
template <typename Fn>
void parallel_paths(long count, int threads, Fn&& fn) {
    const int nt = static_cast<int>(std::max<long>(1, std::min<long>(threads, count)));
    if (nt == 1) {
        for (long i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&]() {
            for (;;) {
                const long i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    next.store(count);
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Time-integrated functionals from a stride-1 record (right-endpoint sums,
/// matching the discrete estimates tau * sum_k F(u^k)).
struct PathFunctionals {
    bool truncated = false;
    double sup_l2_sq = 0.0;
    double int_grad_sq = 0.0;
    double int_grad_us_sq = 0.0;
    double int_us_l2_cubed = 0.0;
    double sup_v_p8 = 0.0;  // sup_t ||u^{s/2}||^8
};

inline PathFunctionals path_functionals(const TrajectoryRecord& rec, double tau) {
    PathFunctionals f;
    f.truncated = rec.truncated;
    for (std::size_t k = 0; k < rec.monitors.size(); ++k) {
        const MonitorRow& r = rec.monitors[k];
        f.sup_l2_sq = std::max(f.sup_l2_sq, r.l2_sq);
        const double v2 = rec.vsq[k];
        f.sup_v_p8 = std::max(f.sup_v_p8, v2 * v2 * v2 * v2);
        if (k > 0) {
            f.int_grad_sq += tau * r.grad_sq;
            f.int_grad_us_sq += tau * r.grad_us_sq;
            f.int_us_l2_cubed += tau * r.us_l2 * r.us_l2 * r.us_l2;
        }
    }
    return f;
}

inline EnsembleEstimate reduce(const std::string& name, const std::vector<double>& vals,
                               long truncated) {
    EnsembleEstimate e;
    e.name = name;
    e.paths = static_cast<long>(vals.size()) + truncated;
    e.truncated_paths = truncated;
    const long m = static_cast<long>(vals.size());
    if (m == 0) return e;
    bool all_equal = true;
    for (double v : vals)
        if (v != vals.front()) all_equal = false;
    if (all_equal) {  // degenerate ensemble: exactly zero spread
        e.mean = vals.front();
        return e;
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= m;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var = m > 1 ? var / (m - 1) : 0.0;
    e.mean = mean;
    e.std_error = m > 1 ? std::sqrt(var / m) : 0.0;
    return e;
}

}  // namespace detail

/**
 * Ensemble moments over n_paths independent paths seeded base_seed + index:
 * E sup_t ||u||^2, E int ||grad u||^2, E int ||grad u^s||^2,
 * E int ||u^s||^3_{L2}, and E sup_t ||u^{s/2}||^8 (the p = 8 moment in one
 * space dimension). Truncated paths are excluded from the means and counted.
 * Reductions run in fixed path order, so results are independent of the
 * thread count.
 */
inline std::vector<EnsembleEstimate> ensemble_moments(const RunConfig& cfg, long n_paths,
                                                      std::uint64_t base_seed, int threads = 1) {
    if (n_paths < 1) throw std::invalid_argument("ensemble_moments: need at least one path");
    std::vector<detail::PathFunctionals> fns(n_paths);
    detail::parallel_paths(n_paths, threads, [&](long i) {
        const TrajectoryRecord rec = run_path(cfg, base_seed + static_cast<std::uint64_t>(i));
        fns[i] = detail::path_functionals(rec, cfg.step.tau);
    });
    long truncated = 0;
    std::vector<double> sup_l2, grad, grad_us, us3, vp8;
    for (const auto& f : fns) {
        if (f.truncated) { ++truncated; continue; }
        sup_l2.push_back(f.sup_l2_sq);
        grad.push_back(f.int_grad_sq);
        grad_us.push_back(f.int_grad_us_sq);
        us3.push_back(f.int_us_l2_cubed);
        vp8.push_back(f.sup_v_p8);
    }
    if (sup_l2.empty()) throw std::runtime_error("ensemble_moments: every path truncated");
    return {detail::reduce("E_sup_l2_sq", sup_l2, truncated),
            detail::reduce("E_int_grad_sq", grad, truncated),
            detail::reduce("E_int_grad_us_sq", grad_us, truncated),
            detail::reduce("E_int_us_l2_cubed", us3, truncated),
            detail::reduce("E_sup_v_l2_p8", vp8, truncated)};
}

struct NStudyRow {
    int N = 0;
    std::vector<EnsembleEstimate> estimates;
    std::vector<double> ratio_vs_min_n;  // mean at this N / mean at the smallest N
};

/**
 * Coupled-seed uniformity study: the same seeds (hence the same noise
 * increments; K is N-independent) are reused at every Galerkin dimension, and
 * each moment is reported with its ratio to the smallest N. Quadrature is
 * re-sized per N so every level is equally saturated.
 */
inline std::vector<NStudyRow> n_uniformity_study(const RunConfig& cfg, const std::vector<int>& N_list,
                                                 long n_paths, std::uint64_t base_seed, int threads = 1) {
    std::vector<NStudyRow> rows;
    for (int N : N_list) {
        RunConfig c = cfg;
        c.grid.N = N;
        c.grid.Q = std::max(cfg.grid.Q, 4 * N);
        if (!c.noise.is_zero() && c.noise.K > N - 1)
            throw std::invalid_argument("n_uniformity_study: noise.K must fit the smallest N");
        NStudyRow row;
        row.N = N;
        row.estimates = ensemble_moments(c, n_paths, base_seed, threads);
        rows.push_back(std::move(row));
    }
    for (std::size_t k = 0; k < rows.front().estimates.size(); ++k) {
        double scale = 0.0;
        for (const auto& row : rows) scale = std::max(scale, std::abs(row.estimates[k].mean));
        const double dead = 1e-12 * (1.0 + scale);
        for (auto& row : rows) {
            row.ratio_vs_min_n.resize(rows.front().estimates.size());
            const double ref = rows.front().estimates[k].mean;
            const double val = row.estimates[k].mean;
            // moments that are numerically zero at every level compare as equal
            row.ratio_vs_min_n[k] =
                (std::abs(ref) <= dead && std::abs(val) <= dead) ? 1.0 : val / ref;
        }
    }
    return rows;
}

enum class RefinementKind { tau, eta, epsilon };

struct RefinementRow {
    double level = 0.0;
    double distance_to_finest = 0.0;
    double observed_order = 0.0;  // log2(d_j / d_{j+1}); 0 on the last comparable row
};

struct RefinementTable {
    RefinementKind kind;
    std::vector<RefinementRow> rows;
    double fitted_order = 0.0;  // least-squares slope of log d vs log level
    long paths = 0;
    /// Fraction of paths whose distances decrease monotonically level to level.
    double monotone_fraction = 0.0;
};

/**
 * Refinement study in tau, eta, or epsilon over a decreasing sequence of
 * levels. Noise is coupled: a single driving path per seed, sampled at the
 * finest eta and coarsened by summing increments, so the reported distances
 * measure discretization error only. Distances are final-time L2 gaps to the
 * finest level, averaged over paths.
 */
inline RefinementTable refinement_study(RefinementKind kind, const RunConfig& cfg,
                                        const std::vector<double>& levels, long n_paths,
                                        std::uint64_t base_seed, int threads = 1) {
    if (levels.size() < 2) throw std::invalid_argument("refinement_study: need at least two levels");
    for (std::size_t j = 1; j < levels.size(); ++j)
        if (!(levels[j] < levels[j - 1]))
            throw std::invalid_argument("refinement_study: levels must decrease");
    if (kind == RefinementKind::eta)
        for (double lvl : levels) {
            const double ratio = lvl / levels.back();
            if (std::abs(ratio - std::nearbyint(ratio)) > 1e-9 * ratio)
                throw std::invalid_argument(
                    "refinement_study: eta levels must be integer multiples of the finest level");
        }

    const std::size_t nl = levels.size();
    const bool noisy = !cfg.noise.is_zero();
    const BasisSet basis(cfg.grid);

    // per path, per level distances
    std::vector<std::vector<double>> dist(n_paths, std::vector<double>(nl - 1, 0.0));
    detail::parallel_paths(n_paths, threads, [&](long ip) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(ip);
        std::optional<BrownianPath> fine;
        if (noisy && cfg.T > 0.0) {
            const double eta_fine = kind == RefinementKind::eta ? levels.back() : cfg.eta;
            fine.emplace(sample_path(cfg.T, static_cast<int>(std::lround(cfg.T / eta_fine)),
                                     cfg.params.n, cfg.noise.K, seed));
        }
        std::vector<Array2D> finals(nl);
        for (std::size_t j = 0; j < nl; ++j) {
            RunConfig c = cfg;
            std::optional<BrownianPath> lvl_path;
            const BrownianPath* path = fine ? &*fine : nullptr;
            switch (kind) {
                case RefinementKind::tau: c.step.tau = levels[j]; break;
                case RefinementKind::epsilon: c.step.epsilon = levels[j]; break;
                case RefinementKind::eta: {
                    c.eta = levels[j];
                    if (fine) {
                        const int factor = static_cast<int>(std::lround(levels[j] / levels.back()));
                        if (factor > 1) { lvl_path = fine->coarsen(factor); path = &*lvl_path; }
                    }
                    break;
                }
            }
            const TrajectoryRecord rec = run_path(c, seed, path);
            finals[j] = rec.final_u;
        }
        for (std::size_t j = 0; j + 1 < nl; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < finals[j].rows(); ++i)
                for (int q = 0; q < basis.nodes(); ++q) {
                    const double d = finals[j](i, q) - finals[nl - 1](i, q);
                    acc += basis.weight(q) * d * d;
                }
            dist[ip][j] = std::sqrt(acc);
        }
    });

    RefinementTable table;
    table.kind = kind;
    table.paths = n_paths;
    long monotone = 0;
    for (long ipath = 0; ipath < n_paths; ++ipath) {
        bool mono = true;
        for (std::size_t j = 0; j + 2 < nl; ++j)
            if (!(dist[ipath][j] > dist[ipath][j + 1])) mono = false;
        if (mono) ++monotone;
    }
    table.monotone_fraction = n_paths > 0 ? static_cast<double>(monotone) / n_paths : 0.0;

    for (std::size_t j = 0; j + 1 < nl; ++j) {
        double mean = 0.0;
        for (long ipath = 0; ipath < n_paths; ++ipath) mean += dist[ipath][j];
        mean /= static_cast<double>(n_paths);
        table.rows.push_back({levels[j], mean, 0.0});
    }
    for (std::size_t j = 0; j + 1 < table.rows.size(); ++j) {
        const double a = table.rows[j].distance_to_finest, b = table.rows[j + 1].distance_to_finest;
        table.rows[j].observed_order = (a > 0.0 && b > 0.0)
                                           ? std::log2(a / b) / std::log2(levels[j] / levels[j + 1])
                                           : 0.0;
    }
    // least-squares slope of log d on log level; the row nearest the
    // reference level is biased by the reference's own error, so drop it
    // whenever enough rows remain
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long cnt = 0;
    const std::size_t fit_rows =
        table.rows.size() >= 3 ? table.rows.size() - 1 : table.rows.size();
    for (std::size_t jr = 0; jr < fit_rows; ++jr) {
        const auto& r = table.rows[jr];
        if (r.distance_to_finest > 0.0) {
            const double x = std::log(r.level), y = std::log(r.distance_to_finest);
            sx += x; sy += y; sxx += x * x; sxy += x * y;
            ++cnt;
        }
    }
    if (cnt >= 2 && sxx * cnt - sx * sx != 0.0)
        table.fitted_order = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    return table;
}

}  // namespace crossdiff
