#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossdiff/assumptions.hpp"
#include "crossdiff/config.hpp"
#include "crossdiff/steppers.hpp"
#include "crossdiff/studies.hpp"

namespace crossdiff {

namespace io {

inline std::string g17(double v) { return detail::g17(v); }

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Fixed columns: t,l2_sq,grad_sq,grad_us_sq,grad_us2_sq,entropy,mass_1..mass_n,min_nodal,us_l2.
inline std::string monitor_csv(const TrajectoryRecord& rec, int n) {
    std::ostringstream os;
    os << "t,l2_sq,grad_sq,grad_us_sq,grad_us2_sq,entropy";
    for (int i = 1; i <= n; ++i) os << ",mass_" << i;
    os << ",min_nodal,us_l2\n";
    for (const MonitorRow& r : rec.monitors) {
        os << g17(r.t) << "," << g17(r.l2_sq) << "," << g17(r.grad_sq) << "," << g17(r.grad_us_sq)
           << "," << g17(r.grad_us2_sq) << "," << g17(r.entropy);
        for (double m : r.mass) os << "," << g17(m);
        os << "," << g17(r.min_nodal) << "," << g17(r.us_l2) << "\n";
    }
    return os.str();
}

/// Fixed columns: name,mean,std_error,paths,truncated.
inline std::string moments_csv(const std::vector<EnsembleEstimate>& est) {
    std::ostringstream os;
    os << "name,mean,std_error,paths,truncated\n";
    for (const auto& e : est)
        os << e.name << "," << g17(e.mean) << "," << g17(e.std_error) << "," << e.paths << ","
           << e.truncated_paths << "\n";
    return os.str();
}

inline const char* refinement_kind_name(RefinementKind k) {
    switch (k) {
        case RefinementKind::tau: return "tau";
        case RefinementKind::eta: return "eta";
        case RefinementKind::epsilon: return "epsilon";
    }
    return "?";
}

/// Fixed columns: level,distance_to_finest,observed_order. Summary lines are '#' comments.
inline std::string refinement_csv(const RefinementTable& t) {
    std::ostringstream os;
    os << "# kind = " << refinement_kind_name(t.kind) << "\n";
    os << "# fitted_order = " << g17(t.fitted_order) << "\n";
    os << "# monotone_fraction = " << g17(t.monotone_fraction) << "\n";
    os << "# paths = " << t.paths << "\n";
    os << "level,distance_to_finest,observed_order\n";
    for (const auto& r : t.rows)
        os << g17(r.level) << "," << g17(r.distance_to_finest) << "," << g17(r.observed_order) << "\n";
    return os.str();
}

/// Fixed columns: name,N,mean,std_error,ratio_vs_minN.
inline std::string nstudy_csv(const std::vector<NStudyRow>& rows) {
    std::ostringstream os;
    os << "name,N,mean,std_error,ratio_vs_minN\n";
    for (const auto& row : rows)
        for (std::size_t k = 0; k < row.estimates.size(); ++k)
            os << row.estimates[k].name << "," << row.N << "," << g17(row.estimates[k].mean) << ","
               << g17(row.estimates[k].std_error) << "," << g17(row.ratio_vs_min_n[k]) << "\n";
    return os.str();
}

enum class PlotKind { monitor, refinement };

/**
 * Emits a standalone matplotlib script rendering the given CSVs: monitor time
 * series (one panel per column family) or refinement log-log plots annotated
 * with the fitted order parsed from the CSV comments.
 */
/// `basename_refs`: reference the CSVs by file name only (for scripts that sit
/// next to their data and must not embed absolute paths).
inline void emit_plot_script(const std::vector<std::string>& csv_paths, PlotKind kind,
                             const std::string& out_path, bool basename_refs = false) {
    if (csv_paths.empty()) throw std::invalid_argument("emit_plot_script: no CSV files given");
    for (const auto& c : csv_paths)
        if (!std::filesystem::exists(c)) throw std::runtime_error("emit_plot_script: missing CSV " + c);
    std::ostringstream os;
    os << "#!/usr/bin/env python3\n";
    os << "import csv\nimport matplotlib\nmatplotlib.use('Agg')\nimport matplotlib.pyplot as plt\n\n";
    os << "files = [";
    for (std::size_t i = 0; i < csv_paths.size(); ++i) {
        const std::string ref =
            basename_refs ? std::filesystem::path(csv_paths[i]).filename().string() : csv_paths[i];
        os << (i ? ", " : "") << '"' << ref << '"';
    }
    os << "]\n\n";
    if (kind == PlotKind::monitor) {
        os << R"PY(series = ["l2_sq", "grad_sq", "grad_us_sq", "grad_us2_sq", "entropy", "min_nodal", "us_l2"]
fig, axes = plt.subplots(len(series), 1, figsize=(7, 2.2 * len(series)), sharex=True)
for path in files:
    with open(path) as fh:
        rows = [r for r in csv.DictReader(row for row in fh if not row.startswith('#'))]
    t = [float(r["t"]) for r in rows]
    for ax, name in zip(axes, series):
        ax.plot(t, [float(r[name]) for r in rows], label=path)
        ax.set_ylabel(name)
axes[-1].set_xlabel("t")
axes[0].legend(fontsize=6)
fig.tight_layout()
fig.savefig("monitor.png", dpi=150)
print("wrote monitor.png")
)PY";
    } else {
        os << R"PY(fig, ax = plt.subplots(figsize=(6, 5))
for path in files:
    order = None
    with open(path) as fh:
        lines = fh.readlines()
    for line in lines:
        if line.startswith("# fitted_order"):
            order = float(line.split("=")[1])
    rows = [r for r in csv.DictReader(line for line in lines if not line.startswith('#'))]
    x = [float(r["level"]) for r in rows]
    y = [float(r["distance_to_finest"]) for r in rows]
    label = path if order is None else f"{path} (order {order:.2f})"
    ax.loglog(x, y, "o-", label=label)
ax.set_xlabel("level")
ax.set_ylabel("distance to finest")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("refinement.png", dpi=150)
print("wrote refinement.png")
)PY";
    }
    write_file(out_path, os.str());
}

/// Reproducibility manifest: version, config echo, per-path seeds, output checksums.
inline std::string manifest_text(const RunConfig& cfg, const std::vector<std::uint64_t>& path_seeds,
                                 const std::vector<std::string>& files, const std::string& dir) {
    std::ostringstream os;
    os << "version = " << kVersion << "\n\n";
    os << serialize_config(cfg) << "\n";
    os << "path_seeds =";
    for (auto s : path_seeds) os << " " << s;
    os << "\n";
    for (const auto& f : files) {
        const std::string bytes = read_file(dir + "/" + f);
        os << "checksum " << f << " " << hex64(fnv1a64(bytes)) << "\n";
    }
    return os.str();
}

}  // namespace io

enum class Subcommand { check, simulate, ensemble, converge };

/**
 * Runs one subcommand against a validated configuration. Exit codes:
 * 0 success, 1 validation failure, 2 numerical failure (all paths truncated,
 * Newton divergence, or a falsified bound). Human-readable diagnostics go to
 * `err`, reports to `out`.
 */
inline int run_command(Subcommand cmd, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    const std::string dir = cfg.output_dir;
    fs::create_directories(dir);

    const DominanceReport dom = check_dominance(cfg.params);
    if (cmd != Subcommand::check && !dom.strong_ok) {
        err << "validation: strong self-diffusion dominance fails: need (s+1) a_ii > (s^2/4) "
               "sum_{k != i} a_ik for every i; margins:";
        for (double m : dom.strong_margins) err << " " << io::g17(m);
        err << "\n";
        return 1;
    }

    std::vector<std::string> emitted;
    std::vector<std::uint64_t> seeds;

    try {
        switch (cmd) {
            case Subcommand::check: {
                nlohmann::ordered_json j;
                j["version"] = kVersion;
                j["params"] = {{"n", cfg.params.n}, {"s", cfg.params.s}, {"a0", cfg.params.a0},
                               {"pi", cfg.params.pi}};
                j["dominance"] = {{"strong_margins", dom.strong_margins},
                                  {"weak_margins", dom.weak_margins},
                                  {"strong_ok", dom.strong_ok},
                                  {"weak_ok", dom.weak_ok}};
                out << "dominance: strong_ok=" << (dom.strong_ok ? "yes" : "no")
                    << " weak_ok=" << (dom.weak_ok ? "yes" : "no") << "\n";
                // the strong margin backs the pi- and pi/u-weighted bounds; the
                // weak margin alone still backs the remaining two kinds
                int not_constructible = 0;
                const LemmaKind kinds[4] = {LemmaKind::L1, LemmaKind::L2, LemmaKind::L3, LemmaKind::L4};
                for (LemmaKind k : kinds) {
                    nlohmann::ordered_json cj;
                    cj["kind"] = lemma_name(k);
                    try {
                        const LemmaCertificate cert =
                            certify_lemma(k, cfg.params, cfg.check_samples, cfg.seed);
                        cj["alpha1"] = cert.alpha1;
                        cj["alpha2"] = cert.alpha2;
                        cj["beta"] = cert.beta;
                        cj["samples_tested"] = cert.samples_tested;
                        cj["worst_slack"] = cert.worst_slack;
                        cj["worst_u"] = cert.worst_u;
                        cj["worst_z"] = cert.worst_z;
                        out << "certificate " << lemma_name(k) << ": alpha1=" << io::g17(cert.alpha1)
                            << " alpha2=" << io::g17(cert.alpha2) << " samples=" << cert.samples_tested
                            << " worst_slack=" << io::g17(cert.worst_slack) << "\n";
                    } catch (const CertificateError& e) {
                        cj["error"] = e.what();
                        ++not_constructible;
                        out << "certificate " << lemma_name(k) << ": not constructible (" << e.what()
                            << ")\n";
                    }
                    j["certificates"].push_back(cj);
                }
                const NoiseComplianceReport nr =
                    check_noise_assumptions(cfg.noise, cfg.params, 10000, cfg.seed, cfg.check_cap);
                j["noise"] = {{"lipschitz_estimate", nr.lipschitz_estimate},
                              {"growth_estimate", nr.growth_estimate},
                              {"entropy_coupling_estimate", nr.entropy_coupling_estimate},
                              {"sample_count", nr.sample_count},
                              {"lipschitz_pass", nr.lipschitz_pass},
                              {"growth_pass", nr.growth_pass},
                              {"entropy_pass", nr.entropy_pass}};
                out << "noise: lipschitz=" << io::g17(nr.lipschitz_estimate)
                    << " growth=" << io::g17(nr.growth_estimate)
                    << " entropy_coupling=" << io::g17(nr.entropy_coupling_estimate)
                    << " pass=" << (nr.lipschitz_pass && nr.growth_pass && nr.entropy_pass ? "yes" : "no")
                    << "\n";
                io::write_file(dir + "/certificates.json", j.dump(2) + "\n");
                emitted.push_back("certificates.json");
                seeds.push_back(cfg.seed);
                if (not_constructible > 0) {
                    err << "validation: " << not_constructible
                        << " certificate(s) not constructible; dominance margins too weak\n";
                    io::write_file(dir + "/manifest.txt", io::manifest_text(cfg, seeds, emitted, dir));
                    return 1;
                }
                break;
            }
            case Subcommand::simulate: {
                const TrajectoryRecord rec = run_path(cfg, cfg.seed);
                io::write_file(dir + "/monitor.csv", io::monitor_csv(rec, cfg.params.n));
                emitted.push_back("monitor.csv");
                seeds.push_back(cfg.seed);
                // reference the CSV by name so the script (and its checksum) does
                // not depend on where the output directory lives
                io::emit_plot_script({dir + "/monitor.csv"}, io::PlotKind::monitor, dir + "/plot_monitor.py",
                                     true);
                emitted.push_back("plot_monitor.py");
                if (rec.truncated) {
                    err << "numerical: path truncated at t = " << io::g17(rec.truncation_time) << "\n";
                    io::write_file(dir + "/manifest.txt", io::manifest_text(cfg, seeds, emitted, dir));
                    return 2;
                }
                break;
            }
            case Subcommand::ensemble: {
                const auto est = ensemble_moments(cfg, cfg.n_paths, cfg.seed, cfg.threads);
                io::write_file(dir + "/moments.csv", io::moments_csv(est));
                emitted.push_back("moments.csv");
                for (int i = 0; i < cfg.n_paths; ++i) seeds.push_back(cfg.seed + i);
                for (const auto& e : est)
                    out << e.name << ": mean=" << io::g17(e.mean) << " se=" << io::g17(e.std_error)
                        << " paths=" << e.paths << " truncated=" << e.truncated_paths << "\n";
                break;
            }
            case Subcommand::converge: {
                const ConvergeConfig& cc = cfg.converge;
                for (int i = 0; i < cc.paths; ++i) seeds.push_back(cfg.seed + i);
                if (cc.kind == ConvergeKind::N) {
                    std::vector<int> Ns;
                    for (double v : cc.levels) Ns.push_back(static_cast<int>(std::lround(v)));
                    if (Ns.empty()) Ns = {8, 16, 32};
                    const auto rows = n_uniformity_study(cfg, Ns, cc.paths, cfg.seed, cfg.threads);
                    io::write_file(dir + "/nstudy.csv", io::nstudy_csv(rows));
                    emitted.push_back("nstudy.csv");
                    for (const auto& row : rows)
                        out << "N=" << row.N << " E_sup_l2_sq=" << io::g17(row.estimates[0].mean)
                            << " ratio=" << io::g17(row.ratio_vs_min_n[0]) << "\n";
                } else {
                    const RefinementKind rk = cc.kind == ConvergeKind::tau ? RefinementKind::tau
                                              : cc.kind == ConvergeKind::eta ? RefinementKind::eta
                                                                             : RefinementKind::epsilon;
                    std::vector<double> levels = cc.levels;
                    if (levels.empty()) {
                        switch (rk) {
                            case RefinementKind::tau:
                                levels = {cfg.step.tau, cfg.step.tau / 2, cfg.step.tau / 4};
                                break;
                            case RefinementKind::eta:
                                levels = {cfg.eta, cfg.eta / 2, cfg.eta / 4};
                                break;
                            case RefinementKind::epsilon:
                                levels = {1e-4, 1e-6, 1e-8};
                                break;
                        }
                    }
                    const auto table = refinement_study(rk, cfg, levels, cc.paths, cfg.seed, cfg.threads);
                    io::write_file(dir + "/refinement.csv", io::refinement_csv(table));
                    emitted.push_back("refinement.csv");
                    io::emit_plot_script({dir + "/refinement.csv"}, io::PlotKind::refinement,
                                         dir + "/plot_refinement.py", true);
                    emitted.push_back("plot_refinement.py");
                    out << "kind=" << io::refinement_kind_name(table.kind)
                        << " fitted_order=" << io::g17(table.fitted_order)
                        << " monotone_fraction=" << io::g17(table.monotone_fraction) << "\n";
                }
                break;
            }
        }
    } catch (const FalsificationError& e) {
        err << "numerical: " << e.what() << " (lhs=" << io::g17(e.lhs) << ", rhs=" << io::g17(e.rhs)
            << ")\n";
        return 2;
    } catch (const CertificateError& e) {
        err << "validation: " << e.what() << "\n";
        return 1;
    } catch (const StepError& e) {
        err << "numerical: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        err << "numerical: " << e.what() << "\n";
        return 2;
    }

    io::write_file(dir + "/manifest.txt", io::manifest_text(cfg, seeds, emitted, dir));
    return 0;
}

}  // namespace crossdiff
