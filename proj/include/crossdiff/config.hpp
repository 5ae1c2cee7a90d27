#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crossdiff/assumptions.hpp"
#include "crossdiff/basis.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/noise.hpp"

namespace crossdiff {

inline constexpr const char* kVersion = "crossdiff 0.1.0";

enum class SchemeKind { entropy, euler_maruyama, transformed };

enum class InitialProfile { constant, bump, cosine };

/// Closed-form nonnegative initial data: u_i(x) = base_i + amp_i * shape(x).
struct InitialData {
    InitialProfile profile = InitialProfile::constant;
    std::vector<double> base;       // per species
    std::vector<double> amplitude;  // per species
    int mode = 1;                   // cosine profile frequency

    double shape(double x, double L) const {
        switch (profile) {
            case InitialProfile::constant: return 0.0;
            case InitialProfile::bump: {
                const double r = (x - 0.5 * L) / (0.15 * L);
                return std::exp(-r * r);
            }
            case InitialProfile::cosine: return std::cos(mode * M_PI * x / L);
        }
        return 0.0;
    }

    double eval(int i, double x, double L) const { return base[i] + amplitude[i] * shape(x, L); }
};

struct StepConfig {
    double tau = 1e-3;
    double epsilon = 1e-11;  // dual-variable regularization weight
    double newton_tol = 1e-10;
    int newton_max_iter = 30;
    int continuation_steps = 8;
};

enum class ConvergeKind { tau, eta, epsilon, N };

struct ConvergeConfig {
    ConvergeKind kind = ConvergeKind::tau;
    std::vector<double> levels;  // decreasing geometric sequence (N levels as integers)
    int paths = 1;
};

struct RunConfig {
    ModelParams params;
    GridSpec grid;
    StepConfig step;
    NoiseModel noise;
    InitialData initial;
    double T = 0.1;
    double eta = 1e-2;
    SchemeKind scheme = SchemeKind::entropy;
    std::uint64_t seed = 42;
    int n_paths = 1;
    std::string output_dir = "out";
    int threads = 1;
    int snapshot_stride = 0;  // 0: keep only the final state
    // check subcommand knobs
    long check_samples = 100000;
    double check_cap = 10.0;
    ConvergeConfig converge;
    bool pi_auto = true;  // pi solved from detailed balance unless given explicitly
};

struct ParseResult {
    RunConfig cfg;
    std::vector<std::string> errors;    // all problems, each with a line reference
    std::vector<std::string> warnings;  // e.g. s in [1,2)
    bool ok() const { return errors.empty(); }
};

namespace detail {

struct KeyValue {
    std::string section, key, value;
    int line;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& s, double& out) {
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

inline bool parse_int(const std::string& s, long long& out) {
    std::size_t pos = 0;
    try {
        out = std::stoll(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> parts;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) parts.push_back(tok);
    return parts;
}

}  // namespace detail

/**
 * Parses the line-oriented `key = value` run configuration with [section]
 * headers ([model], [grid], [step], [noise], [run], [initial], [check],
 * [converge]). Vectors are whitespace-separated; matrix rows are separated by
 * ';'. Reports every validation problem, not just the first, each tagged with
 * its source line.
 */
inline ParseResult parse_config(const std::string& text) {
    ParseResult res;
    auto err = [&](int line, const std::string& msg) {
        res.errors.push_back("line " + std::to_string(line) + ": " + msg);
    };

    std::vector<detail::KeyValue> kvs;
    {
        std::istringstream is(text);
        std::string raw, section;
        int lineno = 0;
        while (std::getline(is, raw)) {
            ++lineno;
            const auto hash = raw.find('#');
            if (hash != std::string::npos) raw.erase(hash);
            const std::string line = detail::trim(raw);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') { err(lineno, "malformed section header"); continue; }
                section = detail::trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) { err(lineno, "expected key = value"); continue; }
            kvs.push_back({section, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), lineno});
        }
    }

    std::map<std::string, int> key_lines;
    for (const auto& kv : kvs) key_lines[kv.section + "." + kv.key] = kv.line;
    auto keyed_err = [&](const char* key, const std::string& msg) {
        const auto it = key_lines.find(key);
        if (it != key_lines.end())
            res.errors.push_back("line " + std::to_string(it->second) + ": " + msg);
        else
            res.errors.push_back("config: " + msg);
    };

    RunConfig& c = res.cfg;
    // Documented defaults (n must come from the file; everything else has one).
    c.params.n = 0;
    c.params.s = 2.0;
    std::string a_text, c_text, pi_text = "auto";
    int a_line = 0, c_line = 0, pi_line = 0;
    bool have_eps = false, have_K = false, have_Q = false;
    std::string base_text = "1.0", amp_text, profile_text = "constant";
    int base_line = 0, amp_line = 0, profile_line = 0;
    std::string kind_text = "zero", scheme_text = "entropy", ckind_text = "tau", levels_text;
    int kind_line = 0, scheme_line = 0, ckind_line = 0, levels_line = 0;

    for (const auto& kv : kvs) {
        const std::string id = kv.section + "." + kv.key;
        auto want_double = [&](double& dst) {
            double v;
            if (detail::parse_double(kv.value, v)) dst = v;
            else err(kv.line, "value of '" + id + "' is not a number");
        };
        auto want_int = [&](int& dst, long long lo, long long hi) {
            long long v;
            if (detail::parse_int(kv.value, v) && v >= lo && v <= hi) dst = static_cast<int>(v);
            else err(kv.line, "value of '" + id + "' is not an integer in range");
        };
        if (id == "model.n") want_int(c.params.n, 1, 64);
        else if (id == "model.s") want_double(c.params.s);
        else if (id == "model.a0") {
            c.params.a0.clear();
            for (const auto& tok : detail::split_ws(kv.value)) {
                double v;
                if (!detail::parse_double(tok, v)) { err(kv.line, "a0 entries must be numbers"); break; }
                c.params.a0.push_back(v);
            }
        }
        else if (id == "model.a") { a_text = kv.value; a_line = kv.line; }
        else if (id == "model.pi") { pi_text = kv.value; pi_line = kv.line; }
        else if (id == "grid.L") want_double(c.grid.L);
        else if (id == "grid.N") want_int(c.grid.N, 1, 4096);
        else if (id == "grid.Q") { want_int(c.grid.Q, 2, 1 << 20); have_Q = true; }
        else if (id == "step.tau") want_double(c.step.tau);
        else if (id == "step.epsilon") {
            if (kv.value == "auto") { have_eps = false; }
            else { want_double(c.step.epsilon); have_eps = true; }
        }
        else if (id == "step.newton_tol") want_double(c.step.newton_tol);
        else if (id == "step.newton_max_iter") want_int(c.step.newton_max_iter, 1, 1000);
        else if (id == "step.continuation_steps") want_int(c.step.continuation_steps, 1, 1000);
        else if (id == "noise.kind") { kind_text = kv.value; kind_line = kv.line; }
        else if (id == "noise.c") { c_text = kv.value; c_line = kv.line; }
        else if (id == "noise.K") { want_int(c.noise.K, 1, 1 << 16); have_K = true; }
        else if (id == "run.T") want_double(c.T);
        else if (id == "run.eta") want_double(c.eta);
        else if (id == "run.scheme") { scheme_text = kv.value; scheme_line = kv.line; }
        else if (id == "run.seed") { long long v; if (detail::parse_int(kv.value, v)) c.seed = static_cast<std::uint64_t>(v); else err(kv.line, "seed must be an integer"); }
        else if (id == "run.n_paths") want_int(c.n_paths, 1, 1 << 20);
        else if (id == "run.output_dir") c.output_dir = kv.value;
        else if (id == "run.threads") want_int(c.threads, 1, 256);
        else if (id == "run.snapshot_stride") want_int(c.snapshot_stride, 0, 1 << 20);
        else if (id == "initial.profile") { profile_text = kv.value; profile_line = kv.line; }
        else if (id == "initial.base") { base_text = kv.value; base_line = kv.line; }
        else if (id == "initial.amplitude") { amp_text = kv.value; amp_line = kv.line; }
        else if (id == "initial.mode") want_int(c.initial.mode, 0, 1 << 16);
        else if (id == "check.samples") { long long v; if (detail::parse_int(kv.value, v) && v > 0) c.check_samples = v; else err(kv.line, "check.samples must be a positive integer"); }
        else if (id == "check.cap") want_double(c.check_cap);
        else if (id == "converge.kind") { ckind_text = kv.value; ckind_line = kv.line; }
        else if (id == "converge.levels") { levels_text = kv.value; levels_line = kv.line; }
        else if (id == "converge.paths") want_int(c.converge.paths, 1, 1 << 20);
        else err(kv.line, "unknown key '" + id + "'");
    }

    if (c.params.n < 1) {
        res.errors.push_back("line 0: required key 'model.n' missing or invalid");
        return res;
    }
    const int n = c.params.n;

    // Fill defaults that depend on n.
    if (c.params.a0.empty()) c.params.a0.assign(n, 1.0);
    if (c.params.a0.size() == 1 && n > 1) c.params.a0.assign(n, c.params.a0[0]);
    if (c.params.a0.size() != static_cast<std::size_t>(n))
        res.errors.push_back("line 0: model.a0 must have n entries");

    auto parse_matrix = [&](const std::string& text_in, int line, const char* name, double diag_default) {
        Array2D m(n, n, 0.0);
        for (int i = 0; i < n; ++i) m(i, i) = diag_default;
        if (text_in.empty()) return m;
        std::vector<std::string> rows;
        std::string cur;
        std::istringstream is(text_in);
        for (char ch : text_in) {
            if (ch == ';') { rows.push_back(cur); cur.clear(); }
            else cur.push_back(ch);
        }
        rows.push_back(cur);
        if (rows.size() == 1) {  // scalar shorthand: value on the diagonal
            double v;
            if (detail::parse_double(detail::trim(rows[0]), v)) {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) m(i, j) = (i == j) ? v : 0.0;
                return m;
            }
        }
        if (static_cast<int>(rows.size()) != n) {
            err(line, std::string(name) + " must have n rows separated by ';' (or a single diagonal value)");
            return m;
        }
        for (int i = 0; i < n; ++i) {
            const auto toks = detail::split_ws(rows[i]);
            if (static_cast<int>(toks.size()) != n) {
                err(line, std::string(name) + " row " + std::to_string(i) + " must have n entries");
                continue;
            }
            for (int j = 0; j < n; ++j) {
                double v;
                if (!detail::parse_double(toks[j], v)) err(line, std::string(name) + " entries must be numbers");
                else m(i, j) = v;
            }
        }
        return m;
    };

    c.params.a = parse_matrix(a_text, a_line, "model.a", 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (c.params.a(i, j) < 0.0)
                err(a_line, "model.a[" + std::to_string(i) + "][" + std::to_string(j) +
                                "] is negative; interaction coefficients must be >= 0");

    if (pi_text == "auto") {
        c.pi_auto = true;
        const auto db = solve_detailed_balance(c.params.a, 1e-10);
        if (db.feasible) c.params.pi = db.pi;
        else {
            std::string cyc;
            for (int v : db.violating_cycle) cyc += std::to_string(v) + " ";
            err(pi_line, "detailed-balance weights are infeasible for model.a; violating cycle: " + cyc);
            c.params.pi.assign(n, 1.0);
        }
    } else {
        c.pi_auto = false;
        c.params.pi.clear();
        for (const auto& tok : detail::split_ws(pi_text)) {
            double v;
            if (!detail::parse_double(tok, v)) { err(pi_line, "model.pi entries must be numbers or 'auto'"); break; }
            c.params.pi.push_back(v);
        }
        if (c.params.pi.size() != static_cast<std::size_t>(n)) err(pi_line, "model.pi must have n entries");
    }

    if (c.params.s < 2.0 && c.params.s >= 1.0) {
        c.params.sub_quadratic_warning = true;
        res.warnings.push_back("model.s below 2: simulation permitted for exploration, guarantees degrade");
    }
    if (!(c.params.s >= 1.0))
        res.errors.push_back("line 0: model.s must be >= 1");

    if (!have_Q) c.grid.Q = std::max(64, 4 * c.grid.N);
    if (!have_eps && c.step.tau > 0.0) c.step.epsilon = 1e-8 * c.step.tau;
    if (!have_K) c.noise.K = std::max(1, std::min(c.grid.N - 1, 8));

    if (kind_text == "zero") c.noise.kind = NoiseKind::zero;
    else if (kind_text == "additive") c.noise.kind = NoiseKind::additive;
    else if (kind_text == "bounded_multiplicative") c.noise.kind = NoiseKind::bounded_multiplicative;
    else err(kind_line, "noise.kind must be zero | additive | bounded_multiplicative");
    c.noise.c = parse_matrix(c_text, c_line, "noise.c", c_text.empty() ? 0.1 : 1.0);

    if (scheme_text == "entropy") c.scheme = SchemeKind::entropy;
    else if (scheme_text == "euler_maruyama") c.scheme = SchemeKind::euler_maruyama;
    else if (scheme_text == "transformed") c.scheme = SchemeKind::transformed;
    else err(scheme_line, "run.scheme must be entropy | euler_maruyama | transformed");

    if (profile_text == "constant") c.initial.profile = InitialProfile::constant;
    else if (profile_text == "bump") c.initial.profile = InitialProfile::bump;
    else if (profile_text == "cosine") c.initial.profile = InitialProfile::cosine;
    else err(profile_line, "initial.profile must be constant | bump | cosine");

    auto parse_per_species = [&](const std::string& txt, int line, const char* name, double fallback) {
        std::vector<double> v;
        if (txt.empty()) { v.assign(n, fallback); return v; }
        for (const auto& tok : detail::split_ws(txt)) {
            double d;
            if (!detail::parse_double(tok, d)) { err(line, std::string(name) + " entries must be numbers"); break; }
            v.push_back(d);
        }
        if (v.size() == 1 && n > 1) v.assign(n, v[0]);
        if (v.size() != static_cast<std::size_t>(n)) err(line, std::string(name) + " must have n entries");
        return v;
    };
    c.initial.base = parse_per_species(base_text, base_line, "initial.base", 1.0);
    c.initial.amplitude = parse_per_species(amp_text, amp_line, "initial.amplitude",
                                            c.initial.profile == InitialProfile::constant ? 0.0 : 0.5);

    if (ckind_text == "tau") c.converge.kind = ConvergeKind::tau;
    else if (ckind_text == "eta") c.converge.kind = ConvergeKind::eta;
    else if (ckind_text == "epsilon") c.converge.kind = ConvergeKind::epsilon;
    else if (ckind_text == "N") c.converge.kind = ConvergeKind::N;
    else err(ckind_line, "converge.kind must be tau | eta | epsilon | N");
    if (!levels_text.empty()) {
        c.converge.levels.clear();
        for (const auto& tok : detail::split_ws(levels_text)) {
            double v;
            if (!detail::parse_double(tok, v)) { err(levels_line, "converge.levels entries must be numbers"); break; }
            c.converge.levels.push_back(v);
        }
    }

    // Cross-field validation.
    auto global_err = [&](const std::string& msg) { res.errors.push_back("config: " + msg); };
    if (!(c.grid.L > 0.0)) keyed_err("grid.L", "grid.L must be > 0");
    if (c.grid.Q < 2 * c.grid.N + 1) keyed_err("grid.Q", "grid.Q must be >= 2N+1");
    if (!(c.step.tau > 0.0)) keyed_err("step.tau", "step.tau must be > 0");
    if (!(c.step.epsilon >= 0.0)) keyed_err("step.epsilon", "step.epsilon must be >= 0");
    if (!(c.step.newton_tol > 0.0)) keyed_err("step.newton_tol", "step.newton_tol must be > 0");
    if (!(c.T >= 0.0)) keyed_err("run.T", "run.T must be >= 0");
    if (!(c.eta > 0.0)) keyed_err("run.eta", "run.eta must be > 0");

    if (c.T > 0.0 && c.step.tau > 0.0 && c.eta > 0.0) {
        const double steps = c.T / c.step.tau;
        if (std::abs(steps - std::nearbyint(steps)) > 1e-9 * std::max(1.0, steps))
            global_err("run.T must be an integer multiple of step.tau");
        const double wz = c.T / c.eta;
        if (c.noise.kind != NoiseKind::zero &&
            std::abs(wz - std::nearbyint(wz)) > 1e-9 * std::max(1.0, wz))
            global_err("run.T must be an integer multiple of run.eta when noise is on");
        const double ratio = c.eta >= c.step.tau ? c.eta / c.step.tau : c.step.tau / c.eta;
        if (std::abs(ratio - std::nearbyint(ratio)) > 1e-9 * std::max(1.0, ratio))
            global_err("step.tau and run.eta must divide one another (noise increments may not straddle steps)");
    }

    if (c.noise.kind != NoiseKind::zero && c.noise.K > c.grid.N - 1)
        global_err("noise.K must be <= N-1 (noise rides the zero-mean modes e_1..e_K of the Galerkin space)");

    for (const auto& msg : validate_params(c.params)) global_err(msg);

    // Initial data must be nonnegative on [0, L].
    if (c.initial.base.size() == static_cast<std::size_t>(n) &&
        c.initial.amplitude.size() == static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) {
            double mn = std::numeric_limits<double>::infinity();
            for (int k = 0; k <= 2048; ++k)
                mn = std::min(mn, c.initial.eval(i, c.grid.L * k / 2048.0, c.grid.L));
            if (mn < 0.0)
                global_err("initial profile of species " + std::to_string(i) + " is negative on [0, L]");
        }
    }
    return res;
}

namespace detail {
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Canonical echo of a configuration (stable key order) for manifests.
inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    using detail::g17;
    os << "[model]\n";
    os << "n = " << c.params.n << "\n";
    os << "s = " << g17(c.params.s) << "\n";
    os << "a0 =";
    for (double v : c.params.a0) os << " " << g17(v);
    os << "\na =";
    for (int i = 0; i < c.params.n; ++i) {
        if (i) os << " ;";
        for (int j = 0; j < c.params.n; ++j) os << " " << g17(c.params.a(i, j));
    }
    os << "\npi =";
    for (double v : c.params.pi) os << " " << g17(v);
    os << "\n[grid]\n";
    os << "L = " << g17(c.grid.L) << "\nN = " << c.grid.N << "\nQ = " << c.grid.Q << "\n";
    os << "[step]\n";
    os << "tau = " << g17(c.step.tau) << "\nepsilon = " << g17(c.step.epsilon)
       << "\nnewton_tol = " << g17(c.step.newton_tol) << "\nnewton_max_iter = " << c.step.newton_max_iter
       << "\ncontinuation_steps = " << c.step.continuation_steps << "\n";
    os << "[noise]\n";
    os << "kind = "
       << (c.noise.kind == NoiseKind::zero ? "zero"
           : c.noise.kind == NoiseKind::additive ? "additive" : "bounded_multiplicative")
       << "\nc =";
    for (std::size_t i = 0; i < c.noise.c.rows(); ++i) {
        if (i) os << " ;";
        for (std::size_t j = 0; j < c.noise.c.cols(); ++j) os << " " << g17(c.noise.c(i, j));
    }
    os << "\nK = " << c.noise.K << "\n";
    os << "[run]\n";
    os << "T = " << g17(c.T) << "\neta = " << g17(c.eta) << "\nscheme = "
       << (c.scheme == SchemeKind::entropy ? "entropy"
           : c.scheme == SchemeKind::euler_maruyama ? "euler_maruyama" : "transformed")
       << "\nseed = " << c.seed << "\nn_paths = " << c.n_paths << "\noutput_dir = " << c.output_dir
       << "\n";
    os << "[initial]\n";
    os << "profile = "
       << (c.initial.profile == InitialProfile::constant ? "constant"
           : c.initial.profile == InitialProfile::bump ? "bump" : "cosine")
       << "\nbase =";
    for (double v : c.initial.base) os << " " << g17(v);
    os << "\namplitude =";
    for (double v : c.initial.amplitude) os << " " << g17(v);
    os << "\nmode = " << c.initial.mode << "\n";
    return os.str();
}

}  // namespace crossdiff
