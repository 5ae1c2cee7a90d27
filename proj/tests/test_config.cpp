#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "crossdiff/io.hpp"

using namespace crossdiff;

namespace {

const char* kReferenceConfig = R"(# reference parameter set
[model]
n = 2
s = 3.0
a0 = 1.0 1.0
a = 1.0 0.5 ; 0.5 1.0
pi = auto
[grid]
N = 16
Q = 64
[step]
tau = 1e-3
epsilon = 0
[noise]
kind = bounded_multiplicative
c = 0.1
K = 8
[run]
T = 0.01
eta = 1e-2
scheme = entropy
seed = 42
[initial]
profile = bump
base = 1.0
amplitude = 0.5
)";

std::filesystem::path scratch_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / "crossdiff_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("config defaults") {
    auto res = parse_config("[model]\nn = 1\n");
    REQUIRE(res.ok());
    const RunConfig& c = res.cfg;
    CHECK(c.grid.N == 16);
    CHECK(c.grid.Q == 64);
    CHECK(c.step.tau == 1e-3);
    CHECK(c.eta == 1e-2);
    CHECK(c.step.epsilon == Catch::Approx(1e-11));
    CHECK(c.T == 0.1);
    CHECK(c.seed == 42);
    CHECK(c.params.a0 == std::vector<double>{1.0});
    CHECK(c.params.pi == std::vector<double>{1.0});
    CHECK(c.params.a(0, 0) == 1.0);
    CHECK(c.noise.kind == NoiseKind::zero);
    CHECK(c.scheme == SchemeKind::entropy);
    CHECK_FALSE(c.params.sub_quadratic_warning);
}

TEST_CASE("config validation") {
    SECTION("sub-quadratic exponent warns but parses") {
        auto res = parse_config("[model]\nn = 1\ns = 1.5\n");
        REQUIRE(res.ok());
        CHECK(res.cfg.params.sub_quadratic_warning);
        REQUIRE_FALSE(res.warnings.empty());
    }
    SECTION("negative interaction coefficient names the key") {
        auto res = parse_config("[model]\nn = 2\na = 1.0 -0.5 ; 0.5 1.0\n");
        REQUIRE_FALSE(res.ok());
        bool found = false;
        for (const auto& e : res.errors)
            if (e.find("model.a") != std::string::npos && e.find(">= 0") != std::string::npos) found = true;
        CHECK(found);
    }
    SECTION("all problems are reported with line numbers") {
        auto res = parse_config("[model]\nn = 2\ns = abc\n[step]\ntau = -1\n[run]\nbogus = 3\n");
        REQUIRE(res.errors.size() >= 3);
        for (const auto& e : res.errors) CHECK(e.find("line") != std::string::npos);
    }
    SECTION("mesh alignment between tau and eta") {
        auto res = parse_config("[model]\nn = 1\n[step]\ntau = 3e-3\n[run]\nT = 0.09\neta = 1e-2\n");
        REQUIRE_FALSE(res.ok());
        bool found = false;
        for (const auto& e : res.errors)
            if (e.find("divide") != std::string::npos) found = true;
        CHECK(found);
    }
    SECTION("noise modes must fit the zero-mean part of the basis") {
        auto res = parse_config("[model]\nn = 1\n[grid]\nN = 8\nQ = 32\n[noise]\nkind = additive\nK = 8\n");
        REQUIRE_FALSE(res.ok());
    }
    SECTION("detailed-balance infeasibility is reported with a cycle") {
        auto res = parse_config(
            "[model]\nn = 3\na = 1 1 1 ; 2 1 1 ; 1 3 1\npi = auto\n");
        REQUIRE_FALSE(res.ok());
        bool found = false;
        for (const auto& e : res.errors)
            if (e.find("cycle") != std::string::npos) found = true;
        CHECK(found);
    }
    SECTION("serialize-parse roundtrip") {
        auto res = parse_config(kReferenceConfig);
        REQUIRE(res.ok());
        auto res2 = parse_config(serialize_config(res.cfg));
        REQUIRE(res2.ok());
        CHECK(res2.cfg.params.s == res.cfg.params.s);
        CHECK(res2.cfg.params.pi == res.cfg.params.pi);
        CHECK(res2.cfg.step.tau == res.cfg.step.tau);
        CHECK(res2.cfg.noise.K == res.cfg.noise.K);
        CHECK(serialize_config(res2.cfg) == serialize_config(res.cfg));
    }
}

TEST_CASE("run command exit codes") {
    SECTION("dominance gate rejects simulation") {
        auto res = parse_config("[model]\nn = 2\na = 1.0 9.0 ; 9.0 1.0\n[run]\nT = 0.001\n");
        REQUIRE(res.ok());
        res.cfg.output_dir = scratch_dir("gate").string();
        std::ostringstream out, err;
        const int rc = run_command(Subcommand::simulate, res.cfg, out, err);
        CHECK(rc == 1);
        CHECK(err.str().find("dominance") != std::string::npos);
    }
    SECTION("simulate with T = 0 emits a single-row monitor") {
        auto res = parse_config(kReferenceConfig);
        REQUIRE(res.ok());
        res.cfg.T = 0.0;
        const auto dir = scratch_dir("t0");
        res.cfg.output_dir = dir.string();
        std::ostringstream out, err;
        const int rc = run_command(Subcommand::simulate, res.cfg, out, err);
        REQUIRE(rc == 0);
        const std::string csv = io::read_file((dir / "monitor.csv").string());
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row
        CHECK(csv.rfind("t,l2_sq,grad_sq,grad_us_sq,grad_us2_sq,entropy,mass_1,mass_2,min_nodal,us_l2\n",
                        0) == 0);
        CHECK(std::filesystem::exists(dir / "manifest.txt"));
        CHECK(std::filesystem::exists(dir / "plot_monitor.py"));
    }
    SECTION("check emits certificates") {
        auto res = parse_config(kReferenceConfig);
        REQUIRE(res.ok());
        res.cfg.check_samples = 2000;
        const auto dir = scratch_dir("check");
        res.cfg.output_dir = dir.string();
        std::ostringstream out, err;
        const int rc = run_command(Subcommand::check, res.cfg, out, err);
        REQUIRE(rc == 0);
        const std::string report = out.str();
        CHECK(report.find("certificate L1") != std::string::npos);
        CHECK(report.find("certificate L4") != std::string::npos);
        const std::string json = io::read_file((dir / "certificates.json").string());
        CHECK(json.find("worst_slack") != std::string::npos);
    }
}

TEST_CASE("manifest checksums") {
    auto res = parse_config(kReferenceConfig);
    REQUIRE(res.ok());
    res.cfg.T = 0.02;
    const auto dir = scratch_dir("manifest");
    res.cfg.output_dir = dir.string();
    std::ostringstream out, err;
    REQUIRE(run_command(Subcommand::simulate, res.cfg, out, err) == 0);
    const std::string manifest = io::read_file((dir / "manifest.txt").string());
    const std::string csv = io::read_file((dir / "monitor.csv").string());
    const std::string expect = "checksum monitor.csv " + io::hex64(io::fnv1a64(csv));
    CHECK(manifest.find(expect) != std::string::npos);
    CHECK(manifest.find("version = ") != std::string::npos);
    CHECK(manifest.find("path_seeds = 42") != std::string::npos);
}

TEST_CASE("plot script emission") {
    const auto dir = scratch_dir("plots");
    SECTION("empty input is an error") {
        CHECK_THROWS_AS(io::emit_plot_script({}, io::PlotKind::monitor, (dir / "p.py").string()),
                        std::invalid_argument);
    }
    SECTION("missing csv is an error") {
        CHECK_THROWS_AS(io::emit_plot_script({(dir / "absent.csv").string()}, io::PlotKind::monitor,
                                             (dir / "p.py").string()),
                        std::runtime_error);
    }
    SECTION("monitor script references the column names") {
        const auto csv = dir / "monitor.csv";
        io::write_file(csv.string(), "t,l2_sq\n0,1\n");
        io::emit_plot_script({csv.string()}, io::PlotKind::monitor, (dir / "plot.py").string());
        const std::string script = io::read_file((dir / "plot.py").string());
        CHECK(script.find("grad_us2_sq") != std::string::npos);
        CHECK(script.find("entropy") != std::string::npos);
    }
    SECTION("refinement script carries the slope annotation hook") {
        const auto csv = dir / "refinement.csv";
        io::write_file(csv.string(),
                       "# fitted_order = 1.0\nlevel,distance_to_finest,observed_order\n1e-3,1e-4,1\n");
        io::emit_plot_script({csv.string()}, io::PlotKind::refinement, (dir / "plotr.py").string());
        const std::string script = io::read_file((dir / "plotr.py").string());
        CHECK(script.find("fitted_order") != std::string::npos);
        CHECK(script.find("loglog") != std::string::npos);
    }
}

TEST_CASE("check reports per-kind certificates under weak-only dominance") {
    // (s+1) a_ii = 4, off-row sum 1.9: strong margin 4 - 2.25*1.9 < 0,
    // weak margin 4 - 2*1.9 > 0, so only the weak-backed kinds certify
    auto res = parse_config("[model]\nn = 2\ns = 3.0\na = 1.0 1.9 ; 1.9 1.0\n");
    REQUIRE(res.ok());
    res.cfg.check_samples = 2000;
    res.cfg.output_dir = (std::filesystem::temp_directory_path() / "crossdiff_test" / "weak").string();
    std::filesystem::remove_all(res.cfg.output_dir);
    std::ostringstream out, err;
    const int rc = run_command(Subcommand::check, res.cfg, out, err);
    CHECK(rc == 1);
    const std::string report = out.str();
    CHECK(report.find("certificate L1: not constructible") != std::string::npos);
    CHECK(report.find("certificate L3: alpha1") != std::string::npos);
    CHECK(report.find("certificate L4: alpha1") != std::string::npos);
}

TEST_CASE("explicit detailed-balance weights are validated") {
    auto res = parse_config("[model]\nn = 2\na = 1.0 2.0 ; 1.0 1.0\npi = 1.0 1.0\n");
    REQUIRE_FALSE(res.ok());
    bool found = false;
    for (const auto& e : res.errors)
        if (e.find("detailed-balance") != std::string::npos) found = true;
    CHECK(found);
}
