#include <gtest/gtest.h>

#include <nedkit/cli.hpp>
#include <nedkit/scenario.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace nedkit;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = NEDKIT_SCENARIO_DIR;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nedkit_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int run_cli(const std::string& cmd, const fs::path& cfg, const fs::path& out, std::string* text = nullptr,
            std::string* err_text = nullptr) {
    cli::RunOptions o;
    o.command = cmd;
    o.config = cfg;
    o.out_dir = out;
    std::ostringstream so, se;
    const int rc = cli::run(o, so, se);
    if (text) *text = so.str();
    if (err_text) *err_text = se.str();
    return rc;
}

}  // namespace

TEST(ScenarioConfig, ParsesValuesAndComments) {
    const auto cfg = ScenarioConfig::parse(
        "# header\n"
        "constants.K = exp(2)   # trailing comment\n"
        "constants.alpha = 0.5*exp(1)\n"
        "projection.mask = 1 0\n"
        "perturbation.matrix = 0 1; 1 0\n"
        "run.flag = yes\n");
    EXPECT_DOUBLE_EQ(cfg.number("constants.K"), std::exp(2.0));
    EXPECT_DOUBLE_EQ(cfg.number("constants.alpha"), 0.5 * std::exp(1.0));
    EXPECT_EQ(cfg.vector("projection.mask"), Vec({1, 0}));
    EXPECT_EQ(cfg.matrix("perturbation.matrix"), Mat::from_rows({{0, 1}, {1, 0}}));
    EXPECT_TRUE(cfg.flag_or("run.flag", false));
    EXPECT_EQ(cfg.line_of("constants.alpha"), 3);
    EXPECT_TRUE(cfg.has_section("run"));
    EXPECT_FALSE(cfg.has_section("grid"));
    EXPECT_EQ(cfg.number_or("grid.h", 0.1), 0.1);
}

TEST(ScenarioConfig, ErrorsCarryLineNumbers) {
    auto line_of_error = [](const std::string& text) {
        try {
            const auto cfg = ScenarioConfig::parse(text);
            cfg.number("a.b");
        } catch (const ParseError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(line_of_error("a.b = 1\nnot a pair\n"), 2);
    EXPECT_EQ(line_of_error("a.b = 1\n\na.b = 2\n"), 3);
    EXPECT_EQ(line_of_error("nodot = 1\n"), 1);
    EXPECT_EQ(line_of_error("a.b =\n"), 1);
    EXPECT_EQ(line_of_error("x.y = 2\na.b = 1.5x\n"), 2);
    EXPECT_EQ(line_of_error("a.b = exp(\n"), 1);
    EXPECT_EQ(line_of_error("a.b = 1e400\n"), 1);
    try {
        ScenarioConfig::parse("x.y = 1\nbad line\n");
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(ScenarioConfig, MissingKeyAndRaggedMatrix) {
    const auto cfg = ScenarioConfig::parse("m.x = 1 2; 3\n");
    EXPECT_THROW(cfg.number("m.y"), ConfigurationError);
    EXPECT_THROW(cfg.matrix("m.x"), ParseError);
    EXPECT_THROW(scenario_seed(cfg), ConfigurationError);
}

TEST(Scenario, ExampleBuilders) {
    const auto cfg = ScenarioConfig::load(kScenarios / "example.cfg");
    const auto f = scenario_family(cfg);
    EXPECT_TRUE(f.is_closed_form());
    EXPECT_TRUE(f.ode().has_value());
    const auto p = scenario_projection(cfg, f.dim());
    EXPECT_EQ(p(0.0), Mat::diag({1, 0}));
    const auto c = scenario_constants(cfg);
    ASSERT_TRUE(c);
    EXPECT_DOUBLE_EQ(c->K, std::exp(2.0));
    EXPECT_EQ(scenario_grid(cfg).size(), 401u);
    EXPECT_NEAR(scenario_perturbation(cfg, 2).norm(1.0), 0.01 * std::exp(-2.0), 1e-16);
    EXPECT_EQ(scenario_seed(cfg), 20240101u);
}

TEST(Scenario, DefaultsAndBadValues) {
    const auto cfg = ScenarioConfig::parse("system.flavor = example\n");
    const auto c = scenario_constants(cfg);
    ASSERT_TRUE(c);
    EXPECT_DOUBLE_EQ(c->alpha, 2.0);
    EXPECT_DOUBLE_EQ(c->epsilon, 2.0);
    EXPECT_TRUE(scenario_perturbation(cfg, 2).is_zero());
    EXPECT_THROW(scenario_family(ScenarioConfig::parse("system.flavor = lorenz\n")), ParseError);
    EXPECT_THROW(scenario_family(ScenarioConfig::parse("system.omega = 1\nsystem.a = 2\n")), ParseError);
    EXPECT_THROW(scenario_projection(ScenarioConfig::parse("projection.mask = 1 0 1\n"), 2), ParseError);
    EXPECT_THROW(scenario_grid(ScenarioConfig::parse("grid.h = 0.3\ngrid.t_min = 0\ngrid.t_max = 1\n")), ParseError);
    EXPECT_THROW(scenario_constants(ScenarioConfig::parse("constants.K = 1\nconstants.alpha = -1\nconstants.epsilon = 0\n")),
                 ParseError);
}

TEST(Scenario, OdeFlavorAndTable) {
    const fs::path dir = scratch("table");
    {
        std::ofstream t(dir / "b.csv");
        t << "t,b11\n";
        for (int i = 0; i <= 20; ++i) t << -1 + 0.1 * i << "," << 0.5 << "\n";
    }
    {
        std::ofstream c(dir / "s.cfg");
        c << "system.flavor = ode\nsystem.A0 = -1\nprojection.mask = 1\n"
             "perturbation.profile = custom-table\nperturbation.table = b.csv\n";
    }
    const auto cfg = ScenarioConfig::load(dir / "s.cfg");
    const auto f = scenario_family(cfg);
    EXPECT_NEAR(f(1.0, 0.0)(0, 0), std::exp(-1.0), 1e-12);
    const auto b = scenario_perturbation(cfg, 1);
    EXPECT_DOUBLE_EQ(b(0.05)(0, 0), 0.5);
    EXPECT_THROW(b(2.0), InvalidInput);  // outside the table window
    EXPECT_THROW(scenario_constants(cfg).value(), std::bad_optional_access);
}

TEST(Cli, ExitCodes) {
    const fs::path out = scratch("exit");
    EXPECT_EQ(run_cli("verify-ned", kScenarios / "example.cfg", out), cli::Success);
    EXPECT_EQ(run_cli("verify-ned", kScenarios / "example_wrong_alpha.cfg", out), cli::Failure);
    EXPECT_EQ(run_cli("compute-q", kScenarios / "example.cfg", out), cli::Success);
    EXPECT_EQ(run_cli("compute-q", kScenarios / "example_large_delta.cfg", out), cli::Declined);
    EXPECT_EQ(run_cli("perturb", kScenarios / "example_large_delta.cfg", out), cli::Declined);
    EXPECT_EQ(run_cli("solve", kScenarios / "scalar_stable.cfg", out), cli::Success);
    std::string err;
    EXPECT_EQ(run_cli("verify-ned", kScenarios / "missing.cfg", out, nullptr, &err), cli::Failure);
    EXPECT_FALSE(err.empty());
}

TEST(Cli, MalformedConfigReportsLine) {
    const fs::path dir = scratch("bad");
    {
        std::ofstream c(dir / "bad.cfg");
        c << "system.flavor = example\n\ngrid.h = zero\n";
    }
    std::string err;
    EXPECT_EQ(run_cli("verify-ned", dir / "bad.cfg", dir, nullptr, &err), cli::Failure);
    EXPECT_NE(err.find("line 3"), std::string::npos) << err;
}

TEST(Cli, SeededCommandsNeedSeedAndAreDeterministic) {
    const fs::path dir = scratch("seed");
    {
        std::ofstream c(dir / "noseed.cfg");
        c << "system.flavor = example\ngrid.t_min = -4\ngrid.t_max = 4\n";
    }
    EXPECT_EQ(run_cli("norms", dir / "noseed.cfg", dir), cli::Failure);
    {
        std::ofstream c(dir / "seed.cfg");
        c << "system.flavor = example\ngrid.t_min = -4\ngrid.t_max = 4\nrun.seed = 11\nrun.samples = 50\n";
    }
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    EXPECT_EQ(run_cli("norms", dir / "seed.cfg", a), cli::Success);
    EXPECT_EQ(run_cli("norms", dir / "seed.cfg", b), cli::Success);
    const std::string ca = slurp(a / "norms.csv");
    EXPECT_EQ(ca, slurp(b / "norms.csv"));
    EXPECT_EQ(ca.substr(0, ca.find('\n')), "t,stable_part,unstable_part,total,upper_bound");
}

TEST(Cli, CsvHeaders) {
    const fs::path out = scratch("csv");
    ASSERT_EQ(run_cli("verify-ned", kScenarios / "example.cfg", out), cli::Success);
    ASSERT_EQ(run_cli("solve", kScenarios / "scalar_stable.cfg", out), cli::Success);
    auto header = [&](const char* f) {
        const std::string s = slurp(out / f);
        return s.substr(0, s.find('\n'));
    };
    EXPECT_EQ(header("verify_ned.csv"), "kind,t,s,lhs,bound,ratio");
    EXPECT_EQ(header("solution.csv"), "t,x_1");
    EXPECT_EQ(header("residuals.csv"), "t,s,residual,scale,relative");
}

TEST(Cli, CommandList) {
    const auto& c = cli::commands();
    EXPECT_EQ(c.size(), 8u);
    EXPECT_NE(std::find(c.begin(), c.end(), "demo-example"), c.end());
    cli::RunOptions o;
    o.command = "no-such-command";
    std::ostringstream so, se;
    EXPECT_EQ(cli::run(o, so, se), cli::Failure);
}
