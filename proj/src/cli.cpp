#include "robtrack/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <CLI11.hpp>

#include "robtrack/backtest.hpp"
#include "robtrack/divergence.hpp"
#include "robtrack/errors.hpp"
#include "robtrack/evaluate.hpp"
#include "robtrack/loss.hpp"
#include "robtrack/model.hpp"
#include "robtrack/rng.hpp"
#include "robtrack/solver.hpp"

#ifndef ROBTRACK_VERSION
#define ROBTRACK_VERSION "0.0.0"
#endif

namespace robtrack::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config access with field-path error messages

class Block {
public:
    Block(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) fail("", "expected an object");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(field(key) + ": " + what);
    }

    std::string field(const std::string& key) const {
        if (key.empty()) return path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    bool has(const std::string& key) const { return node_.contains(key) && !node_[key].is_null(); }

    Block block(const std::string& key) const {
        if (!has(key)) return Block(empty_object(), field(key));
        return Block(node_[key], field(key));
    }

    double number(const std::string& key) const {
        if (!has(key)) fail(key, "required");
        const json& v = node_[key];
        if (!v.is_number()) fail(key, "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(key, "must be finite");
        return x;
    }
    double number(const std::string& key, double fallback) const {
        return has(key) ? number(key) : fallback;
    }

    Index count(const std::string& key, Index fallback, Index minimum) const {
        if (!has(key)) return fallback;
        const json& v = node_[key];
        if (!v.is_number_integer()) fail(key, "expected an integer");
        const auto x = v.get<long long>();
        if (x < minimum) fail(key, "must be >= " + std::to_string(minimum));
        return static_cast<Index>(x);
    }

    Seed seed(const std::string& key, Seed fallback) const {
        if (!has(key)) return fallback;
        const json& v = node_[key];
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                       v.get<long long>() < 0)) {
            fail(key, "expected a non-negative integer");
        }
        return v.get<Seed>();
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        if (!node_[key].is_string()) fail(key, "expected a string");
        return node_[key].get<std::string>();
    }

    std::string choice(const std::string& key, const std::string& fallback,
                       const std::vector<std::string>& allowed) const {
        const std::string v = text(key, fallback);
        for (const auto& a : allowed) {
            if (v == a) return v;
        }
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        fail(key, "'" + v + "' is not one of: " + list);
    }

    std::vector<double> numbers(const std::string& key) const {
        if (!has(key)) fail(key, "required");
        const json& v = node_[key];
        if (!v.is_array() || v.empty()) fail(key, "expected a non-empty array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(key, "entry " + std::to_string(i) + " is not a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    Vector vector(const std::string& key) const {
        const auto xs = numbers(key);
        return Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
    }

    Matrix matrix(const std::string& key) const {
        if (!has(key)) fail(key, "required");
        const json& v = node_[key];
        if (!v.is_array() || v.empty()) fail(key, "expected an array of rows");
        const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
        Matrix m(static_cast<Index>(v.size()), static_cast<Index>(cols));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_array() || v[i].size() != cols || cols == 0) {
                fail(key, "row " + std::to_string(i) + " has the wrong length");
            }
            for (std::size_t j = 0; j < cols; ++j) {
                if (!v[i][j].is_number()) {
                    fail(key, "entry [" + std::to_string(i) + "][" + std::to_string(j) +
                                  "] is not a number");
                }
                m(static_cast<Index>(i), static_cast<Index>(j)) = v[i][j].get<double>();
            }
        }
        return m;
    }

    std::vector<Index> indices(const std::string& key) const {
        if (!has(key)) fail(key, "required");
        const json& v = node_[key];
        if (!v.is_array() || v.empty()) fail(key, "expected a non-empty array of integers");
        std::vector<Index> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_integer() || v[i].get<long long>() < 0) {
                fail(key, "entry " + std::to_string(i) + " is not a non-negative integer");
            }
            out.push_back(static_cast<Index>(v[i].get<long long>()));
        }
        return out;
    }

private:
    static const json& empty_object() {
        static const json obj = json::object();
        return obj;
    }

    const json& node_;
    std::string path_;
};

// ---------------------------------------------------------------------------
// Parsed configuration

struct ModelSpec {
    std::string kind;  // gaussian, student_t, csv, orlib
    Vector mean;
    Matrix scale;
    double dof = 0.0;
    std::optional<Vector> composition;
    std::vector<Index> tracked;  // empty = all columns
    // Price-file sources.
    fs::path path;
    std::string index_mode = "column";  // column or synthesized
    Index index_column = 0;
    std::vector<Index> assets;  // empty = every non-index column
    // Optional explicit actual law for the divergence command.
    std::optional<Vector> actual_mean;
    std::optional<Matrix> actual_scale;

    bool parametric() const { return kind == "gaussian" || kind == "student_t"; }

    NominalModel nominal() const {
        if (kind == "gaussian") return NominalModel::gaussian(mean, scale);
        return NominalModel::student_t(mean, scale, dof);
    }
};

Matrix read_scale(const Block& m, const std::string& matrix_key, const std::string& diag_key) {
    if (m.has(matrix_key)) return m.matrix(matrix_key);
    if (m.has(diag_key)) return m.vector(diag_key).asDiagonal();
    m.fail(matrix_key, "required (or give '" + diag_key + "' for a diagonal matrix)");
}

ModelSpec parse_model(const Block& root, bool allow_files, bool allow_parametric) {
    const Block m = root.block("model");
    ModelSpec s;
    s.kind = m.choice("kind", "gaussian", {"gaussian", "student_t", "csv", "orlib"});
    if (s.parametric()) {
        if (!allow_parametric) m.fail("kind", "this command needs a price file (csv or orlib)");
        s.mean = m.vector("mean");
        s.scale = read_scale(m, s.kind == "gaussian" ? "covariance" : "scale",
                             s.kind == "gaussian" ? "variances" : "scale_diagonal");
        if (s.scale.rows() != s.mean.size() || s.scale.cols() != s.mean.size()) {
            m.fail(s.kind == "gaussian" ? "covariance" : "scale",
                   "must be " + std::to_string(s.mean.size()) + "x" +
                       std::to_string(s.mean.size()) + " to match model.mean");
        }
        if (s.kind == "student_t") {
            s.dof = m.number("dof");
            if (!(s.dof > 0.0)) m.fail("dof", "must be > 0");
        }
        if (m.has("composition")) {
            s.composition = m.vector("composition");
            if (s.composition->size() != s.mean.size()) {
                m.fail("composition", "length must match model.mean");
            }
            try {
                IndexComposition check(*s.composition);
            } catch (const std::exception& e) {
                m.fail("composition", e.what());
            }
        }
        if (m.has("tracked")) {
            s.tracked = m.indices("tracked");
            for (Index c : s.tracked) {
                if (c >= s.mean.size()) m.fail("tracked", "column " + std::to_string(c) + " out of range");
            }
        }
        if (m.has("actual_mean")) {
            s.actual_mean = m.vector("actual_mean");
            if (s.actual_mean->size() != s.mean.size()) m.fail("actual_mean", "length must match model.mean");
        }
        if (m.has("actual_covariance")) {
            s.actual_scale = m.matrix("actual_covariance");
            if (s.actual_scale->rows() != s.mean.size() || s.actual_scale->cols() != s.mean.size()) {
                m.fail("actual_covariance", "shape must match model.covariance");
            }
        }
    } else {
        if (!allow_files) m.fail("kind", "this command needs a parametric model (gaussian or student_t)");
        s.path = m.text("path", "");
        if (s.path.empty()) m.fail("path", "required for price-file models");
        if (!fs::exists(s.path)) m.fail("path", "file not found: " + s.path.string());
        s.index_mode = m.choice("index", "column", {"column", "synthesized"});
        s.index_column = m.count("index_column", 0, 0);
        if (m.has("assets")) s.assets = m.indices("assets");
        if (s.index_mode == "synthesized") {
            s.composition = m.vector("composition");
        }
    }
    return s;
}

DivergenceBall parse_ball(const Block& root, bool need_eta) {
    const Block b = root.block("ball");
    DivergenceBall ball;
    ball.lambda = b.number("lambda", 0.1);
    if (ball.lambda < 0.0) b.fail("lambda", "must be >= 0");
    if (need_eta) {
        ball.eta = b.number("eta");
        if (!(ball.eta > 0.0)) b.fail("eta", "must be > 0");
    } else {
        ball.eta = b.number("eta", 0.0);
        if (ball.eta < 0.0) b.fail("eta", "must be >= 0");
    }
    return ball;
}

LossSpec parse_loss(const Block& root) {
    const Block l = root.block("loss");
    LossSpec spec;
    spec.kind = parse_loss_kind(l.choice("kind", "quadratic", {"quadratic", "l1", "l2"}));
    spec.epsilon = l.number("epsilon", 0.01);
    if (!(spec.epsilon > 0.0)) l.fail("epsilon", "must be > 0");
    return spec;
}

SolverConfig parse_solver(const Block& root) {
    const Block s = root.block("solver");
    SolverConfig cfg;
    cfg.max_iterations = static_cast<int>(s.count("max_iterations", 200, 1));
    cfg.residual_tol = s.number("residual_tol", 1e-8);
    if (!(cfg.residual_tol > 0.0)) s.fail("residual_tol", "must be > 0");
    cfg.init_alpha = s.number("init_alpha", 0.02);
    if (!(cfg.init_alpha > 0.0)) s.fail("init_alpha", "must be > 0");
    cfg.init_beta = s.number("init_beta", 0.01);
    cfg.init_theta = s.number("init_theta", -0.05);
    cfg.step_control = s.choice("step_control", "damped_newton", {"damped_newton", "trust_region"}) ==
                               "trust_region"
                           ? StepControl::TrustRegion
                           : StepControl::DampedNewton;
    if (s.has("init_u")) {
        cfg.init_u = InitWeights::Given;
        cfg.given_u = s.vector("init_u");
    }
    return cfg;
}

fs::path output_dir(const Block& root) {
    return root.block("io").text("out", "out");
}

// ---------------------------------------------------------------------------
// Output helpers

std::string num(double v, const char* format = "%.10g") {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const VectorCRef& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v(i)));
    return a;
}

class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void text(const std::string& name, const std::string& content) {
        std::ofstream f(dir_ / name, std::ios::binary);
        if (!f) throw ConfigError("io.out: cannot write " + (dir_ / name).string());
        f << content;
        files_.push_back(name);
    }
    void write_json(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

    void manifest(const std::string& command, const json& config, const json& seeds) {
        json m;
        m["tool"] = "track";
        m["version"] = ROBTRACK_VERSION;
        m["command"] = command;
        m["config"] = config;
        m["seeds"] = seeds;
        m["outputs"] = files_;
        std::ofstream f(dir_ / "manifest.json", std::ios::binary);
        if (!f) throw ConfigError("io.out: cannot write manifest");
        f << m.dump(2) << "\n";
    }

    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

json report_json(const ComparisonReport& r) {
    return {{"bt_percent", r.bt_percent},
            {"bt_percent_excl_ties", finite_or_null(r.bt_percent_excl_ties)},
            {"ete_robust", r.ete_robust},
            {"ete_nonrobust", r.ete_nonrobust},
            {"ete_diff", r.ete_diff},
            {"eei_robust", r.eei_robust},
            {"eei_nonrobust", r.eei_nonrobust},
            {"eei_diff", r.eei_diff},
            {"n", r.n},
            {"tie_count", r.tie_count}};
}

// ---------------------------------------------------------------------------
// Scenario construction

struct HistoricalData {
    Matrix assets;  // simple returns of the held assets
    Vector index;   // simple returns of the index
    std::vector<std::string> names;
};

HistoricalData load_history(const ModelSpec& s) {
    const PriceTable prices = s.kind == "orlib" ? read_orlib_prices(s.path) : read_prices_csv(s.path);
    const ReturnTable rt = prices_to_returns(prices);
    const Index cols = rt.returns.cols();
    std::vector<Index> assets = s.assets;
    if (assets.empty()) {
        for (Index c = 0; c < cols; ++c) {
            if (s.index_mode == "synthesized" || c != s.index_column) assets.push_back(c);
        }
    }
    for (Index c : assets) {
        if (c >= cols) {
            throw ConfigError("model.assets: column " + std::to_string(c) + " out of range (file has " +
                              std::to_string(cols) + " columns)");
        }
    }
    HistoricalData h;
    h.assets = select_columns(rt.returns, assets);
    for (Index c : assets) {
        h.names.push_back(static_cast<std::size_t>(c) < rt.header.size()
                              ? rt.header[static_cast<std::size_t>(c)]
                              : "col" + std::to_string(c));
    }
    if (s.index_mode == "column") {
        if (s.index_column >= cols) throw ConfigError("model.index_column: out of range");
        h.index = rt.returns.col(s.index_column);
    } else {
        if (s.composition->size() != h.assets.cols()) {
            throw ConfigError("model.composition: length must match the number of assets");
        }
        h.index = synthesize_index(h.assets, IndexComposition(*s.composition));
    }
    return h;
}

std::vector<Index> tracked_or_all(const ModelSpec& s) {
    if (!s.tracked.empty()) return s.tracked;
    std::vector<Index> all;
    for (Index c = 0; c < s.mean.size(); ++c) all.push_back(c);
    return all;
}

IndexComposition composition_or_fail(const ModelSpec& s) {
    if (!s.composition) throw ConfigError("model.composition: required for simulated index returns");
    return IndexComposition(*s.composition);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_divergence(const json& config, std::ostream& out) {
    const Block root(config, "");
    const ModelSpec model = parse_model(root, false, true);
    const DivergenceBall ball = parse_ball(root, false);
    const Block b = root.block("ball");
    const Block ex = root.block("experiment");
    const Index n = ex.count("n", 100000, 2);
    const Seed seed = ex.seed("seed", 1);
    const std::string sign = b.choice("sign", "both", {"+", "-", "both"});
    std::vector<double> grid;
    if (b.has("eta_grid")) grid = b.numbers("eta_grid");
    for (double e : grid) {
        if (!(e >= 0.0)) b.fail("eta_grid", "entries must be >= 0");
    }
    std::optional<double> k;
    if (b.has("k")) k = b.number("k");
    Outputs files(output_dir(root));

    const NominalModel nominal = model.nominal();
    json report;
    report["lambda"] = ball.lambda;
    std::ostringstream csv;

    const bool have_actual = k || model.actual_mean || model.actual_scale;
    if (have_actual) {
        const Vector mu2 = model.actual_mean ? *model.actual_mean
                           : k                ? Vector(*k * model.mean)
                                              : model.mean;
        const Matrix S2 = model.actual_scale ? *model.actual_scale : model.scale;
        const NominalModel actual = model.kind == "gaussian"
                                        ? NominalModel::gaussian(mu2, S2)
                                        : NominalModel::student_t(mu2, S2, model.dof);
        const Seed mc_seed = derive_seed(seed, 3);
        const EtaEstimate mc = eta_from_ratio_mc(nominal, actual, ball.lambda, n, mc_seed);
        json pair;
        pair["mc_estimate"] = finite_or_null(mc.estimate);
        pair["mc_std_error"] = finite_or_null(mc.std_error);
        pair["mc_n"] = n;
        pair["mc_overflow"] = mc.overflow;
        out << "monte carlo: " << num(mc.estimate) << " (std error " << num(mc.std_error)
            << ", n = " << n << ")\n";
        if (model.kind == "gaussian") {
            const double closed = divergence_gaussian(model.mean, model.scale, mu2, S2, ball.lambda);
            pair["closed_form"] = closed;
            out << "closed form: " << num(closed) << "\n";
            if (mc.std_error > 0.0 && std::isfinite(mc.estimate)) {
                const double z = (mc.estimate - closed) / mc.std_error;
                pair["z_score"] = z;
                out << "consistency: |mc - closed| = " << num(std::abs(z), "%.3f")
                    << " std errors\n";
            }
        }
        report["pair"] = pair;
    }

    if (!grid.empty()) {
        if (model.kind != "gaussian") root.fail("model.kind", "eta_grid needs a Gaussian model");
        json table = json::array();
        csv << "eta,sign,k,roundtrip_eta\n";
        out << "eta        sign  k\n";
        for (double e : grid) {
            for (KSign s : {KSign::Minus, KSign::Plus}) {
                if ((s == KSign::Minus && sign == "+") || (s == KSign::Plus && sign == "-")) continue;
                const double kv = k_from_eta(e, ball.lambda, model.mean, model.scale, s);
                const double back =
                    divergence_gaussian_equal_cov(model.mean, kv * model.mean, model.scale, ball.lambda);
                const char* tag = s == KSign::Minus ? "-" : "+";
                table.push_back({{"eta", e}, {"sign", tag}, {"k", kv}, {"roundtrip_eta", back}});
                csv << num(e) << "," << tag << "," << num(kv, "%.10f") << "," << num(back, "%.15g")
                    << "\n";
                char line[96];
                std::snprintf(line, sizeof line, "%-10g %-5s %.4f\n", e, tag, kv);
                out << line;
            }
        }
        report["k_table"] = table;
    }
    if (!have_actual && grid.empty()) {
        root.fail("ball", "give k, eta_grid, or model.actual_mean / model.actual_covariance");
    }

    files.write_json("report.json", report);
    if (!grid.empty()) files.text("report.csv", csv.str());
    files.manifest("divergence", config, {{"seed", seed}, {"mc", derive_seed(seed, 3)}});
    return kOk;
}

int cmd_solve(const json& config, std::ostream& out) {
    const Block root(config, "");
    const ModelSpec model = parse_model(root, true, true);
    const DivergenceBall ball = parse_ball(root, true);
    const LossSpec loss = parse_loss(root);
    const SolverConfig solver = parse_solver(root);
    const Block ex = root.block("experiment");
    const Seed seed = ex.seed("seed", 1);
    const Index n = ex.count("n", 200000, 1);
    const Index window = ex.count("window", 0, 0);
    Outputs files(output_dir(root));

    ScenarioSet sc;
    std::vector<std::string> names;
    json seeds = {{"seed", seed}};
    if (model.parametric()) {
        const auto tracked = tracked_or_all(model);
        const Seed fit_seed = derive_seed(seed, 1);
        seeds["fit"] = fit_seed;
        sc = tracking_scenarios(sample(model.nominal(), n, fit_seed), composition_or_fail(model),
                                tracked, fit_seed);
        for (Index c : tracked) names.push_back("asset" + std::to_string(c));
    } else {
        const HistoricalData h = load_history(model);
        const Index rows = window > 0 ? std::min<Index>(window, h.assets.rows()) : h.assets.rows();
        sc = scenarios_from(h.assets.topRows(rows), h.index.head(rows), 0,
                            ScenarioSource::HistoricalWindow);
        names = h.names;
    }

    const Vector u_n = solve_nonrobust(sc, loss);
    const RobustSolution sol = solve_robust(sc, ball, loss, solver);

    json report;
    report["status"] = to_string(sol.status);
    report["message"] = sol.message;
    report["lambda"] = ball.lambda;
    report["eta"] = ball.eta;
    report["loss"] = to_string(loss.kind);
    report["epsilon"] = loss.epsilon;
    report["scenarios"] = sc.size();
    report["u_robust"] = to_json(sol.u);
    report["u_nonrobust"] = to_json(u_n);
    report["alpha"] = sol.alpha;
    report["beta"] = sol.beta;
    report["theta"] = sol.theta;
    report["residual_norm"] = finite_or_null(sol.residual_norm);
    report["iterations"] = sol.iterations;
    report["hessian_max_eig"] = sol.hessian_max_eig;
    if (sol.estar.size() > 0) {
        double g = 0.0;
        for (Index i = 0; i < sol.estar.size(); ++i) g += scalar_G(sol.estar(i), ball.lambda);
        report["mean_estar"] = sol.estar.mean();
        report["mean_G_estar"] = g / static_cast<double>(sol.estar.size());
        report["min_estar"] = sol.estar.minCoeff();
    }
    report["beta_over_alpha"] = sol.beta / sol.alpha;
    report["in_sample_ete_robust"] = tracking_error(sol.u, sc, loss).mean();
    report["in_sample_ete_nonrobust"] = tracking_error(u_n, sc, loss).mean();

    std::ostringstream csv;
    csv << "asset,u_robust,u_nonrobust\n";
    out << "asset        robust     non-robust\n";
    for (Index i = 0; i < sc.dimension(); ++i) {
        const std::string& name = names[static_cast<std::size_t>(i)];
        csv << name << "," << num(sol.u(i), "%.12g") << "," << num(u_n(i), "%.12g") << "\n";
        char line[128];
        std::snprintf(line, sizeof line, "%-12s %9.4f  %9.4f\n", name.c_str(), sol.u(i), u_n(i));
        out << line;
    }
    out << "status " << to_string(sol.status) << ", iterations " << sol.iterations
        << ", residual " << num(sol.residual_norm, "%.3e") << "\n";
    out << "alpha " << num(sol.alpha) << ", beta " << num(sol.beta) << ", theta "
        << num(sol.theta) << ", hessian max eigenvalue " << num(sol.hessian_max_eig, "%.3e")
        << "\n";

    files.write_json("report.json", report);
    files.text("report.csv", csv.str());
    files.manifest("solve", config, seeds);
    if (!sol.converged()) {
        std::cerr << "track: robust solve did not converge: " << sol.message << "\n";
        return kNonConvergence;
    }
    return kOk;
}

int cmd_simulate(const json& config, std::ostream& out) {
    const Block root(config, "");
    const ModelSpec model = parse_model(root, false, true);
    const LossSpec loss = parse_loss(root);
    const SolverConfig solver = parse_solver(root);
    const Block b = root.block("ball");
    const Block ex = root.block("experiment");
    const double lambda = b.number("lambda", 0.1);
    if (lambda < 0.0) b.fail("lambda", "must be >= 0");

    std::vector<TableRowSpec> rows;
    if (b.has("k_grid")) {
        for (double k : b.numbers("k_grid")) rows.push_back({lambda, std::nullopt, KSign::Minus, k});
    } else {
        std::vector<double> etas;
        if (b.has("eta_grid")) {
            etas = b.numbers("eta_grid");
        } else {
            etas.push_back(b.number("eta"));
        }
        const std::string sign = b.choice("sign", "-", {"+", "-"});
        for (double e : etas) {
            if (!(e > 0.0)) b.fail("eta_grid", "entries must be > 0");
            rows.push_back({lambda, e, sign == "+" ? KSign::Plus : KSign::Minus, std::nullopt});
        }
    }

    const Index n = ex.count("n", 200000, 1);
    TableConfig cfg(model.nominal(), composition_or_fail(model));
    cfg.tracked = tracked_or_all(model);
    cfg.rows = rows;
    cfg.loss = loss;
    cfg.n_fit = n;
    cfg.n_eval = ex.count("n_eval", n, 1);
    cfg.n_eta = ex.count("n_eta", n, 2);
    cfg.seed = ex.seed("seed", 1);
    cfg.tie_policy = parse_tie_policy(ex.choice("tie_policy", "include", {"include", "exclude"}));
    cfg.tie_tol = ex.number("tie_tol", 1e-12);
    cfg.eta_floor = ex.number("eta_floor", 1e-8);
    cfg.solver = solver;
    Outputs files(output_dir(root));

    const TableResult table = run_table(cfg);

    std::ostringstream csv;
    csv << "# ete_* and eei_* columns are in units of 1e-4 (value x 10^4)\n";
    csv << "lambda,eta,k,eta_std_error,bt_percent,bt_percent_excl_ties,ete_robust,ete_nonrobust,"
           "ete_diff,eei_robust,eei_nonrobust,eei_diff,n,tie_count,status,note\n";
    json rows_json = json::array();
    int failures = 0;
    out << "eta        k          BT%     BTx%    ETE diff(1e-4)  EEI diff(1e-4)\n";
    for (const TableRow& r : table.rows) {
        const ComparisonReport& c = r.report;
        const std::string note = r.note;
        csv << num(r.spec.lambda) << "," << num(r.eta) << "," << num(r.k, "%.6f") << ","
            << num(r.eta_std_error) << "," << num(c.bt_percent, "%.4f") << ","
            << num(c.bt_percent_excl_ties, "%.4f") << "," << num(c.ete_robust * 1e4, "%.6f") << ","
            << num(c.ete_nonrobust * 1e4, "%.6f") << "," << num(c.ete_diff * 1e4, "%.6f") << ","
            << num(c.eei_robust * 1e4, "%.6f") << "," << num(c.eei_nonrobust * 1e4, "%.6f") << ","
            << num(c.eei_diff * 1e4, "%.6f") << "," << c.n << "," << c.tie_count << ","
            << (r.ok ? "ok" : "failed") << ",\"" << note << "\"\n";
        json j = report_json(c);
        j["lambda"] = r.spec.lambda;
        j["eta"] = r.eta;
        j["eta_estimate"] = r.eta_estimate;
        j["eta_std_error"] = r.eta_std_error;
        j["eta_from_mc"] = r.eta_from_mc;
        j["k"] = r.k;
        j["ok"] = r.ok;
        j["status"] = to_string(r.status);
        j["iterations"] = r.iterations;
        j["residual_norm"] = finite_or_null(r.residual_norm);
        j["u_robust"] = to_json(r.u_robust);
        j["note"] = note;
        rows_json.push_back(j);
        if (!r.ok) {
            ++failures;
            std::cerr << "track: row k=" << num(r.k) << " failed: " << note << "\n";
        }
        char line[160];
        std::snprintf(line, sizeof line, "%-10.4g %-10.4f %-7.2f %-7.2f %-15.4f %-15.4f\n", r.eta,
                      r.k, c.bt_percent, c.bt_percent_excl_ties, c.ete_diff * 1e4, c.eei_diff * 1e4);
        out << line;
    }
    json report = {{"u_nonrobust", to_json(table.u_nonrobust)},
                   {"loss", to_string(loss.kind)},
                   {"epsilon", loss.epsilon},
                   {"tie_policy", to_string(cfg.tie_policy)},
                   {"rows", rows_json}};
    files.write_json("report.json", report);
    files.text("report.csv", csv.str());
    files.manifest("simulate", config,
                   {{"seed", cfg.seed},
                    {"fit", table.fit_seed},
                    {"eval", table.eval_seed},
                    {"eta", table.eta_seed}});
    return failures == 0 ? kOk : kNonConvergence;
}

int cmd_backtest(const json& config, std::ostream& out) {
    const Block root(config, "");
    const ModelSpec model = parse_model(root, true, false);
    BacktestConfig cfg;
    cfg.ball = parse_ball(root, true);
    cfg.loss = parse_loss(root);
    cfg.solver = parse_solver(root);
    const Block ex = root.block("experiment");
    cfg.window = ex.count("window", 104, 1);
    cfg.out_of_sample = ex.count("out_of_sample", 52, 1);
    cfg.tie_tol = ex.number("tie_tol", 1e-12);
    Outputs files(output_dir(root));

    const HistoricalData h = load_history(model);
    if (cfg.window < h.assets.cols() + 3) {
        ex.fail("window", "must be at least the number of assets + 3");
    }
    const BacktestResult res = backtest_sliding(h.assets, h.index, cfg);

    std::ostringstream csv;
    csv << "period,window_begin,window_end,loss_robust,loss_nonrobust,exact_robust,exact_nonrobust,"
           "ei_robust,ei_nonrobust,robust_wins,tie,status,carried_forward\n";
    json steps = json::array();
    for (const BacktestStep& s : res.steps) {
        csv << s.period << "," << s.window_begin << "," << s.window_end << ","
            << num(s.loss_robust, "%.12g") << "," << num(s.loss_nonrobust, "%.12g") << ","
            << num(s.exact_robust, "%.12g") << "," << num(s.exact_nonrobust, "%.12g") << ","
            << num(s.ei_robust, "%.12g") << "," << num(s.ei_nonrobust, "%.12g") << ","
            << s.robust_wins << "," << s.tie << "," << to_string(s.status) << ","
            << s.carried_forward << "\n";
        steps.push_back({{"period", s.period},
                         {"window", {s.window_begin, s.window_end}},
                         {"u_robust", to_json(s.u_robust)},
                         {"u_nonrobust", to_json(s.u_nonrobust)},
                         {"loss_robust", s.loss_robust},
                         {"loss_nonrobust", s.loss_nonrobust},
                         {"robust_wins", s.robust_wins},
                         {"tie", s.tie},
                         {"status", to_string(s.status)},
                         {"carried_forward", s.carried_forward},
                         {"note", s.note}});
    }
    std::ostringstream plot;
    plot << "period,observed,fitted,sample\n";
    for (const PlotPoint& p : res.plot) {
        plot << p.period << "," << num(p.observed, "%.12g") << "," << num(p.fitted, "%.12g") << ","
             << (p.in_sample ? "in" : "out") << "\n";
    }

    json report = {{"assets", h.names},
                   {"initial_u_robust", to_json(res.initial.u)},
                   {"initial_u_nonrobust", to_json(res.initial_nonrobust)},
                   {"initial_status", to_string(res.initial.status)},
                   {"ete_in_sample_robust", res.ete_in_sample_robust},
                   {"ete_in_sample_nonrobust", res.ete_in_sample_nonrobust},
                   {"ete_out_of_sample_robust", res.ete_out_of_sample_robust},
                   {"ete_out_of_sample_nonrobust", res.ete_out_of_sample_nonrobust},
                   {"wins", res.wins},
                   {"ties", res.ties},
                   {"steps", res.steps_count},
                   {"bt_percent", res.bt_percent},
                   {"failed_steps", res.failed_steps},
                   {"per_step", steps}};
    files.write_json("report.json", report);
    files.text("report.csv", csv.str());
    files.text("plot.csv", plot.str());
    files.manifest("backtest", config, {{"seed", 0}});

    out << "out-of-sample BT: " << res.wins << "/" << res.steps_count << " ("
        << num(res.bt_percent, "%.2f") << "%)\n";
    out << "ETE in-sample robust " << num(res.ete_in_sample_robust, "%.4e") << ", non-robust "
        << num(res.ete_in_sample_nonrobust, "%.4e") << "\n";
    out << "ETE out-of-sample robust " << num(res.ete_out_of_sample_robust, "%.4e")
        << ", non-robust " << num(res.ete_out_of_sample_nonrobust, "%.4e") << "\n";
    if (res.failed_steps > 0) {
        out << res.failed_steps << " step(s) reused the previous robust weights\n";
    }
    return kOk;
}

}  // namespace

json load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config: cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config: " + path.string() + " is not valid JSON: " + e.what());
    }
}

void apply_overrides(json& config, const Overrides& o) {
    if (!config.is_object()) throw ConfigError("config: top level must be an object");
    auto block = [&](const char* name) -> json& {
        json& b = config[name];
        if (b.is_null()) b = json::object();
        if (!b.is_object()) throw ConfigError(std::string(name) + ": expected an object");
        return b;
    };
    if (o.seed) block("experiment")["seed"] = *o.seed;
    if (o.out) block("io")["out"] = *o.out;
    if (o.lambda) block("ball")["lambda"] = *o.lambda;
    if (o.eta) {
        json& b = block("ball");
        b["eta"] = *o.eta;
        b.erase("eta_grid");
    }
    if (o.loss) block("loss")["kind"] = *o.loss;
    if (o.epsilon) block("loss")["epsilon"] = *o.epsilon;
}

int run_command(const std::string& command, const json& config, std::ostream& out) {
    if (command == "divergence") return cmd_divergence(config, out);
    if (command == "solve") return cmd_solve(config, out);
    if (command == "simulate") return cmd_simulate(config, out);
    if (command == "backtest") return cmd_backtest(config, out);
    throw ConfigError("command: unknown command '" + command + "'");
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Robust index tracking under a divergence ambiguity ball", "track"};
    app.set_version_flag("--version", std::string(ROBTRACK_VERSION));
    std::string command;
    std::string config_path;
    Overrides o;
    std::string loss;
    app.add_option("command", command, "divergence | solve | simulate | backtest")
        ->required()
        ->check(CLI::IsMember({"divergence", "solve", "simulate", "backtest"}));
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--lambda", o.lambda, "Divergence exponent (0 = Kullback-Leibler)");
    app.add_option("--eta", o.eta, "Ball radius");
    app.add_option("--loss", o.loss, "Tracking loss")->check(CLI::IsMember({"quadratic", "l1", "l2"}));
    app.add_option("--epsilon", o.epsilon, "Smoothing width of the l1/l2 losses");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        json config = load_config(config_path);
        apply_overrides(config, o);
        return run_command(command, config, std::cout);
    } catch (const ConfigError& e) {
        std::cerr << "track: config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        std::cerr << "track: data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericalError& e) {
        std::cerr << "track: numerical error: " << e.what() << "\n";
        return kNonConvergence;
    } catch (const std::invalid_argument& e) {
        std::cerr << "track: invalid input: " << e.what() << "\n";
        return kConfigError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "track: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "track: error: " << e.what() << "\n";
        return kDataError;
    }
}

}  // namespace robtrack::cli
