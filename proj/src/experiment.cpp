#include "mfnn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mfnn/autodiff/kernels.hpp"
#include "mfnn/config.hpp"
#include "mfnn/error.hpp"
#include "mfnn/io.hpp"

namespace mfnn {

using nlohmann::json;

namespace {

constexpr const char* version = "0.1.0";

[[noreturn]] void invalid(const std::string& what) {
    throw Error(ErrorKind::config_invalid, what);
}

/// Typed access to one config object; every key must be consumed.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) invalid(name_ + " must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_string()) invalid(path(key) + " must be a string");
        return v.get<std::string>();
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_number()) invalid(path(key) + " must be a number");
        return v.get<double>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_boolean()) invalid(path(key) + " must be true or false");
        return v.get<bool>();
    }

    std::uint64_t count(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        return as_count(raw(key), path(key));
    }

    std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_array()) invalid(path(key) + " must be an array");
        std::vector<std::size_t> out;
        for (const auto& e : v) out.push_back(as_count(e, path(key)));
        return out;
    }

    Section sub(const std::string& key) { return Section(raw(key), path(key)); }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) invalid("unknown key " + path(key));
        }
    }

    std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

private:
    static std::uint64_t as_count(const json& v, const std::string& where) {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
        invalid(where + " must be a non-negative integer");
    }

    const json& j_;
    std::string name_;
    std::set<std::string> used_;
};

BinGrid parse_grid(Section s) {
    const double lo = s.number("lo", 0.0);
    const double hi = s.number("hi", 1.0);
    const std::uint64_t k = s.count("K", 0);
    if (!s.has("lo") || !s.has("hi") || !s.has("K")) invalid(s.path("") + " needs lo, hi and K");
    s.finish();
    if (!(hi > lo) || k == 0) invalid("grid needs hi > lo and K >= 1");
    return BinGrid(lo, hi, k);
}

ArchitectureConfig parse_arch_section(Section s, ArchitectureConfig a) {
    a.arch = parse_arch(s.string("type", to_string(a.arch)));
    a.activation = ad::parse_activation(s.string("activation", ad::to_string(a.activation)));
    a.hidden = s.counts("hidden", a.hidden);
    a.deeponet_width = s.count("deeponet_width", a.deeponet_width);
    a.inner_hidden = s.counts("inner_hidden", a.inner_hidden);
    a.latent = s.count("latent", a.latent);
    a.outer_hidden = s.counts("outer_hidden", a.outer_hidden);
    s.finish();
    return a;
}

json arch_json(const ArchitectureConfig& a) {
    return {{"type", to_string(a.arch)},         {"activation", ad::to_string(a.activation)},
            {"hidden", a.hidden},                {"deeponet_width", a.deeponet_width},
            {"inner_hidden", a.inner_hidden},    {"latent", a.latent},
            {"outer_hidden", a.outer_hidden}};
}

EvaluationConfig parse_evaluation(Section s, bool with_steps) {
    EvaluationConfig e;
    if (s.has("tests")) {
        const json& t = s.raw("tests");
        if (!t.is_array()) invalid("evaluation.tests must be an array");
        e.tests.clear();
        for (const auto& v : t) {
            if (!v.is_number_integer() || v.get<int>() < 1 || v.get<int>() > 3) invalid("evaluation.tests holds 1, 2 or 3");
            e.tests.push_back(v.get<int>());
        }
    }
    e.samples = s.count("samples", e.samples);
    e.test2 = parse_test2_variant(s.string("test2", to_string(e.test2)));
    e.reference_samples = s.count("reference_samples", e.reference_samples);
    if (with_steps) e.steps = s.counts("steps", e.steps);
    s.finish();
    if (e.samples == 0 || e.reference_samples == 0) invalid("evaluation sample sizes must be >= 1");
    return e;
}

json evaluation_json(const EvaluationConfig& e, bool with_steps) {
    json j{{"tests", e.tests},
           {"samples", e.samples},
           {"test2", to_string(e.test2)},
           {"reference_samples", e.reference_samples}};
    if (with_steps) j["steps"] = e.steps;
    return j;
}

PdeProblem parse_problem(Section s) {
    PdeProblem p;
    p.T = s.number("T", p.T);
    p.kappa = s.number("kappa", p.kappa);
    p.sigma = s.number("sigma", p.sigma);
    p.a = s.number("a", p.a);
    p.steps = s.count("N_T", p.steps);
    if (s.has("grid")) p.grid = parse_grid(s.sub("grid"));
    const std::string kernel = s.string("kernel", "cos");
    if (kernel != "cos") invalid("problem.kernel: only \"cos\" is available from a config");
    s.finish();
    p.validate();
    return p;
}

json problem_json(const PdeProblem& p) {
    return {{"T", p.T},   {"kappa", p.kappa},         {"sigma", p.sigma}, {"a", p.a},
            {"N_T", p.steps}, {"grid", to_json(p.grid)}, {"kernel", "cos"}};
}

ExperimentConfig parse_checked(const json& root_in) {
    const json* root = &root_in;
    if (root_in.is_object() && root_in.contains("tool") && root_in.contains("config")) root = &root_in.at("config");
    Section top(*root, "");
    ExperimentConfig c;
    c.kind = parse_experiment_kind(top.string("kind", ""));
    c.seed = top.count("seed", 0);
    c.output = top.string("output", c.output);

    switch (c.kind) {
    case ExperimentKind::static_fit: {
        c.target = parse_target(top.string("target", to_string(c.target)));
        if (top.has("arch")) c.train.arch = parse_arch_section(top.sub("arch"), c.train.arch);
        c.train.samples = moment_based(c.target) ? 5000 : 10000;
        if (top.has("training")) {
            Section t = top.sub("training");
            c.train.batch_measures = t.count("batch_measures", c.train.batch_measures);
            c.train.samples = t.count("samples", c.train.samples);
            c.train.iterations = t.count("iterations", c.train.iterations);
            c.train.lr = t.number("lr", c.train.lr);
            c.train.eval_every = t.count("eval_every", c.train.eval_every);
            c.train.heldout = t.count("heldout", c.train.heldout);
            c.train.heldout_samples = t.count("heldout_samples", c.train.heldout_samples);
            c.train.fixed_pool = t.boolean("fixed_pool", c.train.fixed_pool);
            c.train.pool_size = t.count("pool_size", c.train.pool_size);
            if (t.has("grid")) c.train.grid = parse_grid(t.sub("grid"));
            if (t.has("law_grid")) c.train.law_grid = parse_grid(t.sub("law_grid"));
            t.finish();
        }
        c.train.seed = c.seed;
        c.train.validate();
        if (top.has("evaluation")) c.evaluation = parse_evaluation(top.sub("evaluation"), false);
        break;
    }
    case ExperimentKind::pde_solve: {
        c.solver.mode = parse_solver_mode(top.string("mode", to_string(c.solver.mode)));
        if (top.has("arch")) c.solver.arch = parse_arch_section(top.sub("arch"), c.solver.arch);
        if (top.has("solver")) {
            Section t = top.sub("solver");
            c.solver.batch_measures = t.count("batch_measures", c.solver.batch_measures);
            c.solver.samples = t.count("samples", c.solver.samples);
            c.solver.iterations = t.count("iterations", c.solver.iterations);
            c.solver.lr = t.number("lr", c.solver.lr);
            c.solver.warm_start = t.boolean("warm_start", c.solver.warm_start);
            t.finish();
        }
        if (top.has("problem")) c.problem = parse_problem(top.sub("problem"));
        c.solver.seed = c.seed;
        c.solver.validate();
        if (c.solver.arch.arch == Arch::deeponet) invalid("arch.type: the PDE solvers use bin or cylindrical nets");
        if (top.has("evaluation")) c.evaluation = parse_evaluation(top.sub("evaluation"), true);
        for (const auto i : c.evaluation.steps) {
            if (i > c.problem.steps) invalid("evaluation.steps: index beyond N_T");
        }
        break;
    }
    case ExperimentKind::property_suite: {
        if (top.has("problem")) c.problem = parse_problem(top.sub("problem"));
        if (top.has("residual")) {
            Section r = top.sub("residual");
            c.residual.steps = r.counts("N_T", c.residual.steps);
            c.residual.samples = r.count("samples", c.residual.samples);
            const std::string est = r.string("estimator", "conditional");
            if (est == "conditional") {
                c.residual.estimator = ResidualEstimator::conditional;
            } else if (est == "monte_carlo") {
                c.residual.estimator = ResidualEstimator::monte_carlo;
            } else {
                invalid("residual.estimator must be conditional or monte_carlo");
            }
            r.finish();
        }
        if (c.residual.steps.size() < 2) invalid("residual.N_T needs at least two values");
        for (const auto n : c.residual.steps) {
            if (n == 0) invalid("residual.N_T values must be >= 1");
        }
        if (c.residual.samples < 2) invalid("residual.samples must be >= 2");
        break;
    }
    }
    top.finish();
    return c;
}

void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + p.string() + ": " + ec.message());
}

std::string padded(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return buf;
}

struct Artifacts {
    std::filesystem::path dir;
    CsvTable loss{{"stage", "iteration", "loss"}};
    CsvTable heldout{{"iteration", "mse"}};
    CsvTable tests{{"test_id", "t_i", "mse"}};
    std::optional<CsvTable> residual;
    std::vector<std::string> files;
    json summary = json::object();

    void checkpoint(const std::string& name, const MeanFieldNet& net) {
        const std::string rel = "checkpoints/" + name;
        save_checkpoint((dir / rel).string(), net);
        files.push_back(rel);
    }
};

void run_static(const ExperimentConfig& c, Artifacts& art) {
    TrainObserver obs;
    obs.on_loss = [&](std::size_t it, double loss) {
        art.loss.add_row({"0", std::to_string(it), format_double(loss)});
    };
    obs.on_heldout = [&](std::size_t it, double mse) { art.heldout.add_row({std::to_string(it), format_double(mse)}); };
    const TrainResult r = train(c.train, c.target, obs);
    art.checkpoint("net.ckpt", r.net);
    if (!r.heldout_history.empty()) {
        art.summary["heldout_initial"] = r.heldout_history.front().value;
        art.summary["heldout_final"] = r.heldout_history.back().value;
    }
    const GeneralizationOptions opts{c.evaluation.test2, c.evaluation.reference_samples};
    for (const int test : c.evaluation.tests) {
        const double mse = generalization_error(r.net, c.target, test, c.evaluation.samples, c.seed, opts);
        art.tests.add_row({std::to_string(test), format_double(0.0), format_double(mse)});
    }
}

void run_pde(const ExperimentConfig& c, Artifacts& art) {
    SolveObserver obs;
    obs.on_loss = [&](std::size_t stage, std::size_t it, double loss) {
        art.loss.add_row({std::to_string(stage), std::to_string(it), format_double(loss)});
    };
    const PdeSolution sol = solve(c.problem, c.solver, obs);
    if (is_local(sol.mode)) {
        for (std::size_t i = 0; i < sol.u.size(); ++i) art.checkpoint("u_" + padded(i) + ".ckpt", sol.u[i]);
        for (std::size_t i = 0; i < sol.z.size(); ++i) art.checkpoint("z_" + padded(i) + ".ckpt", sol.z[i]);
    } else {
        art.checkpoint(sol.mode == SolverMode::global_bsde ? "u0.ckpt" : "u.ckpt", sol.u[0]);
        if (!sol.z.empty()) art.checkpoint("z.ckpt", sol.z[0]);
    }
    for (const int test : c.evaluation.tests) {
        const auto rows = evaluate_pde_mse(sol, test, c.evaluation.steps, c.evaluation.samples, c.seed, c.evaluation.test2);
        for (const auto& r : rows) art.tests.add_row({std::to_string(test), format_double(r.t), format_double(r.mse)});
    }
}

void run_properties(const ExperimentConfig& c, Artifacts& art) {
    art.residual.emplace(std::vector<std::string>{"n_t", "dt", "residual", "flipped_residual"});
    std::vector<double> dts, rs, flipped;
    for (const auto n : c.residual.steps) {
        PdeProblem p = c.problem;
        p.steps = n;
        const double r = martingale_residual(p, c.residual.samples, c.seed, c.residual.estimator, 1.0).total;
        const double rf = martingale_residual(p, c.residual.samples, c.seed, c.residual.estimator, -1.0).total;
        art.residual->add_row({std::to_string(n), format_double(p.dt()), format_double(r), format_double(rf)});
        dts.push_back(p.dt());
        rs.push_back(r);
        flipped.push_back(rf);
    }
    art.summary["residual_order"] = loglog_slope(dts, rs);
    art.summary["flipped_residual_order"] = loglog_slope(dts, flipped);
}

} // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "static_fit") return ExperimentKind::static_fit;
    if (name == "pde_solve") return ExperimentKind::pde_solve;
    if (name == "property_suite") return ExperimentKind::property_suite;
    invalid("kind must be static_fit, pde_solve or property_suite (got '" + name + "')");
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::static_fit: return "static_fit";
    case ExperimentKind::pde_solve: return "pde_solve";
    case ExperimentKind::property_suite: return "property_suite";
    }
    return "unknown";
}

ExperimentConfig parse_experiment(const json& j) {
    try {
        return parse_checked(j);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::config_invalid) throw;
        throw Error(ErrorKind::config_invalid, e.what());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config_invalid, e.what());
    }
}

json to_json(const ExperimentConfig& c) {
    json j{{"kind", to_string(c.kind)}, {"seed", c.seed}, {"output", c.output}};
    switch (c.kind) {
    case ExperimentKind::static_fit: {
        j["target"] = to_string(c.target);
        j["arch"] = arch_json(c.train.arch);
        json t{{"batch_measures", c.train.batch_measures},
               {"samples", c.train.samples},
               {"iterations", c.train.iterations},
               {"lr", c.train.lr},
               {"eval_every", c.train.eval_every},
               {"heldout", c.train.heldout},
               {"heldout_samples", c.train.heldout_samples},
               {"fixed_pool", c.train.fixed_pool},
               {"pool_size", c.train.pool_size},
               {"grid", to_json(c.train.grid)}};
        if (c.train.law_grid) t["law_grid"] = to_json(*c.train.law_grid);
        j["training"] = t;
        j["evaluation"] = evaluation_json(c.evaluation, false);
        break;
    }
    case ExperimentKind::pde_solve:
        j["mode"] = to_string(c.solver.mode);
        j["arch"] = arch_json(c.solver.arch);
        j["solver"] = {{"batch_measures", c.solver.batch_measures},
                       {"samples", c.solver.samples},
                       {"iterations", c.solver.iterations},
                       {"lr", c.solver.lr},
                       {"warm_start", c.solver.warm_start}};
        j["problem"] = problem_json(c.problem);
        j["evaluation"] = evaluation_json(c.evaluation, true);
        break;
    case ExperimentKind::property_suite:
        j["problem"] = problem_json(c.problem);
        j["residual"] = {{"N_T", c.residual.steps},
                         {"samples", c.residual.samples},
                         {"estimator", c.residual.estimator == ResidualEstimator::conditional ? "conditional"
                                                                                               : "monte_carlo"}};
        break;
    }
    return j;
}

ExperimentConfig load_experiment(const std::string& path) {
    json j;
    try {
        j = load_config_file(path);
    } catch (const Error& e) {
        throw Error(ErrorKind::config_invalid, e.what());
    }
    return parse_experiment(j);
}

int run_experiment(const std::string& config_path, const RunOptions& options, std::ostream& log) {
    ExperimentConfig c;
    try {
        json j = load_config_file(config_path);
        if (j.is_object() && j.contains("tool") && j.contains("config")) j = j.at("config");
        if (options.seed && j.is_object()) j["seed"] = *options.seed;
        c = parse_experiment(j);
    } catch (const Error& e) {
        log << "mfnn: " << e.what() << '\n';
        return exit_config_invalid;
    }
    if (options.out) c.output = *options.out;
    return run_experiment(std::move(c), log);
}

int run_experiment(ExperimentConfig c, std::ostream& log) {
    try {
        c = parse_experiment(to_json(c));
    } catch (const Error& e) {
        log << "mfnn: " << e.what() << '\n';
        return exit_config_invalid;
    }

    Artifacts art;
    art.dir = c.output;
    try {
        ensure_dir(art.dir / "checkpoints");
    } catch (const Error& e) {
        log << "mfnn: " << e.what() << '\n';
        return exit_failure;
    }

    const auto start = std::chrono::steady_clock::now();
    std::string status = "complete";
    std::string error;
    int code = exit_ok;
    try {
        switch (c.kind) {
        case ExperimentKind::static_fit: run_static(c, art); break;
        case ExperimentKind::pde_solve: run_pde(c, art); break;
        case ExperimentKind::property_suite: run_properties(c, art); break;
        }
    } catch (const Error& e) {
        error = e.what();
        if (e.kind() == ErrorKind::divergence) {
            status = "diverged";
            code = exit_divergence;
        } else if (e.kind() == ErrorKind::config_invalid) {
            status = "config-invalid";
            code = exit_config_invalid;
        } else {
            status = "failed";
            code = exit_failure;
        }
    } catch (const std::exception& e) {
        error = e.what();
        status = "failed";
        code = exit_failure;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    try {
        write_file((art.dir / "loss_history.csv").string(), art.loss.str());
        write_file((art.dir / "test_mse.csv").string(), art.tests.str());
        art.files.insert(art.files.begin(), {"loss_history.csv", "test_mse.csv"});
        if (c.kind == ExperimentKind::static_fit) {
            write_file((art.dir / "heldout_history.csv").string(), art.heldout.str());
            art.files.push_back("heldout_history.csv");
        }
        if (art.residual) {
            write_file((art.dir / "residual.csv").string(), art.residual->str());
            art.files.push_back("residual.csv");
        }
        json manifest{{"tool", "mfnn"},
                      {"version", version},
                      {"kind", to_string(c.kind)},
                      {"seed", c.seed},
                      {"status", status},
                      {"partial", code != exit_ok},
                      {"error", error.empty() ? json(nullptr) : json(error)},
                      {"wall_time_seconds", wall},
                      {"threads", ad::max_threads()},
                      {"artifacts", art.files},
                      {"summary", art.summary},
                      {"config", to_json(c)}};
        write_file((art.dir / "manifest.json").string(), manifest.dump(2) + "\n");
    } catch (const Error& e) {
        log << "mfnn: " << e.what() << '\n';
        return exit_failure;
    }
    if (!error.empty()) log << "mfnn: " << error << '\n';
    return code;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::dimension_mismatch, "slope fit needs >= 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

void keep_freed_memory() noexcept {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace mfnn
