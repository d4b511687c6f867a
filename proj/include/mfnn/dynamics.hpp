#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfnn/autodiff/tape.hpp"
#include "mfnn/measures.hpp"
#include "mfnn/networks.hpp"
#include "mfnn/targets.hpp"

namespace mfnn {

/// The function w of the toy PDE with its first two derivatives. The
/// cosine kernel is recognised and evaluated through trigonometric moments
/// of the measure in O(N); any other kernel costs O(N) per query point.
struct Kernel {
    std::function<double(double)> w;
    std::function<double(double)> dw;
    std::function<double(double)> d2w;
    bool cosine = false;

    static Kernel cos();
};

struct PdeProblem {
    double T = 0.1;
    double kappa = 0.2;
    double sigma = 0.5;
    double a = 0.1;
    std::size_t steps = 10;
    BinGrid grid{-1.3, 1.3, 200};
    Kernel kernel = Kernel::cos();

    double dt() const noexcept { return T / static_cast<double>(steps); }
    double time(std::size_t i) const noexcept { return T * static_cast<double>(i) / static_cast<double>(steps); }
    void validate() const;
};

/// Per-measure sums needed by the cosine route: E cos, E sin, E X cos X,
/// E X sin X.
struct TrigMoments {
    double c = 0.0;
    double s = 0.0;
    double xc = 0.0;
    double xs = 0.0;
};
TrigMoments trig_moments(std::span<const double> xs) noexcept;

/// E_{xi ~ xs} w(x - xi).
double terminal_g(const PdeProblem& problem, double x, std::span<const double> xs);
/// e^{T - t} g(x, xs).
double exact_solution(const PdeProblem& problem, double t, double x, std::span<const double> xs);
/// f(t, x, mu, y) with mu the empirical measure of xs.
double generator_f(const PdeProblem& problem, double t, double x, std::span<const double> xs, double y);

/// Batched versions over `grouping.groups` clouds stored back to back in
/// `clouds`; `queries` holds grouping.rows() points, block m evaluated
/// against cloud m (which has `cloud_size` points).
void terminal_batch(const PdeProblem& problem, ad::Grouping queries_grouping, std::span<const double> queries,
                    std::size_t cloud_size, std::span<const double> clouds, std::span<double> out);
/// f(t, x, mu, 0), i.e. without the a y^2 term.
void generator_base_batch(const PdeProblem& problem, double t, ad::Grouping queries_grouping,
                          std::span<const double> queries, std::size_t cloud_size, std::span<const double> clouds,
                          std::span<double> out);

/// One Euler step of X' = X + kappa (mean - X) dt + sigma dW for every
/// cloud of the grouping, in place. `dw` holds the Brownian increments.
void euler_step(const PdeProblem& problem, ad::Grouping grouping, std::span<double> x, std::span<const double> dw);
/// Single cloud, increments sqrt(dt) * N(0, 1) drawn from `rng`.
std::vector<double> euler_step(const PdeProblem& problem, std::span<const double> x, Rng& rng);

namespace reference {
void euler_step(const PdeProblem& problem, ad::Grouping grouping, std::span<double> x, std::span<const double> dw);
void generator_base_batch(const PdeProblem& problem, double t, ad::Grouping queries_grouping,
                          std::span<const double> queries, std::size_t cloud_size, std::span<const double> clouds,
                          std::span<double> out);
} // namespace reference

enum class SolverMode { local_regression, local_bsde, global_regression, global_bsde };

SolverMode parse_solver_mode(const std::string& name);
std::string to_string(SolverMode mode);
bool is_local(SolverMode mode) noexcept;
bool uses_z(SolverMode mode) noexcept;

struct SolverConfig {
    SolverMode mode = SolverMode::local_bsde;
    ArchitectureConfig arch;
    std::size_t batch_measures = 10;
    std::size_t samples = 10000;
    /// Adam iterations per optimization problem (per time step for the
    /// local solvers).
    std::size_t iterations = 5000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    /// Local solvers start step i from the parameters of step i + 1.
    bool warm_start = true;

    void validate() const;
};

/// Local modes: u[i], z[i] for i = 0..N_T-1 (z only for BSDE). Global
/// regression: u[0] takes (x, t/T). Global BSDE: u[0] is the time-0 value
/// net, z[0] takes (x, t/T).
struct PdeSolution {
    SolverMode mode = SolverMode::local_bsde;
    PdeProblem problem;
    std::vector<MeanFieldNet> u;
    std::vector<MeanFieldNet> z;
};

struct SolveObserver {
    /// stage is the time index for local solvers and 0 for global ones.
    std::function<void(std::size_t stage, std::size_t iteration, double loss)> on_loss;
};

/// Training data of one local step: clouds at t_i and t_{i+1} (same dW),
/// the frozen next value and f(t_i, X_i, mu_i, 0).
struct LocalBatch {
    std::size_t step = 0;
    ad::Grouping grouping;
    std::vector<double> x;
    std::vector<double> dw;
    std::vector<double> next_value;
    std::vector<double> f_base;
    ad::Tensor bins;
};

/// `next` is the frozen value net of step i + 1, or nullptr at the last
/// step (the terminal function is used).
LocalBatch make_local_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t step,
                            std::size_t iteration, const MeanFieldNet* next, const BinGrid* net_grid);
LocalBatch make_local_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t step,
                            std::vector<BinDensity> densities, std::uint64_t stream_id, const MeanFieldNet* next,
                            const BinGrid* net_grid);

/// |next - U + f(U) dt - Z dW|^2 averaged; pass an absent `z_params` for
/// the regression loss.
ad::Var local_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u, std::span<const ad::Var> u_params,
                   const MeanFieldNet* z, std::span<const ad::Var> z_params, const LocalBatch& batch);

/// A whole trajectory of clouds for the global solvers, time-major.
struct GlobalBatch {
    std::size_t measures = 0;
    std::size_t samples = 0;
    std::size_t steps = 0;
    /// (steps + 1) * measures * samples values, time-major.
    std::vector<double> x;
    /// steps * measures * samples.
    std::vector<double> dw;
    std::vector<double> f_base;
    /// g(X_T, mu_T), measures * samples.
    std::vector<double> terminal;
    /// (steps + 1) * measures rows of bin levels on the net grid.
    ad::Tensor bins;
};

GlobalBatch make_global_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t iteration,
                              const BinGrid* net_grid);
GlobalBatch make_global_batch(const PdeProblem& problem, std::vector<BinDensity> densities, std::size_t samples,
                              std::uint64_t seed, std::uint64_t stream_id, const BinGrid* net_grid);

ad::Var global_regression_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u,
                               std::span<const ad::Var> u_params, const GlobalBatch& batch);
ad::Var global_bsde_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u0,
                         std::span<const ad::Var> u_params, const MeanFieldNet& z, std::span<const ad::Var> z_params,
                         const GlobalBatch& batch);

PdeSolution solve(const PdeProblem& problem, const SolverConfig& config, const SolveObserver& observer = {});
PdeSolution solve_local_regression(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer = {});
PdeSolution solve_local_bsde(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer = {});
PdeSolution solve_global_regression(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer = {});
PdeSolution solve_global_bsde(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer = {});

/// Net output on a single cloud, queried at its own points. `t` is only
/// used by time-dependent nets.
std::vector<double> net_on_cloud(const MeanFieldNet& net, const PdeProblem& problem, double t,
                                 std::span<const double> cloud, bool exact_bins = false,
                                 const BinDensity* density = nullptr);

/// Value of an approximate solution along one evaluation path. value(i)
/// is queried at t_i on the cloud at t_i; advance(i) is called before the
/// cloud moves to t_{i+1} with the increments of that move.
class PathEvaluator {
public:
    virtual ~PathEvaluator() = default;
    virtual std::vector<double> value(std::size_t i, std::span<const double> cloud) = 0;
    virtual void advance(std::size_t i, std::span<const double> cloud, std::span<const double> dw);
};

std::unique_ptr<PathEvaluator> make_evaluator(const PdeSolution& solution);
std::unique_ptr<PathEvaluator> make_exact_evaluator(const PdeProblem& problem);

struct PdeMse {
    std::size_t step = 0;
    double t = 0.0;
    double mse = 0.0;
};

/// MSE against the exact solution on a test cloud propagated by the Euler
/// scheme to each requested step.
std::vector<PdeMse> evaluate_pde_mse(const PdeProblem& problem, PathEvaluator& evaluator, int which_test,
                                     std::span<const std::size_t> steps, std::size_t samples, std::uint64_t seed,
                                     Test2Variant variant = Test2Variant::bimodal);
std::vector<PdeMse> evaluate_pde_mse(const PdeSolution& solution, int which_test, std::span<const std::size_t> steps,
                                     std::size_t samples, std::uint64_t seed,
                                     Test2Variant variant = Test2Variant::bimodal);

enum class ResidualEstimator { conditional, monte_carlo };

struct MartingaleResidual {
    std::vector<double> per_step;
    /// |sum of per_step|.
    double total = 0.0;
};

/// Discrete martingale residual of the exact solution,
/// mean_n [v(t_{i+1}, X_{i+1}) - v(t_i, X_i) + f(t_i, X_i, mu_i, v) dt],
/// along an Euler path started from a Test-1 cloud. The conditional
/// estimator integrates the next value over the Brownian increment in
/// closed form (cosine kernel only). `f_sign` = -1 flips the generator, as
/// a negative control.
MartingaleResidual martingale_residual(const PdeProblem& problem, std::size_t samples, std::uint64_t seed,
                                       ResidualEstimator estimator = ResidualEstimator::conditional,
                                       double f_sign = 1.0);

} // namespace mfnn
