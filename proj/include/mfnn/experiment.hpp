#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfnn/dynamics.hpp"
#include "mfnn/targets.hpp"
#include "mfnn/training.hpp"

namespace mfnn {

enum class ExperimentKind { static_fit, pde_solve, property_suite };

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

/// Test laws and times at which a trained model is scored.
struct EvaluationConfig {
    std::vector<int> tests{1, 2, 3};
    std::size_t samples = 10000;
    Test2Variant test2 = Test2Variant::bimodal;
    /// Size of the Monte-Carlo reference for targets D and E.
    std::size_t reference_samples = 1000000;
    /// Time indices (pde_solve only).
    std::vector<std::size_t> steps{0};
};

struct ResidualConfig {
    std::vector<std::size_t> steps{5, 10, 20, 40};
    std::size_t samples = 100000;
    ResidualEstimator estimator = ResidualEstimator::conditional;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::static_fit;
    std::uint64_t seed = 0;
    std::string output = "out";

    TargetCase target = TargetCase::A;
    TrainConfig train;

    PdeProblem problem;
    SolverConfig solver;

    EvaluationConfig evaluation;
    ResidualConfig residual;
};

/// Fills defaults and rejects unknown keys or invalid values with
/// config-invalid. A manifest written by `run_experiment` is accepted and
/// its echoed config is used.
ExperimentConfig parse_experiment(const nlohmann::json& j);
/// Complete config with every default made explicit; parsing it back
/// gives the same experiment.
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment(const std::string& path);

struct RunOptions {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_config_invalid = 2;
inline constexpr int exit_divergence = 3;

/// Runs one experiment and writes its artifacts; returns the exit status.
/// Messages go to `log`.
int run_experiment(const std::string& config_path, const RunOptions& options, std::ostream& log);
int run_experiment(ExperimentConfig config, std::ostream& log);

/// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Stops glibc from returning freed pages to the OS after every tape. The
/// training loops allocate and free the same large buffers each iteration.
void keep_freed_memory() noexcept;

} // namespace mfnn
