#include "mfnn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "mfnn/autodiff/adam.hpp"
#include "mfnn/error.hpp"

namespace mfnn {

namespace {

void check_batch_shapes(ad::Grouping g, std::span<const double> queries, std::size_t cloud_size,
                        std::span<const double> clouds, std::span<double> out) {
    if (queries.size() != g.rows() || out.size() != g.rows() || clouds.size() != g.groups * cloud_size ||
        cloud_size == 0) {
        throw Error(ErrorKind::dimension_mismatch, "cloud batch shapes do not match the grouping");
    }
}

std::vector<double> gaussian_increments(std::size_t count, double dt, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double s = std::sqrt(dt);
    std::vector<double> out(count);
    for (auto& v : out) v = s * normal(rng);
    return out;
}

double cloud_mean(std::span<const double> x) {
    double s = 0.0;
    for (const double v : x) s += v;
    return s / static_cast<double>(x.size());
}

/// Generator without the a y^2 term, cosine route.
inline double generator_base_cos(const PdeProblem& p, double t, double x, const TrigMoments& m) {
    const double cx = std::cos(x);
    const double sx = std::sin(x);
    const double ecos = cx * m.c + sx * m.s;
    const double esin = sx * m.c - cx * m.s;
    const double ex_sin = x * esin - (sx * m.xc - cx * m.xs);
    const double e = std::exp(p.T - t);
    const double ev = e * ecos;
    return e * ((1.0 + p.sigma * p.sigma) * ecos - p.kappa * ex_sin) - p.a * ev * ev;
}

double generator_base_generic(const PdeProblem& p, double t, double x, std::span<const double> xs) {
    double lin = 0.0;
    double g = 0.0;
    for (const double xi : xs) {
        const double u = x - xi;
        const double w = p.kernel.w(u);
        lin += w - p.sigma * p.sigma * p.kernel.d2w(u) + p.kappa * u * p.kernel.dw(u);
        g += w;
    }
    const double n = static_cast<double>(xs.size());
    const double e = std::exp(p.T - t);
    const double ev = e * g / n;
    return e * lin / n - p.a * ev * ev;
}

ad::Tensor state_tensor(const MeanFieldNet& net, std::span<const double> x, std::span<const double> time_col) {
    const std::size_t rows = x.size();
    if (state_dim_of(net) == 1) return ad::Tensor(rows, 1, std::vector<double>(x.begin(), x.end()));
    ad::Tensor s(rows, 2);
    std::copy(x.begin(), x.end(), s.data.begin());
    std::copy(time_col.begin(), time_col.end(), s.data.begin() + static_cast<std::ptrdiff_t>(rows));
    return s;
}

/// Bin levels for clouds: exact densities where given, estimates otherwise.
ad::Tensor cloud_bins(const BinGrid& grid, ad::Grouping g, std::span<const double> x,
                      const std::vector<BinDensity>* exact) {
    ad::Tensor bins(g.groups, grid.size());
    std::vector<double> levels(grid.size());
    for (std::size_t m = 0; m < g.groups; ++m) {
        if (exact) {
            const BinDensity& d = (*exact)[m];
            const BinDensity projected = d.grid() == grid ? d : rebin(d, grid);
            std::copy(projected.levels().begin(), projected.levels().end(), levels.begin());
        } else {
            estimate_bins_into(grid, x.subspan(m * g.group_size, g.group_size), levels);
        }
        for (std::size_t k = 0; k < grid.size(); ++k) bins(m, k) = levels[k];
    }
    return bins;
}

/// Output of `net` at the points of each cloud. Measure features come from
/// `bins` (bin architectures) or from the clouds themselves.
ad::Var net_values(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, ad::Grouping g,
                   std::span<const double> x, std::span<const double> time_col, const ad::Tensor& bins) {
    MeasureFeatures f;
    f.grouping = g;
    if (arch_of(net) == Arch::cylindrical) {
        f.samples = tape.constant(ad::Tensor(x.size(), 1, std::vector<double>(x.begin(), x.end())));
    } else {
        f.bins = tape.constant(bins);
    }
    return apply(tape, net, params, tape.constant(state_tensor(net, x, time_col)), g, f);
}

std::vector<double> time_column(std::size_t rows, double tau) {
    return std::vector<double>(rows, tau);
}

ArchitectureConfig with_state(ArchitectureConfig arch, std::size_t state_dim) {
    arch.state_dim = state_dim;
    arch.output_dim = 1;
    return arch;
}

void copy_params(const MeanFieldNet& from, MeanFieldNet& to) {
    auto src = components(from);
    auto dst = components(to);
    for (std::size_t i = 0; i < src.size(); ++i) {
        std::copy(src[i]->params().begin(), src[i]->params().end(), dst[i]->params().begin());
    }
}

std::vector<ad::Mlp*> joined(MeanFieldNet& u, MeanFieldNet* z) {
    auto v = components(u);
    if (z) {
        for (auto* m : components(*z)) v.push_back(m);
    }
    return v;
}

/// Runs Adam on the parameters of `u` (and `z`) for `iterations` steps.
template <class LossFn>
void optimize(MeanFieldNet& u, MeanFieldNet* z, const SolverConfig& config, std::size_t stage,
              const SolveObserver& observer, LossFn&& loss_at) {
    ad::ParameterSet set(joined(u, z));
    ad::AdamState adam(set.size(), ad::AdamConfig{config.lr});
    std::vector<double> theta = set.gather();
    const std::size_t nu = components(u).size();
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const ad::ValueAndGrad vg = loss_at(set, nu, it);
        if (!std::isfinite(vg.value)) {
            throw Error(ErrorKind::divergence,
                        "loss is not finite at time index " + std::to_string(stage) + ", iteration " + std::to_string(it));
        }
        if (observer.on_loss) observer.on_loss(stage, it, vg.value);
        ad::adam_step(adam, theta, vg.grad);
        set.scatter(theta);
    }
}

std::vector<BinDensity> draw_densities(const BinGrid& grid, std::size_t count, std::uint64_t seed, std::size_t step,
                                       std::uint64_t iteration) {
    std::vector<BinDensity> out;
    out.reserve(count);
    for (std::size_t m = 0; m < count; ++m) {
        Rng rng = make_rng(seed, {stream::pde_batch, step, iteration, m, 0});
        out.push_back(random_bin_density(grid, rng));
    }
    return out;
}

} // namespace

Kernel Kernel::cos() {
    Kernel k;
    k.w = [](double u) { return std::cos(u); };
    k.dw = [](double u) { return -std::sin(u); };
    k.d2w = [](double u) { return -std::cos(u); };
    k.cosine = true;
    return k;
}

void PdeProblem::validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) throw Error(ErrorKind::config_invalid, "T must be > 0");
    if (!(sigma >= 0.0)) throw Error(ErrorKind::config_invalid, "sigma must be >= 0");
    if (!std::isfinite(kappa) || !std::isfinite(a)) throw Error(ErrorKind::config_invalid, "kappa and a must be finite");
    if (steps == 0) throw Error(ErrorKind::config_invalid, "N_T must be >= 1");
    if (!kernel.w || !kernel.dw || !kernel.d2w) throw Error(ErrorKind::config_invalid, "kernel is incomplete");
}

TrigMoments trig_moments(std::span<const double> xs) noexcept {
    TrigMoments m;
    for (const double x : xs) {
        const double c = std::cos(x);
        const double s = std::sin(x);
        m.c += c;
        m.s += s;
        m.xc += x * c;
        m.xs += x * s;
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    m.c *= inv;
    m.s *= inv;
    m.xc *= inv;
    m.xs *= inv;
    return m;
}

double terminal_g(const PdeProblem& problem, double x, std::span<const double> xs) {
    if (xs.empty()) throw Error(ErrorKind::invalid_domain, "empty cloud");
    if (problem.kernel.cosine) {
        const TrigMoments m = trig_moments(xs);
        return std::cos(x) * m.c + std::sin(x) * m.s;
    }
    double s = 0.0;
    for (const double xi : xs) s += problem.kernel.w(x - xi);
    return s / static_cast<double>(xs.size());
}

double exact_solution(const PdeProblem& problem, double t, double x, std::span<const double> xs) {
    return std::exp(problem.T - t) * terminal_g(problem, x, xs);
}

double generator_f(const PdeProblem& problem, double t, double x, std::span<const double> xs, double y) {
    if (xs.empty()) throw Error(ErrorKind::invalid_domain, "empty cloud");
    const double base =
        problem.kernel.cosine ? generator_base_cos(problem, t, x, trig_moments(xs)) : generator_base_generic(problem, t, x, xs);
    return base + problem.a * y * y;
}

void terminal_batch(const PdeProblem& problem, ad::Grouping g, std::span<const double> queries, std::size_t cloud_size,
                    std::span<const double> clouds, std::span<double> out) {
    check_batch_shapes(g, queries, cloud_size, clouds, out);
    const auto groups = static_cast<std::ptrdiff_t>(g.groups);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gi = 0; gi < groups; ++gi) {
        const auto m = static_cast<std::size_t>(gi);
        const auto cloud = clouds.subspan(m * cloud_size, cloud_size);
        if (problem.kernel.cosine) {
            const TrigMoments tm = trig_moments(cloud);
            for (std::size_t n = 0; n < g.group_size; ++n) {
                const double x = queries[m * g.group_size + n];
                out[m * g.group_size + n] = std::cos(x) * tm.c + std::sin(x) * tm.s;
            }
        } else {
            for (std::size_t n = 0; n < g.group_size; ++n) {
                double s = 0.0;
                const double x = queries[m * g.group_size + n];
                for (const double xi : cloud) s += problem.kernel.w(x - xi);
                out[m * g.group_size + n] = s / static_cast<double>(cloud_size);
            }
        }
    }
}

void generator_base_batch(const PdeProblem& problem, double t, ad::Grouping g, std::span<const double> queries,
                          std::size_t cloud_size, std::span<const double> clouds, std::span<double> out) {
    check_batch_shapes(g, queries, cloud_size, clouds, out);
    if (problem.kernel.cosine) {
        std::vector<TrigMoments> moments(g.groups);
        for (std::size_t m = 0; m < g.groups; ++m) moments[m] = trig_moments(clouds.subspan(m * cloud_size, cloud_size));
        const auto rows = static_cast<std::ptrdiff_t>(g.rows());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const auto row = static_cast<std::size_t>(r);
            out[row] = generator_base_cos(problem, t, queries[row], moments[g.group_of(row)]);
        }
        return;
    }
    const auto rows = static_cast<std::ptrdiff_t>(g.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const auto row = static_cast<std::size_t>(r);
        const std::size_t m = g.group_of(row);
        out[row] = generator_base_generic(problem, t, queries[row], clouds.subspan(m * cloud_size, cloud_size));
    }
}

void euler_step(const PdeProblem& problem, ad::Grouping g, std::span<double> x, std::span<const double> dw) {
    if (x.size() != g.rows() || dw.size() != g.rows()) {
        throw Error(ErrorKind::dimension_mismatch, "Euler step shapes do not match the grouping");
    }
    const double dt = problem.dt();
    const auto groups = static_cast<std::ptrdiff_t>(g.groups);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gi = 0; gi < groups; ++gi) {
        const auto m = static_cast<std::size_t>(gi);
        double* xm = x.data() + m * g.group_size;
        const double* dwm = dw.data() + m * g.group_size;
        double s = 0.0;
        for (std::size_t n = 0; n < g.group_size; ++n) s += xm[n];
        const double mean = s / static_cast<double>(g.group_size);
        const double drift = problem.kappa * dt;
        const double vol = problem.sigma;
#pragma omp simd
        for (std::size_t n = 0; n < g.group_size; ++n) xm[n] += drift * (mean - xm[n]) + vol * dwm[n];
    }
}

std::vector<double> euler_step(const PdeProblem& problem, std::span<const double> x, Rng& rng) {
    std::vector<double> out(x.begin(), x.end());
    const std::vector<double> dw = gaussian_increments(x.size(), problem.dt(), rng);
    euler_step(problem, ad::Grouping{1, x.size()}, out, dw);
    return out;
}

namespace reference {

void euler_step(const PdeProblem& problem, ad::Grouping g, std::span<double> x, std::span<const double> dw) {
    const double dt = problem.dt();
    for (std::size_t m = 0; m < g.groups; ++m) {
        const auto xm = x.subspan(m * g.group_size, g.group_size);
        const double mean = cloud_mean(xm);
        for (std::size_t n = 0; n < g.group_size; ++n) {
            xm[n] = xm[n] + problem.kappa * (mean - xm[n]) * dt + problem.sigma * dw[m * g.group_size + n];
        }
    }
}

void generator_base_batch(const PdeProblem& problem, double t, ad::Grouping g, std::span<const double> queries,
                          std::size_t cloud_size, std::span<const double> clouds, std::span<double> out) {
    check_batch_shapes(g, queries, cloud_size, clouds, out);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const std::size_t m = g.group_of(r);
        out[r] = generator_base_generic(problem, t, queries[r], clouds.subspan(m * cloud_size, cloud_size));
    }
}

} // namespace reference

SolverMode parse_solver_mode(const std::string& name) {
    if (name == "local_regression") return SolverMode::local_regression;
    if (name == "local_bsde") return SolverMode::local_bsde;
    if (name == "global_regression") return SolverMode::global_regression;
    if (name == "global_bsde") return SolverMode::global_bsde;
    throw Error(ErrorKind::config_invalid, "unknown solver mode '" + name + "'");
}

std::string to_string(SolverMode mode) {
    switch (mode) {
    case SolverMode::local_regression: return "local_regression";
    case SolverMode::local_bsde: return "local_bsde";
    case SolverMode::global_regression: return "global_regression";
    case SolverMode::global_bsde: return "global_bsde";
    }
    return "unknown";
}

bool is_local(SolverMode mode) noexcept {
    return mode == SolverMode::local_regression || mode == SolverMode::local_bsde;
}

bool uses_z(SolverMode mode) noexcept {
    return mode == SolverMode::local_bsde || mode == SolverMode::global_bsde;
}

void SolverConfig::validate() const {
    if (batch_measures == 0 || samples == 0) {
        throw Error(ErrorKind::config_invalid, "batch_measures and samples must be >= 1");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::config_invalid, "lr must be > 0");
    arch.validate();
}

LocalBatch make_local_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t step,
                            std::size_t iteration, const MeanFieldNet* next, const BinGrid* net_grid) {
    std::vector<BinDensity> densities =
        draw_densities(problem.grid, config.batch_measures, config.seed, step, iteration);
    return make_local_batch(problem, config, step, std::move(densities), iteration, next, net_grid);
}

LocalBatch make_local_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t step,
                            std::vector<BinDensity> densities, std::uint64_t stream_id, const MeanFieldNet* next,
                            const BinGrid* net_grid) {
    const std::size_t groups = densities.size();
    const std::size_t n = config.samples;
    LocalBatch b;
    b.step = step;
    b.grouping = ad::Grouping{groups, n};
    b.x.resize(groups * n);
    b.dw.resize(groups * n);
    const auto count = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gi = 0; gi < count; ++gi) {
        const auto m = static_cast<std::size_t>(gi);
        Rng rng = make_rng(config.seed, {stream::pde_batch, step, stream_id, m, 1});
        sample_into(densities[m], std::span<double>(b.x.data() + m * n, n), rng);
        Rng noise = make_rng(config.seed, {stream::pde_batch, step, stream_id, m, 2});
        const std::vector<double> inc = gaussian_increments(n, problem.dt(), noise);
        std::copy(inc.begin(), inc.end(), b.dw.begin() + static_cast<std::ptrdiff_t>(m * n));
    }

    std::vector<double> x_next = b.x;
    euler_step(problem, b.grouping, x_next, b.dw);

    b.next_value.resize(groups * n);
    if (next == nullptr) {
        terminal_batch(problem, b.grouping, x_next, n, x_next, b.next_value);
    } else {
        ad::Tape tape;
        const auto params = constant_params(tape, *next);
        ad::Tensor bins;
        if (const BinGrid* g = grid_of(*next)) bins = cloud_bins(*g, b.grouping, x_next, nullptr);
        const double tau = problem.time(step + 1) / problem.T;
        const ad::Var out =
            net_values(tape, *next, params, b.grouping, x_next, time_column(x_next.size(), tau), bins);
        b.next_value = tape.value(out).data;
    }

    b.f_base.resize(groups * n);
    generator_base_batch(problem, problem.time(step), b.grouping, b.x, n, b.x, b.f_base);
    if (net_grid) b.bins = cloud_bins(*net_grid, b.grouping, b.x, &densities);
    return b;
}

ad::Var local_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u, std::span<const ad::Var> u_params,
                   const MeanFieldNet* z, std::span<const ad::Var> z_params, const LocalBatch& batch) {
    const std::size_t rows = batch.grouping.rows();
    const double dt = problem.dt();
    const std::vector<double> tcol = time_column(rows, problem.time(batch.step) / problem.T);
    const ad::Var uval = net_values(tape, u, u_params, batch.grouping, batch.x, tcol, batch.bins);
    std::vector<double> shifted(rows);
    for (std::size_t r = 0; r < rows; ++r) shifted[r] = batch.next_value[r] + batch.f_base[r] * dt;
    ad::Var res = tape.sub(tape.constant(ad::Tensor(rows, 1, std::move(shifted))), uval);
    res = tape.add(res, tape.scale(tape.square(uval), problem.a * dt));
    if (z) {
        const ad::Var zval = net_values(tape, *z, z_params, batch.grouping, batch.x, tcol, batch.bins);
        res = tape.sub(res, tape.mul(zval, tape.constant(ad::Tensor(rows, 1, batch.dw))));
    }
    return tape.mean(tape.square(res));
}

GlobalBatch make_global_batch(const PdeProblem& problem, const SolverConfig& config, std::size_t iteration,
                              const BinGrid* net_grid) {
    std::vector<BinDensity> densities =
        draw_densities(problem.grid, config.batch_measures, config.seed, 0, iteration);
    return make_global_batch(problem, std::move(densities), config.samples, config.seed, iteration, net_grid);
}

GlobalBatch make_global_batch(const PdeProblem& problem, std::vector<BinDensity> densities, std::size_t samples,
                              std::uint64_t seed, std::uint64_t stream_id, const BinGrid* net_grid) {
    GlobalBatch b;
    b.measures = densities.size();
    b.samples = samples;
    b.steps = problem.steps;
    const std::size_t block = b.measures * samples;
    const ad::Grouping g{b.measures, samples};
    b.x.resize((b.steps + 1) * block);
    b.dw.resize(b.steps * block);
    const auto count = static_cast<std::ptrdiff_t>(b.measures);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gi = 0; gi < count; ++gi) {
        const auto m = static_cast<std::size_t>(gi);
        Rng rng = make_rng(seed, {stream::pde_batch, 0, stream_id, m, 1});
        sample_into(densities[m], std::span<double>(b.x.data() + m * samples, samples), rng);
        Rng noise = make_rng(seed, {stream::pde_batch, 0, stream_id, m, 2});
        for (std::size_t i = 0; i < b.steps; ++i) {
            const std::vector<double> inc = gaussian_increments(samples, problem.dt(), noise);
            std::copy(inc.begin(), inc.end(), b.dw.begin() + static_cast<std::ptrdiff_t>(i * block + m * samples));
        }
    }
    b.f_base.resize(b.steps * block);
    for (std::size_t i = 0; i < b.steps; ++i) {
        const std::span<double> cur(b.x.data() + i * block, block);
        const std::span<double> nxt(b.x.data() + (i + 1) * block, block);
        std::copy(cur.begin(), cur.end(), nxt.begin());
        euler_step(problem, g, nxt, std::span<const double>(b.dw.data() + i * block, block));
        generator_base_batch(problem, problem.time(i), g, cur, samples, cur,
                             std::span<double>(b.f_base.data() + i * block, block));
    }
    b.terminal.resize(block);
    const std::span<const double> last(b.x.data() + b.steps * block, block);
    terminal_batch(problem, g, last, samples, last, b.terminal);
    if (net_grid) {
        b.bins = ad::Tensor((b.steps + 1) * b.measures, net_grid->size());
        for (std::size_t i = 0; i <= b.steps; ++i) {
            const ad::Tensor part = cloud_bins(*net_grid, g, std::span<const double>(b.x.data() + i * block, block),
                                               i == 0 ? &densities : nullptr);
            for (std::size_t m = 0; m < b.measures; ++m) {
                for (std::size_t k = 0; k < net_grid->size(); ++k) b.bins(i * b.measures + m, k) = part(m, k);
            }
        }
    }
    return b;
}

namespace {

std::vector<double> global_time_column(const PdeProblem& problem, std::size_t times, std::size_t block) {
    std::vector<double> t(times * block);
    for (std::size_t i = 0; i < times; ++i) {
        std::fill_n(t.begin() + static_cast<std::ptrdiff_t>(i * block), block, problem.time(i) / problem.T);
    }
    return t;
}

ad::Tensor bin_rows(const ad::Tensor& bins, std::size_t first, std::size_t count) {
    if (bins.rows == 0) return {};
    ad::Tensor out(count, bins.cols);
    for (std::size_t k = 0; k < bins.cols; ++k) {
        for (std::size_t r = 0; r < count; ++r) out(r, k) = bins(first + r, k);
    }
    return out;
}

} // namespace

ad::Var global_regression_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u,
                               std::span<const ad::Var> u_params, const GlobalBatch& batch) {
    const std::size_t block = batch.measures * batch.samples;
    const std::size_t times = batch.steps + 1;
    const ad::Grouping all{times * batch.measures, batch.samples};
    const ad::Var uval = net_values(tape, u, u_params, all, batch.x, global_time_column(problem, times, block), batch.bins);
    const double dt = problem.dt();
    const std::size_t inner = batch.steps * block;
    const ad::Var cur = tape.slice(uval, 0, inner);
    const ad::Var nxt = tape.slice(uval, block, inner);
    const ad::Var last = tape.slice(uval, inner, block);
    std::vector<double> fdt(inner);
    for (std::size_t r = 0; r < inner; ++r) fdt[r] = batch.f_base[r] * dt;
    ad::Var res = tape.add(tape.sub(nxt, cur), tape.constant(ad::Tensor(inner, 1, std::move(fdt))));
    res = tape.add(res, tape.scale(tape.square(cur), problem.a * dt));
    const ad::Var term = tape.sub(tape.constant(ad::Tensor(block, 1, batch.terminal)), last);
    const ad::Var total = tape.add(tape.sum(tape.square(res)), tape.sum(tape.square(term)));
    return tape.scale(total, 1.0 / static_cast<double>(block));
}

ad::Var global_bsde_loss(ad::Tape& tape, const PdeProblem& problem, const MeanFieldNet& u0,
                         std::span<const ad::Var> u_params, const MeanFieldNet& z, std::span<const ad::Var> z_params,
                         const GlobalBatch& batch) {
    const std::size_t block = batch.measures * batch.samples;
    const ad::Grouping first{batch.measures, batch.samples};
    const std::span<const double> x0(batch.x.data(), block);
    ad::Var y = net_values(tape, u0, u_params, first, x0, time_column(block, 0.0), bin_rows(batch.bins, 0, batch.measures));

    const std::size_t inner = batch.steps * block;
    const ad::Grouping steps{batch.steps * batch.measures, batch.samples};
    const ad::Var zval = net_values(tape, z, z_params, steps, std::span<const double>(batch.x.data(), inner),
                                    global_time_column(problem, batch.steps, block),
                                    bin_rows(batch.bins, 0, batch.steps * batch.measures));
    const double dt = problem.dt();
    for (std::size_t i = 0; i < batch.steps; ++i) {
        std::vector<double> fdt(block);
        std::vector<double> dw(block);
        for (std::size_t r = 0; r < block; ++r) {
            fdt[r] = batch.f_base[i * block + r] * dt;
            dw[r] = batch.dw[i * block + r];
        }
        const ad::Var drift = tape.add(tape.constant(ad::Tensor(block, 1, std::move(fdt))),
                                       tape.scale(tape.square(y), problem.a * dt));
        const ad::Var noise = tape.mul(tape.slice(zval, i * block, block), tape.constant(ad::Tensor(block, 1, std::move(dw))));
        y = tape.add(tape.sub(y, drift), noise);
    }
    return tape.mean(tape.square(tape.sub(y, tape.constant(ad::Tensor(block, 1, batch.terminal)))));
}

namespace {

PdeSolution solve_local(const PdeProblem& problem, const SolverConfig& config, const SolveObserver& observer) {
    const bool bsde = config.mode == SolverMode::local_bsde;
    const ArchitectureConfig arch = with_state(config.arch, 1);
    std::vector<std::optional<MeanFieldNet>> u(problem.steps);
    std::vector<std::optional<MeanFieldNet>> z(problem.steps);
    for (std::size_t i = problem.steps; i-- > 0;) {
        Rng init_u = make_rng(config.seed, {stream::init, i, 0});
        u[i] = make_net(arch, problem.grid, init_u);
        if (bsde) {
            Rng init_z = make_rng(config.seed, {stream::init, i, 1});
            z[i] = make_net(arch, problem.grid, init_z);
        }
        if (config.warm_start && i + 1 < problem.steps) {
            copy_params(*u[i + 1], *u[i]);
            if (bsde) copy_params(*z[i + 1], *z[i]);
        }
        const MeanFieldNet* next = i + 1 < problem.steps ? &*u[i + 1] : nullptr;
        MeanFieldNet& ui = *u[i];
        MeanFieldNet* zi = bsde ? &*z[i] : nullptr;
        optimize(ui, zi, config, i, observer, [&](const ad::ParameterSet& set, std::size_t nu, std::size_t it) {
            const LocalBatch batch = make_local_batch(problem, config, i, it, next, grid_of(ui));
            return ad::value_and_grad(set, [&](ad::Tape& tape, std::span<const ad::Var> params) {
                return local_loss(tape, problem, ui, params.subspan(0, nu), zi, params.subspan(nu), batch);
            });
        });
    }
    PdeSolution sol;
    sol.mode = config.mode;
    sol.problem = problem;
    for (auto& n : u) sol.u.push_back(std::move(*n));
    if (bsde) {
        for (auto& n : z) sol.z.push_back(std::move(*n));
    }
    return sol;
}

PdeSolution solve_global(const PdeProblem& problem, const SolverConfig& config, const SolveObserver& observer) {
    PdeSolution sol;
    sol.mode = config.mode;
    sol.problem = problem;
    if (config.mode == SolverMode::global_regression) {
        Rng init = make_rng(config.seed, {stream::init, 0, 0});
        MeanFieldNet u = make_net(with_state(config.arch, 2), problem.grid, init);
        optimize(u, nullptr, config, 0, observer, [&](const ad::ParameterSet& set, std::size_t, std::size_t it) {
            const GlobalBatch batch = make_global_batch(problem, config, it, grid_of(u));
            return ad::value_and_grad(set, [&](ad::Tape& tape, std::span<const ad::Var> params) {
                return global_regression_loss(tape, problem, u, params, batch);
            });
        });
        sol.u.push_back(std::move(u));
        return sol;
    }
    Rng init_u = make_rng(config.seed, {stream::init, 0, 0});
    MeanFieldNet u0 = make_net(with_state(config.arch, 1), problem.grid, init_u);
    Rng init_z = make_rng(config.seed, {stream::init, 0, 1});
    MeanFieldNet z = make_net(with_state(config.arch, 2), problem.grid, init_z);
    optimize(u0, &z, config, 0, observer, [&](const ad::ParameterSet& set, std::size_t nu, std::size_t it) {
        const GlobalBatch batch = make_global_batch(problem, config, it, grid_of(u0));
        return ad::value_and_grad(set, [&](ad::Tape& tape, std::span<const ad::Var> params) {
            return global_bsde_loss(tape, problem, u0, params.subspan(0, nu), z, params.subspan(nu), batch);
        });
    });
    sol.u.push_back(std::move(u0));
    sol.z.push_back(std::move(z));
    return sol;
}

} // namespace

PdeSolution solve(const PdeProblem& problem, const SolverConfig& config, const SolveObserver& observer) {
    problem.validate();
    config.validate();
    if (config.arch.arch == Arch::deeponet) {
        throw Error(ErrorKind::config_invalid, "the PDE solvers use bin or cylindrical networks");
    }
    return is_local(config.mode) ? solve_local(problem, config, observer) : solve_global(problem, config, observer);
}

PdeSolution solve_local_regression(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer) {
    config.mode = SolverMode::local_regression;
    return solve(problem, config, observer);
}

PdeSolution solve_local_bsde(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer) {
    config.mode = SolverMode::local_bsde;
    return solve(problem, config, observer);
}

PdeSolution solve_global_regression(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer) {
    config.mode = SolverMode::global_regression;
    return solve(problem, config, observer);
}

PdeSolution solve_global_bsde(const PdeProblem& problem, SolverConfig config, const SolveObserver& observer) {
    config.mode = SolverMode::global_bsde;
    return solve(problem, config, observer);
}

std::vector<double> net_on_cloud(const MeanFieldNet& net, const PdeProblem& problem, double t,
                                 std::span<const double> cloud, bool exact_bins, const BinDensity* density) {
    const ad::Grouping g{1, cloud.size()};
    ad::Tensor bins;
    if (const BinGrid* grid = grid_of(net)) {
        if (exact_bins && density) {
            const std::vector<BinDensity> one{*density};
            bins = cloud_bins(*grid, g, cloud, &one);
        } else {
            bins = cloud_bins(*grid, g, cloud, nullptr);
        }
    }
    ad::Tape tape;
    const auto params = constant_params(tape, net);
    const ad::Var out = net_values(tape, net, params, g, cloud, time_column(cloud.size(), t / problem.T), bins);
    return tape.value(out).data;
}

void PathEvaluator::advance(std::size_t, std::span<const double>, std::span<const double>) {}

namespace {

class LocalEvaluator final : public PathEvaluator {
public:
    explicit LocalEvaluator(const PdeSolution& s) : s_(s) {}
    std::vector<double> value(std::size_t i, std::span<const double> cloud) override {
        const PdeProblem& p = s_.problem;
        if (i >= p.steps) {
            std::vector<double> out(cloud.size());
            terminal_batch(p, ad::Grouping{1, cloud.size()}, cloud, cloud.size(), cloud, out);
            return out;
        }
        return net_on_cloud(s_.u[i], p, p.time(i), cloud);
    }

private:
    const PdeSolution& s_;
};

class GlobalRegressionEvaluator final : public PathEvaluator {
public:
    explicit GlobalRegressionEvaluator(const PdeSolution& s) : s_(s) {}
    std::vector<double> value(std::size_t i, std::span<const double> cloud) override {
        return net_on_cloud(s_.u[0], s_.problem, s_.problem.time(i), cloud);
    }

private:
    const PdeSolution& s_;
};

/// Time 0 from the value net; later times from the rolled-out Y.
class GlobalBsdeEvaluator final : public PathEvaluator {
public:
    explicit GlobalBsdeEvaluator(const PdeSolution& s) : s_(s) {}
    std::vector<double> value(std::size_t i, std::span<const double> cloud) override {
        if (i == 0) {
            y_ = net_on_cloud(s_.u[0], s_.problem, 0.0, cloud);
            step_ = 0;
        }
        if (i != step_ || y_.empty()) {
            throw Error(ErrorKind::unsupported_primitive, "global BSDE values are only defined along the rollout");
        }
        return y_;
    }
    void advance(std::size_t i, std::span<const double> cloud, std::span<const double> dw) override {
        const PdeProblem& p = s_.problem;
        if (i == 0 && y_.empty()) y_ = net_on_cloud(s_.u[0], p, 0.0, cloud);
        const std::vector<double> zv = net_on_cloud(s_.z[0], p, p.time(i), cloud);
        std::vector<double> fb(cloud.size());
        const ad::Grouping g{1, cloud.size()};
        generator_base_batch(p, p.time(i), g, cloud, cloud.size(), cloud, fb);
        for (std::size_t n = 0; n < cloud.size(); ++n) {
            y_[n] = y_[n] - (fb[n] + p.a * y_[n] * y_[n]) * p.dt() + zv[n] * dw[n];
        }
        step_ = i + 1;
    }

private:
    const PdeSolution& s_;
    std::vector<double> y_;
    std::size_t step_ = 0;
};

class ExactEvaluator final : public PathEvaluator {
public:
    explicit ExactEvaluator(const PdeProblem& p) : p_(p) {}
    std::vector<double> value(std::size_t i, std::span<const double> cloud) override {
        std::vector<double> out(cloud.size());
        terminal_batch(p_, ad::Grouping{1, cloud.size()}, cloud, cloud.size(), cloud, out);
        const double e = std::exp(p_.T - p_.time(i));
        for (auto& v : out) v *= e;
        return out;
    }

private:
    PdeProblem p_;
};

} // namespace

std::unique_ptr<PathEvaluator> make_evaluator(const PdeSolution& solution) {
    switch (solution.mode) {
    case SolverMode::local_regression:
    case SolverMode::local_bsde: return std::make_unique<LocalEvaluator>(solution);
    case SolverMode::global_regression: return std::make_unique<GlobalRegressionEvaluator>(solution);
    case SolverMode::global_bsde: return std::make_unique<GlobalBsdeEvaluator>(solution);
    }
    throw Error(ErrorKind::config_invalid, "unknown solver mode");
}

std::unique_ptr<PathEvaluator> make_exact_evaluator(const PdeProblem& problem) {
    return std::make_unique<ExactEvaluator>(problem);
}

std::vector<PdeMse> evaluate_pde_mse(const PdeProblem& problem, PathEvaluator& evaluator, int which_test,
                                     std::span<const std::size_t> steps, std::size_t samples, std::uint64_t seed,
                                     Test2Variant variant) {
    if (steps.empty()) return {};
    if (samples == 0) throw Error(ErrorKind::invalid_domain, "evaluation needs N >= 1");
    const std::size_t last = *std::max_element(steps.begin(), steps.end());
    if (last > problem.steps) throw Error(ErrorKind::invalid_domain, "evaluation step beyond N_T");
    const TestDistribution law(which_test, variant);
    Rng rng = make_rng(seed, {stream::pde_eval, static_cast<std::uint64_t>(which_test), 0});
    std::vector<double> cloud(samples);
    law.sample_into(cloud, rng);
    const ad::Grouping g{1, samples};
    std::vector<PdeMse> out;
    for (std::size_t i = 0; i <= last; ++i) {
        if (std::find(steps.begin(), steps.end(), i) != steps.end()) {
            const std::vector<double> approx = evaluator.value(i, cloud);
            std::vector<double> exact(samples);
            terminal_batch(problem, g, cloud, samples, cloud, exact);
            const double e = std::exp(problem.T - problem.time(i));
            double s = 0.0;
            for (std::size_t n = 0; n < samples; ++n) {
                const double d = approx[n] - e * exact[n];
                s += d * d;
            }
            out.push_back({i, problem.time(i), s / static_cast<double>(samples)});
        }
        if (i < last) {
            Rng noise = make_rng(seed, {stream::pde_eval, static_cast<std::uint64_t>(which_test), 1, i});
            const std::vector<double> dw = gaussian_increments(samples, problem.dt(), noise);
            evaluator.advance(i, cloud, dw);
            euler_step(problem, g, cloud, dw);
        }
    }
    std::sort(out.begin(), out.end(), [](const PdeMse& a, const PdeMse& b) { return a.step < b.step; });
    return out;
}

std::vector<PdeMse> evaluate_pde_mse(const PdeSolution& solution, int which_test, std::span<const std::size_t> steps,
                                     std::size_t samples, std::uint64_t seed, Test2Variant variant) {
    auto evaluator = make_evaluator(solution);
    return evaluate_pde_mse(solution.problem, *evaluator, which_test, steps, samples, seed, variant);
}

MartingaleResidual martingale_residual(const PdeProblem& problem, std::size_t samples, std::uint64_t seed,
                                       ResidualEstimator estimator, double f_sign) {
    problem.validate();
    if (estimator == ResidualEstimator::conditional && !problem.kernel.cosine) {
        throw Error(ErrorKind::unsupported_primitive, "the conditional residual estimator needs the cosine kernel");
    }
    if (samples < 2) throw Error(ErrorKind::invalid_domain, "residual needs N >= 2");
    const TestDistribution law(1);
    Rng rng = make_rng(seed, {stream::residual, 0});
    std::vector<double> x(samples);
    law.sample_into(x, rng);
    const ad::Grouping g{1, samples};
    const double dt = problem.dt();
    const double n = static_cast<double>(samples);
    std::vector<double> v(samples), fb(samples), a(samples);
    MartingaleResidual out;
    double total = 0.0;
    for (std::size_t i = 0; i < problem.steps; ++i) {
        const double t = problem.time(i);
        const double t1 = problem.time(i + 1);
        terminal_batch(problem, g, x, samples, x, v);
        for (auto& val : v) val *= std::exp(problem.T - t);
        generator_base_batch(problem, t, g, x, samples, x, fb);
        Rng noise = make_rng(seed, {stream::residual, 1, i});
        const std::vector<double> dw = gaussian_increments(samples, dt, noise);

        std::vector<double> next(samples);
        if (estimator == ResidualEstimator::conditional) {
            const double mean = cloud_mean(x);
            double sc = 0.0;
            double ss = 0.0;
            for (std::size_t k = 0; k < samples; ++k) {
                a[k] = x[k] + problem.kappa * (mean - x[k]) * dt;
                sc += std::cos(a[k]);
                ss += std::sin(a[k]);
            }
            // Pairs j != k decorrelate by exp(-sigma^2 dt); the j = k term is w(0) = 1.
            const double damp = std::exp(-problem.sigma * problem.sigma * dt);
            const double e1 = std::exp(problem.T - t1);
            for (std::size_t k = 0; k < samples; ++k) {
                const double cross = std::cos(a[k]) * sc + std::sin(a[k]) * ss - 1.0;
                next[k] = e1 * (1.0 + damp * cross) / n;
            }
        } else {
            std::vector<double> moved = x;
            euler_step(problem, g, moved, dw);
            terminal_batch(problem, g, moved, samples, moved, next);
            for (auto& val : next) val *= std::exp(problem.T - t1);
        }
        double r = 0.0;
        for (std::size_t k = 0; k < samples; ++k) {
            const double f = fb[k] + problem.a * v[k] * v[k];
            r += next[k] - v[k] + f_sign * f * dt;
        }
        r /= n;
        out.per_step.push_back(r);
        total += r;
        euler_step(problem, g, x, dw);
    }
    out.total = std::abs(total);
    return out;
}

} // namespace mfnn
