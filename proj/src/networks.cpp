#include "mfnn/networks.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "mfnn/error.hpp"

namespace mfnn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'F', 'N', 'N', 'C', 'K', 'P', 'T'};

template <class... F>
struct overloaded : F... {
    using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

ad::MlpSpec spec_with(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, ad::Activation act) {
    ad::MlpSpec s;
    s.input_dim = in;
    s.hidden = hidden;
    s.output_dim = out;
    s.activation = act;
    return s;
}

json spec_json(const ad::MlpSpec& s) {
    return {{"input_dim", s.input_dim},
            {"hidden", s.hidden},
            {"output_dim", s.output_dim},
            {"activation", ad::to_string(s.activation)}};
}

ad::MlpSpec spec_from(const json& j) {
    return spec_with(j.at("input_dim").get<std::size_t>(), j.at("hidden").get<std::vector<std::size_t>>(),
                     j.at("output_dim").get<std::size_t>(), ad::parse_activation(j.at("activation").get<std::string>()));
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorKind::io, "truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void check_bins(const BinGrid& grid, const BinDensity& density) {
    if (!(density.grid() == grid)) {
        throw Error(ErrorKind::dimension_mismatch, "bin density grid differs from the network grid (" +
                                                       std::to_string(density.size()) + " vs " +
                                                       std::to_string(grid.size()) + " bins)");
    }
}

} // namespace

Arch parse_arch(const std::string& name) {
    if (name == "bin") return Arch::bin;
    if (name == "deeponet") return Arch::deeponet;
    if (name == "cylindrical") return Arch::cylindrical;
    throw Error(ErrorKind::config_invalid, "unknown architecture '" + name + "'");
}

std::string to_string(Arch arch) {
    switch (arch) {
    case Arch::bin: return "bin";
    case Arch::deeponet: return "deeponet";
    case Arch::cylindrical: return "cylindrical";
    }
    return "unknown";
}

void ArchitectureConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw Error(ErrorKind::config_invalid, std::string(what) + " must be >= 1");
    };
    positive(output_dim, "output_dim");
    positive(state_dim, "state_dim");
    positive(latent, "latent");
    positive(deeponet_width, "deeponet_width");
    for (const auto* list : {&hidden, &inner_hidden, &outer_hidden}) {
        for (const auto h : *list) positive(h, "hidden layer width");
    }
    if (arch == Arch::deeponet && output_dim != 1) {
        throw Error(ErrorKind::config_invalid, "DeepONet nets have a scalar output");
    }
}

MeanFieldNet make_net(const ArchitectureConfig& c, const BinGrid& grid, Rng& rng) {
    c.validate();
    switch (c.arch) {
    case Arch::bin:
        return BinDensityNet{grid, ad::make_mlp(spec_with(c.state_dim + grid.size(), c.hidden, c.output_dim, c.activation), rng),
                             c.state_dim};
    case Arch::deeponet: {
        ad::Mlp branch = ad::make_mlp(spec_with(grid.size(), c.hidden, c.deeponet_width, c.activation), rng);
        ad::Mlp trunk = ad::make_mlp(spec_with(c.state_dim, c.hidden, c.deeponet_width, c.activation), rng);
        return DeepOnetNet{grid, std::move(branch), std::move(trunk), c.state_dim};
    }
    case Arch::cylindrical: {
        ad::Mlp inner = ad::make_mlp(spec_with(1, c.inner_hidden, c.latent, c.activation), rng);
        ad::Mlp outer = ad::make_mlp(spec_with(c.state_dim + c.latent, c.outer_hidden, c.output_dim, c.activation), rng);
        return CylindricalNet{std::move(inner), std::move(outer), c.state_dim};
    }
    }
    throw Error(ErrorKind::config_invalid, "unknown architecture");
}

Arch arch_of(const MeanFieldNet& net) noexcept {
    return static_cast<Arch>(net.index());
}

std::size_t state_dim_of(const MeanFieldNet& net) noexcept {
    return std::visit([](const auto& n) { return n.state_dim; }, net);
}

std::size_t output_dim_of(const MeanFieldNet& net) noexcept {
    return std::visit(overloaded{[](const BinDensityNet& n) { return n.phi.spec().output_dim; },
                                 [](const DeepOnetNet&) { return std::size_t{1}; },
                                 [](const CylindricalNet& n) { return n.outer.spec().output_dim; }},
                      net);
}

const BinGrid* grid_of(const MeanFieldNet& net) noexcept {
    if (const auto* b = std::get_if<BinDensityNet>(&net)) return &b->grid;
    if (const auto* d = std::get_if<DeepOnetNet>(&net)) return &d->grid;
    return nullptr;
}

std::vector<ad::Mlp*> components(MeanFieldNet& net) {
    return std::visit(overloaded{[](BinDensityNet& n) { return std::vector<ad::Mlp*>{&n.phi}; },
                                 [](DeepOnetNet& n) { return std::vector<ad::Mlp*>{&n.branch, &n.trunk}; },
                                 [](CylindricalNet& n) { return std::vector<ad::Mlp*>{&n.inner, &n.outer}; }},
                      net);
}

std::vector<const ad::Mlp*> components(const MeanFieldNet& net) {
    auto v = components(const_cast<MeanFieldNet&>(net));
    return {v.begin(), v.end()};
}

std::vector<double> eval_bin(const BinDensityNet& net, double x, const BinDensity& density) {
    check_bins(net.grid, density);
    if (net.state_dim != 1) throw Error(ErrorKind::dimension_mismatch, "eval_bin takes a scalar state");
    std::vector<double> in;
    in.reserve(1 + density.size());
    in.push_back(x);
    in.insert(in.end(), density.levels().begin(), density.levels().end());
    return net.phi.forward(in);
}

double eval_deeponet(const DeepOnetNet& net, double x, const BinDensity& density) {
    check_bins(net.grid, density);
    if (net.state_dim != 1) throw Error(ErrorKind::dimension_mismatch, "eval_deeponet takes a scalar state");
    const std::vector<double> b = net.branch.forward(density.levels());
    const double xs[1] = {x};
    const std::vector<double> t = net.trunk.forward(xs);
    if (b.size() != t.size()) throw Error(ErrorKind::dimension_mismatch, "branch and trunk widths differ");
    double s = 0.0;
    for (std::size_t l = 0; l < b.size(); ++l) s += b[l] * t[l];
    return s;
}

std::vector<double> eval_cyl(const CylindricalNet& net, double x, const EmpiricalSample& xs) {
    if (net.state_dim != 1) throw Error(ErrorKind::dimension_mismatch, "eval_cyl takes a scalar state");
    return eval_cylindrical(
        [&](double v) { return net.inner.forward(std::span<const double>(&v, 1)); },
        [&](double q, const std::vector<double>& z) {
            std::vector<double> in;
            in.reserve(1 + z.size());
            in.push_back(q);
            in.insert(in.end(), z.begin(), z.end());
            return net.outer.forward(in);
        },
        x, xs.values());
}

ad::Var apply(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, ad::Var state,
              ad::Grouping query, const MeasureFeatures& features) {
    if (params.size() != components(net).size()) {
        throw Error(ErrorKind::dimension_mismatch, "wrong number of parameter blocks for the architecture");
    }
    if (features.grouping.groups != query.groups) {
        throw Error(ErrorKind::dimension_mismatch, "query and measure batches hold different numbers of measures");
    }
    return std::visit(
        overloaded{[&](const BinDensityNet& n) {
                       return tape.mlp(n.phi.spec(), params[0], state, features.bins, query);
                   },
                   [&](const DeepOnetNet& n) {
                       const ad::Var b = tape.mlp(n.branch.spec(), params[0], ad::Var{}, features.bins,
                                                  ad::Grouping{query.groups, 1});
                       const ad::Var t = tape.mlp(n.trunk.spec(), params[1], state, ad::Var{}, query);
                       return tape.row_dot(tape.broadcast(b, query), t);
                   },
                   [&](const CylindricalNet& n) {
                       const ad::Var latent =
                           tape.mlp(n.inner.spec(), params[0], features.samples, ad::Var{}, features.grouping);
                       const ad::Var z = tape.group_mean(latent, features.grouping);
                       return tape.mlp(n.outer.spec(), params[1], state, z, query);
                   }},
        net);
}

std::vector<ad::Var> constant_params(ad::Tape& tape, const MeanFieldNet& net) {
    std::vector<ad::Var> out;
    for (const ad::Mlp* m : components(net)) {
        out.push_back(tape.constant(ad::Tensor::column(std::vector<double>(m->params().begin(), m->params().end()))));
    }
    return out;
}

std::vector<double> evaluate(const MeanFieldNet& net, const ad::Tensor& state, ad::Grouping query,
                             ad::Grouping measure, std::span<const double> samples, const ad::Tensor& bins) {
    ad::Tape tape;
    const auto params = constant_params(tape, net);
    MeasureFeatures f;
    f.grouping = measure;
    if (arch_of(net) == Arch::cylindrical) {
        f.samples = tape.constant(ad::Tensor(samples.size(), 1, std::vector<double>(samples.begin(), samples.end())));
    } else {
        f.bins = tape.constant(bins);
    }
    const ad::Var out = apply(tape, net, params, tape.constant(state), query, f);
    return tape.value(out).data;
}

void write_checkpoint(std::ostream& out, const MeanFieldNet& net) {
    json header;
    header["format"] = "mfnn-checkpoint";
    header["version"] = 1;
    header["arch"] = to_string(arch_of(net));
    header["state_dim"] = state_dim_of(net);
    if (const BinGrid* g = grid_of(net)) header["grid"] = {{"lo", g->lo()}, {"hi", g->hi()}, {"K", g->size()}};
    static const char* roles[3][2] = {{"phi", ""}, {"branch", "trunk"}, {"inner", "outer"}};
    const auto parts = components(net);
    json list = json::array();
    for (std::size_t i = 0; i < parts.size(); ++i) {
        list.push_back({{"role", roles[net.index()][i]},
                        {"spec", spec_json(parts[i]->spec())},
                        {"parameters", parts[i]->params().size()}});
    }
    header["components"] = list;
    const std::string text = header.dump();
    out.write(kMagic, 8);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ad::Mlp* m : parts) {
        for (const double v : m->params()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw Error(ErrorKind::io, "failed to write checkpoint");
}

MeanFieldNet read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw Error(ErrorKind::io, "not a checkpoint (bad magic)");
    }
    const std::uint64_t len = get_u64(in);
    if (len > (1u << 24)) throw Error(ErrorKind::io, "checkpoint header too large");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error(ErrorKind::io, "truncated checkpoint");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, std::string("bad checkpoint header: ") + e.what());
    }
    try {
        const Arch arch = parse_arch(header.at("arch").get<std::string>());
        const std::size_t state_dim = header.at("state_dim").get<std::size_t>();
        std::vector<ad::Mlp> parts;
        for (const auto& c : header.at("components")) {
            const ad::MlpSpec spec = spec_from(c.at("spec"));
            std::vector<double> params(spec.parameter_count());
            if (c.at("parameters").get<std::size_t>() != params.size()) {
                throw Error(ErrorKind::io, "checkpoint parameter count does not match its spec");
            }
            parts.emplace_back(spec, std::move(params));
        }
        for (auto& m : parts) {
            for (double& v : m.params()) v = std::bit_cast<double>(get_u64(in));
        }
        auto grid = [&] {
            const auto& g = header.at("grid");
            return BinGrid(g.at("lo").get<double>(), g.at("hi").get<double>(), g.at("K").get<std::size_t>());
        };
        auto need = [&](std::size_t n) {
            if (parts.size() != n) throw Error(ErrorKind::io, "checkpoint has the wrong number of components");
        };
        switch (arch) {
        case Arch::bin: need(1); return BinDensityNet{grid(), std::move(parts[0]), state_dim};
        case Arch::deeponet: need(2); return DeepOnetNet{grid(), std::move(parts[0]), std::move(parts[1]), state_dim};
        case Arch::cylindrical: need(2); return CylindricalNet{std::move(parts[0]), std::move(parts[1]), state_dim};
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, std::string("bad checkpoint header: ") + e.what());
    }
    throw Error(ErrorKind::io, "unknown checkpoint architecture");
}

void save_checkpoint(const std::string& path, const MeanFieldNet& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path + " for writing");
    write_checkpoint(out, net);
}

MeanFieldNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    return read_checkpoint(in);
}

} // namespace mfnn
