#include "patchfill/adaptation/intervar.hpp"

#include <cmath>

#include "patchfill/error.hpp"
#include "patchfill/numerics/init.hpp"
#include "patchfill/numerics/ops.hpp"

namespace patchfill::adaptation {

using namespace numerics;

namespace {

constexpr double kNormEps = 1e-5;

std::string iv_name(std::size_t l, const char* suffix) {
    return "intervar.layer" + std::to_string(l) + "." + suffix;
}

void validate(const BackboneConfig& base, const InterVarConfig& config) {
    const std::size_t d = config.light(base);
    if (d == 0) throw ConfigError("inter-variable token width must be positive");
    if (config.heads == 0 || d % config.heads != 0) {
        throw ConfigError("inter-variable width " + std::to_string(d) + " is not divisible by head count " +
                          std::to_string(config.heads));
    }
}

template <std::floating_point T>
void add_parameters(ParameterStore<T>& ps, const BackboneConfig& base, const InterVarConfig& config, Rng& rng) {
    const std::size_t d = config.light(base), D = base.width;
    ps.add("intervar.tok.w", xavier_uniform<T>(base.window_length, d, rng));
    ps.add("intervar.tok.b", Tensor<T>({d}));
    for (std::size_t l = 0; l < base.layers; ++l) {
        ps.add(iv_name(l, "ln1.g"), Tensor<T>({d}, T{1}));
        ps.add(iv_name(l, "ln1.b"), Tensor<T>({d}));
        ps.add(iv_name(l, "attn.qkv.w"), xavier_uniform<T>(d, 3 * d, rng));
        ps.add(iv_name(l, "attn.qkv.b"), Tensor<T>({3 * d}));
        ps.add(iv_name(l, "attn.out.w"), xavier_uniform<T>(d, d, rng));
        ps.add(iv_name(l, "attn.out.b"), Tensor<T>({d}));
        ps.add(iv_name(l, "ln2.g"), Tensor<T>({d}, T{1}));
        ps.add(iv_name(l, "ln2.b"), Tensor<T>({d}));
        ps.add(iv_name(l, "ff.fc1.w"), xavier_uniform<T>(d, 2 * d, rng));
        ps.add(iv_name(l, "ff.fc1.b"), Tensor<T>({2 * d}));
        ps.add(iv_name(l, "ff.fc2.w"), xavier_uniform<T>(2 * d, d, rng));
        ps.add(iv_name(l, "ff.fc2.b"), Tensor<T>({d}));
        ps.add(iv_name(l, "kv.w"), xavier_uniform<T>(d, 2 * D, rng));
        ps.add(iv_name(l, "kv.b"), Tensor<T>({2 * D}));
    }
}

// Full (non-causal) attention among the V rows of x, head by head.
template <std::floating_point T>
Var<T> mixing_attention(Var<T> qkv, std::size_t d, std::size_t heads) {
    const std::size_t hd = d / heads;
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    std::vector<Var<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var<T> q = slice(qkv, 1, h * hd, (h + 1) * hd);
        Var<T> k = slice(qkv, 1, d + h * hd, d + (h + 1) * hd);
        Var<T> v = slice(qkv, 1, 2 * d + h * hd, 2 * d + (h + 1) * hd);
        Var<T> p = softmax(scale(matmul(q, transpose(k)), inv), 1);
        outs.push_back(matmul(p, v));
    }
    return heads == 1 ? outs[0] : concat(std::span<const Var<T>>(outs), 1);
}

} // namespace

template <std::floating_point T>
InterVarNet<T> make_intervar(const BackboneConfig& base, const InterVarConfig& config, std::uint64_t seed) {
    validate(base, config);
    InterVarNet<T> net;
    net.base = base;
    net.config = config;
    Rng rng(seed);
    add_parameters(net.params, base, config, rng);
    return net;
}

template <std::floating_point T>
PrefixKV<T> intervar_prefix(Binder<T>& bind, const BackboneConfig& base, const InterVarConfig& config, Var<T> x) {
    validate(base, config);
    if (x.shape().size() != 2 || x.shape()[1] != base.window_length || x.shape()[0] == 0) {
        throw DimensionError("inter-variable input " + shape_string(x.shape()) + " must be V x " +
                             std::to_string(base.window_length));
    }
    const std::size_t d = config.light(base), D = base.width;
    const T eps = static_cast<T>(kNormEps);
    Var<T> z = linear(x, bind("intervar.tok.w"), bind("intervar.tok.b"));
    PrefixKV<T> out;
    for (std::size_t l = 0; l < base.layers; ++l) {
        Var<T> h = layer_norm(z, bind(iv_name(l, "ln1.g")), bind(iv_name(l, "ln1.b")), eps);
        h = linear(h, bind(iv_name(l, "attn.qkv.w")), bind(iv_name(l, "attn.qkv.b")));
        h = mixing_attention(h, d, config.heads);
        z = add(z, linear(h, bind(iv_name(l, "attn.out.w")), bind(iv_name(l, "attn.out.b"))));
        h = layer_norm(z, bind(iv_name(l, "ln2.g")), bind(iv_name(l, "ln2.b")), eps);
        h = gelu(linear(h, bind(iv_name(l, "ff.fc1.w")), bind(iv_name(l, "ff.fc1.b"))));
        z = add(z, linear(h, bind(iv_name(l, "ff.fc2.w")), bind(iv_name(l, "ff.fc2.b"))));
        Var<T> kv = linear(z, bind(iv_name(l, "kv.w")), bind(iv_name(l, "kv.b")));
        out.push_back({slice(kv, 1, 0, D), slice(kv, 1, D, 2 * D)});
    }
    return out;
}

template <std::floating_point T>
PrefixFn<T> intervar_prefix_fn(const BackboneConfig& base, const InterVarConfig& config, std::size_t group) {
    if (group == 0) throw ConfigError("inter-variable group size must be positive");
    return [base, config, group](Binder<T>& bind, std::span<const data::SeriesWindow> inputs) {
        if (inputs.size() % group != 0) {
            throw ConfigError("batch of " + std::to_string(inputs.size()) + " windows is not a multiple of " +
                              std::to_string(group) + " variables");
        }
        const std::size_t L = base.window_length;
        std::vector<PrefixKV<T>> blocks;
        for (std::size_t b0 = 0; b0 < inputs.size(); b0 += group) {
            Tensor<T> x({group, L});
            for (std::size_t v = 0; v < group; ++v) {
                const auto& w = inputs[b0 + v];
                if (w.length() != L) throw DimensionError("window length " + std::to_string(w.length()));
                for (std::size_t t = 0; t < L; ++t) x.at(v, t) = w.mask[t] ? static_cast<T>(w.values[t]) : T{0};
            }
            blocks.push_back(intervar_prefix(bind, base, config, bind.constant(std::move(x))));
        }
        if (blocks.size() == 1) return blocks[0];
        PrefixKV<T> out;
        for (std::size_t l = 0; l < base.layers; ++l) {
            std::vector<Var<T>> ks, vs;
            for (const auto& b : blocks) {
                ks.push_back(b[l].key);
                vs.push_back(b[l].value);
            }
            out.push_back({concat(std::span<const Var<T>>(ks), 0), concat(std::span<const Var<T>>(vs), 0)});
        }
        return out;
    };
}

std::vector<data::SeriesWindow> block_windows(const data::MultivariateSeries& series, std::size_t length,
                                              std::size_t stride, const std::vector<std::size_t>& variables) {
    if (length == 0 || stride == 0) throw ConfigError("window length and stride must be positive");
    std::vector<data::SeriesWindow> out;
    if (series.steps < length) return out;
    for (std::size_t v : variables) {
        if (v >= series.variables()) throw ConfigError("variable index " + std::to_string(v) + " out of range");
    }
    for (std::size_t start = 0; start + length <= series.steps; start += stride) {
        for (std::size_t v : variables) {
            data::SeriesWindow w;
            w.variable = v;
            w.start = start;
            w.domain = series.domain;
            for (std::size_t t = start; t < start + length; ++t) {
                w.values.push_back(series.value(t, v));
                w.mask.push_back(series.observed(t, v) ? 1 : 0);
            }
            out.push_back(std::move(w));
        }
    }
    return out;
}

template <std::floating_point T>
training::TrainResult finetune_intervar(Model<T>& base, InterVarNet<T>& net, std::size_t group,
                                        std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
                                        const training::TrainConfig& config, std::ostream* log) {
    backbone::check_compatible(base.config, net.base);
    FrozenGuard<T> guard(base.params);
    training::TrainerHooks<T> hooks;
    hooks.overlay = &net.params;
    hooks.prefix = intervar_prefix_fn<T>(base.config, net.config, group);
    hooks.group = group;
    training::Trainer<T> trainer(base, std::move(train), std::move(val), config, log, hooks);
    training::TrainResult result = trainer.run();
    guard.verify();
    return result;
}

template <std::floating_point T>
Checkpoint to_checkpoint(const InterVarNet<T>& net) {
    Checkpoint ckpt;
    backbone::write_config(ckpt, net.base);
    ckpt.put_text("meta.adapter", "intervar_prefix");
    ckpt.put_scalar("meta.intervar.light_width", static_cast<double>(net.config.light(net.base)));
    ckpt.put_scalar("meta.intervar.heads", static_cast<double>(net.config.heads));
    ckpt.put_parameters(net.params);
    return ckpt;
}

template <std::floating_point T>
InterVarNet<T> intervar_from_checkpoint(const Checkpoint& ckpt, const BackboneConfig& base) {
    if (!ckpt.contains("meta.adapter") || ckpt.text("meta.adapter") != "intervar_prefix") {
        throw FormatError("checkpoint is not an inter-variable prefix network");
    }
    const BackboneConfig found = backbone::read_config(ckpt);
    backbone::check_compatible(base, found);
    InterVarConfig config;
    config.light_width = static_cast<std::size_t>(ckpt.scalar("meta.intervar.light_width"));
    config.heads = static_cast<std::size_t>(ckpt.scalar("meta.intervar.heads"));
    InterVarNet<T> net = make_intervar<T>(found, config, 0);
    ckpt.load_into(net.params);
    return net;
}

#define PATCHFILL_INSTANTIATE_INTERVAR(T)                                                                        \
    template InterVarNet<T> make_intervar<T>(const BackboneConfig&, const InterVarConfig&, std::uint64_t);    \
    template PrefixKV<T> intervar_prefix<T>(Binder<T>&, const BackboneConfig&, const InterVarConfig&, Var<T>); \
    template PrefixFn<T> intervar_prefix_fn<T>(const BackboneConfig&, const InterVarConfig&, std::size_t);    \
    template training::TrainResult finetune_intervar<T>(Model<T>&, InterVarNet<T>&, std::size_t,              \
                                                        std::vector<data::SeriesWindow>,                       \
                                                        std::vector<data::SeriesWindow>,                       \
                                                        const training::TrainConfig&, std::ostream*);          \
    template Checkpoint to_checkpoint<T>(const InterVarNet<T>&);                                               \
    template InterVarNet<T> intervar_from_checkpoint<T>(const Checkpoint&, const BackboneConfig&);

PATCHFILL_INSTANTIATE_INTERVAR(float)
PATCHFILL_INSTANTIATE_INTERVAR(double)

} // namespace patchfill::adaptation
