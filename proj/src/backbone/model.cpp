#include "patchfill/backbone/model.hpp"

#include <cmath>
#include <sstream>

#include "patchfill/error.hpp"
#include "patchfill/numerics/init.hpp"
#include "patchfill/numerics/ops.hpp"

namespace patchfill::backbone {

using namespace numerics;

namespace {

constexpr double kNormEps = 1e-5;

std::string layer_name(std::size_t l, const char* suffix) {
    return "layer" + std::to_string(l) + "." + suffix;
}

template <std::floating_point T>
Tensor<T> identity(std::size_t n) {
    Tensor<T> t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T{1};
    return t;
}

template <std::floating_point T>
Var<T> maybe_dropout(Var<T> x, double rate, Rng* rng) {
    if (rng == nullptr || rate == 0.0) return x;
    return dropout(x, static_cast<T>(rate), *rng);
}

} // namespace

void BackboneConfig::validate() const {
    if (layers == 0) throw ConfigError("layer count must be at least 1");
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("width " + std::to_string(width) + " is not divisible by head count " +
                          std::to_string(heads));
    }
    embedding().validate();
    if (seq_length() > max_tokens) {
        throw ConfigError("sequence of " + std::to_string(seq_length()) + " tokens exceeds max_tokens " +
                          std::to_string(max_tokens));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

template <std::floating_point T>
Model<T> make_model(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    Model<T> m;
    m.config = config;
    Rng rng(seed);
    const std::size_t D = config.width, F = config.ff();
    auto& ps = m.params;
    embedding::add_parameters(ps, config.embedding(), rng);
    ps.add("pos", normal_tensor<T>({config.max_tokens, D}, 0.02, rng));
    for (std::size_t l = 0; l < config.layers; ++l) {
        ps.add(layer_name(l, "ln1.g"), Tensor<T>({D}, T{1}));
        ps.add(layer_name(l, "ln1.b"), Tensor<T>({D}));
        ps.add(layer_name(l, "attn.qkv.w"), xavier_uniform<T>(D, 3 * D, rng));
        ps.add(layer_name(l, "attn.qkv.b"), Tensor<T>({3 * D}));
        ps.add(layer_name(l, "attn.out.w"), xavier_uniform<T>(D, D, rng));
        ps.add(layer_name(l, "attn.out.b"), Tensor<T>({D}));
        ps.add(layer_name(l, "ln2.g"), Tensor<T>({D}, T{1}));
        ps.add(layer_name(l, "ln2.b"), Tensor<T>({D}));
        ps.add(layer_name(l, "ff.fc1.w"), xavier_uniform<T>(D, F, rng));
        ps.add(layer_name(l, "ff.fc1.b"), Tensor<T>({F}));
        ps.add(layer_name(l, "ff.fc2.w"), xavier_uniform<T>(F, D, rng));
        ps.add(layer_name(l, "ff.fc2.b"), Tensor<T>({D}));
    }
    ps.add("ln_f.g", Tensor<T>({D}, T{1}));
    ps.add("ln_f.b", Tensor<T>({D}));
    ps.add("head.w", xavier_uniform<T>(config.patch_count() * D, config.window_length, rng));
    ps.add("head.b", Tensor<T>({config.window_length}));
    ps.add("contrast.w", identity<T>(D));
    return m;
}

template <std::floating_point T>
HiddenStates<T> forward(Binder<T>& bind, const BackboneConfig& config, Var<T> tokens, std::size_t batch,
                        std::size_t seq, const PrefixKV<T>* prefix, Rng* dropout_rng) {
    if (seq > config.max_tokens) {
        throw ConfigError("sequence of " + std::to_string(seq) + " tokens exceeds max_tokens " +
                          std::to_string(config.max_tokens));
    }
    if (tokens.value().rows() != batch * seq || tokens.value().cols() != config.width) {
        throw DimensionError("token matrix " + shape_string(tokens.shape()) + " does not match " +
                             std::to_string(batch) + " sequences of " + std::to_string(seq) + " x " +
                             std::to_string(config.width));
    }
    if (prefix != nullptr && prefix->size() != config.layers) {
        throw ConfigError("prefix has " + std::to_string(prefix->size()) + " layers, backbone has " +
                          std::to_string(config.layers));
    }
    std::vector<std::size_t> pos_index(batch * seq);
    for (std::size_t i = 0; i < pos_index.size(); ++i) pos_index[i] = i % seq;
    Var<T> x = add(tokens, gather_rows(bind("pos"), std::span<const std::size_t>(pos_index)));
    x = maybe_dropout(x, config.dropout, dropout_rng);

    const T eps = static_cast<T>(kNormEps);
    HiddenStates<T> out;
    for (std::size_t l = 0; l < config.layers; ++l) {
        Var<T> h = layer_norm(x, bind(layer_name(l, "ln1.g")), bind(layer_name(l, "ln1.b")), eps);
        Var<T> qkv = linear(h, bind(layer_name(l, "attn.qkv.w")), bind(layer_name(l, "attn.qkv.b")));
        std::optional<Var<T>> pk, pv;
        if (prefix != nullptr) {
            pk = (*prefix)[l].key;
            pv = (*prefix)[l].value;
        }
        Var<T> a = causal_attention(qkv, batch, seq, config.heads, pk, pv);
        a = linear(a, bind(layer_name(l, "attn.out.w")), bind(layer_name(l, "attn.out.b")));
        x = add(x, maybe_dropout(a, config.dropout, dropout_rng));

        h = layer_norm(x, bind(layer_name(l, "ln2.g")), bind(layer_name(l, "ln2.b")), eps);
        h = gelu(linear(h, bind(layer_name(l, "ff.fc1.w")), bind(layer_name(l, "ff.fc1.b"))));
        h = linear(h, bind(layer_name(l, "ff.fc2.w")), bind(layer_name(l, "ff.fc2.b")));
        x = add(x, maybe_dropout(h, config.dropout, dropout_rng));
        out.layers.push_back(x);
    }
    out.final = layer_norm(x, bind("ln_f.g"), bind("ln_f.b"), eps);
    return out;
}

std::vector<std::size_t> patch_rows(std::size_t batch, std::size_t seq, std::size_t patches) {
    std::vector<std::size_t> rows;
    rows.reserve(batch * patches);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < patches; ++j) rows.push_back(b * seq + 2 + j);
    return rows;
}

template <std::floating_point T>
Var<T> output_head(Binder<T>& bind, const BackboneConfig& config, Var<T> hidden, std::size_t batch,
                   std::size_t seq) {
    const std::size_t N = config.patch_count(), D = config.width;
    if (seq < N + 2 || hidden.value().rows() != batch * seq) {
        throw ContractError("output head expects " + std::to_string(batch) + " sequences of at least " +
                            std::to_string(N + 2) + " tokens, got " + shape_string(hidden.shape()));
    }
    const auto rows = patch_rows(batch, seq, N);
    Var<T> flat = reshape(gather_rows(hidden, std::span<const std::size_t>(rows)), Shape{batch, N * D});
    return linear(flat, bind("head.w"), bind("head.b"));
}

template <std::floating_point T>
Var<T> impute_forward(Binder<T>& bind, const BackboneConfig& config, const embedding::EmbeddingBatch<T>& batch,
                      const PrefixKV<T>* prefix, Rng* dropout_rng) {
    const std::size_t seq = config.seq_length();
    Var<T> tokens = embedding::embed_input(bind, batch);
    HiddenStates<T> h = forward(bind, config, tokens, batch.batch, seq, prefix, dropout_rng);
    return output_head(bind, config, h.final, batch.batch, seq);
}

template <std::floating_point T>
std::vector<std::vector<double>> predict(Model<T>& model, std::span<const data::SeriesWindow> inputs,
                                         std::size_t batch_size, const PrefixFn<T>& prefix,
                                         ParameterStore<T>* overlay) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::vector<double>> out;
    out.reserve(inputs.size());
    const auto embed_config = model.config.embedding();
    for (std::size_t begin = 0; begin < inputs.size(); begin += batch_size) {
        const auto chunk = inputs.subspan(begin, std::min(batch_size, inputs.size() - begin));
        Tape<T> tape;
        Binder<T> bind(tape, model.params, overlay);
        const auto batch = embedding::make_batch<T>(chunk, embed_config);
        PrefixKV<T> kv;
        if (prefix) kv = prefix(bind, chunk);
        const Tensor<T>& y = impute_forward(bind, model.config, batch, prefix ? &kv : nullptr).value();
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            out.emplace_back(y.data() + b * y.cols(), y.data() + (b + 1) * y.cols());
        }
    }
    return out;
}

std::vector<double> compose_imputation(const data::SeriesWindow& window, const data::RevinStats& stats,
                                       std::span<const double> model_output) {
    if (model_output.size() != window.length()) {
        throw DimensionError("model output has " + std::to_string(model_output.size()) + " values, window has " +
                             std::to_string(window.length()));
    }
    std::vector<double> out = data::revin_denormalize(model_output, stats);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (window.mask[i]) out[i] = window.values[i];
    return out;
}

void write_config(Checkpoint& ckpt, const BackboneConfig& c) {
    ckpt.put_scalar("meta.layers", static_cast<double>(c.layers));
    ckpt.put_scalar("meta.heads", static_cast<double>(c.heads));
    ckpt.put_scalar("meta.width", static_cast<double>(c.width));
    ckpt.put_scalar("meta.patch_length", static_cast<double>(c.patch_length));
    ckpt.put_scalar("meta.window_length", static_cast<double>(c.window_length));
    ckpt.put_scalar("meta.ff_width", static_cast<double>(c.ff()));
    ckpt.put_scalar("meta.max_tokens", static_cast<double>(c.max_tokens));
    ckpt.put_scalar("meta.dropout", c.dropout);
    std::string joined;
    for (std::size_t i = 0; i < c.domains.size(); ++i) joined += (i ? "\n" : "") + c.domains[i];
    ckpt.put_text("meta.domains", joined);
}

BackboneConfig read_config(const Checkpoint& ckpt) {
    auto count = [&](const char* name) {
        if (!ckpt.contains(name)) throw FormatError(std::string("checkpoint lacks field '") + name + "'");
        return static_cast<std::size_t>(ckpt.scalar(name));
    };
    BackboneConfig c;
    c.layers = count("meta.layers");
    c.heads = count("meta.heads");
    c.width = count("meta.width");
    c.patch_length = count("meta.patch_length");
    c.window_length = count("meta.window_length");
    c.ff_width = count("meta.ff_width");
    c.max_tokens = count("meta.max_tokens");
    if (!ckpt.contains("meta.dropout")) throw FormatError("checkpoint lacks field 'meta.dropout'");
    c.dropout = ckpt.scalar("meta.dropout");
    if (ckpt.contains("meta.domains")) {
        std::istringstream in(ckpt.text("meta.domains"));
        std::string line;
        while (std::getline(in, line)) c.domains.push_back(line);
    }
    return c;
}

void check_compatible(const BackboneConfig& expected, const BackboneConfig& found) {
    auto field = [](const char* name, std::size_t want, std::size_t got) {
        if (want != got) {
            throw ConfigError(std::string("backbone field '") + name + "' mismatch: expected " + std::to_string(want) +
                              ", found " + std::to_string(got));
        }
    };
    field("layers", expected.layers, found.layers);
    field("heads", expected.heads, found.heads);
    field("width", expected.width, found.width);
    field("patch_length", expected.patch_length, found.patch_length);
    field("window_length", expected.window_length, found.window_length);
    field("ff_width", expected.ff(), found.ff());
    field("max_tokens", expected.max_tokens, found.max_tokens);
    if (expected.domains != found.domains) throw ConfigError("backbone field 'domains' mismatch");
}

template <std::floating_point T>
Checkpoint to_checkpoint(const Model<T>& model) {
    Checkpoint ckpt;
    write_config(ckpt, model.config);
    ckpt.put_parameters(model.params);
    return ckpt;
}

template <std::floating_point T>
Model<T> from_checkpoint(const Checkpoint& ckpt) {
    Model<T> m = make_model<T>(read_config(ckpt), 0);
    ckpt.load_into(m.params);
    return m;
}

#define PATCHFILL_INSTANTIATE_MODEL(T)                                                                          \
    template Model<T> make_model<T>(const BackboneConfig&, std::uint64_t);                                      \
    template HiddenStates<T> forward<T>(Binder<T>&, const BackboneConfig&, Var<T>, std::size_t, std::size_t,    \
                                        const PrefixKV<T>*, Rng*);                                              \
    template Var<T> output_head<T>(Binder<T>&, const BackboneConfig&, Var<T>, std::size_t, std::size_t);        \
    template Var<T> impute_forward<T>(Binder<T>&, const BackboneConfig&, const embedding::EmbeddingBatch<T>&,    \
                                      const PrefixKV<T>*, Rng*);                                                \
    template std::vector<std::vector<double>> predict<T>(Model<T>&, std::span<const data::SeriesWindow>,        \
                                                         std::size_t, const PrefixFn<T>&, ParameterStore<T>*);   \
    template Checkpoint to_checkpoint<T>(const Model<T>&);                                                      \
    template Model<T> from_checkpoint<T>(const Checkpoint&);

PATCHFILL_INSTANTIATE_MODEL(float)
PATCHFILL_INSTANTIATE_MODEL(double)

} // namespace patchfill::backbone
