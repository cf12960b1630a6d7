#include "ccnet/model.hpp"

#include "ccnet/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ccnet {

std::vector<int> CCNetConfig::head_levels() const {
    std::vector<int> out;
    for (int k = 0; k < num_heads; ++k) out.push_back(levels - k);
    return out;
}

void CCNetConfig::validate() const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("CCNetConfig: " + why); };
    if (grid < 1 || levels < 1 || dim < 1 || classes < 2) fail("grid, levels, dim must be positive and classes >= 2");
    if (num_heads < 1 || num_heads > 3) fail("num_heads must be 1..3");
    if (num_heads > levels) fail("num_heads (" + std::to_string(num_heads) + ") exceeds levels (" + std::to_string(levels) + ")");
    if (image_size % grid != 0) fail("image size not divisible by grid");
    if (patch() % tokenizer_kernel != 0) fail("patch size not divisible by tokenizer kernel");
    if (image_size % (encoder_kernel * 2) != 0) fail("image size not divisible by mask encoder strides");
    if (mlp_layers != 1 && mlp_layers != 2) fail("mlp_layers must be 1 or 2");
    if (!(init_beta > 0.0)) fail("init_beta must be positive");
}

namespace {

void add_linear(ParamSet& params, Rng& rng, const std::string& prefix, Index in, Index out, bool bias) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Tensor w(Shape{in, out});
    for (Index i = 0; i < w.numel(); ++i) w[i] = normal(rng);
    params.add(prefix + ".w", std::move(w));
    if (bias) params.add(prefix + ".b", Tensor(Shape{out}, 0.0));
}

void add_mlp(ParamSet& params, Rng& rng, const std::string& prefix, const CCNetConfig& c) {
    if (c.mlp_layers == 1) {
        add_linear(params, rng, prefix + ".fc1", c.dim, c.dim, c.bias);
    } else {
        add_linear(params, rng, prefix + ".fc1", c.dim, c.hidden(), c.bias);
        add_linear(params, rng, prefix + ".fc2", c.hidden(), c.dim, c.bias);
    }
}

}  // namespace

ParamSet init_ccnet_params(const CCNetConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(mix_seed({seed, 0xCC}));
    ParamSet p;
    const int k1 = c.tokenizer_kernel, k2 = c.patch() / c.tokenizer_kernel;
    add_linear(p, rng, "tok.conv1", k1 * k1 * c.channels, c.tokenizer_channels, c.bias);
    add_linear(p, rng, "tok.conv2", k2 * k2 * c.tokenizer_channels, c.dim, c.bias);

    const int g = c.encoder_grid();
    add_linear(p, rng, "enc.conv1", c.encoder_kernel * c.encoder_kernel, c.encoder_channels1, c.bias);
    add_linear(p, rng, "enc.conv2", 4 * c.encoder_channels1, c.encoder_channels2, c.bias);
    add_linear(p, rng, "enc.fc", g * g * c.encoder_channels2, c.dim, c.bias);

    for (int l = 1; l <= c.levels; ++l) add_mlp(p, rng, "bu." + std::to_string(l), c);
    for (int l = 1; l < c.levels; ++l) add_mlp(p, rng, "td." + std::to_string(l), c);
    for (int l = 1; l <= c.levels; ++l) {
        p.add("attn.log_beta." + std::to_string(l), Tensor(Shape{1}, std::log(c.init_beta)));
        p.add("mix." + std::to_string(l), Tensor(Shape{4}, 0.0));
    }
    for (int k = 0; k < c.num_heads; ++k) {
        const std::string prefix = "head." + std::to_string(k);
        add_linear(p, rng, prefix + ".fc1", c.dim, c.head_width(), c.bias);
        add_linear(p, rng, prefix + ".fc2", c.head_width(), c.classes, c.bias);
    }
    return p;
}

// ---------------------------------------------------------------- state

Tensor ColumnState::level(Index l) const {
    const Index b = batch(), n = columns(), levels_total = z.dim(2), d = dim();
    Tensor out(Shape{b, n, d});
    for (Index i = 0; i < b * n; ++i) {
        for (Index k = 0; k < d; ++k) out[i * d + k] = z[(i * levels_total + l) * d + k];
    }
    return out;
}

ColumnState snapshot(const LevelState& state) {
    const Tensor& first = state.levels.front().value();
    const Index b = first.dim(0), n = first.dim(1), d = first.dim(2);
    const Index levels_total = static_cast<Index>(state.levels.size());
    ColumnState out{Tensor(Shape{b, n, levels_total, d}), state.t};
    for (Index l = 0; l < levels_total; ++l) {
        const Tensor& lv = state.levels[static_cast<std::size_t>(l)].value();
        for (Index i = 0; i < b * n; ++i) {
            for (Index k = 0; k < d; ++k) out.z[(i * levels_total + l) * d + k] = lv[i * d + k];
        }
    }
    return out;
}

LevelState bind_state(Tape& tape, const ColumnState& state, bool requires_grad) {
    LevelState out;
    out.t = state.t;
    for (Index l = 0; l <= state.levels(); ++l) out.levels.push_back(tape.leaf(state.level(l), requires_grad));
    return out;
}

Tensor nhwc_batch(const std::vector<const Tensor*>& images) {
    if (images.empty()) throw std::invalid_argument("empty image batch");
    const Index c = images[0]->dim(0), h = images[0]->dim(1), w = images[0]->dim(2);
    Tensor out(Shape{static_cast<Index>(images.size()), h, w, c});
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Tensor& img = *images[b];
        if (img.shape() != images[0]->shape()) throw std::invalid_argument("images in a batch must share a shape");
        double* dst = out.raw() + static_cast<Index>(b) * h * w * c;
        for (Index ch = 0; ch < c; ++ch) {
            for (Index i = 0; i < h * w; ++i) dst[i * c + ch] = img[ch * h * w + i];
        }
    }
    return out;
}

// ---------------------------------------------------------------- layers

Var linear(const ParamVars& params, const std::string& prefix, Var x) {
    Var y = matmul(x, params[prefix + ".w"]);
    if (params.contains(prefix + ".b")) y = add(y, params[prefix + ".b"]);
    return y;
}

Var mlp(const ParamVars& params, const std::string& prefix, Var x, int layers, Activation act) {
    Var y = linear(params, prefix + ".fc1", x);
    if (layers == 2) y = linear(params, prefix + ".fc2", activate(y, act));
    return y;
}

Var tokenize(const ParamVars& params, Var images, const CCNetConfig& c) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != c.image_size || s[2] != c.image_size || s[3] != c.channels) {
        throw std::invalid_argument("tokenize: expected [B," + std::to_string(c.image_size) + "," +
                                    std::to_string(c.image_size) + "," + std::to_string(c.channels) + "], got " +
                                    to_string(s));
    }
    if (s[1] % c.grid != 0 || s[2] % c.grid != 0) throw std::invalid_argument("tokenize: image not divisible by grid");
    const Index batch = s[0];
    const int k1 = c.tokenizer_kernel, k2 = c.patch() / c.tokenizer_kernel;
    const Index mid = c.image_size / k1;
    Var x = linear(params, "tok.conv1", im2col(images, k1, k1, 0));
    x = reshape(activate(x, c.activation), Shape{batch, mid, mid, c.tokenizer_channels});
    x = linear(params, "tok.conv2", im2col(x, k2, k2, 0));
    return reshape(x, Shape{batch, c.columns(), c.dim});
}

std::vector<Var> bottom_up(const ParamVars& params, const LevelState& state, const CCNetConfig& c) {
    std::vector<Var> out;
    for (int l = 1; l <= c.levels; ++l) {
        out.push_back(mlp(params, "bu." + std::to_string(l), state.levels[static_cast<std::size_t>(l - 1)], c.mlp_layers,
                          c.activation));
    }
    return out;
}

std::vector<Var> top_down(const ParamVars& params, const LevelState& state, const CCNetConfig& c) {
    std::vector<Var> out;
    for (int l = 1; l < c.levels; ++l) {
        out.push_back(mlp(params, "td." + std::to_string(l), state.levels[static_cast<std::size_t>(l + 1)], c.mlp_layers,
                          c.activation));
    }
    return out;
}

Tensor neighborhood_mask(int grid, int radius) {
    const int n = grid * grid;
    Tensor mask(Shape{n, n}, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int dy = std::abs(i / grid - j / grid), dx = std::abs(i % grid - j % grid);
            if (radius < 0 || std::max(dy, dx) <= radius) mask[i * n + j] = 1.0;
        }
    }
    return mask;
}

Var attention(Var z, Var beta, const Tensor& mask) {
    if (z.value().rank() != 3) throw std::invalid_argument("attention expects [B,N,D], got " + to_string(z.shape()));
    Var scores = mul(matmul(z, transpose(z)), beta);
    return matmul(masked_softmax(scores, mask), z);
}

Var attention(const ParamVars& params, const LevelState& state, int level, const CCNetConfig& c) {
    Var beta = exp(params["attn.log_beta." + std::to_string(level)]);
    Var z = state.levels[static_cast<std::size_t>(level)];
    const Index n = z.dim(1);
    return attention(z, beta, c.attention_radius < 0 ? Tensor(Shape{n, n}, 1.0) : neighborhood_mask(c.grid, c.attention_radius));
}

Tensor attention_weights(const Tensor& z, double beta, const Tensor& mask) {
    if (!(beta > 0.0)) throw std::invalid_argument("attention temperature beta must be positive");
    Tape tape;
    Var zv = tape.constant(z.rank() == 2 ? z.reshaped(Shape{1, z.dim(0), z.dim(1)}) : z);
    Var scores = scale(matmul(zv, transpose(zv)), beta);
    Tensor w = masked_softmax(scores, mask).value();
    return z.rank() == 2 ? w.reshaped(Shape{z.dim(0), z.dim(0)}) : w;
}

Var contribution_weights(const ParamVars& params, int level, const CCNetConfig& c) {
    Var raw = params["mix." + std::to_string(level)];
    if (level == c.levels) raw = concat({slice(raw, 0, 0, 1), slice(raw, 0, 2, 2)}, 0);
    return softmax(raw, 0);
}

LevelState step(const ParamVars& params, const LevelState& state, const CCNetConfig& c) {
    if (static_cast<int>(state.levels.size()) != c.levels + 1) {
        throw std::invalid_argument("step: state has " + std::to_string(state.levels.size()) + " levels, expected " +
                                    std::to_string(c.levels + 1));
    }
    const std::vector<Var> bu = bottom_up(params, state, c);
    const std::vector<Var> td = top_down(params, state, c);
    LevelState next;
    next.t = state.t + 1;
    next.levels.push_back(state.levels[0]);
    for (int l = 1; l <= c.levels; ++l) {
        const auto li = static_cast<std::size_t>(l);
        Var alpha = contribution_weights(params, l, c);
        std::vector<Var> terms{bu[li - 1]};
        if (l < c.levels) terms.push_back(td[li - 1]);
        terms.push_back(state.levels[li]);
        terms.push_back(attention(params, state, l, c));
        Var z = mul(terms[0], slice(alpha, 0, 0, 1));
        for (std::size_t m = 1; m < terms.size(); ++m) {
            z = add(z, mul(terms[m], slice(alpha, 0, static_cast<Index>(m), 1)));
        }
        next.levels.push_back(z);
    }
    return next;
}

HeadOutput classify(const ParamVars& params, const LevelState& state, const CCNetConfig& c, const Tensor* feature_mask) {
    c.validate();
    const std::vector<int> head_levels = c.head_levels();
    std::vector<Var> pooled;
    for (int level : head_levels) pooled.push_back(mean(state.levels[static_cast<std::size_t>(level)], 1));
    HeadOutput out;
    out.features = concat(pooled, 1);
    Var features = out.features;
    if (feature_mask) features = mul(features, features.tape->constant(*feature_mask));

    Var total;
    for (std::size_t k = 0; k < head_levels.size(); ++k) {
        const std::string prefix = "head." + std::to_string(k);
        Var x = slice(features, 1, static_cast<Index>(k) * c.dim, c.dim);
        Var h = activate(linear(params, prefix + ".fc1", x), c.activation);
        Var probs = softmax(linear(params, prefix + ".fc2", h), 1);
        total = k == 0 ? probs : add(total, probs);
    }
    out.probs = head_levels.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(head_levels.size()));
    return out;
}

}  // namespace ccnet
