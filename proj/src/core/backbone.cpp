#include "ccnet/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace ccnet {

Batch make_batch(const std::vector<const Sample*>& samples, const std::vector<Tensor>* images) {
    if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
    if (images && images->size() != samples.size()) throw std::invalid_argument("make_batch: image count mismatch");
    Batch batch;
    batch.samples = samples;
    std::vector<const Tensor*> pixels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        batch.labels.push_back(samples[i]->label);
        pixels.push_back(images ? &(*images)[i] : &samples[i]->image);
    }
    batch.images = nhwc_batch(pixels);
    return batch;
}

PriorMode parse_prior_mode(const std::string& text) {
    if (text == "oracle") return PriorMode::oracle;
    if (text == "random") return PriorMode::random;
    if (text == "zero") return PriorMode::zero;
    throw std::invalid_argument("unknown prior mode: " + text);
}

const char* prior_mode_name(PriorMode mode) {
    switch (mode) {
        case PriorMode::oracle: return "oracle";
        case PriorMode::random: return "random";
        case PriorMode::zero: return "zero";
    }
    return "?";
}

// ---------------------------------------------------------------- CCNet

CCNetBackbone::CCNetBackbone(CCNetConfig config, PriorMode prior, double mask_corruption, std::uint64_t prior_seed)
    : config_(config), prior_(prior), mask_corruption_(mask_corruption), prior_seed_(prior_seed) {
    config_.validate();
    if (prior_ == PriorMode::oracle && config_.levels != kHierarchyLevels) {
        throw std::invalid_argument("the oracle prior provides exactly 3 mask levels");
    }
    points_ = prompt_points(config_.grid, config_.image_size, config_.image_size);
}

Var CCNetBackbone::prior(Tape& tape, const ParamVars& params, const Batch& batch) const {
    const Index b = static_cast<Index>(batch.samples.size());
    const int n = config_.columns(), l = config_.levels, d = config_.dim;
    switch (prior_) {
        case PriorMode::oracle: {
            std::vector<const RegionMap*> regions;
            std::vector<std::uint64_t> seeds;
            for (const Sample* s : batch.samples) {
                regions.push_back(&s->regions);
                seeds.push_back(mix_seed({prior_seed_, static_cast<std::uint64_t>(s->domain),
                                          static_cast<std::uint64_t>(s->index), 0x3a5c}));
            }
            const PriorPlan plan = plan_oracle_prior(regions, points_, mask_corruption_, seeds);
            return encode_masks(params, plan, config_);
        }
        case PriorMode::random: {
            Tensor out(Shape{b, n, l, d});
            for (Index i = 0; i < b; ++i) {
                const Sample* s = batch.samples[static_cast<std::size_t>(i)];
                const Tensor one = random_prior(n, l, d,
                                                mix_seed({prior_seed_, static_cast<std::uint64_t>(s->domain),
                                                          static_cast<std::uint64_t>(s->index)}));
                out.data().segment(i * one.numel(), one.numel()) = one.data();
            }
            return tape.constant(std::move(out));
        }
        case PriorMode::zero:
            return tape.constant(Tensor(Shape{b, n, l, d}, 0.0));
    }
    throw std::logic_error("unreachable");
}

CCNetBackbone::Trace CCNetBackbone::trace(Tape& tape, const ParamVars& params, const Batch& batch,
                                          const Tensor* feature_mask) const {
    Trace t;
    Var images = tape.constant(batch.images);
    Var tokens = tokenize(params, images, config_);
    t.prior = prior(tape, params, batch);
    t.z0 = init_state(tokens, t.prior);
    t.z1 = step(params, t.z0, config_);
    t.heads = classify(params, t.z1, config_, feature_mask);
    return t;
}

BackboneOutput CCNetBackbone::forward(Tape& tape, const ParamVars& params, const Batch& batch,
                                      const Tensor* feature_mask) const {
    const Trace t = trace(tape, params, batch, feature_mask);
    return {t.heads.probs, t.heads.features};
}

// ---------------------------------------------------------------- CNN

Index cnn_parameter_count(const CnnConfig& c) {
    Index total = 0;
    int in = c.channels;
    for (int out : c.conv) {
        total += 9 * in * out + out;
        in = out;
    }
    if (c.hidden > 0) {
        total += static_cast<Index>(c.feature_units()) * c.hidden + c.hidden;
        total += static_cast<Index>(c.hidden) * c.classes + c.classes;
    } else {
        total += static_cast<Index>(c.feature_units()) * c.classes + c.classes;
    }
    return total;
}

CnnConfig cnn_baseline(CnnConfig c, Index target_params, double tolerance) {
    if (c.image_size % 8 != 0) throw std::invalid_argument("cnn baseline needs an image size divisible by 8");
    if (c.hidden == 0) {
        c.hidden = 1;
        while (cnn_parameter_count(c) < target_params && c.hidden < 100000) ++c.hidden;
    }
    const Index count = cnn_parameter_count(c);
    const double gap = std::abs(static_cast<double>(count - target_params)) / static_cast<double>(target_params);
    if (gap > tolerance) {
        throw std::invalid_argument("cnn baseline has " + std::to_string(count) + " parameters, more than " +
                                    std::to_string(std::lround(tolerance * 100)) + "% away from " + std::to_string(target_params));
    }
    return c;
}

ParamSet init_cnn_params(const CnnConfig& c, std::uint64_t seed) {
    Rng rng(mix_seed({seed, 0xC0}));
    ParamSet p;
    auto add_layer = [&](const std::string& prefix, Index in, Index out) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
        Tensor w(Shape{in, out});
        for (Index i = 0; i < w.numel(); ++i) w[i] = normal(rng);
        p.add(prefix + ".w", std::move(w));
        p.add(prefix + ".b", Tensor(Shape{out}, 0.0));
    };
    int in = c.channels;
    for (std::size_t i = 0; i < c.conv.size(); ++i) {
        add_layer("cnn.conv" + std::to_string(i + 1), 9 * in, c.conv[i]);
        in = c.conv[i];
    }
    if (c.hidden > 0) {
        add_layer("cnn.fc1", c.feature_units(), c.hidden);
        add_layer("cnn.fc2", c.hidden, c.classes);
    } else {
        add_layer("cnn.fc2", c.feature_units(), c.classes);
    }
    return p;
}

CnnBackbone::CnnBackbone(CnnConfig config) : config_(config) {}

BackboneOutput CnnBackbone::forward(Tape& tape, const ParamVars& params, const Batch& batch,
                                    const Tensor* feature_mask) const {
    const Index b = batch.images.dim(0);
    Var x = tape.constant(batch.images);
    Index size = config_.image_size;
    for (std::size_t i = 0; i < config_.conv.size(); ++i) {
        const std::string prefix = "cnn.conv" + std::to_string(i + 1);
        x = activate(linear(params, prefix, im2col(x, 3, 1, 1)), config_.activation);
        x = maxpool2(reshape(x, Shape{b, size, size, config_.conv[i]}));
        size /= 2;
    }
    BackboneOutput out;
    out.features = reshape(x, Shape{b, static_cast<Index>(config_.feature_units())});
    Var h = out.features;
    if (feature_mask) h = mul(h, tape.constant(*feature_mask));
    if (config_.hidden > 0) h = activate(linear(params, "cnn.fc1", h), config_.activation);
    out.probs = softmax(linear(params, "cnn.fc2", h), 1);
    return out;
}

}  // namespace ccnet
