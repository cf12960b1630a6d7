#pragma once

#include "ccnet/model.hpp"
#include "ccnet/prior.hpp"
#include "ccnet/synth.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ccnet {

struct Batch {
    Tensor images;  // NHWC
    std::vector<int> labels;
    std::vector<const Sample*> samples;
};

// `images` replaces the samples' own pixels when given (augmentation).
Batch make_batch(const std::vector<const Sample*>& samples, const std::vector<Tensor>* images = nullptr);

struct BackboneOutput {
    Var probs;     // [B, classes]
    Var features;  // [B, units], the representation feeding the classifier
};

// A trainable classifier that the federated simulator and evaluator can
// drive without knowing its architecture.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual std::string name() const = 0;
    virtual ParamSet init(std::uint64_t seed) const = 0;
    virtual BackboneOutput forward(Tape& tape, const ParamVars& params, const Batch& batch,
                                   const Tensor* feature_mask = nullptr) const = 0;
    virtual Index feature_units() const = 0;
};

enum class PriorMode { oracle, random, zero };
PriorMode parse_prior_mode(const std::string& text);
const char* prior_mode_name(PriorMode mode);

class CCNetBackbone final : public Backbone {
public:
    explicit CCNetBackbone(CCNetConfig config, PriorMode prior = PriorMode::oracle, double mask_corruption = 0.0,
                           std::uint64_t prior_seed = 0);

    std::string name() const override { return "ccnet"; }
    ParamSet init(std::uint64_t seed) const override { return init_ccnet_params(config_, seed); }
    BackboneOutput forward(Tape& tape, const ParamVars& params, const Batch& batch,
                           const Tensor* feature_mask = nullptr) const override;
    Index feature_units() const override { return static_cast<Index>(config_.num_heads) * config_.dim; }

    struct Trace {
        Var prior;  // [B, N, L, D]
        LevelState z0, z1;
        HeadOutput heads;
    };
    // tokenize -> init_state -> step -> classify, keeping the intermediates.
    Trace trace(Tape& tape, const ParamVars& params, const Batch& batch, const Tensor* feature_mask = nullptr) const;
    Var prior(Tape& tape, const ParamVars& params, const Batch& batch) const;

    const CCNetConfig& config() const { return config_; }
    PriorMode prior_mode() const { return prior_; }

private:
    CCNetConfig config_;
    PriorMode prior_;
    double mask_corruption_;
    std::uint64_t prior_seed_;
    std::vector<PromptPoint> points_;
};

// Plain convolutional baseline: three (3x3 conv, pool) stages, then a
// hidden layer and the class layer.
struct CnnConfig {
    int image_size = 32;
    int channels = 3;
    int classes = 4;
    std::array<int, 3> conv{8, 16, 32};
    int hidden = 0;  // 0 = size it to the comparison model's parameter count
    Activation activation = Activation::relu;

    int feature_units() const { return (image_size / 8) * (image_size / 8) * conv[2]; }
};

Index cnn_parameter_count(const CnnConfig& config);
// Fills in `hidden` (when 0) with the smallest width whose parameter count
// reaches `target_params`, then rejects configs more than `tolerance` away
// from it.
CnnConfig cnn_baseline(CnnConfig config, Index target_params, double tolerance = 0.25);
ParamSet init_cnn_params(const CnnConfig& config, std::uint64_t seed);

class CnnBackbone final : public Backbone {
public:
    explicit CnnBackbone(CnnConfig config);

    std::string name() const override { return "cnn"; }
    ParamSet init(std::uint64_t seed) const override { return init_cnn_params(config_, seed); }
    BackboneOutput forward(Tape& tape, const ParamVars& params, const Batch& batch,
                           const Tensor* feature_mask = nullptr) const override;
    Index feature_units() const override { return config_.feature_units(); }
    const CnnConfig& config() const { return config_; }

private:
    CnnConfig config_;
};

}  // namespace ccnet
