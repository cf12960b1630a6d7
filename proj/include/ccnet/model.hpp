#pragma once

#include "ccnet/autograd.hpp"
#include "ccnet/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ccnet {

struct CCNetConfig {
    int grid = 4;     // n, the column grid is n x n
    int levels = 3;   // L, levels above the token level
    int dim = 64;     // D
    int classes = 4;
    int num_heads = 3;
    int image_size = 32;
    int channels = 3;

    int mlp_layers = 2;  // BU/TD MLP depth, 1 or 2
    int mlp_hidden = 0;  // 0 means dim
    int head_hidden = 0; // 0 means dim

    int tokenizer_kernel = 4;  // first conv kernel = stride; the second covers the rest of a patch
    int tokenizer_channels = 16;
    int encoder_kernel = 4;    // mask encoder: kernel/stride of conv1, conv2 is 2x2 stride 2
    int encoder_channels1 = 8;
    int encoder_channels2 = 16;

    int attention_radius = -1;  // Chebyshev radius on the grid, negative = whole grid
    Activation activation = Activation::gelu;
    bool bias = true;
    double init_beta = 1.0;

    int columns() const { return grid * grid; }
    int patch() const { return image_size / grid; }
    int hidden() const { return mlp_hidden > 0 ? mlp_hidden : dim; }
    int head_width() const { return head_hidden > 0 ? head_hidden : dim; }
    int encoder_grid() const { return image_size / encoder_kernel / 2; }
    // Levels carrying a classification head, top first: L, L-1, L-2.
    std::vector<int> head_levels() const;

    void validate() const;
};

ParamSet init_ccnet_params(const CCNetConfig& config, std::uint64_t seed);

// Hidden representation Z as per-level Vars: levels[l] is [B, N, D] for
// l = 0..L, level 0 being the token level.
struct LevelState {
    std::vector<Var> levels;
    int t = 0;
};

// Dense snapshot of Z: [B, N, L+1, D].
struct ColumnState {
    Tensor z;
    int t = 0;

    Index batch() const { return z.dim(0); }
    Index columns() const { return z.dim(1); }
    Index levels() const { return z.dim(2) - 1; }
    Index dim() const { return z.dim(3); }
    // [B, N, D] slice of one level.
    Tensor level(Index l) const;
};

ColumnState snapshot(const LevelState& state);
LevelState bind_state(Tape& tape, const ColumnState& state, bool requires_grad = false);

// Converts [C,H,W] images to one NHWC batch tensor.
Tensor nhwc_batch(const std::vector<const Tensor*>& images);

// Dense layer rows x [in] -> rows x [out] using "<prefix>.w" and, if present, "<prefix>.b".
Var linear(const ParamVars& params, const std::string& prefix, Var x);
Var mlp(const ParamVars& params, const std::string& prefix, Var x, int layers, Activation act);

// [B,H,W,C] NHWC images -> [B, N, D] tokens, token i = patch i in row-major order.
Var tokenize(const ParamVars& params, Var images, const CCNetConfig& config);

// entry l-1 holds the level-l contribution predicted from level l-1 (l = 1..L).
std::vector<Var> bottom_up(const ParamVars& params, const LevelState& state, const CCNetConfig& config);
// entry l-1 holds the level-l contribution predicted from level l+1 (l = 1..L-1).
std::vector<Var> top_down(const ParamVars& params, const LevelState& state, const CCNetConfig& config);

// [N, N] 0/1 matrix, 1 where column j lies within Chebyshev `radius` of i.
Tensor neighborhood_mask(int grid, int radius);

// out_i = sum_j w_ij z_j with w_ij = softmax_j(beta * z_i . z_j) over the
// neighbourhood. z is [B,N,D], beta a single-value Var.
Var attention(Var z, Var beta, const Tensor& mask);
// A negative attention_radius attends over every column of the state.
Var attention(const ParamVars& params, const LevelState& state, int level, const CCNetConfig& config);
Tensor attention_weights(const Tensor& z, double beta, const Tensor& mask);

// Convex-combination weights over (BU, TD, Identity, Attention); the top level
// has no TD term and renormalises over the remaining three.
Var contribution_weights(const ParamVars& params, int level, const CCNetConfig& config);

// Z_t -> Z_{t+1}. Level 0 is carried over unchanged.
LevelState step(const ParamVars& params, const LevelState& state, const CCNetConfig& config);

struct HeadOutput {
    Var probs;     // [B, classes], mean of per-head softmax outputs
    Var features;  // [B, heads*D], pooled head inputs before any feature mask
};

// Each head mean-pools its level over columns and applies a 2-layer MLP.
// `feature_mask`, if given, multiplies the pooled features ([B, heads*D]).
HeadOutput classify(const ParamVars& params, const LevelState& state, const CCNetConfig& config,
                    const Tensor* feature_mask = nullptr);

}  // namespace ccnet
