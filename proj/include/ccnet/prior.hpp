#pragma once

#include "ccnet/model.hpp"
#include "ccnet/synth.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ccnet {

struct PromptPoint {
    int y = 0, x = 0;
    bool operator==(const PromptPoint&) const = default;
};

// Centre of patch i of an n x n grid, row-major.
std::vector<PromptPoint> prompt_points(int n, int height, int width);

// Binary masks [N, L, H, W], level order sub-part, part, whole.
struct MaskSet {
    int points = 0, levels = 0, height = 0, width = 0;
    std::vector<std::uint8_t> bits;

    std::uint8_t at(int point, int level, int y, int x) const {
        return bits[static_cast<std::size_t>(((point * levels + level) * height + y) * width + x)];
    }
    int area(int point, int level) const;
    bool operator==(const MaskSet&) const = default;
};

// For each prompt, the region containing it at every level. A background
// prompt gets the background mask at all three levels.
MaskSet oracle_masks(const RegionMap& regions, const std::vector<PromptPoint>& points);
MaskSet oracle_masks(const SceneSpec& scene, const std::vector<PromptPoint>& points, int height, int width);

// Region ids picked per prompt and level, optionally swapped for a random
// sibling region at the same level with probability `corruption`.
std::vector<std::uint8_t> prompt_region_ids(const RegionMap& regions, const std::vector<PromptPoint>& points,
                                            double corruption = 0.0, Rng* rng = nullptr);

// Deduplicated masks for a batch: every distinct mask is encoded once and
// gathered back into [B, N, L] slots.
struct PriorPlan {
    Tensor masks;                // [M, H, W, 1]
    std::vector<Index> gather;   // B*N*L indices into the M masks
    int batch = 0, points = 0, levels = 0;
};

PriorPlan plan_masks(std::span<const MaskSet> masks);
PriorPlan plan_oracle_prior(std::span<const RegionMap* const> regions, const std::vector<PromptPoint>& points,
                            double corruption = 0.0, std::span<const std::uint64_t> corruption_seeds = {});

// Mask encoder: 2 strided convolutions and a linear map to D. [M,H,W,1] -> [M,D].
Var mask_encoder(const ParamVars& params, Var masks, const CCNetConfig& config);
// Encodes a plan into the prior embedding [B, N, L, D].
Var encode_masks(const ParamVars& params, const PriorPlan& plan, const CCNetConfig& config);
// Single-sample convenience: [N, L, D].
Tensor encode_masks(const ParamSet& params, const MaskSet& masks, const CCNetConfig& config);

// i.i.d. normal entries with standard deviation 1/sqrt(D), [N, L, D].
Tensor random_prior(int columns, int levels, int dim, std::uint64_t seed);

// Z_0: level 0 <- tokens [B,N,D], levels 1..L <- prior [B,N,L,D].
LevelState init_state(Var tokens, Var prior);

}  // namespace ccnet
