#include "ccnet/prior.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace ccnet {

std::vector<PromptPoint> prompt_points(int n, int height, int width) {
    if (n < 1 || height < n || width < n) throw std::invalid_argument("prompt_points: need H, W >= n >= 1");
    std::vector<PromptPoint> points;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) points.push_back({(2 * r + 1) * height / (2 * n), (2 * c + 1) * width / (2 * n)});
    }
    return points;
}

int MaskSet::area(int point, int level) const {
    int total = 0;
    const auto begin = bits.begin() + static_cast<std::ptrdiff_t>((point * levels + level) * height * width);
    for (auto it = begin; it != begin + height * width; ++it) total += *it;
    return total;
}

std::vector<std::uint8_t> prompt_region_ids(const RegionMap& regions, const std::vector<PromptPoint>& points,
                                            double corruption, Rng* rng) {
    std::vector<std::uint8_t> ids;
    ids.reserve(points.size() * kHierarchyLevels);
    std::array<std::vector<std::uint8_t>, kHierarchyLevels> present;
    if (corruption > 0.0) {
        if (!rng) throw std::invalid_argument("mask corruption needs an rng");
        for (int l = 0; l < kHierarchyLevels; ++l) {
            std::vector<bool> seen(256, false);
            for (std::uint8_t id : regions.ids[static_cast<std::size_t>(l)]) seen[id] = true;
            for (int id = 0; id < 256; ++id) {
                if (seen[static_cast<std::size_t>(id)]) present[static_cast<std::size_t>(l)].push_back(static_cast<std::uint8_t>(id));
            }
        }
    }
    for (const PromptPoint& p : points) {
        if (p.y < 0 || p.y >= regions.height || p.x < 0 || p.x >= regions.width) {
            throw std::out_of_range("prompt point outside the image");
        }
        for (int l = 0; l < kHierarchyLevels; ++l) {
            std::uint8_t id = regions.at(l, p.y, p.x);
            if (corruption > 0.0 && uniform(*rng, 0.0, 1.0) < corruption) {
                const auto& options = present[static_cast<std::size_t>(l)];
                if (options.size() > 1) {
                    std::uint8_t pick = id;
                    while (pick == id) {
                        pick = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(*rng)];
                    }
                    id = pick;
                }
            }
            ids.push_back(id);
        }
    }
    return ids;
}

namespace {

MaskSet masks_from_ids(const RegionMap& regions, const std::vector<std::uint8_t>& ids, int points) {
    MaskSet m;
    m.points = points;
    m.levels = kHierarchyLevels;
    m.height = regions.height;
    m.width = regions.width;
    const std::size_t plane = static_cast<std::size_t>(m.height * m.width);
    m.bits.assign(static_cast<std::size_t>(points * kHierarchyLevels) * plane, 0);
    for (int i = 0; i < points; ++i) {
        for (int l = 0; l < kHierarchyLevels; ++l) {
            const std::uint8_t id = ids[static_cast<std::size_t>(i * kHierarchyLevels + l)];
            const auto& src = regions.ids[static_cast<std::size_t>(l)];
            const std::size_t base = static_cast<std::size_t>(i * kHierarchyLevels + l) * plane;
            for (std::size_t px = 0; px < plane; ++px) m.bits[base + px] = src[px] == id ? 1 : 0;
        }
    }
    return m;
}

}  // namespace

MaskSet oracle_masks(const RegionMap& regions, const std::vector<PromptPoint>& points) {
    return masks_from_ids(regions, prompt_region_ids(regions, points), static_cast<int>(points.size()));
}

MaskSet oracle_masks(const SceneSpec& scene, const std::vector<PromptPoint>& points, int height, int width) {
    return oracle_masks(rasterize(scene, height, width), points);
}

PriorPlan plan_masks(std::span<const MaskSet> masks) {
    if (masks.empty()) throw std::invalid_argument("plan_masks: empty batch");
    PriorPlan plan;
    plan.batch = static_cast<int>(masks.size());
    plan.points = masks[0].points;
    plan.levels = masks[0].levels;
    const int h = masks[0].height, w = masks[0].width;
    const std::size_t plane = static_cast<std::size_t>(h * w);
    std::map<std::vector<std::uint8_t>, Index> seen;
    std::vector<const std::uint8_t*> unique;
    for (const MaskSet& m : masks) {
        if (m.points != plan.points || m.levels != plan.levels || m.height != h || m.width != w) {
            throw std::invalid_argument("plan_masks: mask sets in a batch must share a layout");
        }
        for (int slot = 0; slot < m.points * m.levels; ++slot) {
            const std::uint8_t* begin = m.bits.data() + static_cast<std::size_t>(slot) * plane;
            std::vector<std::uint8_t> key(begin, begin + plane);
            auto [it, inserted] = seen.emplace(std::move(key), static_cast<Index>(unique.size()));
            if (inserted) unique.push_back(begin);
            plan.gather.push_back(it->second);
        }
    }
    plan.masks = Tensor(Shape{static_cast<Index>(unique.size()), h, w, 1});
    for (std::size_t u = 0; u < unique.size(); ++u) {
        for (std::size_t px = 0; px < plane; ++px) plan.masks[static_cast<Index>(u * plane + px)] = unique[u][px];
    }
    return plan;
}

PriorPlan plan_oracle_prior(std::span<const RegionMap* const> regions, const std::vector<PromptPoint>& points,
                            double corruption, std::span<const std::uint64_t> corruption_seeds) {
    if (regions.empty()) throw std::invalid_argument("plan_oracle_prior: empty batch");
    if (corruption > 0.0 && corruption_seeds.size() != regions.size()) {
        throw std::invalid_argument("plan_oracle_prior: one corruption seed per sample required");
    }
    PriorPlan plan;
    plan.batch = static_cast<int>(regions.size());
    plan.points = static_cast<int>(points.size());
    plan.levels = kHierarchyLevels;
    const int h = regions[0]->height, w = regions[0]->width;
    const std::size_t plane = static_cast<std::size_t>(h * w);

    // Masks are keyed by (sample, level, region id); background is one mask
    // at every level.
    std::vector<std::pair<const RegionMap*, std::pair<int, std::uint8_t>>> unique;
    for (std::size_t b = 0; b < regions.size(); ++b) {
        const RegionMap& r = *regions[b];
        std::vector<std::uint8_t> ids;
        if (corruption > 0.0) {
            Rng rng(corruption_seeds[b]);
            ids = prompt_region_ids(r, points, corruption, &rng);
        } else {
            ids = prompt_region_ids(r, points);
        }
        std::map<std::pair<int, std::uint8_t>, Index> seen;
        for (std::size_t slot = 0; slot < ids.size(); ++slot) {
            const int level = static_cast<int>(slot % kHierarchyLevels);
            const std::pair<int, std::uint8_t> key{ids[slot] == 0 ? 0 : level, ids[slot]};
            auto [it, inserted] = seen.emplace(key, static_cast<Index>(unique.size()));
            if (inserted) unique.emplace_back(&r, key);
            plan.gather.push_back(it->second);
        }
    }
    plan.masks = Tensor(Shape{static_cast<Index>(unique.size()), h, w, 1});
    for (std::size_t u = 0; u < unique.size(); ++u) {
        const auto& [r, key] = unique[u];
        const auto& src = r->ids[static_cast<std::size_t>(key.first)];
        for (std::size_t px = 0; px < plane; ++px) {
            plan.masks[static_cast<Index>(u * plane + px)] = src[px] == key.second ? 1.0 : 0.0;
        }
    }
    return plan;
}

Var mask_encoder(const ParamVars& params, Var masks, const CCNetConfig& c) {
    const Index m = masks.dim(0);
    const Index mid = c.image_size / c.encoder_kernel;
    Var x = linear(params, "enc.conv1", im2col(masks, c.encoder_kernel, c.encoder_kernel, 0));
    x = reshape(activate(x, c.activation), Shape{m, mid, mid, c.encoder_channels1});
    x = linear(params, "enc.conv2", im2col(x, 2, 2, 0));
    x = reshape(activate(x, c.activation), Shape{m, static_cast<Index>(c.encoder_grid() * c.encoder_grid()) * c.encoder_channels2});
    return linear(params, "enc.fc", x);
}

Var encode_masks(const ParamVars& params, const PriorPlan& plan, const CCNetConfig& c) {
    if (plan.points != c.columns() || plan.levels != c.levels) {
        throw std::invalid_argument("encode_masks: plan has " + std::to_string(plan.points) + "x" +
                                    std::to_string(plan.levels) + " slots, model expects " +
                                    std::to_string(c.columns()) + "x" + std::to_string(c.levels));
    }
    Tape& tape = *params["enc.conv1.w"].tape;
    Var embedded = mask_encoder(params, tape.constant(plan.masks), c);
    Var gathered = gather_rows(embedded, plan.gather);
    return reshape(gathered, Shape{plan.batch, plan.points, plan.levels, c.dim});
}

Tensor encode_masks(const ParamSet& params, const MaskSet& masks, const CCNetConfig& c) {
    Tape tape;
    ParamVars vars(tape, params, false);
    const PriorPlan plan = plan_masks(std::span<const MaskSet>(&masks, 1));
    return encode_masks(vars, plan, c).value().reshaped(Shape{plan.points, plan.levels, c.dim});
}

Tensor random_prior(int columns, int levels, int dim, std::uint64_t seed) {
    Rng rng(mix_seed({seed, 0x9a}));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    Tensor out(Shape{columns, levels, dim});
    for (Index i = 0; i < out.numel(); ++i) out[i] = normal(rng);
    return out;
}

LevelState init_state(Var tokens, Var prior) {
    const Shape& ts = tokens.shape();
    const Shape& ps = prior.shape();
    if (ts.size() != 3 || ps.size() != 4 || ts[0] != ps[0] || ts[1] != ps[1] || ts[2] != ps[3]) {
        throw std::invalid_argument("init_state: tokens " + to_string(ts) + " do not match prior " + to_string(ps));
    }
    LevelState state;
    state.t = 0;
    state.levels.push_back(tokens);
    for (Index l = 0; l < ps[2]; ++l) state.levels.push_back(reshape(slice(prior, 2, l, 1), ts));
    return state;
}

}  // namespace ccnet
