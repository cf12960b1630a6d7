#pragma once

#include "ccnet/rng.hpp"
#include "ccnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ccnet {

inline constexpr int kSceneClasses = 4;
inline constexpr int kDomains = 4;
inline constexpr int kHierarchyLevels = 3;  // sub-part, part, whole
inline constexpr int kPartTypesPerClass = 3;

enum class PrimitiveKind { circle, rect, triangle, line };

// Geometric primitive in object-local pixel units (y points down).
//   circle:   cx, cy, radius
//   rect:     cx, cy, half_width, half_height
//   triangle: x0, y0, x1, y1, x2, y2
//   line:     x0, y0, x1, y1, thickness
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::circle;
    std::array<double, 6> p{};

    bool contains(double u, double v) const;
};

struct Part {
    int type = 0;  // globally unique across classes; owner = type / kPartTypesPerClass
    std::vector<Primitive> subparts;
};

struct Pose {
    double cx = 16.0, cy = 16.0, scale = 1.0, angle = 0.0;
    bool mirrored = false;
};

// One object: whole -> 2-3 parts -> 2-3 sub-parts each.
struct SceneSpec {
    int class_id = 0;
    Pose pose;
    std::vector<Part> parts;
};

int part_owner(int part_type);
const char* part_type_name(int part_type);

// Per-pixel region ids at the three hierarchy levels; 0 is background.
// ids[0] sub-part, ids[1] part, ids[2] whole.
struct RegionMap {
    int height = 0, width = 0;
    std::array<std::vector<std::uint8_t>, kHierarchyLevels> ids;

    std::uint8_t at(int level, int y, int x) const {
        return ids[static_cast<std::size_t>(level)][static_cast<std::size_t>(y * width + x)];
    }
    bool operator==(const RegionMap&) const = default;
};

RegionMap rasterize(const SceneSpec& scene, int height, int width);
// Max over part pairs of |A and B| / min(|A|, |B|), each part rasterized alone.
double max_part_overlap(const SceneSpec& scene, int height, int width);

SceneSpec make_scene(int class_id, Rng& rng, int image_size = 32);

enum class Renderer { filled_solid, outline_stroke, textured_fill, quantized_flat };

struct DomainStyle {
    int domain_id = 0;
    Renderer renderer = Renderer::filled_solid;
    double noise = 0.0;
};

DomainStyle domain_style(int domain_id);
const char* renderer_name(Renderer renderer);

struct Sample {
    Tensor image;  // [3, H, W] in [0, 1]
    int label = 0;
    int domain = 0;
    int index = 0;  // position within its domain; not part of the record format
    RegionMap regions;
};

// Appearance depends on the style and rng; regions depend on the scene only.
Sample render(const SceneSpec& scene, const DomainStyle& style, Rng& rng, int image_size = 32);

struct DatasetConfig {
    std::uint64_t seed = 0;
    int per_domain = 400;
    int image_size = 32;
};

struct Dataset {
    DatasetConfig config;
    std::vector<std::vector<Sample>> domains;  // [domain][index]
};

// The scene behind sample `index` of `domain`; classes cycle 0..3.
SceneSpec dataset_scene(const DatasetConfig& config, int domain, int index);
Dataset generate_dataset(const DatasetConfig& config);

// Directory layout: manifest.txt (key=value) plus domain_<d>.bin. Each record
// is label u8, domain u8, image f64[3*H*W] little-endian, region ids
// u8[3*H*W] (sub-part plane, part plane, whole plane).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);
std::uint64_t dataset_checksum(const Dataset& dataset);

struct ClientShard {
    int domain_id = 0;
    std::vector<Sample> train;
    std::vector<Sample> validation;
};

struct LodoSplit {
    int held_out = 0;
    std::vector<ClientShard> clients;  // ascending domain id
    std::vector<Sample> test;          // every sample of the held-out domain
};

LodoSplit build_lodo_split(const Dataset& dataset, int held_out, double val_fraction, std::uint64_t seed);

// Rule-based upper bound: the class that owns the first part's type.
int oracle_classify(const SceneSpec& scene);

}  // namespace ccnet
