#include "ccnet/synth.hpp"

#include "ccnet/params.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ccnet {

// ---------------------------------------------------------------- primitives

namespace {

double segment_distance(double u, double v, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((u - x0) * dx + (v - y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = x0 + t * dx - u, py = y0 + t * dy - v;
    return std::sqrt(px * px + py * py);
}

double edge(double ax, double ay, double bx, double by, double u, double v) {
    return (bx - ax) * (v - ay) - (by - ay) * (u - ax);
}

}  // namespace

bool Primitive::contains(double u, double v) const {
    switch (kind) {
        case PrimitiveKind::circle: {
            const double du = u - p[0], dv = v - p[1];
            return du * du + dv * dv <= p[2] * p[2];
        }
        case PrimitiveKind::rect:
            return std::abs(u - p[0]) <= p[2] && std::abs(v - p[1]) <= p[3];
        case PrimitiveKind::triangle: {
            const double e0 = edge(p[0], p[1], p[2], p[3], u, v);
            const double e1 = edge(p[2], p[3], p[4], p[5], u, v);
            const double e2 = edge(p[4], p[5], p[0], p[1], u, v);
            return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        }
        case PrimitiveKind::line:
            return segment_distance(u, v, p[0], p[1], p[2], p[3]) <= p[4] / 2.0;
    }
    return false;
}

// ---------------------------------------------------------------- part vocabularies

namespace {

Primitive circle(double cx, double cy, double r) { return {PrimitiveKind::circle, {cx, cy, r, 0, 0, 0}}; }
Primitive rect(double cx, double cy, double hw, double hh) { return {PrimitiveKind::rect, {cx, cy, hw, hh, 0, 0}}; }
Primitive tri(double x0, double y0, double x1, double y1, double x2, double y2) {
    return {PrimitiveKind::triangle, {x0, y0, x1, y1, x2, y2}};
}
Primitive line(double x0, double y0, double x1, double y1, double t) {
    return {PrimitiveKind::line, {x0, y0, x1, y1, t, 0}};
}

struct PartTemplate {
    const char* name;
    std::vector<Primitive> subparts;  // the first two always appear, the third optionally
};

const std::vector<PartTemplate>& vocabulary() {
    static const std::vector<PartTemplate> parts = {
        // class 0: figure
        {"head", {circle(0, -7.5, 3.0), circle(-2.6, -10.0, 1.3), circle(2.6, -10.0, 1.3)}},
        {"torso", {rect(0, -1, 3.2, 3.5), line(-3, -3.5, -7.5, 0.5, 1.6), line(3, -3.5, 7.5, 0.5, 1.6)}},
        {"legs", {line(-1.6, 2.8, -3, 9.5, 1.8), line(1.6, 2.8, 3, 9.5, 1.8), line(-4.5, 10.2, 4.5, 10.2, 1.2)}},
        // class 1: vehicle
        {"chassis", {rect(0, 0, 8.5, 2.5), rect(-9.2, 0.8, 1.0, 1.4), rect(9.2, 0.8, 1.0, 1.4)}},
        {"wheels", {circle(-5, 4.4, 2.4), circle(5, 4.4, 2.4), circle(0, 4.6, 1.8)}},
        {"cabin", {rect(-0.5, -4.3, 4.0, 1.8), tri(3.5, -2.5, 6.8, -2.5, 3.5, -6.1), line(-3, -6.2, -4.2, -9.5, 1.0)}},
        // class 2: tree
        {"crown", {tri(0, -12, -6, -4, 6, -4), tri(0, -8, -7.5, 0.5, 7.5, 0.5), tri(0, -14.5, -3, -10.5, 3, -10.5)}},
        {"trunk", {rect(0, 4.6, 1.5, 4.0), line(0, 8, -3.5, 10, 1.2), line(0, 8, 3.5, 10, 1.2)}},
        {"ground", {line(-9, 11.6, 9, 11.6, 1.4), circle(-6.8, 9.4, 1.6), circle(6.8, 9.4, 1.6)}},
        // class 3: potted flower
        {"bloom", {circle(0, -6, 2.2), tri(-2, -7, -8, -11, -7.5, -3), tri(2, -7, 8, -11, 7.5, -3)}},
        {"stem", {line(0, -3.4, 0, 5.6, 1.3), line(0, 1, -4, -1.5, 1.4), line(0, 2.5, 4, 0, 1.4)}},
        {"pot", {rect(0, 9.2, 3.5, 2.2), rect(0, 6.6, 4.5, 0.7), line(-2.5, 11.9, 2.5, 11.9, 1.0)}},
    };
    return parts;
}

Primitive jitter(Primitive prim, Rng& rng) {
    const double dx = uniform(rng, -0.6, 0.6), dy = uniform(rng, -0.6, 0.6);
    const double s = uniform(rng, 0.85, 1.15);
    switch (prim.kind) {
        case PrimitiveKind::circle:
            prim.p[0] += dx, prim.p[1] += dy, prim.p[2] *= s;
            break;
        case PrimitiveKind::rect:
            prim.p[0] += dx, prim.p[1] += dy, prim.p[2] *= s, prim.p[3] *= uniform(rng, 0.85, 1.15);
            break;
        case PrimitiveKind::triangle: {
            const double cx = (prim.p[0] + prim.p[2] + prim.p[4]) / 3.0;
            const double cy = (prim.p[1] + prim.p[3] + prim.p[5]) / 3.0;
            for (int k = 0; k < 3; ++k) {
                prim.p[2 * k] = cx + dx + s * (prim.p[2 * k] - cx);
                prim.p[2 * k + 1] = cy + dy + s * (prim.p[2 * k + 1] - cy);
            }
            break;
        }
        case PrimitiveKind::line: {
            const double cx = (prim.p[0] + prim.p[2]) / 2.0, cy = (prim.p[1] + prim.p[3]) / 2.0;
            for (int k = 0; k < 2; ++k) {
                prim.p[2 * k] = cx + dx + s * (prim.p[2 * k] - cx);
                prim.p[2 * k + 1] = cy + dy + s * (prim.p[2 * k + 1] - cy);
            }
            prim.p[4] *= uniform(rng, 0.85, 1.15);
            break;
        }
    }
    return prim;
}

// Object-local coordinates of a pixel centre.
std::pair<double, double> to_local(const Pose& pose, int x, int y) {
    const double px = x + 0.5 - pose.cx, py = y + 0.5 - pose.cy;
    const double c = std::cos(pose.angle), s = std::sin(pose.angle);
    double u = (c * px + s * py) / pose.scale;
    const double v = (-s * px + c * py) / pose.scale;
    if (pose.mirrored) u = -u;
    return {u, v};
}

}  // namespace

int part_owner(int part_type) { return part_type / kPartTypesPerClass; }

const char* part_type_name(int part_type) {
    return vocabulary().at(static_cast<std::size_t>(part_type)).name;
}

// ---------------------------------------------------------------- scenes

RegionMap rasterize(const SceneSpec& scene, int height, int width) {
    RegionMap map;
    map.height = height;
    map.width = width;
    for (auto& plane : map.ids) plane.assign(static_cast<std::size_t>(height * width), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto [u, v] = to_local(scene.pose, x, y);
            int subpart_id = 0, part_id = 0, running = 0;
            for (std::size_t p = 0; p < scene.parts.size(); ++p) {
                for (const Primitive& prim : scene.parts[p].subparts) {
                    ++running;
                    if (prim.contains(u, v)) {
                        subpart_id = running;
                        part_id = static_cast<int>(p) + 1;
                    }
                }
            }
            const auto at = static_cast<std::size_t>(y * width + x);
            map.ids[0][at] = static_cast<std::uint8_t>(subpart_id);
            map.ids[1][at] = static_cast<std::uint8_t>(part_id);
            map.ids[2][at] = subpart_id ? 1 : 0;
        }
    }
    return map;
}

double max_part_overlap(const SceneSpec& scene, int height, int width) {
    std::vector<std::vector<bool>> cover(scene.parts.size(), std::vector<bool>(static_cast<std::size_t>(height * width)));
    std::vector<int> area(scene.parts.size(), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto [u, v] = to_local(scene.pose, x, y);
            for (std::size_t p = 0; p < scene.parts.size(); ++p) {
                for (const Primitive& prim : scene.parts[p].subparts) {
                    if (prim.contains(u, v)) {
                        cover[p][static_cast<std::size_t>(y * width + x)] = true;
                        ++area[p];
                        break;
                    }
                }
            }
        }
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < scene.parts.size(); ++a) {
        for (std::size_t b = a + 1; b < scene.parts.size(); ++b) {
            int both = 0;
            for (std::size_t i = 0; i < cover[a].size(); ++i) both += cover[a][i] && cover[b][i];
            const int smaller = std::min(area[a], area[b]);
            if (smaller > 0) worst = std::max(worst, static_cast<double>(both) / smaller);
        }
    }
    return worst;
}

namespace {

bool every_subpart_visible(const SceneSpec& scene, const RegionMap& map) {
    std::size_t total = 0;
    for (const Part& part : scene.parts) total += part.subparts.size();
    std::vector<bool> seen(total + 1, false);
    for (std::uint8_t id : map.ids[0]) seen[id] = true;
    for (std::size_t id = 1; id <= total; ++id) {
        if (!seen[id]) return false;
    }
    return true;
}

}  // namespace

SceneSpec make_scene(int class_id, Rng& rng, int image_size) {
    if (class_id < 0 || class_id >= kSceneClasses) throw std::invalid_argument("class id out of range");
    const auto& vocab = vocabulary();
    const double half = image_size / 2.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
        SceneSpec scene;
        scene.class_id = class_id;
        scene.pose.cx = half + uniform(rng, -2.5, 2.5);
        scene.pose.cy = half + uniform(rng, -2.0, 2.0);
        scene.pose.scale = uniform(rng, 0.85, 1.1) * image_size / 32.0;
        scene.pose.angle = uniform(rng, -0.3, 0.3);
        scene.pose.mirrored = uniform(rng, 0.0, 1.0) < 0.5;

        const int part_count = uniform(rng, 0.0, 1.0) < 0.5 ? 2 : 3;
        std::array<int, kPartTypesPerClass> order{0, 1, 2};
        std::shuffle(order.begin(), order.end(), rng);
        std::sort(order.begin(), order.begin() + part_count);
        for (int k = 0; k < part_count; ++k) {
            const int type = class_id * kPartTypesPerClass + order[static_cast<std::size_t>(k)];
            const PartTemplate& tpl = vocab[static_cast<std::size_t>(type)];
            Part part;
            part.type = type;
            const int subparts = uniform(rng, 0.0, 1.0) < 0.5 ? 2 : 3;
            for (int s = 0; s < subparts; ++s) part.subparts.push_back(jitter(tpl.subparts[static_cast<std::size_t>(s)], rng));
            scene.parts.push_back(std::move(part));
        }
        if (max_part_overlap(scene, image_size, image_size) > 0.2) continue;
        if (!every_subpart_visible(scene, rasterize(scene, image_size, image_size))) continue;
        return scene;
    }
    throw std::runtime_error("make_scene: could not satisfy scene constraints");
}

int oracle_classify(const SceneSpec& scene) {
    if (scene.parts.empty()) return 0;
    return part_owner(scene.parts.front().type);
}

// ---------------------------------------------------------------- rendering

DomainStyle domain_style(int domain_id) {
    switch (domain_id) {
        case 0: return {0, Renderer::filled_solid, 0.03};
        case 1: return {1, Renderer::outline_stroke, 0.02};
        case 2: return {2, Renderer::textured_fill, 0.04};
        case 3: return {3, Renderer::quantized_flat, 0.06};
        default: throw std::invalid_argument("domain id out of range: " + std::to_string(domain_id));
    }
}

const char* renderer_name(Renderer renderer) {
    switch (renderer) {
        case Renderer::filled_solid: return "filled-solid";
        case Renderer::outline_stroke: return "outline-stroke";
        case Renderer::textured_fill: return "textured-fill";
        case Renderer::quantized_flat: return "quantized-flat";
    }
    return "?";
}

namespace {

using Color = std::array<double, 3>;

Color hsv(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Color rgb{};
    if (hp < 1) rgb = {c, x, 0};
    else if (hp < 2) rgb = {x, c, 0};
    else if (hp < 3) rgb = {0, c, x};
    else if (hp < 4) rgb = {0, x, c};
    else if (hp < 5) rgb = {x, 0, c};
    else rgb = {c, 0, x};
    const double m = v - c;
    for (double& ch : rgb) ch += m;
    return rgb;
}

Color random_hue(Rng& rng, double s_lo, double s_hi, double v_lo, double v_hi) {
    return hsv(uniform(rng, 0, 1), uniform(rng, s_lo, s_hi), uniform(rng, v_lo, v_hi));
}

}  // namespace

Sample render(const SceneSpec& scene, const DomainStyle& style, Rng& rng, int image_size) {
    const int h = image_size, w = image_size;
    Sample sample;
    sample.label = scene.class_id;
    sample.domain = style.domain_id;
    sample.regions = rasterize(scene, h, w);
    sample.image = Tensor(Shape{3, h, w}, 0.0);
    const RegionMap& map = sample.regions;
    const std::size_t parts = scene.parts.size();

    auto put = [&](int y, int x, const Color& c) {
        for (int ch = 0; ch < 3; ++ch) sample.image.at({ch, y, x}) = c[static_cast<std::size_t>(ch)];
    };

    switch (style.renderer) {
        case Renderer::filled_solid: {
            const Color bg{uniform(rng, 0, 0.25), uniform(rng, 0, 0.25), uniform(rng, 0, 0.25)};
            std::vector<Color> fill;
            for (std::size_t p = 0; p < parts; ++p) fill.push_back(random_hue(rng, 0.7, 1.0, 0.75, 1.0));
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int part = map.at(1, y, x);
                    put(y, x, part ? fill[static_cast<std::size_t>(part - 1)] : bg);
                }
            }
            break;
        }
        case Renderer::outline_stroke: {
            const double g = uniform(rng, 0.8, 0.95);
            const Color bg{g + uniform(rng, -0.04, 0.04), g + uniform(rng, -0.04, 0.04), g + uniform(rng, -0.04, 0.04)};
            const Color ink = random_hue(rng, 0.3, 0.9, 0.0, 0.3);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int id = map.at(0, y, x);
                    bool boundary = false;
                    if (id) {
                        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                        for (int k = 0; k < 4; ++k) {
                            const int ny = y + dy[k], nx = x + dx[k];
                            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                            if (map.at(0, ny, nx) != id) boundary = true;
                        }
                    }
                    put(y, x, boundary ? ink : bg);
                }
            }
            break;
        }
        case Renderer::textured_fill: {
            const Color bg_a = random_hue(rng, 0.2, 0.6, 0.1, 0.35), bg_b = random_hue(rng, 0.2, 0.6, 0.1, 0.35);
            std::vector<std::pair<Color, Color>> fill;
            for (std::size_t p = 0; p < parts; ++p) {
                fill.emplace_back(random_hue(rng, 0.5, 1.0, 0.75, 1.0), random_hue(rng, 0.5, 1.0, 0.45, 0.65));
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int part = map.at(1, y, x);
                    if (part) {
                        const auto& [a, b] = fill[static_cast<std::size_t>(part - 1)];
                        put(y, x, ((x / 2) + (y / 2)) % 2 ? a : b);
                    } else {
                        put(y, x, (y % 4) < 2 ? bg_a : bg_b);
                    }
                }
            }
            break;
        }
        case Renderer::quantized_flat: {
            // Dark backdrop and light parts land on different quantization levels.
            const Color top = random_hue(rng, 0.0, 0.6, 0.0, 0.3), bottom = random_hue(rng, 0.0, 0.6, 0.0, 0.3);
            std::vector<double> gray;
            for (std::size_t p = 0; p < parts; ++p) gray.push_back(uniform(rng, 0.6, 1.0));
            for (int y = 0; y < h; ++y) {
                const double t = static_cast<double>(y) / (h - 1);
                for (int x = 0; x < w; ++x) {
                    const int part = map.at(1, y, x);
                    Color c;
                    if (part) {
                        const double g = gray[static_cast<std::size_t>(part - 1)];
                        c = {g, g, g};
                    } else {
                        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = (1 - t) * top[ch] + t * bottom[ch];
                    }
                    put(y, x, c);
                }
            }
            break;
        }
    }

    if (style.noise > 0.0) {
        std::normal_distribution<double> noise(0.0, style.noise);
        for (Index i = 0; i < sample.image.numel(); ++i) sample.image[i] += noise(rng);
    }
    for (Index i = 0; i < sample.image.numel(); ++i) {
        double& v = sample.image[i];
        v = std::clamp(v, 0.0, 1.0);
        if (style.renderer == Renderer::quantized_flat) v = std::round(v * 3.0) / 3.0;
    }
    return sample;
}

// ---------------------------------------------------------------- dataset

SceneSpec dataset_scene(const DatasetConfig& config, int domain, int index) {
    Rng rng(mix_seed({config.seed, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(index), 0}));
    return make_scene(index % kSceneClasses, rng, config.image_size);
}

Dataset generate_dataset(const DatasetConfig& config) {
    if (config.per_domain <= 0) throw std::invalid_argument("per_domain must be positive");
    Dataset dataset;
    dataset.config = config;
    dataset.domains.resize(kDomains);
    for (int d = 0; d < kDomains; ++d) {
        const DomainStyle style = domain_style(d);
        auto& samples = dataset.domains[static_cast<std::size_t>(d)];
        samples.reserve(static_cast<std::size_t>(config.per_domain));
        for (int i = 0; i < config.per_domain; ++i) {
            const SceneSpec scene = dataset_scene(config, d, i);
            Rng rng(mix_seed({config.seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(i), 1}));
            samples.push_back(render(scene, style, rng, config.image_size));
            samples.back().index = i;
        }
    }
    return dataset;
}

namespace {

std::vector<std::uint8_t> encode_record(const Sample& s) {
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>(s.label));
    out.push_back(static_cast<std::uint8_t>(s.domain));
    for (Index i = 0; i < s.image.numel(); ++i) put_f64(out, s.image[i]);
    for (const auto& plane : s.regions.ids) out.insert(out.end(), plane.begin(), plane.end());
    return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const int size = dataset.config.image_size;
    {
        std::ofstream manifest(dir / "manifest.txt");
        manifest << "format=ccnet-synth-1\n"
                 << "seed=" << dataset.config.seed << "\n"
                 << "per_domain=" << dataset.config.per_domain << "\n"
                 << "domains=" << dataset.domains.size() << "\n"
                 << "classes=" << kSceneClasses << "\n"
                 << "channels=3\n"
                 << "height=" << size << "\n"
                 << "width=" << size << "\n"
                 << "levels=" << kHierarchyLevels << "\n"
                 << "byte_order=little\n"
                 << "record=label:u8,domain:u8,image:f64[3*H*W],regions:u8[3*H*W]\n"
                 << "checksum=" << hex(dataset_checksum(dataset)) << "\n";
    }
    for (std::size_t d = 0; d < dataset.domains.size(); ++d) {
        std::ofstream out(dir / ("domain_" + std::to_string(d) + ".bin"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write dataset into " + dir.string());
        for (const Sample& s : dataset.domains[d]) {
            const auto rec = encode_record(s);
            out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
        }
    }
}

Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("no manifest.txt in " + dir.string());
    Dataset dataset;
    int domains = kDomains;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "seed") dataset.config.seed = std::stoull(value);
        else if (key == "per_domain") dataset.config.per_domain = std::stoi(value);
        else if (key == "domains") domains = std::stoi(value);
        else if (key == "height") dataset.config.image_size = std::stoi(value);
    }
    const int size = dataset.config.image_size;
    const std::size_t pixels = static_cast<std::size_t>(size * size);
    const std::size_t record = 2 + 3 * pixels * sizeof(double) + kHierarchyLevels * pixels;
    dataset.domains.resize(static_cast<std::size_t>(domains));
    for (int d = 0; d < domains; ++d) {
        std::ifstream in(dir / ("domain_" + std::to_string(d) + ".bin"), std::ios::binary);
        if (!in) throw std::runtime_error("missing domain file for domain " + std::to_string(d));
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (bytes.size() % record != 0) throw std::runtime_error("domain file has a partial record");
        for (std::size_t pos = 0; pos < bytes.size(); pos += record) {
            Sample s;
            s.label = bytes[pos];
            s.domain = bytes[pos + 1];
            s.index = static_cast<int>(pos / record);
            s.image = Tensor(Shape{3, size, size});
            for (Index i = 0; i < s.image.numel(); ++i) s.image[i] = get_f64(&bytes[pos + 2 + static_cast<std::size_t>(i) * 8]);
            s.regions.height = size;
            s.regions.width = size;
            std::size_t at = pos + 2 + 3 * pixels * sizeof(double);
            for (auto& plane : s.regions.ids) {
                plane.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                             bytes.begin() + static_cast<std::ptrdiff_t>(at + pixels));
                at += pixels;
            }
            dataset.domains[static_cast<std::size_t>(d)].push_back(std::move(s));
        }
    }
    return dataset;
}

std::uint64_t dataset_checksum(const Dataset& dataset) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& domain : dataset.domains) {
        for (const Sample& s : domain) {
            const auto rec = encode_record(s);
            h = fnv1a(rec.data(), rec.size(), h);
        }
    }
    return h;
}

LodoSplit build_lodo_split(const Dataset& dataset, int held_out, double val_fraction, std::uint64_t seed) {
    const int domains = static_cast<int>(dataset.domains.size());
    if (held_out < 0 || held_out >= domains) {
        throw std::invalid_argument("held-out domain " + std::to_string(held_out) + " out of range");
    }
    if (dataset.config.per_domain < 40) throw std::invalid_argument("build_lodo_split needs per_domain >= 40");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("val_fraction must be in [0, 1)");
    LodoSplit split;
    split.held_out = held_out;
    split.test = dataset.domains[static_cast<std::size_t>(held_out)];
    for (int d = 0; d < domains; ++d) {
        if (d == held_out) continue;
        const auto& samples = dataset.domains[static_cast<std::size_t>(d)];
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed({seed, static_cast<std::uint64_t>(d), 7}));
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(samples.size())));
        ClientShard shard;
        shard.domain_id = d;
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < order.size() - n_val ? shard.train : shard.validation).push_back(samples[order[i]]);
        }
        split.clients.push_back(std::move(shard));
    }
    return split;
}

}  // namespace ccnet
