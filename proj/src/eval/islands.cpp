#include "ccnet/eval.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace ccnet {

int IslandsMap::count(std::size_t level_index) const {
    const auto& ids = clusters.at(level_index);
    int n = 0;
    for (int id : ids) n = std::max(n, id + 1);
    return n;
}

namespace {

int find_root(std::vector<int>& parent, int i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
        parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
        i = parent[static_cast<std::size_t>(i)];
    }
    return i;
}

double cosine(const Tensor& e, Index d, Index a, Index b) {
    const auto x = e.data().segment(a * d, d), y = e.data().segment(b * d, d);
    const double nx = x.norm(), ny = y.norm();
    if (nx == 0.0 && ny == 0.0) return 1.0;
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return x.dot(y) / (nx * ny);
}

}  // namespace

std::vector<int> cluster_columns(const Tensor& embeddings, int grid, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("islands: tau must be in (0, 1)");
    if (embeddings.rank() != 2 || embeddings.dim(0) != static_cast<Index>(grid) * grid) {
        throw std::invalid_argument("islands: expected [" + std::to_string(grid * grid) + ", D] embeddings, got " +
                                    to_string(embeddings.shape()));
    }
    const int n = grid * grid;
    const Index d = embeddings.dim(1);
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto join = [&](int a, int b) {
        if (cosine(embeddings, d, a, b) < tau) return;
        const int ra = find_root(parent, a), rb = find_root(parent, b);
        if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
    };
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const int i = r * grid + c;
            if (c + 1 < grid) join(i, i + 1);
            if (r + 1 < grid) join(i, i + grid);
        }
    }
    std::vector<int> ids(static_cast<std::size_t>(n), -1), label(static_cast<std::size_t>(n), -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        const int root = find_root(parent, i);
        if (label[static_cast<std::size_t>(root)] < 0) label[static_cast<std::size_t>(root)] = next++;
        ids[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(root)];
    }
    return ids;
}

IslandsMap islands(const ColumnState& state, double tau) {
    if (state.batch() != 1) throw std::invalid_argument("islands: expected a single-sample state");
    const Index n = state.columns();
    const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (static_cast<Index>(grid) * grid != n) throw std::invalid_argument("islands: column count is not a square");
    IslandsMap map;
    map.grid = grid;
    map.tau = tau;
    for (Index l = 1; l <= state.levels(); ++l) {
        map.clusters.push_back(cluster_columns(state.level(l).reshaped(Shape{n, state.dim()}), grid, tau));
    }
    return map;
}

std::array<std::uint8_t, 3> palette_color(int cluster_id) {
    // Golden-angle hue walk, fixed saturation and value.
    const double hue = std::fmod(static_cast<double>(cluster_id) * 137.50776405, 360.0) / 60.0;
    const double s = 0.65, v = 0.95;
    const double c = v * s, x = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0)), m = v - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    auto byte = [&](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
    return {byte(r), byte(g), byte(b)};
}

void write_ppm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("write_ppm: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::filesystem::path> export_islands(const IslandsMap& map, const Tensor& image,
                                                  const std::filesystem::path& dir, int cell_pixels) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("export_islands: expected a [3,H,W] image");
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;

    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h * w * 3));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image[(static_cast<Index>(c) * h + y) * w + x], 0.0, 1.0);
                rgb[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    written.push_back(dir / "input.ppm");
    write_ppm(written.back(), w, h, rgb);

    const int side = map.grid * cell_pixels;
    nlohmann::json sidecar;
    sidecar["grid"] = map.grid;
    sidecar["tau"] = map.tau;
    sidecar["levels"] = nlohmann::json::array();
    for (std::size_t l = 0; l < map.clusters.size(); ++l) {
        std::vector<std::uint8_t> cells(static_cast<std::size_t>(side * side * 3));
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const int column = (y / cell_pixels) * map.grid + x / cell_pixels;
                auto color = palette_color(map.clusters[l][static_cast<std::size_t>(column)]);
                // One-pixel dark grid lines between cells.
                if (y % cell_pixels == 0 || x % cell_pixels == 0) color = {32, 32, 32};
                std::copy(color.begin(), color.end(), cells.begin() + (y * side + x) * 3);
            }
        }
        const std::string file = "level_" + std::to_string(l + 1) + ".ppm";
        written.push_back(dir / file);
        write_ppm(written.back(), side, side, cells);
        sidecar["levels"].push_back({{"level", l + 1},
                                     {"image", file},
                                     {"clusters", map.count(l)},
                                     {"cluster_ids", map.clusters[l]}});
    }
    written.push_back(dir / "islands.json");
    std::ofstream(written.back()) << sidecar.dump(2) << '\n';
    return written;
}

ColumnState ccnet_state(const CCNetBackbone& model, const ParamSet& params, const Sample& sample) {
    Tape tape;
    ParamVars vars(tape, params, false);
    const Batch batch = make_batch({&sample});
    return snapshot(model.trace(tape, vars, batch).z1);
}

}  // namespace ccnet
