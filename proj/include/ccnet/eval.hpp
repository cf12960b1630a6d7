#pragma once

#include "ccnet/backbone.hpp"
#include "ccnet/fed.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ccnet {

// Index of the largest entry of row `row` of [B, C]; ties go to the lowest id.
int argmax_class(const Tensor& probs, Index row);

struct EvalResult {
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<int> predictions;

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

EvalResult evaluate(const Backbone& model, const ParamSet& params, std::span<const Sample> samples,
                    int batch_size = 128);

struct LodoEntry {
    std::string backbone;
    std::string strategy;
    std::uint64_t seed = 0;
    int held_out = 0;
    double accuracy = 0.0;       // held-out domain
    double val_accuracy = 0.0;   // pooled in-domain validation of the training clients
    double first_round_loss = 0.0;
    double last_round_loss = 0.0;
    Index parameters = 0;
    double seconds = 0.0;
};

struct LodoReport {
    std::vector<LodoEntry> entries;

    // Mean over the four held-out domains for one (backbone, strategy, seed).
    double average(const std::string& backbone, const std::string& strategy, std::uint64_t seed) const;
    // Mean of the per-seed averages.
    double average(const std::string& backbone, const std::string& strategy) const;
    std::vector<std::uint64_t> seeds(const std::string& backbone, const std::string& strategy) const;

    void write_csv(const std::filesystem::path& path) const;
    // One row per backbone/strategy, one column per held-out domain plus the
    // average, each cell the mean over seeds.
    std::string table() const;
};

struct LodoRun {
    const Backbone* model = nullptr;
    FedConfig fed;
    double val_fraction = 0.1;
};

// Called after every run with its entry and final global parameters.
using LodoProgress = std::function<void(const LodoEntry&, const ParamSet&)>;

// One federated run per (seed, held-out domain), each on the remaining
// domains; seed sets both the split and the federated seed.
LodoReport run_lodo(const Dataset& dataset, const LodoRun& run, std::span<const std::uint64_t> seeds,
                    std::span<const int> held_out, const LodoProgress& progress = {});

// ---------------------------------------------------------------- islands

struct IslandsMap {
    int grid = 0;
    double tau = 0.0;
    std::vector<std::vector<int>> clusters;  // [level 1..L][column], ids 0.. in first-seen row-major order

    int count(std::size_t level_index) const;
};

// Clusters one level's [N, D] embeddings: 4-adjacent columns with cosine
// similarity >= tau are joined, clusters are connected components.
std::vector<int> cluster_columns(const Tensor& embeddings, int grid, double tau);
IslandsMap islands(const ColumnState& state, double tau);

// Writes input.ppm and level_<l>.ppm for every level plus islands.json.
// Returns the written paths, input first.
std::vector<std::filesystem::path> export_islands(const IslandsMap& map, const Tensor& image,
                                                  const std::filesystem::path& dir, int cell_pixels = 16);
void write_ppm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::array<std::uint8_t, 3> palette_color(int cluster_id);

// Forward one sample through a CCNet to t=1 and snapshot the state.
ColumnState ccnet_state(const CCNetBackbone& model, const ParamSet& params, const Sample& sample);

// glibc allocator settings that keep large tensor buffers off mmap; no-op elsewhere.
void tune_allocator();

}  // namespace ccnet
