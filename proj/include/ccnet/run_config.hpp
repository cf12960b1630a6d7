#pragma once

#include "ccnet/backbone.hpp"
#include "ccnet/fed.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ccnet {

// Everything a CLI run needs. Defaults are the desk-scale configuration.
struct RunConfig {
    DatasetConfig data;
    double val_fraction = 0.1;
    CCNetConfig ccnet;
    PriorMode prior = PriorMode::oracle;
    double mask_corruption = 0.0;
    CnnConfig cnn;
    double cnn_tolerance = 0.25;
    FedConfig fed;
    double tau = 0.9;

    RunConfig();
};

// Flat key=value text; '#' starts a comment, blank lines are ignored. Unknown
// keys and malformed values throw with the line number.
RunConfig parse_config(std::istream& in, RunConfig base = RunConfig());
RunConfig load_config(const std::filesystem::path& path);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
// Every key, one per line, in a form parse_config reads back to the same config.
std::string format_config(const RunConfig& config);
const std::vector<std::string>& config_keys();

std::unique_ptr<Backbone> make_backbone(const RunConfig& config, const std::string& kind);

std::string version_string();

struct Manifest {
    std::string command;
    std::vector<std::string> arguments;
    RunConfig config;
    std::vector<std::uint64_t> seeds;
    std::uint64_t dataset_checksum = 0;
    std::map<std::string, std::string> outputs;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace ccnet
