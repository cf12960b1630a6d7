#include "ccnet/run_config.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#ifndef CCNET_VERSION
#define CCNET_VERSION "unknown"
#endif

namespace ccnet {

RunConfig::RunConfig() {
    ccnet.dim = 32;
    fed.batch_size = 32;
    fed.lion.lr = 1e-3;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string show(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

long long to_int(const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return out;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

int to_int32(const std::string& v) { return static_cast<int>(to_int(v)); }

struct Key {
    std::string name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define INT_KEY(name, field) \
    Key{name, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_int32(v); }}
#define U64_KEY(name, field)                                                  \
    Key{name, [](const RunConfig& c) { return std::to_string(c.field); },     \
        [](RunConfig& c, const std::string& v) { c.field = static_cast<std::uint64_t>(to_int(v)); }}
#define DOUBLE_KEY(name, field) \
    Key{name, [](const RunConfig& c) { return show(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }}
#define BOOL_KEY(name, field)                                                    \
    Key{name, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }}

Activation parse_activation(const std::string& v) {
    if (v == "gelu") return Activation::gelu;
    if (v == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation: '" + v + "'");
}

const char* activation_name(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        U64_KEY("seed", data.seed),
        INT_KEY("per_domain", data.per_domain),
        INT_KEY("image_size", data.image_size),
        DOUBLE_KEY("val_fraction", val_fraction),

        INT_KEY("grid", ccnet.grid),
        INT_KEY("levels", ccnet.levels),
        INT_KEY("dim", ccnet.dim),
        INT_KEY("classes", ccnet.classes),
        INT_KEY("heads", ccnet.num_heads),
        INT_KEY("mlp_layers", ccnet.mlp_layers),
        INT_KEY("mlp_hidden", ccnet.mlp_hidden),
        INT_KEY("head_hidden", ccnet.head_hidden),
        INT_KEY("tokenizer_kernel", ccnet.tokenizer_kernel),
        INT_KEY("tokenizer_channels", ccnet.tokenizer_channels),
        INT_KEY("encoder_kernel", ccnet.encoder_kernel),
        INT_KEY("encoder_channels1", ccnet.encoder_channels1),
        INT_KEY("encoder_channels2", ccnet.encoder_channels2),
        INT_KEY("attention_radius", ccnet.attention_radius),
        Key{"activation", [](const RunConfig& c) { return std::string(activation_name(c.ccnet.activation)); },
            [](RunConfig& c, const std::string& v) { c.ccnet.activation = parse_activation(v); }},
        BOOL_KEY("bias", ccnet.bias),
        DOUBLE_KEY("init_beta", ccnet.init_beta),
        Key{"prior", [](const RunConfig& c) { return std::string(prior_mode_name(c.prior)); },
            [](RunConfig& c, const std::string& v) { c.prior = parse_prior_mode(v); }},
        DOUBLE_KEY("mask_corruption", mask_corruption),

        Key{"cnn_conv",
            [](const RunConfig& c) {
                return std::to_string(c.cnn.conv[0]) + "," + std::to_string(c.cnn.conv[1]) + "," +
                       std::to_string(c.cnn.conv[2]);
            },
            [](RunConfig& c, const std::string& v) {
                std::stringstream ss(v);
                std::string item;
                std::size_t i = 0;
                while (std::getline(ss, item, ',')) {
                    if (i >= 3) throw std::invalid_argument("cnn_conv takes three widths");
                    c.cnn.conv[i++] = to_int32(trim(item));
                }
                if (i != 3) throw std::invalid_argument("cnn_conv takes three widths");
            }},
        INT_KEY("cnn_hidden", cnn.hidden),
        Key{"cnn_activation", [](const RunConfig& c) { return std::string(activation_name(c.cnn.activation)); },
            [](RunConfig& c, const std::string& v) { c.cnn.activation = parse_activation(v); }},
        DOUBLE_KEY("cnn_tolerance", cnn_tolerance),

        Key{"strategy", [](const RunConfig& c) { return std::string(strategy_name(c.fed.strategy)); },
            [](RunConfig& c, const std::string& v) { c.fed.strategy = parse_strategy(v); }},
        INT_KEY("rounds", fed.rounds),
        INT_KEY("local_epochs", fed.local_epochs),
        INT_KEY("batch_size", fed.batch_size),
        DOUBLE_KEY("mu", fed.mu),
        DOUBLE_KEY("rsc_percentile", fed.rsc_percentile),
        DOUBLE_KEY("rsc_trigger_prob", fed.rsc_trigger_prob),
        DOUBLE_KEY("am_lambda", fed.am_lambda),
        DOUBLE_KEY("lr", fed.lion.lr),
        DOUBLE_KEY("weight_decay", fed.lion.weight_decay),
        DOUBLE_KEY("beta1", fed.lion.beta1),
        DOUBLE_KEY("beta2", fed.lion.beta2),
        BOOL_KEY("concurrent_clients", fed.concurrent_clients),
        DOUBLE_KEY("tau", tau),
    };
    return table;
}

#undef INT_KEY
#undef U64_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& k : keys()) out.push_back(k.name);
        return out;
    }();
    return names;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (k.name == key) {
            k.set(config, value);
            return;
        }
    }
    throw std::invalid_argument("unknown config key: '" + key + "'");
}

RunConfig parse_config(std::istream& in, RunConfig base) {
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(number) + ": expected key=value");
        try {
            apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(number) + ": " + e.what());
        }
    }
    base.ccnet.image_size = base.data.image_size;
    base.cnn.image_size = base.data.image_size;
    base.cnn.classes = base.ccnet.classes;
    base.ccnet.validate();
    base.fed.validate();
    return base;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    try {
        return parse_config(in);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::string format_config(const RunConfig& config) {
    std::string out;
    for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
    return out;
}

std::unique_ptr<Backbone> make_backbone(const RunConfig& config, const std::string& kind) {
    if (kind == "ccnet") {
        return std::make_unique<CCNetBackbone>(config.ccnet, config.prior, config.mask_corruption, config.data.seed);
    }
    if (kind == "cnn") {
        const Index target = init_ccnet_params(config.ccnet, 0).parameter_count();
        return std::make_unique<CnnBackbone>(cnn_baseline(config.cnn, target, config.cnn_tolerance));
    }
    throw std::invalid_argument("unknown backbone: '" + kind + "' (ccnet, cnn)");
}

std::string version_string() { return CCNET_VERSION; }

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["arguments"] = m.arguments;
    j["version"] = version_string();
    nlohmann::json config;
    for (const auto& k : keys()) config[k.name] = k.get(m.config);
    j["config"] = config;
    j["seeds"] = m.seeds;
    j["dataset_checksum"] = hex(m.dataset_checksum);
    j["outputs"] = m.outputs;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace ccnet
