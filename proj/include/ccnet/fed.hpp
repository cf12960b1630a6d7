#pragma once

#include "ccnet/backbone.hpp"
#include "ccnet/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ccnet {

enum class Strategy { fedavg, am, fedprox, rsc, scaffold };
Strategy parse_strategy(const std::string& text);
const char* strategy_name(Strategy strategy);

struct FedConfig {
    Strategy strategy = Strategy::fedavg;
    int rounds = 10;
    int local_epochs = 5;
    int batch_size = 256;
    double mu = 0.01;               // FedProx proximal coefficient
    double rsc_percentile = 33.0;   // share of feature units dropped, in percent
    double rsc_trigger_prob = 0.5;  // chance a batch gets the RSC second pass
    double am_lambda = 0.5;
    std::uint64_t seed = 0;
    LionConfig lion;
    bool concurrent_clients = false;
    bool record_exchange = false;
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints

    void validate() const;
};

struct ServerState {
    ParamSet global;
    int round = 0;
    ParamSet control;  // Scaffold c; empty for other strategies
};

struct ClientState {
    int client_id = 0;
    const ClientShard* shard = nullptr;
    LionState optimizer;  // persists across rounds
    ParamSet control;     // Scaffold c_i
};

// ---------------------------------------------------------------- exchange

enum class FrameKind : std::uint8_t { params = 1, control = 2, count = 3, amplitude = 4 };
const char* frame_kind_name(FrameKind kind);

inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;

// Everything that crosses the client/server boundary goes through one of these.
struct ExchangeFrame {
    FrameKind kind = FrameKind::params;
    std::uint32_t round = 0;
    std::uint32_t sender = 0;
    std::uint32_t receiver = 0;
    std::vector<std::uint8_t> payload;
};

// Length-prefixed stream: u32 length of the rest, u8 kind, u32 round,
// u32 sender, u32 receiver, payload.
std::vector<std::uint8_t> encode_frames(std::span<const ExchangeFrame> frames);
std::vector<ExchangeFrame> decode_frames(const std::vector<std::uint8_t>& bytes);
void dump_frames(const std::filesystem::path& path, std::span<const ExchangeFrame> frames);
std::vector<ExchangeFrame> load_frames(const std::filesystem::path& path);

ExchangeFrame params_frame(FrameKind kind, const ParamSet& params, int round, std::uint32_t sender,
                           std::uint32_t receiver);
ExchangeFrame count_frame(std::uint64_t count, int round, std::uint32_t sender, std::uint32_t receiver);
std::uint64_t frame_count(const ExchangeFrame& frame);

struct AuditReport {
    std::size_t frames = 0;
    std::size_t bytes = 0;
    std::vector<std::string> violations;

    bool clean() const { return violations.empty(); }
};

// Checks every frame is an allowed kind with a well-formed payload and that
// no payload carries a run of 8 consecutive raw pixel values from any of the
// given private images.
AuditReport audit_exchange(std::span<const ExchangeFrame> frames, std::span<const Sample* const> private_samples);

// ---------------------------------------------------------------- strategies

// Weighted mean sum_i n_i w_i / sum_i n_i, accumulated in the given order.
ParamSet aggregate_fedavg(std::span<const ParamSet> params, std::span<const std::uint64_t> counts);

// g - c_i + c
ParamSet scaffold_correct(const ParamSet& grads, const ParamSet& server_control, const ParamSet& client_control);
// c_i - c + (w_global - w_i) / (steps * lr)
ParamSet scaffold_client_control(const ParamSet& client_control, const ParamSet& server_control,
                                 const ParamSet& global, const ParamSet& local, int steps, double lr);
// c + mean_i(delta_i)
ParamSet scaffold_server_control(const ParamSet& server_control, std::span<const ParamSet> deltas);

// 0/1 mask over [B, U] zeroing, per sample, the ceil(percentile% * U) units
// with the largest feature * gradient; ties go to the lower index.
Tensor rsc_mask(const Tensor& features, const Tensor& grads, double percentile);

// Amplitude spectra of every training image of a shard, stacked [n, C, H, W].
Tensor amplitude_bank(const ClientShard& shard);

// ---------------------------------------------------------------- rounds

struct LocalResult {
    int client_id = 0;
    bool ok = false;
    std::string error;
    ParamSet params;
    ParamSet control_delta;  // Scaffold only
    std::uint64_t n_samples = 0;
    double mean_loss = 0.0;
    int steps = 0;
};

// One client's local training from `global`. `foreign_banks` holds other
// clients' amplitude banks (AM only).
LocalResult local_train(const Backbone& model, ClientState& client, const ParamSet& global,
                        const ParamSet* server_control, const FedConfig& config, int round,
                        std::span<const Tensor> foreign_banks = {});

struct RoundRecord {
    int round = 0;
    int client_id = 0;
    std::string strategy;
    std::uint64_t n_samples = 0;
    double weight = 0.0;
    double mean_loss = 0.0;
    bool ok = true;
    std::uint64_t checksum = 0;
    double wall_seconds = 0.0;
};

struct RoundLog {
    std::vector<RoundRecord> rows;

    // Sample-weighted mean loss of the successful clients in a round.
    double round_loss(int round) const;
    void write_csv(const std::filesystem::path& path) const;
};

struct RunResult {
    ServerState server;
    RoundLog log;
    std::vector<ExchangeFrame> exchange;  // filled when config.record_exchange
};

class RoundFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// All clients train every round; aggregation runs in client-id order.
RunResult run_rounds(const Backbone& model, std::span<const ClientShard> clients, const FedConfig& config,
                     std::optional<ParamSet> init = std::nullopt);

}  // namespace ccnet
