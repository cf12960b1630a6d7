#include "ccnet/fed.hpp"

#include "ccnet/spectral.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace ccnet {

Strategy parse_strategy(const std::string& text) {
    if (text == "fedavg") return Strategy::fedavg;
    if (text == "am") return Strategy::am;
    if (text == "fedprox") return Strategy::fedprox;
    if (text == "rsc") return Strategy::rsc;
    if (text == "scaffold") return Strategy::scaffold;
    throw std::invalid_argument("unknown strategy: " + text + " (fedavg, am, fedprox, rsc, scaffold)");
}

const char* strategy_name(Strategy strategy) {
    switch (strategy) {
        case Strategy::fedavg: return "fedavg";
        case Strategy::am: return "am";
        case Strategy::fedprox: return "fedprox";
        case Strategy::rsc: return "rsc";
        case Strategy::scaffold: return "scaffold";
    }
    return "?";
}

void FedConfig::validate() const {
    if (rounds < 0) throw std::invalid_argument("rounds must be >= 0");
    if (local_epochs < 0) throw std::invalid_argument("local_epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (mu < 0.0) throw std::invalid_argument("mu must be >= 0");
    if (!(rsc_percentile > 0.0 && rsc_percentile <= 100.0)) throw std::invalid_argument("rsc_percentile must be in (0, 100]");
    if (rsc_trigger_prob < 0.0 || rsc_trigger_prob > 1.0) throw std::invalid_argument("rsc_trigger_prob must be in [0, 1]");
    if (am_lambda < 0.0 || am_lambda > 1.0) throw std::invalid_argument("am_lambda must be in [0, 1]");
    if (!(lion.lr > 0.0)) throw std::invalid_argument("lion lr must be > 0");
}

// ---------------------------------------------------------------- exchange

const char* frame_kind_name(FrameKind kind) {
    switch (kind) {
        case FrameKind::params: return "params";
        case FrameKind::control: return "control";
        case FrameKind::count: return "count";
        case FrameKind::amplitude: return "amplitude";
    }
    return "unknown";
}

namespace {

constexpr std::size_t kFrameHeader = 1 + 4 + 4 + 4;

bool known_kind(std::uint8_t kind) { return kind >= 1 && kind <= 4; }

}  // namespace

std::vector<std::uint8_t> encode_frames(std::span<const ExchangeFrame> frames) {
    std::vector<std::uint8_t> out;
    for (const auto& f : frames) {
        const std::size_t length = kFrameHeader + f.payload.size();
        if (length > std::numeric_limits<std::uint32_t>::max()) throw std::length_error("exchange frame too large");
        put_u32(out, static_cast<std::uint32_t>(length));
        out.push_back(static_cast<std::uint8_t>(f.kind));
        put_u32(out, f.round);
        put_u32(out, f.sender);
        put_u32(out, f.receiver);
        out.insert(out.end(), f.payload.begin(), f.payload.end());
    }
    return out;
}

std::vector<ExchangeFrame> decode_frames(const std::vector<std::uint8_t>& bytes) {
    std::vector<ExchangeFrame> frames;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < 4) throw std::runtime_error("truncated frame length at byte " + std::to_string(pos));
        const std::size_t length = get_u32(bytes.data() + pos);
        pos += 4;
        if (length < kFrameHeader || bytes.size() - pos < length) {
            throw std::runtime_error("bad frame length " + std::to_string(length) + " at byte " + std::to_string(pos - 4));
        }
        ExchangeFrame f;
        f.kind = static_cast<FrameKind>(bytes[pos]);
        f.round = get_u32(bytes.data() + pos + 1);
        f.sender = get_u32(bytes.data() + pos + 5);
        f.receiver = get_u32(bytes.data() + pos + 9);
        f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos + kFrameHeader),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + length));
        pos += length;
        frames.push_back(std::move(f));
    }
    return frames;
}

void dump_frames(const std::filesystem::path& path, std::span<const ExchangeFrame> frames) {
    const auto bytes = encode_frames(frames);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ExchangeFrame> load_frames(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_frames(bytes);
}

ExchangeFrame params_frame(FrameKind kind, const ParamSet& params, int round, std::uint32_t sender,
                           std::uint32_t receiver) {
    return {kind, static_cast<std::uint32_t>(round), sender, receiver, serialize(params)};
}

ExchangeFrame count_frame(std::uint64_t count, int round, std::uint32_t sender, std::uint32_t receiver) {
    ExchangeFrame f{FrameKind::count, static_cast<std::uint32_t>(round), sender, receiver, {}};
    put_u64(f.payload, count);
    return f;
}

std::uint64_t frame_count(const ExchangeFrame& frame) {
    if (frame.kind != FrameKind::count || frame.payload.size() != 8) throw std::runtime_error("not a count frame");
    return get_u64(frame.payload.data());
}

AuditReport audit_exchange(std::span<const ExchangeFrame> frames, std::span<const Sample* const> private_samples) {
    constexpr std::size_t kWindow = 8;
    constexpr std::size_t kWindowBytes = kWindow * sizeof(double);
    AuditReport report;
    report.frames = frames.size();

    // Every non-constant run of 8 consecutive pixel values, as raw bytes.
    std::unordered_set<std::uint64_t> first_words, window_hashes;
    for (const Sample* s : private_samples) {
        const double* px = s->image.raw();
        const auto n = static_cast<std::size_t>(s->image.numel());
        for (std::size_t i = 0; i + kWindow <= n; ++i) {
            if (std::all_of(px + i + 1, px + i + kWindow, [&](double v) { return v == px[i]; })) continue;
            std::uint64_t word;
            std::memcpy(&word, px + i, sizeof word);
            first_words.insert(word);
            window_hashes.insert(fnv1a(reinterpret_cast<const std::uint8_t*>(px + i), kWindowBytes));
        }
    }

    for (std::size_t k = 0; k < frames.size(); ++k) {
        const ExchangeFrame& f = frames[k];
        report.bytes += kFrameHeader + 4 + f.payload.size();
        const std::string where = "frame " + std::to_string(k) + " (round " + std::to_string(f.round) + ")";
        if (!known_kind(static_cast<std::uint8_t>(f.kind))) {
            report.violations.push_back(where + ": disallowed kind " + std::to_string(static_cast<int>(f.kind)));
            continue;
        }
        if ((f.sender == kServerId) == (f.receiver == kServerId)) {
            report.violations.push_back(where + ": not a client/server exchange");
        }
        if (f.kind == FrameKind::count) {
            if (f.payload.size() != 8) report.violations.push_back(where + ": malformed count payload");
        } else {
            try {
                (void)deserialize(f.payload);
            } catch (const std::exception& e) {
                report.violations.push_back(where + ": malformed " + frame_kind_name(f.kind) + " payload: " + e.what());
            }
        }
        if (first_words.empty() || f.payload.size() < kWindowBytes) continue;
        for (std::size_t pos = 0; pos + kWindowBytes <= f.payload.size(); ++pos) {
            std::uint64_t word;
            std::memcpy(&word, f.payload.data() + pos, sizeof word);
            if (!first_words.count(word)) continue;
            if (window_hashes.count(fnv1a(f.payload.data() + pos, kWindowBytes))) {
                report.violations.push_back(where + ": raw image pixels at payload byte " + std::to_string(pos));
                break;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------- strategies

ParamSet aggregate_fedavg(std::span<const ParamSet> params, std::span<const std::uint64_t> counts) {
    if (params.empty()) throw std::invalid_argument("aggregate_fedavg: no client results");
    if (params.size() != counts.size()) throw std::invalid_argument("aggregate_fedavg: params/counts size mismatch");
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    if (total <= 0.0) throw std::invalid_argument("aggregate_fedavg: zero total sample count");
    if (params.size() == 1) return params[0];
    ParamSet out = params[0].zeros_like();
    for (std::size_t c = 0; c < params.size(); ++c) {
        if (!params[c].same_layout(out)) throw std::invalid_argument("aggregate_fedavg: client parameter layouts differ");
        const double n = static_cast<double>(counts[c]);
        for (std::size_t t = 0; t < out.size(); ++t) out.tensor(t).data() += n * params[c].tensor(t).data();
    }
    for (std::size_t t = 0; t < out.size(); ++t) out.tensor(t).data() /= total;
    return out;
}

ParamSet scaffold_correct(const ParamSet& grads, const ParamSet& server_control, const ParamSet& client_control) {
    if (!grads.same_layout(server_control) || !grads.same_layout(client_control)) {
        throw std::invalid_argument("scaffold: control variates must be parameter-shaped");
    }
    ParamSet out = grads;
    for (std::size_t t = 0; t < out.size(); ++t) {
        out.tensor(t).data() = grads.tensor(t).data() - client_control.tensor(t).data() + server_control.tensor(t).data();
    }
    return out;
}

ParamSet scaffold_client_control(const ParamSet& client_control, const ParamSet& server_control,
                                 const ParamSet& global, const ParamSet& local, int steps, double lr) {
    if (steps < 1) return client_control;
    const double inv = 1.0 / (static_cast<double>(steps) * lr);
    ParamSet out = client_control;
    for (std::size_t t = 0; t < out.size(); ++t) {
        out.tensor(t).data() = client_control.tensor(t).data() - server_control.tensor(t).data() +
                               inv * (global.tensor(t).data() - local.tensor(t).data());
    }
    return out;
}

ParamSet scaffold_server_control(const ParamSet& server_control, std::span<const ParamSet> deltas) {
    ParamSet out = server_control;
    if (deltas.empty()) return out;
    for (std::size_t t = 0; t < out.size(); ++t) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(out.tensor(t).numel());
        for (const auto& d : deltas) sum += d.tensor(t).data();
        out.tensor(t).data() += sum / static_cast<double>(deltas.size());
    }
    return out;
}

Tensor rsc_mask(const Tensor& features, const Tensor& grads, double percentile) {
    if (features.rank() != 2 || features.shape() != grads.shape()) {
        throw std::invalid_argument("rsc_mask: features " + to_string(features.shape()) + " vs grads " +
                                    to_string(grads.shape()));
    }
    if (!(percentile > 0.0 && percentile <= 100.0)) throw std::invalid_argument("rsc_mask: percentile must be in (0, 100]");
    const Index b = features.dim(0), u = features.dim(1);
    const Index drop = std::min<Index>(u, static_cast<Index>(std::ceil(percentile / 100.0 * static_cast<double>(u))));
    Tensor mask(features.shape(), 1.0);
    std::vector<Index> order(static_cast<std::size_t>(u));
    std::vector<double> saliency(static_cast<std::size_t>(u));
    for (Index i = 0; i < b; ++i) {
        for (Index j = 0; j < u; ++j) saliency[static_cast<std::size_t>(j)] = features[i * u + j] * grads[i * u + j];
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) {
            return saliency[static_cast<std::size_t>(x)] > saliency[static_cast<std::size_t>(y)];
        });
        for (Index k = 0; k < drop; ++k) mask[i * u + order[static_cast<std::size_t>(k)]] = 0.0;
    }
    return mask;
}

Tensor amplitude_bank(const ClientShard& shard) {
    if (shard.train.empty()) throw std::invalid_argument("amplitude_bank: empty shard");
    const Shape& s = shard.train.front().image.shape();
    const Index n = static_cast<Index>(shard.train.size()), per = numel(s);
    Tensor bank(Shape{n, s[0], s[1], s[2]});
    for (Index i = 0; i < n; ++i) {
        bank.data().segment(i * per, per) = amplitude_spectrum(shard.train[static_cast<std::size_t>(i)].image).data();
    }
    return bank;
}

// ---------------------------------------------------------------- local training

namespace {

Tensor bank_entry(const Tensor& bank, Index i) {
    const Index per = bank.numel() / bank.dim(0);
    return Tensor(Shape{bank.dim(1), bank.dim(2), bank.dim(3)}, Eigen::VectorXd(bank.data().segment(i * per, per)));
}

bool finite(const ParamSet& p) {
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (!p.tensor(t).all_finite()) return false;
    }
    return true;
}

}  // namespace

LocalResult local_train(const Backbone& model, ClientState& client, const ParamSet& global,
                        const ParamSet* server_control, const FedConfig& config, int round,
                        std::span<const Tensor> foreign_banks) {
    if (!client.shard) throw std::invalid_argument("local_train: client has no shard");
    const auto& train = client.shard->train;
    LocalResult result;
    result.client_id = client.client_id;
    result.n_samples = train.size();
    result.params = global;
    const bool scaffold = config.strategy == Strategy::scaffold;
    if (scaffold) {
        if (!server_control) throw std::invalid_argument("local_train: scaffold needs the server control variate");
        if (client.control.size() == 0) client.control = global.zeros_like();
    }
    if (client.optimizer.momentum().size() == 0) client.optimizer = LionState(global, config.lion);
    client.optimizer.config() = config.lion;
    if (config.strategy == Strategy::am && foreign_banks.empty()) {
        throw std::invalid_argument("local_train: amplitude mixing needs at least one foreign bank");
    }

    const auto round_u = static_cast<std::uint64_t>(round);
    const auto client_u = static_cast<std::uint64_t>(client.client_id);
    Rng data_rng(mix_seed({config.seed, round_u, client_u, 0}));
    Rng strategy_rng(mix_seed({config.seed, round_u, client_u, 1}));

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
    double loss_sum = 0.0;
    std::size_t seen = 0;

    for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), data_rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<const Sample*> samples;
            for (std::size_t i = start; i < end; ++i) samples.push_back(&train[order[i]]);

            std::vector<Tensor> mixed;
            if (config.strategy == Strategy::am) {
                for (const Sample* s : samples) {
                    const auto which = std::uniform_int_distribution<std::size_t>(0, foreign_banks.size() - 1)(strategy_rng);
                    const Tensor& bank = foreign_banks[which];
                    const auto entry = std::uniform_int_distribution<Index>(0, bank.dim(0) - 1)(strategy_rng);
                    mixed.push_back(amplitude_mix(s->image, bank_entry(bank, entry), config.am_lambda));
                }
            }
            const Batch batch = make_batch(samples, mixed.empty() ? nullptr : &mixed);

            Tape tape;
            ParamVars vars(tape, result.params);
            BackboneOutput out = model.forward(tape, vars, batch);
            Var loss = nll(out.probs, batch.labels);
            double loss_value = loss.value()[0];
            ParamSet grads;
            const bool rsc_pass = config.strategy == Strategy::rsc &&
                                  uniform(strategy_rng, 0.0, 1.0) < config.rsc_trigger_prob;
            if (rsc_pass && std::isfinite(loss_value)) {
                tape.backward(loss);
                const Tensor mask = rsc_mask(out.features.value(), tape.grad(out.features), config.rsc_percentile);
                Tape masked_tape;
                ParamVars masked_vars(masked_tape, result.params);
                BackboneOutput masked = model.forward(masked_tape, masked_vars, batch, &mask);
                Var masked_loss = nll(masked.probs, batch.labels);
                loss_value = masked_loss.value()[0];
                if (std::isfinite(loss_value)) {
                    masked_tape.backward(masked_loss);
                    grads = masked_vars.gradients();
                }
            } else if (std::isfinite(loss_value)) {
                tape.backward(loss);
                grads = vars.gradients();
            }
            if (!std::isfinite(loss_value)) {
                result.ok = false;
                result.error = "non-finite loss in epoch " + std::to_string(epoch + 1) + " step " +
                               std::to_string(result.steps + 1);
                return result;
            }

            if (config.strategy == Strategy::fedprox) {
                for (std::size_t t = 0; t < grads.size(); ++t) {
                    grads.tensor(t).data() += config.mu * (result.params.tensor(t).data() - global.tensor(t).data());
                }
            }
            if (scaffold) grads = scaffold_correct(grads, *server_control, client.control);

            if (!client.optimizer.step(result.params, grads)) {
                result.ok = false;
                result.error = "non-finite gradient at step " + std::to_string(result.steps + 1);
                return result;
            }
            ++result.steps;
            loss_sum += loss_value * static_cast<double>(samples.size());
            seen += samples.size();
        }
    }
    if (!finite(result.params)) {
        result.ok = false;
        result.error = "non-finite parameters after local training";
        return result;
    }
    result.mean_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (scaffold) {
        ParamSet updated = scaffold_client_control(client.control, *server_control, global, result.params, result.steps,
                                                   config.lion.lr);
        result.control_delta = updated;
        for (std::size_t t = 0; t < updated.size(); ++t) {
            result.control_delta.tensor(t).data() -= client.control.tensor(t).data();
        }
        client.control = std::move(updated);
    }
    result.ok = true;
    return result;
}

// ---------------------------------------------------------------- rounds

double RoundLog::round_loss(int round) const {
    double sum = 0.0, n = 0.0;
    for (const auto& r : rows) {
        if (r.round != round || !r.ok) continue;
        sum += r.mean_loss * static_cast<double>(r.n_samples);
        n += static_cast<double>(r.n_samples);
    }
    if (n == 0.0) throw std::out_of_range("no successful client in round " + std::to_string(round));
    return sum / n;
}

void RoundLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "round,client_id,n_samples,mean_loss,checksum,strategy,weight,ok,wall_seconds\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.round << ',' << r.client_id << ',' << r.n_samples << ',' << r.mean_loss << ',' << hex(r.checksum) << ','
            << r.strategy << ',' << r.weight << ',' << (r.ok ? 1 : 0) << ',' << r.wall_seconds << '\n';
    }
}

namespace {

struct ClientOutcome {
    LocalResult result;
    double seconds = 0.0;
};

Tensor decode_bank(const ExchangeFrame& frame) {
    ParamSet p = deserialize(frame.payload);
    if (p.size() != 1) throw std::runtime_error("amplitude frame must carry exactly one bank");
    return p.tensor(0);
}

}  // namespace

RunResult run_rounds(const Backbone& model, std::span<const ClientShard> shards, const FedConfig& config,
                     std::optional<ParamSet> init) {
    config.validate();
    if (shards.empty()) throw std::invalid_argument("run_rounds: no clients");
    if (config.strategy == Strategy::am && shards.size() < 2) {
        throw std::invalid_argument("run_rounds: amplitude mixing needs at least two clients");
    }
    RunResult run;
    run.server.global = init ? std::move(*init) : model.init(config.seed);
    const bool scaffold = config.strategy == Strategy::scaffold;
    if (scaffold) run.server.control = run.server.global.zeros_like();
    if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

    std::vector<ClientState> clients(shards.size());
    for (std::size_t i = 0; i < shards.size(); ++i) {
        clients[i].client_id = static_cast<int>(i);
        clients[i].shard = &shards[i];
        clients[i].optimizer = LionState(run.server.global, config.lion);
        if (scaffold) clients[i].control = run.server.global.zeros_like();
    }
    std::vector<Tensor> own_banks;
    if (config.strategy == Strategy::am) {
        for (const auto& s : shards) own_banks.push_back(amplitude_bank(s));
    }

    auto send = [&](ExchangeFrame frame) {
        if (config.record_exchange) run.exchange.push_back(frame);
        return frame;
    };

    for (int round = 1; round <= config.rounds; ++round) {
        const std::size_t n = clients.size();
        // Downlink: global model (and control), relayed amplitude banks.
        std::vector<ParamSet> local_global(n), local_control(n);
        std::vector<std::vector<Tensor>> foreign(n);
        const ExchangeFrame down = send(params_frame(FrameKind::params, run.server.global, round, kServerId, 0));
        std::optional<ExchangeFrame> control_down;
        if (scaffold) control_down = params_frame(FrameKind::control, run.server.control, round, kServerId, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ExchangeFrame f = down;
            f.receiver = static_cast<std::uint32_t>(i);
            local_global[i] = deserialize(send(std::move(f)).payload);
            if (control_down) {
                ExchangeFrame c = *control_down;
                c.receiver = static_cast<std::uint32_t>(i);
                local_control[i] = deserialize(send(std::move(c)).payload);
            }
        }
        if (config.strategy == Strategy::am) {
            std::vector<ExchangeFrame> uploaded;
            for (std::size_t i = 0; i < n; ++i) {
                ParamSet bank;
                bank.add("amplitude", own_banks[i]);
                uploaded.push_back(send(params_frame(FrameKind::amplitude, bank, round, static_cast<std::uint32_t>(i), kServerId)));
            }
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (i == j) continue;
                    ExchangeFrame relay = uploaded[j];
                    relay.sender = kServerId;
                    relay.receiver = static_cast<std::uint32_t>(i);
                    foreign[i].push_back(decode_bank(send(std::move(relay))));
                }
            }
        }

        // Local training, one task per client.
        auto train_one = [&](std::size_t i) {
            const auto t0 = std::chrono::steady_clock::now();
            ClientOutcome o;
            try {
                o.result = local_train(model, clients[i], local_global[i], scaffold ? &local_control[i] : nullptr, config,
                                       round, foreign[i]);
            } catch (const std::exception& e) {
                o.result.client_id = clients[i].client_id;
                o.result.n_samples = clients[i].shard->train.size();
                o.result.ok = false;
                o.result.error = e.what();
            }
            o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return o;
        };
        std::vector<ClientOutcome> outcomes(n);
        if (config.concurrent_clients && n > 1) {
            std::vector<std::future<ClientOutcome>> tasks;
            for (std::size_t i = 0; i < n; ++i) tasks.push_back(std::async(std::launch::async, train_one, i));
            for (std::size_t i = 0; i < n; ++i) outcomes[i] = tasks[i].get();
        } else {
            for (std::size_t i = 0; i < n; ++i) outcomes[i] = train_one(i);
        }

        // Uplink, then aggregation in client-id order.
        std::vector<ParamSet> params, deltas;
        std::vector<std::uint64_t> counts;
        std::vector<std::size_t> ok_clients;
        for (std::size_t i = 0; i < n; ++i) {
            const LocalResult& r = outcomes[i].result;
            if (!r.ok) continue;
            const auto id = static_cast<std::uint32_t>(i);
            params.push_back(deserialize(send(params_frame(FrameKind::params, r.params, round, id, kServerId)).payload));
            counts.push_back(frame_count(send(count_frame(r.n_samples, round, id, kServerId))));
            if (scaffold) {
                deltas.push_back(
                    deserialize(send(params_frame(FrameKind::control, r.control_delta, round, id, kServerId)).payload));
            }
            ok_clients.push_back(i);
        }
        const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
        if (!params.empty()) {
            run.server.global = aggregate_fedavg(params, counts);
            if (scaffold) run.server.control = scaffold_server_control(run.server.control, deltas);
            run.server.round = round;
        }
        const std::uint64_t sum = checksum(run.server.global);
        for (std::size_t i = 0; i < n; ++i) {
            const LocalResult& r = outcomes[i].result;
            RoundRecord rec;
            rec.round = round;
            rec.client_id = clients[i].client_id;
            rec.strategy = strategy_name(config.strategy);
            rec.n_samples = r.n_samples;
            rec.ok = r.ok;
            rec.mean_loss = r.ok ? r.mean_loss : std::numeric_limits<double>::quiet_NaN();
            rec.weight = r.ok && total > 0 ? static_cast<double>(r.n_samples) / total : 0.0;
            rec.checksum = sum;
            rec.wall_seconds = outcomes[i].seconds;
            run.log.rows.push_back(rec);
        }
        if (!config.checkpoint_dir.empty()) {
            run.log.write_csv(config.checkpoint_dir / "roundlog.csv");
            if (!params.empty()) {
                save_params(config.checkpoint_dir / ("round_" + std::to_string(round) + ".ccn1"), run.server.global);
                if (scaffold) {
                    save_params(config.checkpoint_dir / ("round_" + std::to_string(round) + ".control.ccn1"),
                                run.server.control);
                }
            }
        }
        if (params.empty()) {
            std::string why;
            for (const auto& o : outcomes) why += " client " + std::to_string(o.result.client_id) + ": " + o.result.error + ";";
            throw RoundFailure("every client failed in round " + std::to_string(round) + ":" + why);
        }
    }
    return run;
}

}  // namespace ccnet
