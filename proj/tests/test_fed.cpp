#include "ccnet/fed.hpp"
#include "ccnet/spectral.hpp"
#include "test_util.hpp"
#include "tiny_backbone.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace ccnet;
using testutil::TinyBackbone;

namespace {

ParamSet scalar_set(double v) {
    ParamSet p;
    p.add("w", Tensor(Shape{1}, {v}));
    return p;
}

// Three 12-sample clients, domains 1..3.
const LodoSplit& small_split() {
    static const LodoSplit split = [] {
        const Dataset ds = generate_dataset({11, 12, 32});
        LodoSplit s;
        s.test = ds.domains[0];
        for (int d = 1; d < kDomains; ++d) s.clients.push_back({d, ds.domains[static_cast<std::size_t>(d)], {}});
        return s;
    }();
    return split;
}

FedConfig small_fed(Strategy s = Strategy::fedavg) {
    FedConfig f;
    f.strategy = s;
    f.rounds = 2;
    f.local_epochs = 2;
    f.batch_size = 5;
    f.seed = 3;
    f.lion.lr = 1e-3;
    return f;
}

bool same(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t t = 0; t < a.size(); ++t) {
        if (!bitwise_equal(a.tensor(t), b.tensor(t))) return false;
    }
    return true;
}

double distance(const ParamSet& a, const ParamSet& b) {
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += (a.tensor(t).data() - b.tensor(t).data()).squaredNorm();
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("fedavg aggregation") {
    SUBCASE("weighted mean from the derivation") {
        // (1*3 + 2*6 + 3*9) / 6
        const std::vector<ParamSet> p{scalar_set(3), scalar_set(6), scalar_set(9)};
        const std::vector<std::uint64_t> n{1, 2, 3};
        CHECK(aggregate_fedavg(p, n)["w"][0] == 7.0);
    }
    SUBCASE("a single client is returned unchanged") {
        const ParamSet p = TinyBackbone().init(1);
        const std::vector<ParamSet> one{p};
        const std::vector<std::uint64_t> n{7};
        CHECK(same(aggregate_fedavg(one, n), p));
    }
    SUBCASE("opposite clients cancel") {
        ParamSet a = TinyBackbone().init(2), b = a;
        for (std::size_t t = 0; t < b.size(); ++t) b.tensor(t).data() *= -1.0;
        const std::vector<ParamSet> p{a, b};
        const std::vector<std::uint64_t> n{5, 5};
        const ParamSet avg = aggregate_fedavg(p, n);
        for (std::size_t t = 0; t < avg.size(); ++t) CHECK(avg.tensor(t).data().cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("client order does not matter beyond rounding") {
        const std::vector<ParamSet> p{TinyBackbone().init(3), TinyBackbone().init(4), TinyBackbone().init(5)};
        const std::vector<ParamSet> q{p[2], p[0], p[1]};
        const std::vector<std::uint64_t> n{10, 3, 7}, m{7, 10, 3};
        CHECK(distance(aggregate_fedavg(p, n), aggregate_fedavg(q, m)) < 1e-14);
    }
    SUBCASE("bad input") {
        const std::vector<ParamSet> none;
        const std::vector<std::uint64_t> zero;
        CHECK_THROWS_AS(aggregate_fedavg(none, zero), std::invalid_argument);
        const std::vector<ParamSet> p{scalar_set(1), scalar_set(2)};
        const std::vector<std::uint64_t> one{1};
        CHECK_THROWS_AS(aggregate_fedavg(p, one), std::invalid_argument);
        ParamSet other;
        other.add("v", Tensor(Shape{1}, 0.0));
        const std::vector<ParamSet> mixed{scalar_set(1), other};
        const std::vector<std::uint64_t> two{1, 1};
        CHECK_THROWS_AS(aggregate_fedavg(mixed, two), std::invalid_argument);
    }
}

TEST_CASE("scaffold control variates") {
    const ParamSet c = scalar_set(2), ci = scalar_set(1);
    CHECK(scaffold_correct(scalar_set(10), c, ci)["w"][0] == 11.0);
    // 1 - 2 + (5 - 3) / (2 * 0.5)
    CHECK(scaffold_client_control(ci, c, scalar_set(5), scalar_set(3), 2, 0.5)["w"][0] == 1.0);
    CHECK(same(scaffold_client_control(ci, c, scalar_set(5), scalar_set(3), 0, 0.5), ci));
    const std::vector<ParamSet> deltas{scalar_set(2), scalar_set(4)};
    CHECK(scaffold_server_control(scalar_set(1), deltas)["w"][0] == 4.0);
}

TEST_CASE("rsc mask drops the most salient units") {
    const Tensor f(Shape{1, 3}, {3, 1, 2}), g(Shape{1, 3}, 1.0);
    const Tensor m = rsc_mask(f, g, 33.0);
    CHECK(m[0] == 0.0);
    CHECK(m[1] == 1.0);
    CHECK(m[2] == 1.0);
    const Tensor two = rsc_mask(f, g, 50.0);  // ceil(1.5) = 2 units
    CHECK(two.data().sum() == 1.0);
    CHECK(two[1] == 1.0);
    const Tensor tie = rsc_mask(Tensor(Shape{1, 4}, 1.0), Tensor(Shape{1, 4}, 1.0), 25.0);
    CHECK(tie[0] == 0.0);
    CHECK(tie.data().sum() == 3.0);
    CHECK_THROWS(rsc_mask(f, Tensor(Shape{1, 2}), 33.0));
    CHECK_THROWS(rsc_mask(f, g, 0.0));
}

TEST_CASE("amplitude mixing") {
    SUBCASE("impulse closed form") {
        Tensor delta(Shape{1, 4, 4}, 0.0), shifted(Shape{1, 4, 4}, 0.0);
        delta[0] = 1.0;
        shifted[1 * 4 + 2] = 3.0;  // amplitude 3 at every frequency
        const Tensor out = amplitude_mix(delta, amplitude_spectrum(shifted), 0.5);
        // Flat amplitude 0.5*1 + 0.5*3 = 2, zero phase: 2 * delta.
        for (Index i = 0; i < 16; ++i) CHECK(std::abs(out[i] - (i == 0 ? 2.0 : 0.0)) < 1e-12);
    }
    SUBCASE("phase kept, amplitude interpolated") {
        const Tensor img = testutil::random_tensor(Shape{3, 8, 8}, 1, 0, 1);
        const Tensor other = testutil::random_tensor(Shape{3, 8, 8}, 2, 0, 1);
        const Tensor a = amplitude_spectrum(img), b = amplitude_spectrum(other);
        const Tensor mixed = amplitude_mix(img, b, 0.3);
        const Tensor am = amplitude_spectrum(mixed);
        for (Index i = 0; i < am.numel(); ++i) CHECK(std::abs(am[i] - (0.7 * a[i] + 0.3 * b[i])) < 1e-6);
        for (Index c = 0; c < 3; ++c) {
            std::vector<std::complex<double>> fx(64), fy(64);
            for (Index i = 0; i < 64; ++i) fx[static_cast<std::size_t>(i)] = img[c * 64 + i], fy[static_cast<std::size_t>(i)] = mixed[c * 64 + i];
            fft2(fx, 8, 8);
            fft2(fy, 8, 8);
            for (std::size_t i = 0; i < 64; ++i) {
                if (std::abs(fx[i]) < 1e-9) continue;
                CHECK(std::abs(std::arg(fx[i] * std::conj(fy[i]))) < 1e-6);
            }
        }
    }
    SUBCASE("lambda 0 reconstructs the dataset images") {
        const auto& clients = small_split().clients;
        const Tensor bank = amplitude_bank(clients[1]);
        CHECK(bank.shape() == Shape{12, 3, 32, 32});
        for (const auto& s : clients[0].train) {
            CHECK(max_abs_diff(amplitude_mix(s.image, Tensor(s.image.shape(), 5.0), 0.0), s.image) < 1e-9);
        }
    }
    SUBCASE("errors") {
        const Tensor img(Shape{1, 4, 4}, 1.0);
        CHECK_THROWS(amplitude_mix(img, Tensor(Shape{1, 4, 4}), 1.5));
        CHECK_THROWS(amplitude_mix(img, Tensor(Shape{1, 4, 5}), 0.5));
    }
}

TEST_CASE("strategy degeneracies are bitwise") {
    const TinyBackbone model;
    const auto& clients = small_split().clients;
    const RunResult fedavg = run_rounds(model, clients, small_fed());

    FedConfig prox = small_fed(Strategy::fedprox);
    prox.mu = 0.0;
    CHECK(same(run_rounds(model, clients, prox).server.global, fedavg.server.global));

    FedConfig rsc = small_fed(Strategy::rsc);
    rsc.rsc_trigger_prob = 0.0;
    CHECK(same(run_rounds(model, clients, rsc).server.global, fedavg.server.global));

    FedConfig one = small_fed();
    one.rounds = 1;
    FedConfig scaffold = small_fed(Strategy::scaffold);
    scaffold.rounds = 1;
    CHECK(same(run_rounds(model, clients, scaffold).server.global, run_rounds(model, clients, one).server.global));

    FedConfig active = small_fed(Strategy::rsc);
    active.rsc_trigger_prob = 1.0;
    CHECK_FALSE(same(run_rounds(model, clients, active).server.global, fedavg.server.global));
    FedConfig am = small_fed(Strategy::am);
    CHECK_FALSE(same(run_rounds(model, clients, am).server.global, fedavg.server.global));
}

TEST_CASE("local training") {
    const TinyBackbone model;
    const auto& clients = small_split().clients;
    const ParamSet global = model.init(9);

    SUBCASE("zero epochs return the global model") {
        FedConfig f = small_fed();
        f.local_epochs = 0;
        ClientState c{0, &clients[0], {}, {}};
        const LocalResult r = local_train(model, c, global, nullptr, f, 1);
        CHECK(r.ok);
        CHECK(r.steps == 0);
        CHECK(same(r.params, global));
    }
    SUBCASE("a strong proximal term limits drift") {
        FedConfig f = small_fed(Strategy::fedprox);
        f.local_epochs = 5;
        f.mu = 0.0;
        ClientState a{0, &clients[0], {}, {}}, b{0, &clients[0], {}, {}};
        const LocalResult free = local_train(model, a, global, nullptr, f, 1);
        f.mu = 1e4;
        const LocalResult held = local_train(model, b, global, nullptr, f, 1);
        CHECK(free.steps == 15);
        CHECK(distance(held.params, global) < 0.5 * distance(free.params, global));
    }
    SUBCASE("steps and loss") {
        FedConfig f = small_fed();
        ClientState c{0, &clients[0], {}, {}};
        const LocalResult r = local_train(model, c, global, nullptr, f, 1);
        CHECK(r.ok);
        CHECK(r.n_samples == 12);
        CHECK(r.steps == 6);  // 2 epochs of ceil(12 / 5) batches
        CHECK(r.mean_loss > 0.0);
    }
    SUBCASE("amplitude mixing needs foreign banks") {
        ClientState c{0, &clients[0], {}, {}};
        CHECK_THROWS(local_train(model, c, global, nullptr, small_fed(Strategy::am), 1));
        CHECK_THROWS(local_train(model, c, global, nullptr, small_fed(Strategy::scaffold), 1));
    }
}

TEST_CASE("rounds") {
    const TinyBackbone model;
    const auto& clients = small_split().clients;

    SUBCASE("zero rounds keep the initial model") {
        FedConfig f = small_fed();
        f.rounds = 0;
        const ParamSet init = model.init(77);
        CHECK(same(run_rounds(model, clients, f, init).server.global, init));
    }
    SUBCASE("serial and concurrent clients agree bitwise") {
        for (Strategy s : {Strategy::fedavg, Strategy::scaffold, Strategy::am}) {
            FedConfig f = small_fed(s);
            const RunResult serial = run_rounds(model, clients, f);
            f.concurrent_clients = true;
            const RunResult parallel = run_rounds(model, clients, f);
            CHECK(same(serial.server.global, parallel.server.global));
            CHECK(same(serial.server.control, parallel.server.control));
        }
    }
    SUBCASE("checkpoints and round log") {
        const auto dir = testutil::scratch_dir("fed_checkpoints");
        FedConfig f = small_fed(Strategy::scaffold);
        f.checkpoint_dir = dir;
        const RunResult r = run_rounds(model, clients, f);
        CHECK(std::filesystem::exists(dir / "round_1.ccn1"));
        CHECK(std::filesystem::exists(dir / "round_2.control.ccn1"));
        CHECK(same(load_params(dir / "round_2.ccn1"), r.server.global));
        CHECK(same(load_params(dir / "round_2.control.ccn1"), r.server.control));
        REQUIRE(r.log.rows.size() == 6);
        std::ifstream csv(dir / "roundlog.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "round,client_id,n_samples,mean_loss,checksum,strategy,weight,ok,wall_seconds");
        int lines = 0;
        for (std::string line; std::getline(csv, line);) ++lines;
        CHECK(lines == 6);
        double weights = 0.0;
        for (const auto& row : r.log.rows) {
            if (row.round == 2) weights += row.weight;
            CHECK(row.checksum == (row.round == 2 ? checksum(r.server.global) : r.log.rows[0].checksum));
        }
        CHECK(std::abs(weights - 1.0) < 1e-12);
        CHECK(std::isfinite(r.log.round_loss(1)));
        CHECK_THROWS(r.log.round_loss(3));
    }
    SUBCASE("a failing client is skipped, all failing aborts") {
        const TinyBackbone flaky(clients[1].domain_id);
        const RunResult r = run_rounds(flaky, clients, small_fed());
        int failed = 0;
        for (const auto& row : r.log.rows) {
            if (!row.ok) {
                ++failed;
                CHECK(row.client_id == 1);
                CHECK(row.weight == 0.0);
            }
        }
        CHECK(failed == 2);
        const std::vector<ClientShard> only{clients[1]};
        CHECK_THROWS_AS(run_rounds(flaky, only, small_fed()), RoundFailure);
    }
    SUBCASE("bad configurations") {
        FedConfig f = small_fed();
        f.batch_size = 0;
        CHECK_THROWS_AS(run_rounds(model, clients, f), std::invalid_argument);
        const std::vector<ClientShard> one{clients[0]};
        CHECK_THROWS_AS(run_rounds(model, one, small_fed(Strategy::am)), std::invalid_argument);
        CHECK_THROWS(parse_strategy("fedsgd"));
        for (Strategy s : {Strategy::fedavg, Strategy::am, Strategy::fedprox, Strategy::rsc, Strategy::scaffold}) {
            CHECK(parse_strategy(strategy_name(s)) == s);
        }
    }
}

TEST_CASE("exchange frames") {
    const ParamSet p = TinyBackbone().init(1);
    const std::vector<ExchangeFrame> frames{params_frame(FrameKind::params, p, 1, kServerId, 0),
                                            count_frame(12, 1, 0, kServerId)};
    const auto bytes = encode_frames(frames);
    const auto back = decode_frames(bytes);
    REQUIRE(back.size() == 2);
    CHECK(back[0].kind == FrameKind::params);
    CHECK(back[0].sender == kServerId);
    CHECK(same(deserialize(back[0].payload), p));
    CHECK(frame_count(back[1]) == 12);
    CHECK_THROWS(frame_count(back[0]));
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS(decode_frames(truncated));

    const auto dir = testutil::scratch_dir("frames");
    dump_frames(dir / "x.bin", frames);
    CHECK(encode_frames(load_frames(dir / "x.bin")) == bytes);
}

TEST_CASE("privacy audit") {
    const TinyBackbone model;
    const auto& clients = small_split().clients;
    std::vector<const Sample*> secrets;
    for (const auto& c : clients) {
        for (const auto& s : c.train) secrets.push_back(&s);
    }
    for (Strategy s : {Strategy::fedavg, Strategy::am, Strategy::fedprox, Strategy::rsc, Strategy::scaffold}) {
        FedConfig f = small_fed(s);
        f.rounds = 1;
        f.record_exchange = true;
        const RunResult r = run_rounds(model, clients, f);
        const AuditReport a = audit_exchange(r.exchange, secrets);
        CHECK(a.frames == r.exchange.size());
        CHECK(a.clean());
        for (const auto& v : a.violations) MESSAGE(v);
    }

    FedConfig f = small_fed();
    f.rounds = 1;
    f.record_exchange = true;
    std::vector<ExchangeFrame> frames = run_rounds(model, clients, f).exchange;
    SUBCASE("raw pixels hidden in a parameter frame") {
        ParamSet leak = TinyBackbone().init(2);
        const Sample& s = clients[2].train[5];
        for (Index i = 0; i < 40; ++i) leak["fc1.w"][100 + i] = s.image[300 + i];
        frames.push_back(params_frame(FrameKind::params, leak, 1, 2, kServerId));
        const AuditReport a = audit_exchange(frames, secrets);
        CHECK_FALSE(a.clean());
    }
    SUBCASE("client-to-client and unknown frames") {
        frames.push_back(count_frame(3, 1, 0, 1));
        ExchangeFrame odd = count_frame(3, 1, 0, kServerId);
        odd.kind = static_cast<FrameKind>(9);
        frames.push_back(odd);
        ExchangeFrame junk = count_frame(3, 1, 0, kServerId);
        junk.kind = FrameKind::params;
        frames.push_back(junk);
        CHECK(audit_exchange(frames, secrets).violations.size() == 3);
    }
}
