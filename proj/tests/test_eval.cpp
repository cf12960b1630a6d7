#include "ccnet/eval.hpp"
#include "ccnet/run_config.hpp"
#include "test_util.hpp"
#include "tiny_backbone.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

using namespace ccnet;

namespace {

// Fixed per-sample probabilities, no parameters of its own.
class LookupBackbone final : public Backbone {
public:
    explicit LookupBackbone(std::function<Tensor(const Sample&)> probs) : probs_(std::move(probs)) {}
    std::string name() const override { return "lookup"; }
    ParamSet init(std::uint64_t) const override {
        ParamSet p;
        p.add("unused", Tensor(Shape{1}, 0.0));
        return p;
    }
    BackboneOutput forward(Tape& tape, const ParamVars&, const Batch& batch, const Tensor*) const override {
        const Index b = static_cast<Index>(batch.samples.size());
        Tensor out(Shape{b, 4});
        for (Index i = 0; i < b; ++i) out.data().segment(i * 4, 4) = probs_(*batch.samples[static_cast<std::size_t>(i)]).data();
        return {tape.constant(out), tape.constant(out)};
    }
    Index feature_units() const override { return 4; }

private:
    std::function<Tensor(const Sample&)> probs_;
};

Tensor one_hot(int k) {
    Tensor t(Shape{4}, 0.0);
    t[k] = 1.0;
    return t;
}

}  // namespace

TEST_CASE("evaluation") {
    const DatasetConfig dc{21, 250, 32};
    const Dataset ds = generate_dataset(dc);
    std::vector<Sample> all;
    for (const auto& d : ds.domains) all.insert(all.end(), d.begin(), d.end());
    REQUIRE(all.size() == 1000);

    const LookupBackbone oracle([&](const Sample& s) { return one_hot(oracle_classify(dataset_scene(dc, s.domain, s.index))); });
    const ParamSet none = oracle.init(0);
    const EvalResult exact = evaluate(oracle, none, all);
    CHECK(exact.accuracy() == 1.0);
    CHECK(exact.predictions.size() == 1000);

    const LookupBackbone uniform([](const Sample&) { return Tensor(Shape{4}, 0.25); });
    std::size_t zeros = 0;
    for (const auto& s : all) zeros += s.label == 0;
    CHECK(evaluate(uniform, none, all, 7).accuracy() == static_cast<double>(zeros) / 1000.0);

    std::vector<int> labels;
    for (const auto& s : all) labels.push_back(s.label);
    Rng rng(5);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<Sample> shuffled = all;
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].label = labels[i];
    CHECK(std::abs(evaluate(oracle, none, shuffled).accuracy() - 0.25) <= 0.05);

    CHECK_THROWS_AS(evaluate(oracle, none, std::span<const Sample>()), std::invalid_argument);
    CHECK(argmax_class(Tensor(Shape{1, 4}, {0.1, 0.4, 0.4, 0.1}), 0) == 1);
}

TEST_CASE("lodo report arithmetic") {
    LodoReport r;
    const double acc[4] = {0.5, 0.75, 0.25, 1.0};
    for (int d = 0; d < 4; ++d) r.entries.push_back({"ccnet", "fedavg", 1, d, acc[d], 0, 0, 0, 100, 0});
    for (int d = 3; d >= 0; --d) r.entries.push_back({"ccnet", "fedavg", 2, d, acc[d] / 2, 0, 0, 0, 100, 0});
    CHECK(r.average("ccnet", "fedavg", 1) == (0.5 + 0.75 + 0.25 + 1.0) / 4);
    CHECK(r.average("ccnet", "fedavg", 2) == (0.25 + 0.375 + 0.125 + 0.5) / 4);
    CHECK(r.average("ccnet", "fedavg") == (0.625 + 0.3125) / 2);
    CHECK(r.seeds("ccnet", "fedavg") == std::vector<std::uint64_t>{1, 2});
    CHECK_THROWS(r.average("cnn", "fedavg"));

    LodoReport reversed;
    reversed.entries.assign(r.entries.rbegin(), r.entries.rend());
    CHECK(reversed.table() == r.table());
    CHECK(r.table().find("fedavg + ccnet") != std::string::npos);

    const auto dir = testutil::scratch_dir("lodo_csv");
    r.write_csv(dir / "lodo.csv");
    std::ifstream in(dir / "lodo.csv");
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 9);
}

TEST_CASE("lodo runs are independent of held-out order") {
    const Dataset ds = generate_dataset({4, 40, 32});
    const testutil::TinyBackbone model;
    LodoRun run{&model, {}, 0.1};
    run.fed.rounds = 1;
    run.fed.local_epochs = 1;
    run.fed.batch_size = 16;
    const std::vector<std::uint64_t> seeds{1};
    const std::vector<int> forward{0, 1, 2, 3}, backward{3, 2, 1, 0};
    const LodoReport a = run_lodo(ds, run, seeds, forward);
    const LodoReport b = run_lodo(ds, run, seeds, backward);
    REQUIRE(a.entries.size() == 4);
    for (const auto& e : a.entries) {
        const auto& f = b.entries[static_cast<std::size_t>(3 - e.held_out)];
        CHECK(f.held_out == e.held_out);
        CHECK(f.accuracy == e.accuracy);
        CHECK(f.last_round_loss == e.last_round_loss);
        CHECK(e.accuracy >= 0.0);
        CHECK(e.accuracy <= 1.0);
    }
    CHECK(a.average("tiny", "fedavg") == b.average("tiny", "fedavg"));
}

TEST_CASE("island clustering") {
    SUBCASE("distinct embeddings are singletons near tau 1") {
        const Tensor e = testutil::random_tensor(Shape{16, 8}, 3);
        const auto ids = cluster_columns(e, 4, 0.999999);
        CHECK(std::set<int>(ids.begin(), ids.end()).size() == 16);
        for (int i = 0; i < 16; ++i) CHECK(ids[static_cast<std::size_t>(i)] == i);
    }
    SUBCASE("equal embeddings form one island") {
        Tensor e(Shape{16, 8});
        const Tensor row = testutil::random_tensor(Shape{8}, 4);
        for (Index i = 0; i < 16; ++i) e.data().segment(i * 8, 8) = row.data() * static_cast<double>(i + 1);
        const auto ids = cluster_columns(e, 4, 0.9);
        CHECK(std::set<int>(ids.begin(), ids.end()) == std::set<int>{0});
    }
    SUBCASE("only 4-adjacent columns join") {
        // Columns 0 and 5 are diagonal neighbours; everything else orthogonal.
        Tensor e(Shape{16, 16}, 0.0);
        for (Index i = 0; i < 16; ++i) e[i * 16 + i] = 1.0;
        e[5 * 16 + 0] = 1.0;
        e[5 * 16 + 5] = 0.0;
        const auto apart = cluster_columns(e, 4, 0.5);
        CHECK(std::set<int>(apart.begin(), apart.end()).size() == 16);
        e[1 * 16 + 0] = 1.0;
        e[1 * 16 + 1] = 0.0;
        const auto ids = cluster_columns(e, 4, 0.5);
        CHECK(ids[0] == ids[1]);
        CHECK(ids[1] == ids[5]);
    }
    SUBCASE("cluster count never drops as tau rises") {
        const Tensor base = testutil::random_tensor(Shape{64, 6}, 5);
        Tensor e = base;
        for (Index i = 0; i < 64; ++i) e.data().segment(i * 6, 6) += 2.0 * base.data().head(6);  // correlated columns
        int previous = 0;
        for (double tau = 0.05; tau < 1.0; tau += 0.05) {
            const auto ids = cluster_columns(e, 8, tau);
            const int n = static_cast<int>(std::set<int>(ids.begin(), ids.end()).size());
            CHECK(n >= previous);
            previous = n;
        }
        CHECK(previous > 1);
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS(cluster_columns(Tensor(Shape{16, 2}, 1.0), 4, 1.0));
        CHECK_THROWS(cluster_columns(Tensor(Shape{16, 2}, 1.0), 4, 0.0));
        CHECK_THROWS(cluster_columns(Tensor(Shape{15, 2}, 1.0), 4, 0.5));
    }
}

TEST_CASE("islands of a constant image and their export") {
    CCNetConfig c;
    c.dim = 8;
    const CCNetBackbone net(c, PriorMode::zero);
    const ParamSet p = net.init(6);
    Sample s;
    s.image = Tensor(Shape{3, 32, 32}, 0.6);
    const IslandsMap map = islands(ccnet_state(net, p, s), 0.9);
    REQUIRE(map.clusters.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(map.count(l) == 1);

    const auto dir = testutil::scratch_dir("islands");
    const auto files = export_islands(map, s.image, dir, 4);
    REQUIRE(files.size() == 5);
    CHECK(files.front().filename() == "input.ppm");
    CHECK(files[3].filename() == "level_3.ppm");
    std::ifstream ppm(dir / "level_1.ppm", std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    ppm >> magic >> w >> h >> maxval;
    CHECK(magic == "P6");
    CHECK(w == 16);
    CHECK(h == 16);
    CHECK(maxval == 255);
    CHECK(std::filesystem::file_size(dir / "input.ppm") == std::string("P6\n32 32\n255\n").size() + 32 * 32 * 3);
    const auto json = nlohmann::json::parse(std::ifstream(dir / "islands.json"));
    CHECK(json["levels"].size() == 3);
    CHECK(json["levels"][2]["cluster_ids"].size() == 16);
    CHECK(palette_color(0) == palette_color(0));
    CHECK(palette_color(0) != palette_color(1));
}

TEST_CASE("config files") {
    RunConfig c;
    CHECK(c.ccnet.dim == 32);
    apply_setting(c, "strategy", "scaffold");
    apply_setting(c, "heads", "2");
    apply_setting(c, "lr", "0.0005");
    apply_setting(c, "cnn_conv", "4,8,16");
    apply_setting(c, "bias", "false");
    std::istringstream text(format_config(c));
    const RunConfig back = parse_config(text);
    CHECK(format_config(back) == format_config(c));
    CHECK(back.fed.strategy == Strategy::scaffold);
    CHECK(back.fed.lion.lr == 0.0005);
    CHECK(back.cnn.conv[2] == 16);

    std::istringstream comments("# desk run\n\ndim = 16   # smaller\nrounds=3\n");
    const RunConfig small = parse_config(comments);
    CHECK(small.ccnet.dim == 16);
    CHECK(small.fed.rounds == 3);

    auto error_of = [](const std::string& s) {
        std::istringstream in(s);
        try {
            parse_config(in);
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(error_of("dim=8\nwidth=3\n").find("line 2") != std::string::npos);
    CHECK(error_of("dim=eight\n").find("not an integer") != std::string::npos);
    CHECK(error_of("dim\n").find("key=value") != std::string::npos);
    CHECK_FALSE(error_of("grid=5\n").empty());
    CHECK_FALSE(error_of("strategy=fedsgd\n").empty());
    CHECK(config_keys().size() >= 40);
}

TEST_CASE("backbone factory and manifest") {
    const RunConfig c;
    const auto ccnet = make_backbone(c, "ccnet");
    const auto cnn = make_backbone(c, "cnn");
    const Index a = ccnet->init(0).parameter_count(), b = cnn->init(0).parameter_count();
    CHECK(a <= b);
    CHECK(static_cast<double>(b - a) / static_cast<double>(a) <= 0.25);
    CHECK_THROWS(make_backbone(c, "vit"));

    const auto dir = testutil::scratch_dir("manifest");
    Manifest m;
    m.command = "train";
    m.arguments = {"--heldout", "2"};
    m.seeds = {1, 2};
    m.dataset_checksum = 0xabcdef;
    m.outputs["final"] = "final.ccn1";
    write_manifest(dir / "m.json", m);
    const auto j = nlohmann::json::parse(std::ifstream(dir / "m.json"));
    CHECK(j["command"] == "train");
    CHECK(j["version"] == version_string());
    CHECK(j["dataset_checksum"] == hex(0xabcdef));
    CHECK(j["config"]["dim"] == "32");
    CHECK(j["config"].size() == config_keys().size());
    CHECK(j["seeds"].size() == 2);
    // The stored config reproduces the run's config.
    std::string text;
    for (const auto& [key, value] : j["config"].items()) text += key + "=" + value.get<std::string>() + "\n";
    std::istringstream in(text);
    CHECK(format_config(parse_config(in)) == format_config(m.config));
}

TEST_CASE("the cnn baseline learns the task in-domain") {
    // Centralized training on all four domains, validation on unseen scenes
    // from the same domains.
    const RunConfig config;
    const auto cnn = make_backbone(config, "cnn");
    const Dataset ds = generate_dataset({8, 500, 32});
    ClientShard pooled{0, {}, {}};
    std::vector<Sample> validation;
    for (const auto& d : ds.domains) {
        pooled.train.insert(pooled.train.end(), d.begin(), d.begin() + 400);
        validation.insert(validation.end(), d.begin() + 400, d.end());
    }
    FedConfig f = config.fed;
    f.rounds = 1;
    f.local_epochs = 20;
    f.seed = 1;
    const std::vector<ClientShard> one{pooled};
    const RunResult r = run_rounds(*cnn, one, f);
    const double acc = evaluate(*cnn, r.server.global, validation).accuracy();
    MESSAGE("in-domain validation accuracy " << acc);
    CHECK(acc >= 0.95);
}
