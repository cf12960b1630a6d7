#include "ccnet/eval.hpp"
#include "ccnet/optim.hpp"
#include "ccnet/run_config.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ccnet;

namespace {

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig() : load_config(path); }

Dataset obtain_dataset(const RunConfig& config, const std::string& data_dir) {
    if (!data_dir.empty()) return read_dataset(data_dir);
    return generate_dataset(config.data);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_gen_data(std::uint64_t seed, int per_domain, int image_size, const std::string& out, const std::vector<std::string>& args) {
    DatasetConfig dc{seed, per_domain, image_size};
    const Dataset ds = generate_dataset(dc);
    write_dataset(ds, out);
    Manifest m;
    m.command = "gen-data";
    m.arguments = args;
    m.config.data = dc;
    m.seeds = {seed};
    m.dataset_checksum = dataset_checksum(ds);
    m.outputs["dataset"] = out;
    write_manifest(std::filesystem::path(out) / "run_manifest.json", m);
    std::printf("wrote %d samples (%d domains x %d) to %s, checksum %s\n", kDomains * per_domain, kDomains, per_domain,
                out.c_str(), hex(m.dataset_checksum).c_str());
    return 0;
}

int cmd_train(RunConfig config, const std::string& strategy, const std::string& backbone, int held_out,
              const std::string& data_dir, const std::string& out, bool dump_exchange, const std::vector<std::string>& args) {
    if (!strategy.empty()) config.fed.strategy = parse_strategy(strategy);
    const std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    const Dataset ds = obtain_dataset(config, data_dir);
    const auto model = make_backbone(config, backbone);
    const LodoSplit split = build_lodo_split(ds, held_out, config.val_fraction, config.data.seed);

    FedConfig fed = config.fed;
    fed.seed = config.data.seed;
    fed.checkpoint_dir = dir / "checkpoints";
    fed.record_exchange = dump_exchange;
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult run = run_rounds(*model, split.clients, fed);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_params(dir / "final.ccn1", run.server.global);
    run.log.write_csv(dir / "roundlog.csv");
    const double accuracy = evaluate(*model, run.server.global, split.test).accuracy();
    {
        std::ofstream metrics(dir / "metrics.csv");
        metrics << "backbone,strategy,held_out,accuracy,parameters,seconds\n"
                << model->name() << ',' << strategy_name(fed.strategy) << ',' << held_out << ',' << accuracy << ','
                << run.server.global.parameter_count() << ',' << seconds << '\n';
    }
    Manifest m;
    m.command = "train";
    m.arguments = args;
    m.config = config;
    m.seeds = {config.data.seed};
    m.dataset_checksum = dataset_checksum(ds);
    m.outputs = {{"final", "final.ccn1"}, {"roundlog", "roundlog.csv"}, {"metrics", "metrics.csv"},
                 {"checkpoints", "checkpoints/"}};
    if (dump_exchange) {
        dump_frames(dir / "exchange.bin", run.exchange);
        std::vector<const Sample*> private_samples;
        for (const auto& c : split.clients) {
            for (const auto& s : c.train) private_samples.push_back(&s);
        }
        const AuditReport audit = audit_exchange(run.exchange, private_samples);
        std::printf("exchange: %zu frames, %zu bytes, %s\n", audit.frames, audit.bytes,
                    audit.clean() ? "audit clean" : "AUDIT VIOLATIONS");
        for (const auto& v : audit.violations) std::printf("  %s\n", v.c_str());
        m.outputs["exchange"] = "exchange.bin";
    }
    write_manifest(dir / "run_manifest.json", m);
    std::printf("%s + %s, held-out domain %d: accuracy %.4f (%lld parameters, %.1f s)\n", strategy_name(fed.strategy),
                model->name().c_str(), held_out, accuracy, static_cast<long long>(run.server.global.parameter_count()),
                seconds);
    return 0;
}

int cmd_lodo(const RunConfig& config, const std::string& strategies, const std::string& backbones,
             const std::string& seeds_text, const std::string& held_text, const std::string& data_dir,
             const std::string& out, const std::vector<std::string>& args) {
    const std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    const Dataset ds = obtain_dataset(config, data_dir);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_text)) seeds.push_back(std::stoull(s));
    std::vector<int> held;
    for (const auto& s : split_list(held_text)) held.push_back(std::stoi(s));

    LodoReport report;
    for (const auto& b : split_list(backbones)) {
        const auto model = make_backbone(config, b);
        for (const auto& s : split_list(strategies)) {
            LodoRun run{model.get(), config.fed, config.val_fraction};
            run.fed.strategy = parse_strategy(s);
            const LodoReport part = run_lodo(ds, run, seeds, held, [&](const LodoEntry& e, const ParamSet& params) {
                save_params(dir / (e.backbone + "_" + e.strategy + "_s" + std::to_string(e.seed) + "_d" +
                                   std::to_string(e.held_out) + ".ccn1"),
                            params);
                std::printf("%-8s %-6s seed %llu held-out %d: %.4f (%.1f s)\n", e.strategy.c_str(), e.backbone.c_str(),
                            static_cast<unsigned long long>(e.seed), e.held_out, e.accuracy, e.seconds);
                std::fflush(stdout);
            });
            report.entries.insert(report.entries.end(), part.entries.begin(), part.entries.end());
        }
    }
    report.write_csv(dir / "lodo.csv");
    const std::string table = report.table();
    std::ofstream(dir / "lodo_table.txt") << table;
    std::printf("\n%s", table.c_str());

    Manifest m;
    m.command = "lodo";
    m.arguments = args;
    m.config = config;
    m.seeds = seeds;
    m.dataset_checksum = dataset_checksum(ds);
    m.outputs = {{"csv", "lodo.csv"}, {"table", "lodo_table.txt"}, {"checkpoints", "<backbone>_<strategy>_s<seed>_d<held-out>.ccn1"}};
    write_manifest(dir / "run_manifest.json", m);
    return 0;
}

int cmd_islands(const RunConfig& config, const std::string& checkpoint, int domain, int index, double tau,
                const std::string& data_dir, const std::string& out, const std::vector<std::string>& args) {
    const Dataset ds = obtain_dataset(config, data_dir);
    if (domain < 0 || domain >= kDomains) throw std::invalid_argument("--domain must be in [0, 3]");
    const auto& samples = ds.domains[static_cast<std::size_t>(domain)];
    if (index < 0 || index >= static_cast<int>(samples.size())) {
        throw std::invalid_argument("--sample must be in [0, " + std::to_string(samples.size()) + ")");
    }
    const CCNetBackbone model(config.ccnet, config.prior, config.mask_corruption, config.data.seed);
    const ParamSet params = load_params(checkpoint);
    const Sample& sample = samples[static_cast<std::size_t>(index)];
    const IslandsMap map = islands(ccnet_state(model, params, sample), tau);
    const auto files = export_islands(map, sample.image, out);

    Manifest m;
    m.command = "islands";
    m.arguments = args;
    m.config = config;
    m.config.tau = tau;
    m.seeds = {config.data.seed};
    m.dataset_checksum = dataset_checksum(ds);
    for (const auto& f : files) m.outputs[f.filename().string()] = f.string();
    write_manifest(std::filesystem::path(out) / "run_manifest.json", m);
    std::printf("domain %d sample %d (class %d), tau %.3f:", domain, index, sample.label, tau);
    for (std::size_t l = 0; l < map.clusters.size(); ++l) std::printf(" level %zu: %d clusters;", l + 1, map.count(l));
    std::printf("\n");
    return 0;
}

int cmd_grad_check(const RunConfig& config, double eps, double tolerance, int batch) {
    const CCNetBackbone model(config.ccnet, config.prior, config.mask_corruption, config.data.seed);
    std::vector<Sample> samples;
    for (int i = 0; i < batch; ++i) {
        const int domain = i % kDomains;
        const SceneSpec scene = dataset_scene(config.data, domain, i);
        Rng rng(mix_seed({config.data.seed, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(i), 1}));
        samples.push_back(render(scene, domain_style(domain), rng, config.data.image_size));
        samples.back().index = i;
    }
    std::vector<const Sample*> pointers;
    for (const auto& s : samples) pointers.push_back(&s);
    const Batch b = make_batch(pointers);
    const ParamSet params = model.init(config.data.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckResult r = grad_check(
        [&](Tape& tape, const ParamVars& vars) { return nll(model.forward(tape, vars, b).probs, b.labels); },
        params, eps);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = r.max_rel_error < tolerance;
    std::printf("grad-check: %lld coordinates, max relative error %.3e at %s[%lld], %.2f s: %s\n",
                static_cast<long long>(r.coordinates), r.max_rel_error, r.worst_param.c_str(),
                static_cast<long long>(r.worst_index), seconds, ok ? "ok" : "FAILED");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Column networks with part-whole priors under federated domain generalization"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);
    const std::vector<std::string> args(argv + 1, argv + argc);

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic 4-domain dataset");
    std::uint64_t gen_seed = 0;
    int per_domain = 400, image_size = 32;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "Dataset seed");
    gen->add_option("--per-domain", per_domain, "Samples per domain")->check(CLI::PositiveNumber);
    gen->add_option("--image-size", image_size, "Image side in pixels")->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "Output directory")->required();

    std::string config_path, data_dir, out, strategy, backbone = "ccnet";
    int held_out = 0;
    bool dump_exchange = false;
    auto* train = app.add_subcommand("train", "Federated training with one held-out domain");
    train->add_option("--config", config_path, "Config file (key=value)");
    train->add_option("--strategy", strategy, "fedavg, am, fedprox, rsc or scaffold (overrides the config)");
    train->add_option("--backbone", backbone, "ccnet or cnn")->check(CLI::IsMember({"ccnet", "cnn"}));
    train->add_option("--heldout", held_out, "Held-out domain")->check(CLI::Range(0, kDomains - 1));
    train->add_option("--data", data_dir, "Dataset directory (default: generate from the config)");
    train->add_option("--out", out, "Output directory")->required();
    train->add_flag("--dump-exchange", dump_exchange, "Record client/server frames to exchange.bin and audit them");

    std::string strategies = "fedavg", backbones = "ccnet,cnn", seeds = "1,2,3", held_list = "0,1,2,3";
    auto* lodo = app.add_subcommand("lodo", "Leave-one-domain-out table over strategies, backbones and seeds");
    lodo->add_option("--config", config_path, "Config file (key=value)");
    lodo->add_option("--strategies", strategies, "Comma-separated strategies");
    lodo->add_option("--backbones", backbones, "Comma-separated backbones");
    lodo->add_option("--seeds", seeds, "Comma-separated seeds");
    lodo->add_option("--heldout", held_list, "Comma-separated held-out domains");
    lodo->add_option("--data", data_dir, "Dataset directory (default: generate from the config)");
    lodo->add_option("--out", out, "Output directory")->required();

    std::string checkpoint;
    int sample = 0, domain = 0;
    double tau = 0.9;
    auto* isl = app.add_subcommand("islands", "Export islands of agreement for one sample");
    isl->add_option("--config", config_path, "Config file the checkpoint was trained with");
    isl->add_option("--checkpoint", checkpoint, "CCN1 parameter file")->required()->check(CLI::ExistingFile);
    isl->add_option("--domain", domain, "Domain of the sample")->check(CLI::Range(0, kDomains - 1));
    isl->add_option("--sample", sample, "Sample index within the domain");
    isl->add_option("--tau", tau, "Cosine similarity threshold")->check(CLI::Range(0.0, 1.0));
    isl->add_option("--data", data_dir, "Dataset directory (default: generate from the config)");
    isl->add_option("--out", out, "Output directory")->required();

    double eps = 1e-5, tolerance = 1e-4;
    int gc_batch = 2;
    auto* gc = app.add_subcommand("grad-check", "Central-difference check of the full CCNet loss");
    gc->add_option("--config", config_path, "Config file (key=value)");
    gc->add_option("--eps", eps, "Finite-difference step");
    gc->add_option("--tolerance", tolerance, "Maximum accepted relative error");
    gc->add_option("--batch", gc_batch, "Samples in the probe batch")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_gen_data(gen_seed, per_domain, image_size, gen_out, args);
        if (*train) return cmd_train(config_or_default(config_path), strategy, backbone, held_out, data_dir, out, dump_exchange, args);
        if (*lodo) return cmd_lodo(config_or_default(config_path), strategies, backbones, seeds, held_list, data_dir, out, args);
        if (*isl) return cmd_islands(config_or_default(config_path), checkpoint, domain, sample, tau, data_dir, out, args);
        if (*gc) return cmd_grad_check(config_or_default(config_path), eps, tolerance, gc_batch);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
