#include "ccnet/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ccnet {

int argmax_class(const Tensor& probs, Index row) {
    const Index c = probs.dim(1);
    int best = 0;
    for (Index k = 1; k < c; ++k) {
        if (probs[row * c + k] > probs[row * c + best]) best = static_cast<int>(k);
    }
    return best;
}

EvalResult evaluate(const Backbone& model, const ParamSet& params, std::span<const Sample> samples, int batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty test set");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
    EvalResult result;
    result.total = samples.size();
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Sample*> batch_samples;
        for (std::size_t i = start; i < end; ++i) batch_samples.push_back(&samples[i]);
        const Batch batch = make_batch(batch_samples);
        Tape tape;
        ParamVars vars(tape, params, false);
        const Tensor& probs = model.forward(tape, vars, batch).probs.value();
        for (std::size_t i = 0; i < batch_samples.size(); ++i) {
            const int predicted = argmax_class(probs, static_cast<Index>(i));
            result.predictions.push_back(predicted);
            if (predicted == batch_samples[i]->label) ++result.correct;
        }
    }
    return result;
}

// ---------------------------------------------------------------- lodo

double LodoReport::average(const std::string& backbone, const std::string& strategy, std::uint64_t seed) const {
    std::map<int, double> per_domain;
    for (const auto& e : entries) {
        if (e.backbone == backbone && e.strategy == strategy && e.seed == seed) per_domain[e.held_out] = e.accuracy;
    }
    if (per_domain.empty()) throw std::out_of_range("no lodo entries for " + backbone + "/" + strategy);
    double sum = 0.0;
    for (const auto& [d, acc] : per_domain) sum += acc;
    return sum / static_cast<double>(per_domain.size());
}

std::vector<std::uint64_t> LodoReport::seeds(const std::string& backbone, const std::string& strategy) const {
    std::set<std::uint64_t> s;
    for (const auto& e : entries) {
        if (e.backbone == backbone && e.strategy == strategy) s.insert(e.seed);
    }
    return {s.begin(), s.end()};
}

double LodoReport::average(const std::string& backbone, const std::string& strategy) const {
    const auto list = seeds(backbone, strategy);
    if (list.empty()) throw std::out_of_range("no lodo entries for " + backbone + "/" + strategy);
    double sum = 0.0;
    for (auto s : list) sum += average(backbone, strategy, s);
    return sum / static_cast<double>(list.size());
}

void LodoReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "backbone,strategy,seed,held_out,accuracy,val_accuracy,first_round_loss,last_round_loss,parameters,seconds\n";
    out.precision(17);
    for (const auto& e : entries) {
        out << e.backbone << ',' << e.strategy << ',' << e.seed << ',' << e.held_out << ',' << e.accuracy << ','
            << e.val_accuracy << ',' << e.first_round_loss << ',' << e.last_round_loss << ',' << e.parameters << ','
            << e.seconds << '\n';
    }
}

std::string LodoReport::table() const {
    std::vector<std::pair<std::string, std::string>> rows;
    std::set<int> domains;
    for (const auto& e : entries) {
        const std::pair<std::string, std::string> key{e.strategy, e.backbone};
        if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
        domains.insert(e.held_out);
    }
    std::ostringstream out;
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-22s", "method");
    out << cell;
    for (int d : domains) {
        std::snprintf(cell, sizeof cell, "%9s", ("D" + std::to_string(d)).c_str());
        out << cell;
    }
    out << "      avg   params\n";
    for (const auto& [strategy, backbone] : rows) {
        std::snprintf(cell, sizeof cell, "%-22s", (strategy + " + " + backbone).c_str());
        out << cell;
        Index params = 0;
        for (int d : domains) {
            double sum = 0.0;
            int n = 0;
            for (const auto& e : entries) {
                if (e.backbone == backbone && e.strategy == strategy && e.held_out == d) {
                    sum += e.accuracy;
                    ++n;
                    params = e.parameters;
                }
            }
            if (n) std::snprintf(cell, sizeof cell, "%9.2f", 100.0 * sum / n);
            else std::snprintf(cell, sizeof cell, "%9s", "-");
            out << cell;
        }
        std::snprintf(cell, sizeof cell, "%9.2f %8lld\n", 100.0 * average(backbone, strategy),
                      static_cast<long long>(params));
        out << cell;
    }
    return out.str();
}

LodoReport run_lodo(const Dataset& dataset, const LodoRun& run, std::span<const std::uint64_t> seeds,
                    std::span<const int> held_out, const LodoProgress& progress) {
    if (!run.model) throw std::invalid_argument("run_lodo: no backbone");
    LodoReport report;
    for (std::uint64_t seed : seeds) {
        for (int d : held_out) {
            const auto t0 = std::chrono::steady_clock::now();
            const LodoSplit split = build_lodo_split(dataset, d, run.val_fraction, seed);
            FedConfig fed = run.fed;
            fed.seed = seed;
            const RunResult result = run_rounds(*run.model, split.clients, fed);

            LodoEntry e;
            e.backbone = run.model->name();
            e.strategy = strategy_name(fed.strategy);
            e.seed = seed;
            e.held_out = d;
            e.accuracy = evaluate(*run.model, result.server.global, split.test).accuracy();
            std::vector<Sample> validation;
            for (const auto& c : split.clients) validation.insert(validation.end(), c.validation.begin(), c.validation.end());
            if (!validation.empty()) e.val_accuracy = evaluate(*run.model, result.server.global, validation).accuracy();
            if (fed.rounds > 0) {
                e.first_round_loss = result.log.round_loss(1);
                e.last_round_loss = result.log.round_loss(fed.rounds);
            }
            e.parameters = result.server.global.parameter_count();
            e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            report.entries.push_back(e);
            if (progress) progress(e, result.server.global);
        }
    }
    return report;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace ccnet
