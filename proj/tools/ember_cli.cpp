// ember: checkpoint-free intermittent DNN inference simulator front end.
//
// Subcommands: train, concentrate, quantize, infer, simulate, trace-gen,
// report. Exit codes: 0 success, 2 usage/input error, 3 consistency
// violation, 4 simulation timeout.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <random>

#include "ember/kernels.hpp"
#include "ember/nvm.hpp"
#include "ember/pattern.hpp"
#include "ember/runtime.hpp"
#include "ember/train.hpp"

using json = nlohmann::json;
using namespace ember;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConsistency = 3;
constexpr int kExitTimeout = 4;

uint64_t default_seed() {
    if (const char* env = std::getenv("EMBER_SEED")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end && *end == '\0') return v;
        std::cerr << "warning: ignoring malformed EMBER_SEED '" << env << "'\n";
    }
    return 1;
}

struct DatasetArgs {
    std::string name;         // synthetic: mnist | har | gtsrb
    std::string images, labels;  // IDX pair
    std::string har_x, har_y;    // HAR text pair
    size_t train_samples = 10000;
    size_t test_samples = 2000;

    void attach(CLI::App* cmd) {
        cmd->add_option("--dataset", name, "synthetic dataset name (mnist|har|gtsrb)");
        cmd->add_option("--images", images, "IDX image file");
        cmd->add_option("--labels", labels, "IDX label file");
        cmd->add_option("--har-x", har_x, "HAR feature text file");
        cmd->add_option("--har-y", har_y, "HAR label text file");
        cmd->add_option("--train-samples", train_samples, "synthetic training split size");
        cmd->add_option("--test-samples", test_samples, "synthetic test split size");
    }

    Dataset load(const std::string& arch_name, uint64_t seed, size_t feature_count) const {
        if (!images.empty() || !labels.empty()) {
            for (const std::string& p : {images, labels})
                if (p.empty() || !fs::exists(p))
                    throw ConfigError("dataset file not found: " + (p.empty() ? "(missing flag)" : p));
            auto all = load_idx_pair(images, labels);
            Dataset d;
            size_t ntest = std::min(test_samples, all.size() / 5);
            d.test.assign(all.end() - long(ntest), all.end());
            d.train.assign(all.begin(), all.end() - long(ntest));
            return d;
        }
        if (!har_x.empty() || !har_y.empty()) {
            for (const std::string& p : {har_x, har_y})
                if (p.empty() || !fs::exists(p))
                    throw ConfigError("dataset file not found: " + (p.empty() ? "(missing flag)" : p));
            auto all = load_har_text(har_x, har_y, feature_count);
            Dataset d;
            size_t ntest = std::min(test_samples, all.size() / 5);
            d.test.assign(all.end() - long(ntest), all.end());
            d.train.assign(all.begin(), all.end() - long(ntest));
            return d;
        }
        std::string n = name.empty() ? arch_name : name;
        return synth_dataset_for(n, train_samples, test_samples, seed);
    }
};

struct TraceArgs {
    std::string kind = "constant";
    double amplitude_uw = 1000.0;
    double period_us = 20000.0;
    double duty = 0.5;
    std::string file;

    void attach(CLI::App* cmd) {
        cmd->add_option("--trace", kind, "constant|square|sine|random|file");
        cmd->add_option("--amplitude-uw", amplitude_uw, "trace amplitude in microwatts");
        cmd->add_option("--period-us", period_us, "trace period in microseconds");
        cmd->add_option("--duty", duty, "square wave duty cycle");
        cmd->add_option("--trace-file", file, "two-column (time_us power_uw) trace file");
    }

    PowerTrace build(uint64_t seed) const {
        if (kind == "file" || !file.empty()) {
            if (!fs::exists(file)) throw ConfigError("trace file not found: " + file);
            return load_trace_file(file);
        }
        if (kind == "constant") return make_constant_trace(amplitude_uw);
        if (kind == "square") return make_square_trace(amplitude_uw, period_us, duty);
        if (kind == "sine") return make_sine_trace(amplitude_uw, period_us);
        if (kind == "random") return make_random_trace(amplitude_uw, period_us, seed);
        throw ConfigError("unknown trace kind: " + kind);
    }
};

struct ExecArgs {
    std::string granularity = "element";
    bool no_protection = false;
    std::string mode = "full";
    double auto_threshold_uw = 50.0;
    double max_sim_time_us = 60e6;
    std::string baseline;  // "restart" enables the BASE comparison mode
    double capacitance_uf = 100.0;
    double idle_power_uw = 2.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--granularity", granularity, "mac|element|row");
        cmd->add_flag("--no-protection", no_protection, "disable WAR protection (hazard injection)");
        cmd->add_option("--mode", mode, "full|low-energy|auto");
        cmd->add_option("--auto-threshold-uw", auto_threshold_uw, "auto mode power threshold");
        cmd->add_option("--max-sim-time-us", max_sim_time_us, "simulation time budget");
        cmd->add_option("--baseline", baseline, "'restart' = no progress preservation (BASE)");
        cmd->add_option("--capacitance-uf", capacitance_uf, "energy buffer capacitance");
        cmd->add_option("--idle-power-uw", idle_power_uw, "quiescent drain while powered");
    }

    ExecConfig build() const {
        ExecConfig cfg;
        if (granularity == "mac") cfg.granularity = UnitKind::Mac;
        else if (granularity == "element") cfg.granularity = UnitKind::OutputElement;
        else if (granularity == "row") cfg.granularity = UnitKind::OutputRow;
        else throw ConfigError("unknown granularity: " + granularity);
        cfg.protection = !no_protection;
        if (mode == "full") cfg.policy = ModePolicy::Full;
        else if (mode == "low-energy") cfg.policy = ModePolicy::LowEnergy;
        else if (mode == "auto") cfg.policy = ModePolicy::AutoThreshold;
        else throw ConfigError("unknown mode: " + mode);
        cfg.auto_threshold_uw = auto_threshold_uw;
        cfg.max_sim_time_us = max_sim_time_us;
        if (!baseline.empty()) {
            if (baseline != "restart") throw ConfigError("unknown baseline: " + baseline);
            cfg.restart_baseline = true;
        }
        return cfg;
    }
};

struct CostArgs {
    CostModel cost;
    void attach(CLI::App* cmd) {
        cmd->add_option("--e-mac-nj", cost.e_mac, "energy per MAC");
        cmd->add_option("--e-nvm-read-nj", cost.e_nvm_read, "energy per NVM read");
        cmd->add_option("--e-nvm-write-nj", cost.e_nvm_write, "energy per NVM write");
        cmd->add_option("--e-commit-nj", cost.e_commit, "energy per progress commit");
        cmd->add_option("--e-layer-transition-nj", cost.e_layer_transition, "energy per layer switch");
        cmd->add_option("--clock-hz", cost.clock_hz, "core clock");
    }
};

json report_to_json(const ExecutionReport& r, uint64_t seed) {
    return json{{"seed", seed},
                {"completed", r.completed},
                {"predicted_class", r.predicted_class},
                {"power_cycles", r.power_cycles},
                {"cycles_total", r.cycles_total},
                {"energy_harvested_nj", r.energy_harvested_nj},
                {"energy_consumed_nj", r.energy_consumed_nj},
                {"nvm_reads", r.nvm_reads},
                {"nvm_writes", r.nvm_writes},
                {"volatile_accesses", r.volatile_accesses},
                {"mac_count", r.mac_count},
                {"progress_commits", r.progress_commits},
                {"mode_used", to_string(r.mode_used)},
                {"sim_time_us", r.sim_time_us}};
}

// ---- train ------------------------------------------------------------------

int cmd_train(const std::string& arch_name, const DatasetArgs& ds, const std::string& output,
              const std::string& metrics_path, size_t epochs, size_t finetune_epochs, double lr,
              size_t batch, uint64_t seed, bool skip_finetune) {
    ModelSpec arch = make_arch_by_name(arch_name);
    size_t features = 1;
    for (size_t d : arch.input_shape) features *= d;
    Dataset data = ds.load(arch.name, seed, features);
    if (data.train.empty() || data.test.empty()) throw ConfigError("dataset has an empty split");
    if (data.train.front().x.size() != features)
        throw ConfigError("dataset feature count " + std::to_string(data.train.front().x.size()) +
                          " does not match architecture input " + std::to_string(features));

    std::ofstream metrics(metrics_path);
    if (!metrics) throw ConfigError("cannot open metrics log: " + metrics_path);
    auto log_stage = [&](const std::string& stage) {
        return [&metrics, stage](size_t epoch, double loss, double acc) {
            metrics << stage << " epoch=" << epoch << " loss=" << loss << " accuracy=" << acc << "\n";
            std::cout << "  [" << stage << "] epoch " << epoch << " loss " << loss << " acc " << acc
                      << "\n";
        };
    };

    FloatModel fm = make_float_model(arch, seed);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.seed = seed;

    double baseline = train_baseline(fm, data, cfg, log_stage("baseline"));
    metrics << "checkpoint stage=baseline accuracy=" << baseline << "\n";

    copy_weights_to_spec(fm, arch);
    PatternLibrary lib = build_pattern_library(arch);
    materialize_masks(arch, lib);
    attach_masks(fm, arch);

    double pruned = apply_pattern_prune(fm, data.test);
    metrics << "checkpoint stage=pruned accuracy=" << pruned << "\n";
    std::cout << "baseline " << baseline << " -> pruned " << pruned << "\n";

    if (!skip_finetune) {
        TrainConfig ft = cfg;
        ft.epochs = finetune_epochs;
        double p1 = finetune_phase1(fm, data, ft, log_stage("phase1"));
        metrics << "checkpoint stage=phase1 accuracy=" << p1 << "\n";
        double p2 = finetune_phase2(fm, data, ft, log_stage("phase2"));
        metrics << "checkpoint stage=phase2 accuracy=" << p2 << "\n";
        std::cout << "phase1 " << p1 << " -> phase2 " << p2 << "\n";
    }

    size_t ncal = std::min<size_t>(256, data.test.size());
    ModelSpec deploy = quantize_export(fm, {data.test.begin(), data.test.begin() + long(ncal)});
    double qacc = evaluate_quantized(deploy, data.test);
    metrics << "checkpoint stage=quantized accuracy=" << qacc << "\n";
    save_model_file(deploy, output);
    std::cout << "quantized accuracy " << qacc << "; model written to " << output << " ("
              << param_count(deploy, InferenceMode::Full) << " full / "
              << param_count(deploy, InferenceMode::LowEnergy) << " low-energy params)\n";
    return kExitOk;
}

// ---- simulate ---------------------------------------------------------------

int cmd_simulate(const std::string& model_path, const TraceArgs& ta, const ExecArgs& ea,
                 const CostArgs& ca, size_t trials, uint64_t seed, const std::string& out_dir,
                 size_t jobs) {
    if (!fs::exists(model_path)) throw ConfigError("model file not found: " + model_path);
    ModelSpec model = load_model_file(model_path);
    ExecConfig cfg = ea.build();
    CostModel cost = ca.cost;
    cost.idle_power_uw = ea.idle_power_uw;
    cost.check();
    fs::create_directories(out_dir);

    struct Trial {
        ExecutionReport rep;
        bool oracle_match = false;
        uint64_t seed = 0;
    };
    auto run_one = [&](uint64_t trial_seed) {
        std::mt19937_64 rng(trial_seed);
        std::uniform_real_distribution<float> u(0.f, 1.f);
        size_t features = 1;
        for (size_t d : model.input_shape) features *= d;
        std::vector<float> x(features);
        for (auto& v : x) v = u(rng);
        QTensor in = quantize_input(model, x);
        PowerTrace trace = ta.build(trial_seed);
        EnergyState es;
        es.capacitance = ea.capacitance_uf * 1e-6;
        auto dev = make_device(model, es);
        Trial t;
        t.seed = trial_seed;
        t.rep = run_intermittent(model, in, trace, cfg, cost, *dev);
        InferenceMode m = t.rep.mode_used;
        InferResult oracle = infer_continuous(model, in, m);
        t.oracle_match = t.rep.completed && t.rep.output.data == oracle.output.data;
        return t;
    };

    std::vector<Trial> results(trials);
    std::atomic<size_t> next{0};
    size_t workers = std::max<size_t>(1, std::min(jobs, trials));
    std::vector<std::future<void>> pool;
    for (size_t w = 0; w < workers; ++w)
        pool.push_back(std::async(std::launch::async, [&] {
            for (size_t i = next.fetch_add(1); i < trials; i = next.fetch_add(1))
                results[i] = run_one(seed + i);
        }));
    for (auto& f : pool) f.get();

    size_t completed = 0, matched = 0;
    double cycles_sum = 0, pc_sum = 0;
    for (const Trial& t : results) {
        completed += t.rep.completed;
        matched += t.oracle_match;
        cycles_sum += double(t.rep.cycles_total);
        pc_sum += double(t.rep.power_cycles);
        json j = report_to_json(t.rep, t.seed);
        j["oracle_match"] = t.oracle_match;
        std::ofstream out(out_dir + "/trial_" + std::to_string(t.seed) + ".json");
        out << j.dump(2) << "\n";
    }
    json agg{{"trials", trials},
             {"completion_rate", trials ? double(completed) / double(trials) : 0.0},
             {"oracle_match_rate", trials ? double(matched) / double(trials) : 0.0},
             {"mean_cycles", trials ? cycles_sum / double(trials) : 0.0},
             {"mean_power_cycles", trials ? pc_sum / double(trials) : 0.0},
             {"restart_baseline", cfg.restart_baseline},
             {"protection", cfg.protection}};
    std::ofstream out(out_dir + "/aggregate.json");
    out << agg.dump(2) << "\n";
    std::cout << agg.dump(2) << "\n";

    if (cfg.protection && !cfg.restart_baseline && completed > 0 && matched < completed) {
        std::cerr << "error: consistency violation — intermittent output diverged from the "
                     "continuous oracle under protection\n";
        return kExitConsistency;
    }
    if (completed == 0 && !cfg.restart_baseline) {
        std::cerr << "error: no trial completed within --max-sim-time-us\n";
        return kExitTimeout;
    }
    return kExitOk;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& csv_path) {
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!csv_path.empty()) {
        file.open(csv_path);
        if (!file) throw ConfigError("cannot open output: " + csv_path);
        out = &file;
    }
    *out << "file,mode,completed,power_cycles,cycles_total,mac_count,energy_consumed_nj,"
            "oracle_match\n";
    std::map<std::string, std::pair<double, size_t>> cycles_by_mode;
    std::vector<std::string> files;
    for (const std::string& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::directory_iterator(in))
                if (e.path().extension() == ".json" && e.path().filename() != "aggregate.json")
                    files.push_back(e.path().string());
        } else {
            files.push_back(in);
        }
    }
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
        std::ifstream s(f);
        json j;
        try {
            s >> j;
        } catch (const json::exception& e) {
            throw ConfigError("malformed report file " + f + ": " + e.what());
        }
        std::string mode = j.value("mode_used", "?");
        *out << f << "," << mode << "," << j.value("completed", false) << ","
             << j.value("power_cycles", 0ull) << "," << j.value("cycles_total", 0ull) << ","
             << j.value("mac_count", 0ull) << "," << j.value("energy_consumed_nj", 0.0) << ","
             << j.value("oracle_match", false) << "\n";
        if (j.value("completed", false)) {
            auto& [sum, n] = cycles_by_mode[mode];
            sum += j.value("cycles_total", 0.0);
            ++n;
        }
    }
    auto fullIt = cycles_by_mode.find("full");
    auto leIt = cycles_by_mode.find("low_energy");
    if (fullIt != cycles_by_mode.end() && leIt != cycles_by_mode.end() && leIt->second.first > 0) {
        double ratio = (fullIt->second.first / double(fullIt->second.second)) /
                       (leIt->second.first / double(leIt->second.second));
        *out << "# full/low_energy cycle ratio," << ratio << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"checkpoint-free intermittent DNN inference simulator"};
    app.require_subcommand(1);
    app.fallthrough();  // allow --seed after the subcommand name
    uint64_t seed = default_seed();
    app.add_option("--seed", seed, "global RNG seed (EMBER_SEED fallback)");

    // train
    auto* train_cmd = app.add_subcommand("train", "baseline -> prune -> two-phase fine-tune -> export");
    std::string arch = "mnist", model_out = "model.ehnn", metrics_out = "train_metrics.log";
    size_t epochs = 3, ft_epochs = 2, batch = 32;
    double lr = 0.05;
    bool skip_finetune = false;
    DatasetArgs train_ds;
    train_cmd->add_option("--arch", arch, "architecture (mnist|har|gtsrb|mnist-reduced|table1-*)");
    train_cmd->add_option("--output", model_out, "output model file");
    train_cmd->add_option("--metrics", metrics_out, "training metrics log");
    train_cmd->add_option("--epochs", epochs, "baseline epochs");
    train_cmd->add_option("--finetune-epochs", ft_epochs, "epochs for each fine-tune phase");
    train_cmd->add_option("--learning-rate", lr, "SGD learning rate");
    train_cmd->add_option("--batch-size", batch, "minibatch size");
    train_cmd->add_flag("--skip-finetune", skip_finetune, "stop after pruning (accuracy collapse demo)");
    train_ds.attach(train_cmd);

    // concentrate
    auto* conc_cmd = app.add_subcommand("concentrate", "build pattern library and write masks into a model");
    std::string conc_in, conc_out;
    size_t library_size = 10;
    conc_cmd->add_option("--model", conc_in, "input model file")->required();
    conc_cmd->add_option("--output", conc_out, "output model file")->required();
    conc_cmd->add_option("--library-size", library_size, "pattern library budget");

    // quantize (repack)
    auto* quant_cmd = app.add_subcommand("quantize", "re-emit a model file, optionally low-energy packed");
    std::string quant_in, quant_out;
    bool pack_le = false;
    quant_cmd->add_option("--model", quant_in, "input model file")->required();
    quant_cmd->add_option("--output", quant_out, "output model file")->required();
    quant_cmd->add_flag("--pack-low-energy", pack_le, "store only mask-active weights");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "continuous (always-powered) inference");
    std::string infer_model, infer_mode = "full";
    infer_cmd->add_option("--model", infer_model, "model file")->required();
    infer_cmd->add_option("--mode", infer_mode, "full|low-energy");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "seeded intermittent inference trials");
    std::string sim_model, sim_out = "reports";
    size_t trials = 1, jobs = 4;
    TraceArgs sim_trace;
    ExecArgs sim_exec;
    CostArgs sim_cost;
    sim_cmd->add_option("--model", sim_model, "model file")->required();
    sim_cmd->add_option("--trials", trials, "number of seeded trials");
    sim_cmd->add_option("--output-dir", sim_out, "directory for per-trial reports");
    sim_cmd->add_option("--jobs", jobs, "worker threads");
    sim_trace.attach(sim_cmd);
    sim_exec.attach(sim_cmd);
    sim_cost.attach(sim_cmd);

    // trace-gen
    auto* trace_cmd = app.add_subcommand("trace-gen", "write a power trace file");
    TraceArgs gen_trace;
    std::string trace_out = "trace.txt";
    double trace_end_us = 1e6, trace_step_us = 100.0;
    gen_trace.attach(trace_cmd);
    trace_cmd->add_option("--output", trace_out, "output trace file");
    trace_cmd->add_option("--t-end-us", trace_end_us, "trace duration");
    trace_cmd->add_option("--step-us", trace_step_us, "sampling step");

    // report
    auto* report_cmd = app.add_subcommand("report", "aggregate trial reports into CSV");
    std::vector<std::string> report_in;
    std::string report_csv;
    report_cmd->add_option("--input", report_in, "report files or directories");
    report_cmd->add_option("--output", report_csv, "CSV output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd)
            return cmd_train(arch, train_ds, model_out, metrics_out, epochs, ft_epochs, lr, batch,
                             seed, skip_finetune);
        if (*conc_cmd) {
            if (!fs::exists(conc_in)) throw ConfigError("model file not found: " + conc_in);
            ModelSpec m = load_model_file(conc_in);
            PatternLibrary lib = build_pattern_library(m, library_size);
            materialize_masks(m, lib);
            save_model_file(m, conc_out);
            std::cout << "library of " << lib.patterns.size() << " patterns; "
                      << param_count(m, InferenceMode::LowEnergy) << " low-energy params\n";
            return kExitOk;
        }
        if (*quant_cmd) {
            if (!fs::exists(quant_in)) throw ConfigError("model file not found: " + quant_in);
            ModelSpec m = load_model_file(quant_in);
            save_model_file(m, quant_out, pack_le);
            std::cout << "wrote " << fs::file_size(quant_out) << " bytes ("
                      << (pack_le ? "low-energy packed" : "full") << ")\n";
            return kExitOk;
        }
        if (*infer_cmd) {
            if (!fs::exists(infer_model)) throw ConfigError("model file not found: " + infer_model);
            ModelSpec m = load_model_file(infer_model);
            InferenceMode mode =
                infer_mode == "low-energy" ? InferenceMode::LowEnergy : InferenceMode::Full;
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<float> u(0.f, 1.f);
            size_t features = 1;
            for (size_t d : m.input_shape) features *= d;
            std::vector<float> x(features);
            for (auto& v : x) v = u(rng);
            InferResult r = infer_continuous(m, quantize_input(m, x), mode);
            json j{{"predicted_class", r.predicted_class},
                   {"mode", to_string(mode)},
                   {"macs", r.counts.macs},
                   {"nvm_reads", r.counts.nvm_reads},
                   {"nvm_writes", r.counts.nvm_writes}};
            std::cout << j.dump(2) << "\n";
            return kExitOk;
        }
        if (*sim_cmd)
            return cmd_simulate(sim_model, sim_trace, sim_exec, sim_cost, trials, seed, sim_out, jobs);
        if (*trace_cmd) {
            PowerTrace t = gen_trace.build(seed);
            save_trace_file(t, trace_out, trace_end_us, trace_step_us);
            std::cout << "trace written to " << trace_out << "\n";
            return kExitOk;
        }
        if (*report_cmd) return cmd_report(report_in, report_csv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const SerializationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const EnergyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConsistencyError& e) {
        std::cerr << "consistency error: " << e.what() << "\n";
        return kExitConsistency;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
