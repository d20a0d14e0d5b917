// Command-line front end: simulation, single-pair coupling tests, benchmark
// reproduction batches, summaries and ECDF emission.

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vgpccm/errors.hpp"
#include "vgpccm/experiment.hpp"
#include "vgpccm/rng.hpp"
#include "vgpccm/series_io.hpp"

namespace fs = std::filesystem;
using namespace vgpccm;

namespace {

std::vector<std::pair<double, double>> parse_couplings(const std::string& text) {
    // "0,0;2,0;4,0" -> {(0,0),(2,0),(4,0)}
    std::vector<std::pair<double, double>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        const auto comma = item.find(',');
        if (comma == std::string::npos) {
            throw ValidationError("couplings: expected eps_x,eps_y pairs");
        }
        out.emplace_back(std::stod(item.substr(0, comma)),
                         std::stod(item.substr(comma + 1)));
    }
    return out;
}

std::vector<std::string> parse_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct BatchOptions {
    std::string config;
    std::string profile = "desk";
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    int realizations = 0;  // 0 = profile default
    std::string couplings;
    std::string pairs;
};

void add_batch_flags(CLI::App* cmd, BatchOptions& opt, bool with_couplings) {
    cmd->add_option("--config", opt.config, "JSON experiment config");
    cmd->add_option("--profile", opt.profile, "runtime profile: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option("--seed", opt.seed, "base seed")->each([&](const std::string&) {
        opt.seed_set = true;
    });
    cmd->add_option("--jobs", opt.jobs, "worker threads");
    cmd->add_option("--realizations", opt.realizations, "realization count override");
    if (with_couplings) {
        cmd->add_option("--couplings", opt.couplings,
                        "grid override, e.g. \"0,0;2,0;4,0\"");
    }
    cmd->add_option("--pairs", opt.pairs, "directed pair override, e.g. \"X0->Y0\"");
}

int run_batch(SystemKind system, const BatchOptions& opt) {
    ExperimentSpec spec;
    if (!opt.config.empty()) {
        spec = parse_config(opt.config);
    } else {
        spec.system = system;
        if (system == SystemKind::Neurovascular) {
            spec.pairs = {"V1->V2", "V2->V1"};
        } else {
            // both orientations of the nine cross-system comparisons
            for (int i = 0; i < 3; ++i) {
                for (int k = 0; k < 3; ++k) {
                    spec.pairs.push_back("X" + std::to_string(i) + "->Y" +
                                         std::to_string(k));
                    spec.pairs.push_back("Y" + std::to_string(k) + "->X" +
                                         std::to_string(i));
                }
            }
        }
        apply_profile(spec, opt.profile);
    }
    if (opt.seed_set) spec.base_seed = opt.seed;
    if (!opt.out.empty()) spec.output_dir = opt.out;
    spec.jobs = opt.jobs;
    if (opt.realizations > 0) spec.n_realizations = opt.realizations;
    if (!opt.couplings.empty()) spec.couplings = parse_couplings(opt.couplings);
    if (!opt.pairs.empty()) spec.pairs = parse_list(opt.pairs);
    spec.validate();

    const RunOutcome outcome = run_experiment(spec);
    std::cout << "tasks computed: " << outcome.computed_tasks
              << ", skipped: " << outcome.skipped_tasks
              << ", failed: " << outcome.failed_tasks << '\n';
    if (!outcome.records.empty()) {
        write_summary(summarize(outcome.records), spec.output_dir);
        std::cout << "summary written to " << spec.output_dir << "/summary.txt\n";
    }
    return outcome.failed_tasks == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian-process convergent cross-mapping toolkit"};
    app.require_subcommand(1);

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "generate benchmark realizations");
    std::string sim_system = "lorenz_rossler";
    std::string sim_out = "out";
    std::uint64_t sim_seed = 0;
    int sim_realizations = 1;
    double sim_eps_x = 0.0, sim_eps_y = 0.0;
    sim_cmd->add_option("--system", sim_system, "lorenz_rossler or neurovascular")
        ->check(CLI::IsMember({"lorenz_rossler", "neurovascular"}));
    sim_cmd->add_option("--out", sim_out, "output directory");
    sim_cmd->add_option("--seed", sim_seed, "base seed");
    sim_cmd->add_option("--realizations", sim_realizations, "number of realizations");
    sim_cmd->add_option("--eps-x", sim_eps_x, "coupling gain into the Rossler system");
    sim_cmd->add_option("--eps-y", sim_eps_y, "coupling gain into the Lorenz system");

    // test
    auto* test_cmd = app.add_subcommand("test", "run one coupling test on CSV series");
    std::string test_x, test_y, test_out = "result.json", test_ecdf;
    std::uint64_t test_seed = 0;
    TestConfig test_cfg;
    test_cfg.inducing_count = 16;
    test_cmd->add_option("--x", test_x, "CSV series for the putative driver")
        ->required();
    test_cmd->add_option("--y", test_y, "CSV series for the putative response")
        ->required();
    test_cmd->add_option("--out", test_out, "result JSON path");
    test_cmd->add_option("--seed", test_seed, "test seed");
    test_cmd->add_option("--permutations", test_cfg.n_permutations, "null samples");
    test_cmd->add_option("--alpha", test_cfg.alpha, "significance threshold");
    test_cmd->add_option("--m", test_cfg.embedding.m, "embedding dimension count");
    test_cmd->add_option("--tau", test_cfg.embedding.tau, "embedding delay");
    test_cmd->add_option("--inducing", test_cfg.inducing_count, "inducing points");
    test_cmd->add_option("--iterations", test_cfg.optimizer.iterations,
                         "optimizer iterations");
    test_cmd->add_option("--ecdf", test_ecdf, "also write the VGP ECDF here");

    // reproduce-chaotic / reproduce-neuro
    BatchOptions chaotic_opt;
    auto* chaotic_cmd = app.add_subcommand(
        "reproduce-chaotic", "coupled chaotic-system benchmark batch");
    chaotic_opt.out = "out_chaotic";
    add_batch_flags(chaotic_cmd, chaotic_opt, true);

    BatchOptions neuro_opt;
    auto* neuro_cmd =
        app.add_subcommand("reproduce-neuro", "neurovascular benchmark batch");
    neuro_opt.out = "out_neuro";
    add_batch_flags(neuro_cmd, neuro_opt, false);

    // summarize
    auto* sum_cmd = app.add_subcommand("summarize", "tables from a records file");
    std::string sum_records, sum_out = "out";
    sum_cmd->add_option("--records", sum_records, "records.jsonl path")->required();
    sum_cmd->add_option("--out", sum_out, "output directory");

    // ecdf
    auto* ecdf_cmd = app.add_subcommand("ecdf", "null ECDF data for one record");
    std::string ecdf_records, ecdf_out = "ecdf.csv";
    long ecdf_index = 0;
    ecdf_cmd->add_option("--records", ecdf_records, "records.jsonl path")->required();
    ecdf_cmd->add_option("--index", ecdf_index, "record index in the file");
    ecdf_cmd->add_option("--out", ecdf_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim_cmd->parsed()) {
            fs::create_directories(sim_out);
            int failures = 0;
            for (int r = 0; r < sim_realizations; ++r) {
                try {
                    Realization real;
                    std::string name;
                    if (sim_system == "lorenz_rossler") {
                        LorenzRosslerConfig cfg;
                        cfg.eps_x = sim_eps_x;
                        cfg.eps_y = sim_eps_y;
                        cfg.seed = derive_seed(sim_seed,
                                               {0x51, static_cast<std::uint64_t>(r)});
                        real = simulate_lorenz_rossler(cfg);
                        name = "lorenz_rossler_r" + std::to_string(r) + ".csv";
                    } else {
                        NeuroConfig cfg;
                        cfg.seed = derive_seed(sim_seed,
                                               {0x52, static_cast<std::uint64_t>(r)});
                        real = simulate_neurovascular(cfg);
                        name = "neurovascular_r" + std::to_string(r) + ".csv";
                    }
                    const std::string path = (fs::path(sim_out) / name).string();
                    write_realization_csv(path, real);
                    std::cout << path << '\n';
                } catch (const Error& e) {
                    std::cerr << "realization " << r << " failed: " << e.what() << '\n';
                    ++failures;
                }
            }
            return failures == 0 ? 0 : 1;
        }

        if (test_cmd->parsed()) {
            test_cfg.seed = test_seed;
            const TimeSeries x = standardize(read_series_csv(test_x));
            const TimeSeries y = standardize(read_series_csv(test_y));
            const PairPosteriors fits = fit_pair_posteriors(x, y, test_cfg);

            std::ostringstream lines;
            ResultRecord vgp_forward;
            TestConfig cfg = test_cfg;
            for (TestMode mode : {TestMode::GpCcm, TestMode::VgpCcm}) {
                cfg.mode = mode;
                const DirectedTestPair pair = run_directed_tests(x, y, fits, cfg, "x", "y");
                for (const CouplingTestResult* res : {&pair.forward, &pair.reverse}) {
                    ResultRecord rec;
                    rec.system = "csv_input";
                    rec.coupling = "csv";
                    rec.direction = res->direction;
                    rec.mode = mode;
                    rec.k_observed = res->k_observed;
                    rec.p_value = res->p_value;
                    rec.reject = res->reject_h0;
                    rec.seed = cfg.seed;
                    rec.null_samples = res->null_samples;
                    rec.config_hash = hash_hex(0);
                    lines << rec.json() << '\n';
                    std::cout << to_string(mode) << ' ' << res->direction
                              << ": k=" << res->k_observed << " p=" << res->p_value
                              << (res->reject_h0 ? " (coupling)" : " (no coupling)")
                              << '\n';
                    if (mode == TestMode::VgpCcm && res == &pair.forward) {
                        vgp_forward = rec;
                    }
                }
            }
            std::ofstream out(test_out);
            out << lines.str();
            if (!test_ecdf.empty()) {
                emit_ecdf(vgp_forward, test_ecdf);
            }
            return 0;
        }

        if (chaotic_cmd->parsed()) {
            return run_batch(SystemKind::LorenzRossler, chaotic_opt);
        }
        if (neuro_cmd->parsed()) {
            return run_batch(SystemKind::Neurovascular, neuro_opt);
        }
        if (sum_cmd->parsed()) {
            write_summary(summarize(load_records(sum_records)), sum_out);
            std::cout << "summary written to " << sum_out << '\n';
            return 0;
        }
        if (ecdf_cmd->parsed()) {
            const std::vector<ResultRecord> records = load_records(ecdf_records);
            if (ecdf_index < 0 || ecdf_index >= static_cast<long>(records.size())) {
                throw ValidationError("record index out of range");
            }
            emit_ecdf(records[static_cast<std::size_t>(ecdf_index)], ecdf_out);
            std::cout << ecdf_out << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
