#include "vgpccm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"
#include "vgpccm/series_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace vgpccm {

namespace {

constexpr std::uint64_t kSimStream = 0x51;
constexpr std::uint64_t kNeuroStream = 0x52;
constexpr std::uint64_t kTestStream = 0x7e57;

std::string coupling_label(double ex, double ey) {
    std::ostringstream s;
    s << "eps=(" << std::fixed << std::setprecision(2) << ex << "," << ey << ")";
    return s.str();
}

SystemKind system_from_string(const std::string& s) {
    if (s == "lorenz_rossler") return SystemKind::LorenzRossler;
    if (s == "neurovascular") return SystemKind::Neurovascular;
    if (s == "csv_input") return SystemKind::CsvInput;
    throw ValidationError("system: unknown value '" + s + "'");
}

TestMode mode_from_string(const std::string& s) {
    if (s == "gpccm") return TestMode::GpCcm;
    if (s == "vgpccm") return TestMode::VgpCcm;
    throw ValidationError("modes: unknown value '" + s + "'");
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& scope) {
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ParseError("unknown key '" + scope + item.key() + "'");
        }
    }
}

std::pair<std::string, std::string> split_pair(const std::string& label) {
    const auto pos = label.find("->");
    if (pos == std::string::npos || pos == 0 || pos + 2 >= label.size()) {
        throw ValidationError("pairs: '" + label + "' is not of the form A->B");
    }
    return {label.substr(0, pos), label.substr(pos + 2)};
}

std::vector<std::string> system_channels(const ExperimentSpec& spec) {
    switch (spec.system) {
        case SystemKind::LorenzRossler:
            return {"X0", "X1", "X2", "Y0", "Y1", "Y2"};
        case SystemKind::Neurovascular:
            return {"V1", "V2"};
        case SystemKind::CsvInput: {
            std::vector<std::string> names;
            for (const CsvChannel& c : spec.inputs) names.push_back(c.name);
            return names;
        }
    }
    return {};
}

struct Task {
    std::size_t coupling_index = 0;
    int realization = 0;
    std::size_t pair_index = 0;
    std::string coupling;
    std::string from, to;
    bool want_forward = true;   // "from->to" was listed in the spec
    bool want_reverse = false;  // "to->from" was listed too
};

struct TaskResult {
    std::vector<ResultRecord> records;
    std::string error;  // non-empty on failure
    double elapsed = 0.0;
};

TimeSeries head_of(const TimeSeries& s, long n) {
    if (n <= 0 || n >= static_cast<long>(s.size())) return s;
    return TimeSeries(std::vector<double>(s.values.begin(), s.values.begin() + n));
}

}  // namespace

std::string to_string(SystemKind k) {
    switch (k) {
        case SystemKind::LorenzRossler: return "lorenz_rossler";
        case SystemKind::Neurovascular: return "neurovascular";
        case SystemKind::CsvInput: return "csv_input";
    }
    return "?";
}

std::string to_string(TestMode m) {
    return m == TestMode::GpCcm ? "gpccm" : "vgpccm";
}

void ExperimentSpec::validate() const {
    if (n_realizations < 1) {
        throw ValidationError("n_realizations must be >= 1");
    }
    if (pairs.empty()) {
        throw ValidationError("pairs must not be empty");
    }
    if (modes.empty()) {
        throw ValidationError("modes must not be empty");
    }
    if (jobs < 1) {
        throw ValidationError("jobs must be >= 1");
    }
    test.validate();
    const long min_len = static_cast<long>(test.embedding.tau) * test.embedding.m + 2;
    if (analysis_samples < min_len) {
        throw ValidationError("analysis_samples too small for the embedding");
    }
    if (system == SystemKind::LorenzRossler) {
        chaotic.validate();
        if (chaotic.n_steps - chaotic.burn_in < analysis_samples) {
            throw ValidationError(
                "simulator.n_steps - burn_in must cover analysis_samples");
        }
        if (couplings.empty()) {
            throw ValidationError("couplings must not be empty");
        }
    }
    if (system == SystemKind::Neurovascular) {
        neuro.validate();
    }
    if (system == SystemKind::CsvInput && inputs.size() < 2) {
        throw ValidationError("csv_input needs at least two inputs");
    }
    const std::vector<std::string> channels = system_channels(*this);
    for (const std::string& p : pairs) {
        const auto [from, to] = split_pair(p);
        for (const std::string& side : {from, to}) {
            if (std::find(channels.begin(), channels.end(), side) == channels.end()) {
                throw ValidationError("pairs: unknown channel '" + side + "'");
            }
        }
        if (from == to) {
            throw ValidationError("pairs: '" + p + "' relates a channel to itself");
        }
    }
}

std::string ExperimentSpec::resolved_json() const {
    ordered_json j;
    j["system"] = to_string(system);
    if (system == SystemKind::LorenzRossler) {
        j["couplings"] = json::array();
        for (const auto& c : couplings) j["couplings"].push_back({c.first, c.second});
    }
    j["n_realizations"] = n_realizations;
    j["analysis_samples"] = analysis_samples;
    j["pairs"] = pairs;
    j["modes"] = json::array();
    for (TestMode m : modes) j["modes"].push_back(to_string(m));
    j["base_seed"] = base_seed;

    ordered_json t;
    t["n_permutations"] = test.n_permutations;
    t["alpha"] = test.alpha;
    t["mc_draws_observed"] = test.mc_draws_observed;
    t["embedding"] = {{"m", test.embedding.m}, {"tau", test.embedding.tau}};
    t["norm_divisor"] =
        test.norm_divisor == NormDivisor::EmbeddingRows ? "rows" : "source_length";
    t["hyperfit_target"] =
        test.hyperfit_target == HyperfitTarget::Cross ? "cross" : "self";
    t["inducing_count"] = test.inducing_count;
    t["prior_location"] = test.prior_location;
    t["prior_scale"] = test.prior_scale;
    t["optimizer"] = {{"learning_rate", test.optimizer.learning_rate},
                      {"iterations", test.optimizer.iterations},
                      {"mc_draws", test.optimizer.mc_draws},
                      {"clip_norm", test.optimizer.clip_norm}};
    j["test"] = t;

    if (system == SystemKind::LorenzRossler) {
        j["simulator"] = {{"dt", chaotic.dt},           {"substeps", chaotic.substeps},
                          {"n_steps", chaotic.n_steps}, {"burn_in", chaotic.burn_in},
                          {"sigma_l", chaotic.sigma_l}, {"sigma_r", chaotic.sigma_r}};
    }
    if (system == SystemKind::Neurovascular) {
        j["neuro"] = {{"horizon", neuro.horizon},
                      {"dt", neuro.dt},
                      {"substeps", neuro.substeps},
                      {"sample_interval", neuro.sample_interval},
                      {"snr_db", neuro.snr_db},
                      {"add_observation_noise", neuro.add_observation_noise},
                      {"u3_rate", neuro.u3_rate},
                      {"event_duration", neuro.event_duration},
                      {"event_spacing", neuro.event_spacing},
                      {"events_per_condition", neuro.events_per_condition},
                      {"c_gain", neuro.c_gain},
                      {"background_gain", neuro.background_gain},
                      {"balloon",
                       {{"kappa", neuro.balloon.kappa},
                        {"gamma", neuro.balloon.gamma},
                        {"tau", neuro.balloon.tau},
                        {"alpha", neuro.balloon.alpha},
                        {"e0", neuro.balloon.e0}}}};
    }
    if (system == SystemKind::CsvInput) {
        j["inputs"] = json::array();
        for (const CsvChannel& c : inputs) {
            j["inputs"].push_back({{"name", c.name}, {"path", c.path}});
        }
    }
    return j.dump(2);
}

std::uint64_t ExperimentSpec::config_hash() const {
    return fnv1a64(resolved_json());
}

std::string ResultRecord::json() const {
    ordered_json j;
    j["system"] = system;
    j["coupling"] = coupling;
    j["realization"] = realization;
    j["direction"] = direction;
    j["mode"] = to_string(mode);
    j["k_observed"] = k_observed;
    j["null_samples"] = null_samples;
    j["p_value"] = p_value;
    j["reject"] = reject;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["elapsed_seconds"] = elapsed_seconds;
    return j.dump();
}

ResultRecord ResultRecord::from_json(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad record line: ") + e.what());
    }
    ResultRecord r;
    r.system = j.at("system").get<std::string>();
    r.coupling = j.at("coupling").get<std::string>();
    r.realization = j.at("realization").get<int>();
    r.direction = j.at("direction").get<std::string>();
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    r.k_observed = j.at("k_observed").get<double>();
    r.null_samples = j.at("null_samples").get<std::vector<double>>();
    r.p_value = j.at("p_value").get<double>();
    r.reject = j.at("reject").get<bool>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.elapsed_seconds = j.value("elapsed_seconds", 0.0);
    return r;
}

std::string ResultRecord::key() const {
    return coupling + "|" + std::to_string(realization) + "|" + direction + "|" +
           to_string(mode);
}

ExperimentSpec parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open config file " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ParseError(path + ": config must be a JSON object");
    }

    check_keys(j, {"system", "couplings", "n_realizations", "analysis_samples", "pairs",
                   "modes", "output_dir", "base_seed", "jobs", "test", "simulator",
                   "neuro", "inputs"},
               "");

    ExperimentSpec spec;
    if (!j.contains("system")) {
        throw ValidationError("system is required");
    }
    spec.system = system_from_string(j["system"].get<std::string>());
    if (!j.contains("base_seed")) {
        throw ValidationError("base_seed is required (seeds are always explicit)");
    }
    spec.base_seed = j["base_seed"].get<std::uint64_t>();

    if (j.contains("couplings")) {
        spec.couplings.clear();
        for (const auto& c : j["couplings"]) {
            if (!c.is_array() || c.size() != 2) {
                throw ValidationError("couplings: each entry must be [eps_x, eps_y]");
            }
            spec.couplings.emplace_back(c[0].get<double>(), c[1].get<double>());
        }
    }
    if (j.contains("n_realizations")) spec.n_realizations = j["n_realizations"].get<int>();
    if (j.contains("analysis_samples"))
        spec.analysis_samples = j["analysis_samples"].get<long>();
    if (j.contains("pairs")) spec.pairs = j["pairs"].get<std::vector<std::string>>();
    if (j.contains("modes")) {
        spec.modes.clear();
        for (const auto& m : j["modes"]) {
            spec.modes.push_back(mode_from_string(m.get<std::string>()));
        }
    }
    if (j.contains("output_dir")) spec.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("jobs")) spec.jobs = j["jobs"].get<int>();

    if (j.contains("test")) {
        const json& t = j["test"];
        check_keys(t, {"n_permutations", "alpha", "mc_draws_observed", "embedding",
                       "norm_divisor", "hyperfit_target", "inducing_count",
                       "prior_location", "prior_scale", "optimizer"},
                   "test.");
        if (t.contains("n_permutations"))
            spec.test.n_permutations = t["n_permutations"].get<int>();
        if (t.contains("alpha")) {
            spec.test.alpha = t["alpha"].get<double>();
            if (!(spec.test.alpha > 0.0 && spec.test.alpha < 1.0)) {
                throw ValidationError("test.alpha must lie in (0, 1)");
            }
        }
        if (t.contains("mc_draws_observed"))
            spec.test.mc_draws_observed = t["mc_draws_observed"].get<int>();
        if (t.contains("embedding")) {
            check_keys(t["embedding"], {"m", "tau"}, "test.embedding.");
            if (t["embedding"].contains("m"))
                spec.test.embedding.m = t["embedding"]["m"].get<int>();
            if (t["embedding"].contains("tau"))
                spec.test.embedding.tau = t["embedding"]["tau"].get<int>();
        }
        if (t.contains("norm_divisor")) {
            const std::string v = t["norm_divisor"].get<std::string>();
            if (v == "rows") {
                spec.test.norm_divisor = NormDivisor::EmbeddingRows;
            } else if (v == "source_length") {
                spec.test.norm_divisor = NormDivisor::SourceLength;
            } else {
                throw ValidationError("test.norm_divisor: unknown value '" + v + "'");
            }
        }
        if (t.contains("hyperfit_target")) {
            const std::string v = t["hyperfit_target"].get<std::string>();
            if (v == "cross") {
                spec.test.hyperfit_target = HyperfitTarget::Cross;
            } else if (v == "self") {
                spec.test.hyperfit_target = HyperfitTarget::SelfSeries;
            } else {
                throw ValidationError("test.hyperfit_target: unknown value '" + v + "'");
            }
        }
        if (t.contains("inducing_count"))
            spec.test.inducing_count = t["inducing_count"].get<int>();
        if (t.contains("prior_location"))
            spec.test.prior_location = t["prior_location"].get<double>();
        if (t.contains("prior_scale"))
            spec.test.prior_scale = t["prior_scale"].get<double>();
        if (t.contains("optimizer")) {
            const json& o = t["optimizer"];
            check_keys(o, {"learning_rate", "iterations", "mc_draws", "clip_norm"},
                       "test.optimizer.");
            if (o.contains("learning_rate"))
                spec.test.optimizer.learning_rate = o["learning_rate"].get<double>();
            if (o.contains("iterations"))
                spec.test.optimizer.iterations = o["iterations"].get<long>();
            if (o.contains("mc_draws"))
                spec.test.optimizer.mc_draws = o["mc_draws"].get<int>();
            if (o.contains("clip_norm"))
                spec.test.optimizer.clip_norm = o["clip_norm"].get<double>();
        }
    }

    if (j.contains("simulator")) {
        const json& s = j["simulator"];
        check_keys(s, {"dt", "substeps", "n_steps", "burn_in", "sigma_l", "sigma_r"},
                   "simulator.");
        if (s.contains("dt")) spec.chaotic.dt = s["dt"].get<double>();
        if (s.contains("substeps")) spec.chaotic.substeps = s["substeps"].get<int>();
        if (s.contains("n_steps")) spec.chaotic.n_steps = s["n_steps"].get<long>();
        if (s.contains("burn_in")) spec.chaotic.burn_in = s["burn_in"].get<long>();
        if (s.contains("sigma_l")) spec.chaotic.sigma_l = s["sigma_l"].get<double>();
        if (s.contains("sigma_r")) spec.chaotic.sigma_r = s["sigma_r"].get<double>();
    }

    if (j.contains("neuro")) {
        const json& n = j["neuro"];
        check_keys(n, {"horizon", "dt", "substeps", "sample_interval", "snr_db",
                       "add_observation_noise", "u3_rate", "event_duration",
                       "event_spacing", "events_per_condition", "c_gain",
                       "background_gain", "balloon"},
                   "neuro.");
        if (n.contains("horizon")) spec.neuro.horizon = n["horizon"].get<double>();
        if (n.contains("dt")) spec.neuro.dt = n["dt"].get<double>();
        if (n.contains("substeps")) spec.neuro.substeps = n["substeps"].get<int>();
        if (n.contains("sample_interval"))
            spec.neuro.sample_interval = n["sample_interval"].get<double>();
        if (n.contains("snr_db")) spec.neuro.snr_db = n["snr_db"].get<double>();
        if (n.contains("add_observation_noise"))
            spec.neuro.add_observation_noise = n["add_observation_noise"].get<bool>();
        if (n.contains("u3_rate")) spec.neuro.u3_rate = n["u3_rate"].get<double>();
        if (n.contains("event_duration"))
            spec.neuro.event_duration = n["event_duration"].get<double>();
        if (n.contains("event_spacing"))
            spec.neuro.event_spacing = n["event_spacing"].get<double>();
        if (n.contains("events_per_condition"))
            spec.neuro.events_per_condition = n["events_per_condition"].get<int>();
        if (n.contains("c_gain")) spec.neuro.c_gain = n["c_gain"].get<double>();
        if (n.contains("background_gain"))
            spec.neuro.background_gain = n["background_gain"].get<double>();
        if (n.contains("balloon")) {
            const json& b = n["balloon"];
            check_keys(b, {"kappa", "gamma", "tau", "alpha", "e0"}, "neuro.balloon.");
            if (b.contains("kappa")) spec.neuro.balloon.kappa = b["kappa"].get<double>();
            if (b.contains("gamma")) spec.neuro.balloon.gamma = b["gamma"].get<double>();
            if (b.contains("tau")) spec.neuro.balloon.tau = b["tau"].get<double>();
            if (b.contains("alpha")) spec.neuro.balloon.alpha = b["alpha"].get<double>();
            if (b.contains("e0")) spec.neuro.balloon.e0 = b["e0"].get<double>();
        }
    }

    if (j.contains("inputs")) {
        for (const auto& item : j["inputs"]) {
            check_keys(item, {"name", "path"}, "inputs.");
            spec.inputs.push_back(
                {item.at("name").get<std::string>(), item.at("path").get<std::string>()});
        }
    }

    if (spec.pairs.empty()) {
        if (spec.system == SystemKind::LorenzRossler) {
            // both orientations of the nine cross-system comparisons
            for (int i = 0; i < 3; ++i) {
                for (int k = 0; k < 3; ++k) {
                    spec.pairs.push_back("X" + std::to_string(i) + "->Y" +
                                         std::to_string(k));
                    spec.pairs.push_back("Y" + std::to_string(k) + "->X" +
                                         std::to_string(i));
                }
            }
        } else if (spec.system == SystemKind::Neurovascular) {
            spec.pairs = {"V1->V2", "V2->V1"};
        } else if (spec.inputs.size() >= 2) {
            spec.pairs = {spec.inputs[0].name + "->" + spec.inputs[1].name};
        }
    }
    spec.validate();
    return spec;
}

void apply_profile(ExperimentSpec& spec, const std::string& profile) {
    const bool neuro = spec.system == SystemKind::Neurovascular;
    if (profile == "desk") {
        spec.n_realizations = neuro ? 20 : 10;
    } else if (profile == "paper") {
        spec.n_realizations = neuro ? 100 : 30;
    } else {
        throw ValidationError("unknown profile '" + profile + "'");
    }
    spec.analysis_samples = 500;
    spec.test.n_permutations = 30;
    spec.test.inducing_count = 16;
    spec.chaotic.n_steps = 1000;
    spec.chaotic.burn_in = 500;
}

namespace {

TaskResult run_task(const ExperimentSpec& spec, const Task& task,
                    const std::map<std::string, TimeSeries>& csv_cache,
                    const std::string& hash_hex_str) {
    const auto t0 = std::chrono::steady_clock::now();
    TaskResult out;
    try {
        TimeSeries a_raw, b_raw;
        switch (spec.system) {
            case SystemKind::LorenzRossler: {
                LorenzRosslerConfig sim = spec.chaotic;
                sim.eps_x = spec.couplings[task.coupling_index].first;
                sim.eps_y = spec.couplings[task.coupling_index].second;
                sim.seed = derive_seed(spec.base_seed,
                                       {kSimStream, task.coupling_index,
                                        static_cast<std::uint64_t>(task.realization)});
                const Realization r = simulate_lorenz_rossler(sim);
                a_raw = head_of(r.channel(task.from), spec.analysis_samples);
                b_raw = head_of(r.channel(task.to), spec.analysis_samples);
                break;
            }
            case SystemKind::Neurovascular: {
                NeuroConfig sim = spec.neuro;
                sim.seed = derive_seed(spec.base_seed,
                                       {kNeuroStream,
                                        static_cast<std::uint64_t>(task.realization)});
                const Realization r = simulate_neurovascular(sim);
                a_raw = head_of(r.channel(task.from), spec.analysis_samples);
                b_raw = head_of(r.channel(task.to), spec.analysis_samples);
                break;
            }
            case SystemKind::CsvInput: {
                a_raw = head_of(csv_cache.at(task.from), spec.analysis_samples);
                b_raw = head_of(csv_cache.at(task.to), spec.analysis_samples);
                break;
            }
        }
        const TimeSeries a = standardize(a_raw);
        const TimeSeries b = standardize(b_raw);

        TestConfig cfg = spec.test;
        cfg.seed = derive_seed(spec.base_seed,
                               {kTestStream, task.coupling_index,
                                static_cast<std::uint64_t>(task.realization),
                                task.pair_index});
        const PairPosteriors fits = fit_pair_posteriors(a, b, cfg);

        for (TestMode mode : spec.modes) {
            cfg.mode = mode;
            const DirectedTestPair pair =
                run_directed_tests(a, b, fits, cfg, task.from, task.to);
            std::vector<const CouplingTestResult*> wanted;
            if (task.want_forward) wanted.push_back(&pair.forward);
            if (task.want_reverse) wanted.push_back(&pair.reverse);
            for (const CouplingTestResult* r : wanted) {
                ResultRecord rec;
                rec.system = to_string(spec.system);
                rec.coupling = task.coupling;
                rec.realization = task.realization;
                rec.direction = r->direction;
                rec.mode = mode;
                rec.k_observed = r->k_observed;
                rec.p_value = r->p_value;
                rec.reject = r->reject_h0;
                rec.seed = cfg.seed;
                rec.null_samples = r->null_samples;
                rec.config_hash = hash_hex_str;
                out.records.push_back(std::move(rec));
            }
        }
    } catch (const std::exception& e) {
        out.records.clear();
        out.error = e.what();
    }
    out.elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    fs::create_directories(spec.output_dir);

    const std::string resolved = spec.resolved_json();
    const std::string hash_str = hash_hex(fnv1a64(resolved));
    {
        std::ofstream rc(fs::path(spec.output_dir) / "resolved_config.json");
        rc << resolved << '\n';
    }

    // CSV inputs are loaded once and shared read-only across workers.
    std::map<std::string, TimeSeries> csv_cache;
    if (spec.system == SystemKind::CsvInput) {
        for (const CsvChannel& c : spec.inputs) {
            csv_cache[c.name] = read_series_csv(c.path);
        }
    }

    const fs::path records_path = fs::path(spec.output_dir) / "records.jsonl";
    std::set<std::string> existing_keys;
    std::vector<ResultRecord> existing;
    if (fs::exists(records_path)) {
        existing = load_records(records_path.string());
        for (const ResultRecord& r : existing) {
            existing_keys.insert(r.key());
        }
    }

    // A->B and B->A share one computation (the statistic mirrors exactly),
    // so opposite orientations collapse into one task that remembers which
    // directions were actually requested.
    struct PairRequest {
        std::string from, to;
        bool forward = false;
        bool reverse = false;
    };
    std::vector<PairRequest> unique_pairs;
    for (const std::string& p : spec.pairs) {
        const auto [from, to] = split_pair(p);
        bool found = false;
        for (PairRequest& q : unique_pairs) {
            if (q.from == from && q.to == to) {
                q.forward = true;
                found = true;
            } else if (q.from == to && q.to == from) {
                q.reverse = true;
                found = true;
            }
        }
        if (!found) unique_pairs.push_back({from, to, true, false});
    }

    const std::size_t n_couplings =
        spec.system == SystemKind::LorenzRossler ? spec.couplings.size() : 1;
    std::vector<Task> tasks;
    for (std::size_t ci = 0; ci < n_couplings; ++ci) {
        for (int r = 0; r < spec.n_realizations; ++r) {
            for (std::size_t pi = 0; pi < unique_pairs.size(); ++pi) {
                Task t;
                t.coupling_index = ci;
                t.realization = r;
                t.pair_index = pi;
                t.coupling =
                    spec.system == SystemKind::LorenzRossler
                        ? coupling_label(spec.couplings[ci].first,
                                         spec.couplings[ci].second)
                        : (spec.system == SystemKind::Neurovascular ? "B" : "csv");
                t.from = unique_pairs[pi].from;
                t.to = unique_pairs[pi].to;
                t.want_forward = unique_pairs[pi].forward;
                t.want_reverse = unique_pairs[pi].reverse;
                tasks.push_back(std::move(t));
            }
        }
    }

    auto task_done_already = [&](const Task& t) {
        for (TestMode mode : spec.modes) {
            std::vector<std::string> dirs;
            if (t.want_forward) dirs.push_back(t.from + "->" + t.to);
            if (t.want_reverse) dirs.push_back(t.to + "->" + t.from);
            for (const std::string& dir : dirs) {
                ResultRecord probe;
                probe.coupling = t.coupling;
                probe.realization = t.realization;
                probe.direction = dir;
                probe.mode = mode;
                if (!existing_keys.count(probe.key())) return false;
            }
        }
        return true;
    };

    RunOutcome outcome;
    outcome.records = existing;

    std::vector<std::optional<TaskResult>> slots(tasks.size());
    std::vector<char> needs_compute(tasks.size(), 0);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        needs_compute[i] = task_done_already(tasks[i]) ? 0 : 1;
        if (!needs_compute[i]) ++outcome.skipped_tasks;
    }

    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            TaskResult res;
            if (needs_compute[i]) {
                res = run_task(spec, tasks[i], csv_cache, hash_str);
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                slots[i] = std::move(res);
            }
            cv.notify_all();
        }
    };

    const int n_workers =
        std::max(1, std::min<int>(spec.jobs, static_cast<int>(tasks.size())));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        threads.emplace_back(worker);
    }

    // Flush results in task order as the completed prefix grows, so output
    // bytes do not depend on worker count or completion order.
    std::ofstream records_out(records_path, std::ios::app);
    std::ofstream errors_out;
    std::ofstream timings_out(fs::path(spec.output_dir) / "timings.jsonl",
                              std::ios::app);
    {
        std::unique_lock<std::mutex> lock(mu);
        for (std::size_t cursor = 0; cursor < tasks.size(); ++cursor) {
            cv.wait(lock, [&] { return slots[cursor].has_value(); });
            TaskResult& res = *slots[cursor];
            if (!needs_compute[cursor]) continue;
            ++outcome.computed_tasks;
            if (!res.error.empty()) {
                ++outcome.failed_tasks;
                if (!errors_out.is_open()) {
                    errors_out.open(fs::path(spec.output_dir) / "errors.jsonl",
                                    std::ios::app);
                }
                ordered_json e;
                e["coupling"] = tasks[cursor].coupling;
                e["realization"] = tasks[cursor].realization;
                e["pair"] = tasks[cursor].from + "->" + tasks[cursor].to;
                e["error"] = res.error;
                errors_out << e.dump() << '\n';
                errors_out.flush();
                continue;
            }
            ordered_json t;
            t["coupling"] = tasks[cursor].coupling;
            t["realization"] = tasks[cursor].realization;
            t["pair"] = tasks[cursor].from + "->" + tasks[cursor].to;
            t["elapsed_seconds"] = res.elapsed;
            timings_out << t.dump() << '\n';
            for (ResultRecord& rec : res.records) {
                rec.elapsed_seconds = res.elapsed;
                ResultRecord stable = rec;
                stable.elapsed_seconds = 0.0;  // records stay byte-reproducible
                records_out << stable.json() << '\n';
                outcome.records.push_back(std::move(rec));
            }
            records_out.flush();
            slots[cursor].reset();
        }
    }
    for (std::thread& t : threads) {
        t.join();
    }
    return outcome;
}

SummaryTables summarize(const std::vector<ResultRecord>& records) {
    if (records.empty()) {
        throw EmptyRecordsError("summarize needs at least one record");
    }

    std::map<std::string, RejectionCell> cells;
    for (const ResultRecord& r : records) {
        const std::string key =
            r.system + "|" + r.coupling + "|" + to_string(r.mode) + "|" + r.direction;
        RejectionCell& cell = cells[key];
        cell.system = r.system;
        cell.coupling = r.coupling;
        cell.direction = r.direction;
        cell.mode = r.mode;
        ++cell.tests;
        if (r.reject) ++cell.rejections;
    }

    // A record counts toward specificity when its direction is null under
    // the generating system's ground truth.
    auto is_null_direction = [](const ResultRecord& r) {
        if (r.system == "neurovascular") return r.direction == "V2->V1";
        if (r.system != "lorenz_rossler") return false;
        double ex = 0.0, ey = 0.0;
        if (std::sscanf(r.coupling.c_str(), "eps=(%lf,%lf)", &ex, &ey) != 2) {
            return false;
        }
        const bool forward = r.direction.rfind("X", 0) == 0;  // X*->Y*
        if (ex == 0.0 && ey == 0.0) return true;
        if (ex > 0.0) return !forward;  // true direction is L->R
        return forward;                 // true direction is R->L
    };

    std::map<std::string, SpecificityCell> spec_cells;
    std::map<std::string, SpecificityCell> pooled;
    for (const ResultRecord& r : records) {
        if (!is_null_direction(r)) continue;
        const std::string cell_key =
            r.system + "|" + r.coupling + "|" + to_string(r.mode);
        SpecificityCell& cell = spec_cells[cell_key];
        cell.system = r.system;
        cell.coupling = r.coupling;
        cell.mode = r.mode;
        SpecificityCell& pool = pooled[to_string(r.mode)];
        pool.system = "all";
        pool.coupling = "pooled";
        pool.mode = r.mode;
        for (SpecificityCell* c : {&cell, &pool}) {
            if (r.reject) {
                ++c->counts.incorrect_rejects;
            } else {
                ++c->counts.correct_accepts;
            }
        }
    }

    SummaryTables tables;
    for (auto& [key, cell] : cells) {
        tables.rejections.push_back(cell);
    }
    for (auto& [key, cell] : spec_cells) {
        cell.value = specificity(cell.counts);
        tables.specificity.push_back(cell);
    }
    for (auto& [key, cell] : pooled) {
        cell.value = specificity(cell.counts);
        tables.pooled.emplace(key, cell);
    }
    return tables;
}

void write_summary(const SummaryTables& tables, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "rejections.csv");
        out << "system,coupling,mode,direction,tests,rejections\n";
        for (const RejectionCell& c : tables.rejections) {
            out << c.system << ',' << c.coupling << ',' << to_string(c.mode) << ','
                << c.direction << ',' << c.tests << ',' << c.rejections << '\n';
        }
    }
    {
        std::ofstream out(fs::path(dir) / "specificity.csv");
        out << "system,coupling,mode,correct_accepts,incorrect_rejects,specificity\n";
        out << std::setprecision(6) << std::fixed;
        for (const SpecificityCell& c : tables.specificity) {
            out << c.system << ',' << c.coupling << ',' << to_string(c.mode) << ','
                << c.counts.correct_accepts << ',' << c.counts.incorrect_rejects << ','
                << c.value << '\n';
        }
        for (const auto& [mode, c] : tables.pooled) {
            out << c.system << ',' << c.coupling << ',' << mode << ','
                << c.counts.correct_accepts << ',' << c.counts.incorrect_rejects << ','
                << c.value << '\n';
        }
    }
    {
        std::ofstream out(fs::path(dir) / "summary.txt");
        out << std::left << std::setw(16) << "system" << std::setw(18) << "coupling"
            << std::setw(9) << "mode" << std::setw(10) << "direction" << std::right
            << std::setw(7) << "tests" << std::setw(9) << "rejects" << '\n';
        for (const RejectionCell& c : tables.rejections) {
            out << std::left << std::setw(16) << c.system << std::setw(18) << c.coupling
                << std::setw(9) << to_string(c.mode) << std::setw(10) << c.direction
                << std::right << std::setw(7) << c.tests << std::setw(9) << c.rejections
                << '\n';
        }
        out << '\n'
            << std::left << std::setw(16) << "system" << std::setw(18) << "coupling"
            << std::setw(9) << "mode" << std::right << std::setw(10) << "accepts"
            << std::setw(9) << "rejects" << std::setw(13) << "specificity" << '\n';
        out << std::setprecision(4) << std::fixed;
        for (const SpecificityCell& c : tables.specificity) {
            out << std::left << std::setw(16) << c.system << std::setw(18) << c.coupling
                << std::setw(9) << to_string(c.mode) << std::right << std::setw(10)
                << c.counts.correct_accepts << std::setw(9) << c.counts.incorrect_rejects
                << std::setw(13) << c.value << '\n';
        }
        for (const auto& [mode, c] : tables.pooled) {
            out << std::left << std::setw(16) << c.system << std::setw(18) << c.coupling
                << std::setw(9) << mode << std::right << std::setw(10)
                << c.counts.correct_accepts << std::setw(9) << c.counts.incorrect_rejects
                << std::setw(13) << c.value << '\n';
        }
    }
}

void emit_ecdf(const ResultRecord& record, const std::string& path) {
    if (record.null_samples.empty()) {
        throw EmptyNullError("cannot emit an ECDF without null samples");
    }
    struct Row {
        double k;
        double ecdf;
        int observed;
    };
    std::vector<Row> rows;
    std::vector<double> sorted = record.null_samples;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        rows.push_back({sorted[i], static_cast<double>(i + 1) / n, 0});
    }
    rows.push_back({record.k_observed, record.p_value, 1});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.k < b.k; });

    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out << std::setprecision(17);
    out << "k,ecdf,is_observed\n";
    for (const Row& r : rows) {
        out << r.k << ',' << r.ecdf << ',' << r.observed << '\n';
    }
}

std::vector<ResultRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open records file " + path);
    }
    std::vector<ResultRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(ResultRecord::from_json(line));
    }
    return out;
}

}  // namespace vgpccm
