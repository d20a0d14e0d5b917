#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vgpccm/simulate.hpp"
#include "vgpccm/stats.hpp"

namespace vgpccm {

enum class SystemKind { LorenzRossler, Neurovascular, CsvInput };

std::string to_string(SystemKind k);
std::string to_string(TestMode m);

// A named series loaded from disk for csv_input experiments.
struct CsvChannel {
    std::string name;
    std::string path;
};

// Batch description: which system, which coupling grid, how many seeded
// realizations, which directed comparisons, and the shared test settings.
struct ExperimentSpec {
    SystemKind system = SystemKind::LorenzRossler;
    std::vector<std::pair<double, double>> couplings = {
        {0.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}, {0.0, 0.2}, {0.0, 0.5}};
    int n_realizations = 10;
    long analysis_samples = 500;
    std::vector<std::string> pairs;  // directed, e.g. "X0->Y0"
    std::vector<TestMode> modes = {TestMode::GpCcm, TestMode::VgpCcm};
    TestConfig test;
    LorenzRosslerConfig chaotic;  // template; coupling and seed set per task
    NeuroConfig neuro;            // template; seed set per task
    std::vector<CsvChannel> inputs;
    std::string output_dir = "out";
    std::uint64_t base_seed = 0;
    int jobs = 1;

    void validate() const;
    // Canonical resolved-config JSON (sorted keys, defaults filled).
    std::string resolved_json() const;
    std::uint64_t config_hash() const;
};

struct ResultRecord {
    std::string system;
    std::string coupling;
    int realization = 0;
    std::string direction;
    TestMode mode = TestMode::GpCcm;
    double k_observed = 0.0;
    double p_value = 0.0;
    bool reject = false;
    std::uint64_t seed = 0;
    double elapsed_seconds = 0.0;
    std::vector<double> null_samples;
    std::string config_hash;

    std::string json() const;
    static ResultRecord from_json(const std::string& line);
    // Identity of a record inside an output directory, used for resume.
    std::string key() const;
};

// Strict JSON config parsing: unknown keys are hard errors, all constraints
// checked, defaults filled.
ExperimentSpec parse_config(const std::string& path);

// Applies the named runtime profile ("desk" or "paper") onto a spec.
void apply_profile(ExperimentSpec& spec, const std::string& profile);

struct RunOutcome {
    std::vector<ResultRecord> records;  // every record now in the directory
    long computed_tasks = 0;            // tasks executed this call
    long skipped_tasks = 0;             // tasks satisfied by existing records
    long failed_tasks = 0;              // tasks recorded in errors.jsonl
};

// Executes every (coupling x realization x pair) task, both directions and
// every requested mode per task. Records append incrementally to
// records.jsonl in deterministic task order; completed tasks are skipped on
// rerun; per-task failures land in errors.jsonl without aborting the batch.
RunOutcome run_experiment(const ExperimentSpec& spec);

struct RejectionCell {
    std::string system, coupling, direction;
    TestMode mode = TestMode::GpCcm;
    long tests = 0;
    long rejections = 0;
};

struct SpecificityCell {
    std::string system, coupling;
    TestMode mode = TestMode::GpCcm;
    ConfusionCounts counts;
    double value = 0.0;
};

struct SummaryTables {
    std::vector<RejectionCell> rejections;
    std::vector<SpecificityCell> specificity;           // per coupling cell
    std::map<std::string, SpecificityCell> pooled;      // per mode name
};

// Rejection counts per (coupling, direction, mode) plus specificity over the
// null-direction tests; insensitive to record order.
SummaryTables summarize(const std::vector<ResultRecord>& records);

void write_summary(const SummaryTables& tables, const std::string& dir);

// ECDF rows (k, cumulative fraction, is_observed) for one test result.
void emit_ecdf(const ResultRecord& record, const std::string& path);

std::vector<ResultRecord> load_records(const std::string& path);

}  // namespace vgpccm
