#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "specforge/repair_loop.hpp"
#include "specforge/source_model.hpp"

namespace specforge {

// ---- dataset ----------------------------------------------------------------------------

class ManifestError : public std::runtime_error {
public:
    ManifestError(std::string id, const std::string& what) : std::runtime_error(what), id(std::move(id)) {}
    std::string id;  // offending entry, empty for manifest-level problems
};

const std::vector<std::string>& program_categories();  // check, filter, map, ...

struct DatasetEntry {
    std::string id;
    std::string category;
    std::filesystem::path manual_path;
    std::string manual_text;
    std::string stripped_text;
    LocStats features;
    std::optional<LocStats> expected;  // hand-counted values from the manifest
};

struct DatasetWarning {
    std::string id;
    std::string message;
};

struct Dataset {
    std::filesystem::path root;
    std::vector<DatasetEntry> entries;
    std::vector<DatasetWarning> warnings;  // malformed programs, skipped

    const DatasetEntry* find(const std::string& id) const;
};

/// Reads root/manifest.json. Throws ManifestError.
Dataset load_dataset(const std::filesystem::path& root);

// ---- metrics ----------------------------------------------------------------------------

/// 1-based index of the first successful attempt.
std::optional<int> first_success(const std::vector<AttemptRecord>& attempts);

/// Fraction of programs solved within k attempts.
double pass_at_k(const std::vector<std::vector<AttemptRecord>>& records, int k);
double pass_at_k(const std::vector<std::optional<int>>& first_successes, int k);

/// 100 * (solution LOC - manual LOC) / manual LOC with LOC = L + A, over summed totals.
double extra_loc_percent(const LocStats& solution, const LocStats& manual);
double extra_loc_percent(const std::string& solution_text, const std::string& manual_text);
double extra_loc_percent(const std::vector<LocStats>& solutions, const std::vector<LocStats>& manuals);

// ---- statistics -------------------------------------------------------------------------

struct FeatureRow {
    std::string program_id;
    std::string config_id;
    int L = 0;
    int A = 0;
    int H = 0;
    bool outcome = false;
};

struct FitOptions {
    bool use_features = true;  // false: configuration intercepts only
    double ridge = 1e-6;
    double tolerance = 1e-8;   // on the gradient norm
    int max_iterations = 100;
};

/// Design matrix: one intercept column per configuration (sorted ids), then L, A, H.
struct LogisticProblem {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    std::vector<std::string> configs;

    static LogisticProblem build(const std::vector<FeatureRow>& rows, bool use_features);
    double penalized_log_likelihood(const Eigen::VectorXd& beta, double ridge) const;
    Eigen::VectorXd gradient(const Eigen::VectorXd& beta, double ridge) const;
};

struct RegressionFit {
    std::optional<double> beta_L, beta_A, beta_H;
    std::map<std::string, double> alpha;  // per-configuration intercepts
    std::vector<std::string> names;
    Eigen::VectorXd coefficients;
    std::vector<double> std_errors;
    std::vector<double> wald_z;
    std::vector<double> wald_p_values;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0;
    double log_likelihood = 0;
    int n = 0;

    double predict(const FeatureRow& row) const;  // success probability
};

nlohmann::json to_json(const RegressionFit& f);

/// Throws std::invalid_argument unless both outcomes occur.
RegressionFit fit_logistic(const std::vector<FeatureRow>& rows, const FitOptions& opts = {});

struct LikelihoodRatioTest {
    double statistic = 0;
    int df = 0;
    double p_value = 1;
};

/// Compares nested fits; `restricted` must have fewer parameters.
LikelihoodRatioTest likelihood_ratio_test(const RegressionFit& restricted, const RegressionFit& full);

class SingleClass : public std::invalid_argument {
public:
    SingleClass() : std::invalid_argument("ROC analysis needs positive and negative labels") {}
};

/// Mann-Whitney estimate; ties count one half. Throws SingleClass.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

/// (false positive rate, true positive rate) points from (0,0) to (1,1).
std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels);

// ---- experiments ------------------------------------------------------------------------

struct ExperimentConfig {
    std::string id;
    RunConfig run;
};

struct RunRecord {
    std::string program_id;
    std::string config_id;
    SolveResult result;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);
SolveResult solve_result_from_json(const nlohmann::json& j);

struct ConfigAggregate {
    std::string config_id;
    std::string strategy;
    int programs = 0;
    int solved = 0;
    std::vector<double> success_at_k;  // k = 1 .. k_max
    double mean_cost = 0;
    double mean_llm_latency_s = 0;
    double mean_verify_s = 0;
    std::optional<double> extra_loc_percent;  // solved programs, final programs against manual
    int negative_test_failures = 0;
    std::optional<double> auc;
};

struct ExperimentReport {
    std::vector<RunRecord> records;  // sorted by (program, config)
    std::vector<ConfigAggregate> aggregates;
    std::optional<RegressionFit> fit;
    std::optional<double> auc;
    std::string loc_convention = "L+A";
    int k_max = 10;

    nlohmann::json to_json() const;
    std::string summary_table() const;
};

/// Aggregates, fit and AUC from raw records.
ExperimentReport build_report(std::vector<RunRecord> records, const Dataset& dataset,
                              const std::vector<ExperimentConfig>& configs, int k_max = 10);

struct ExperimentOptions {
    int workers = 4;
    std::optional<std::filesystem::path> records_path;  // JSON lines; finished jobs are skipped on restart
    int k_max = 10;
    std::function<void(const RunRecord&)> on_record;
};

class ExperimentAborted : public std::runtime_error {
public:
    explicit ExperimentAborted(const std::string& what) : std::runtime_error(what) {}
};

/// Runs every (program, config) pair. Throws ExperimentAborted when a job fails; records
/// persisted up to then are kept.
ExperimentReport run_experiment(const Dataset& dataset, const std::vector<ExperimentConfig>& configs, Verifier& verifier,
                                const ExperimentOptions& opts = {});

/// Experiment configuration file (JSON). Relative paths are resolved against the file's
/// directory. Keys: dataset, replay, verifier {mock | executable, timeout_s, extra_args,
/// cache}, workers, providers [...], configs [{id, strategy, providers, multimodel,
/// max_direct_runs, max_repair_iterations, minimize_on_success, check_negative_tests}].
struct ExperimentSetup {
    std::optional<std::filesystem::path> dataset_root;
    std::vector<ExperimentConfig> configs;
    std::vector<BoundProvider> providers;
    std::unique_ptr<Verifier> base_verifier;
    std::unique_ptr<Verifier> cached_verifier;  // wraps base_verifier when a cache is configured
    VerifierConfig verifier_config;
    int workers = 4;

    Verifier& verifier() { return cached_verifier ? *cached_verifier : *base_verifier; }
};

/// Throws std::invalid_argument on unknown providers or malformed entries.
ExperimentSetup load_experiment_setup(const std::filesystem::path& file);

}  // namespace specforge
