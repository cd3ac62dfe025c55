#include "specforge/bench_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

namespace specforge {

namespace fs = std::filesystem;

// ---- dataset ----------------------------------------------------------------------------

const std::vector<std::string>& program_categories() {
    static const std::vector<std::string> c = {"check", "filter", "map", "math", "merge", "reduce", "reorder", "search"};
    return c;
}

const DatasetEntry* Dataset::find(const std::string& id) const {
    for (const auto& e : entries) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

LocStats loc_from_json(const nlohmann::json& j) {
    LocStats s;
    s.L = j.at("L").get<int>();
    s.A = j.at("A").get<int>();
    s.H = j.at("H").get<int>();
    return s;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
    fs::path manifest = root / "manifest.json";
    if (!fs::exists(manifest)) throw ManifestError("", "no manifest.json in " + root.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("", std::string("manifest.json is not valid JSON: ") + e.what());
    }
    const nlohmann::json* programs = &j;
    if (j.is_object()) {
        static const nlohmann::json empty = nlohmann::json::array();
        programs = j.contains("programs") ? &j["programs"] : &empty;
    }
    if (!programs->is_array()) throw ManifestError("", "manifest.json: 'programs' must be a list");

    Dataset ds;
    ds.root = root;
    std::set<std::string> seen;
    for (const auto& p : *programs) {
        std::string id = p.value("id", "");
        if (id.empty()) throw ManifestError("", "manifest entry without an id");
        if (!seen.insert(id).second) throw ManifestError(id, "duplicate program id '" + id + "'");
        std::string category = p.value("category", "");
        const auto& cats = program_categories();
        if (std::find(cats.begin(), cats.end(), category) == cats.end()) {
            throw ManifestError(id, "program '" + id + "' has unknown category '" + category + "'");
        }
        fs::path file = root / p.value("file", "programs/" + id + ".dfy");
        if (!fs::is_regular_file(file)) throw ManifestError(id, "program '" + id + "': file " + file.string() + " not found");

        DatasetEntry e{id, category, file, slurp(file), {}, {}, std::nullopt};
        SourceFile sf = parse(e.manual_text, file.string());
        if (!sf.warnings.empty()) {
            ds.warnings.push_back({id, sf.warnings.front()});
            continue;
        }
        e.features = count_loc(sf);
        e.stripped_text = strip_annotations(sf);
        if (p.contains("expected")) e.expected = loc_from_json(p["expected"]);
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

// ---- metrics ----------------------------------------------------------------------------

std::optional<int> first_success(const std::vector<AttemptRecord>& attempts) {
    for (const auto& a : attempts) {
        if (a.error_class == ErrorClass::Success) return a.attempt_index;
    }
    return std::nullopt;
}

double pass_at_k(const std::vector<std::optional<int>>& first_successes, int k) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (first_successes.empty()) return 0;
    auto solved = std::count_if(first_successes.begin(), first_successes.end(), [k](const auto& f) { return f && *f <= k; });
    return static_cast<double>(solved) / static_cast<double>(first_successes.size());
}

double pass_at_k(const std::vector<std::vector<AttemptRecord>>& records, int k) {
    std::vector<std::optional<int>> firsts;
    for (const auto& r : records) firsts.push_back(first_success(r));
    return pass_at_k(firsts, k);
}

double extra_loc_percent(const LocStats& solution, const LocStats& manual) {
    return extra_loc_percent(std::vector<LocStats>{solution}, std::vector<LocStats>{manual});
}

double extra_loc_percent(const std::string& solution_text, const std::string& manual_text) {
    return extra_loc_percent(count_loc(parse(solution_text)), count_loc(parse(manual_text)));
}

double extra_loc_percent(const std::vector<LocStats>& solutions, const std::vector<LocStats>& manuals) {
    if (solutions.size() != manuals.size()) throw std::invalid_argument("solution and manual lists differ in length");
    long sol = 0, man = 0;
    for (const auto& s : solutions) sol += s.L + s.A;
    for (const auto& m : manuals) man += m.L + m.A;
    if (man == 0) throw std::invalid_argument("manual solutions have no lines");
    return 100.0 * static_cast<double>(sol - man) / static_cast<double>(man);
}

// ---- statistics -------------------------------------------------------------------------

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x)); }

Eigen::VectorXd probabilities(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = X * beta;
    return eta.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

LogisticProblem LogisticProblem::build(const std::vector<FeatureRow>& rows, bool use_features) {
    LogisticProblem p;
    std::set<std::string> cfgs;
    for (const auto& r : rows) cfgs.insert(r.config_id);
    p.configs.assign(cfgs.begin(), cfgs.end());
    for (const auto& c : p.configs) p.names.push_back("alpha[" + c + "]");
    if (use_features) p.names.insert(p.names.end(), {"beta_L", "beta_A", "beta_H"});

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto m = static_cast<Eigen::Index>(p.names.size());
    p.X = Eigen::MatrixXd::Zero(n, m);
    p.y = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        auto c = std::lower_bound(p.configs.begin(), p.configs.end(), r.config_id) - p.configs.begin();
        p.X(i, c) = 1;
        if (use_features) {
            auto k = static_cast<Eigen::Index>(p.configs.size());
            p.X(i, k) = r.L;
            p.X(i, k + 1) = r.A;
            p.X(i, k + 2) = r.H;
        }
        p.y(i) = r.outcome ? 1 : 0;
    }
    return p;
}

double LogisticProblem::penalized_log_likelihood(const Eigen::VectorXd& beta, double ridge) const {
    Eigen::VectorXd eta = X * beta;
    double ll = 0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
    return ll - 0.5 * ridge * beta.squaredNorm();
}

Eigen::VectorXd LogisticProblem::gradient(const Eigen::VectorXd& beta, double ridge) const {
    return X.transpose() * (y - probabilities(X, beta)) - ridge * beta;
}

double RegressionFit::predict(const FeatureRow& row) const {
    auto it = alpha.find(row.config_id);
    double eta = it == alpha.end() ? 0 : it->second;
    if (beta_L) eta += *beta_L * row.L + *beta_A * row.A + *beta_H * row.H;
    return sigmoid(eta);
}

RegressionFit fit_logistic(const std::vector<FeatureRow>& rows, const FitOptions& opts) {
    bool any_pos = std::any_of(rows.begin(), rows.end(), [](const FeatureRow& r) { return r.outcome; });
    bool any_neg = std::any_of(rows.begin(), rows.end(), [](const FeatureRow& r) { return !r.outcome; });
    if (!any_pos || !any_neg) throw std::invalid_argument("logistic fit needs both outcomes");

    LogisticProblem p = LogisticProblem::build(rows, opts.use_features);
    const auto m = p.X.cols();
    const Eigen::MatrixXd ridge = opts.ridge * Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(m);

    auto hessian = [&](const Eigen::VectorXd& b) {
        Eigen::VectorXd pr = probabilities(p.X, b);
        Eigen::VectorXd w = pr.array() * (1 - pr.array());
        return Eigen::MatrixXd(p.X.transpose() * w.asDiagonal() * p.X + ridge);
    };

    RegressionFit fit;
    double ll = p.penalized_log_likelihood(beta, opts.ridge);
    for (fit.iterations = 0; fit.iterations < opts.max_iterations; ++fit.iterations) {
        Eigen::VectorXd g = p.gradient(beta, opts.ridge);
        if (g.norm() < opts.tolerance) break;
        Eigen::VectorXd step = hessian(beta).ldlt().solve(g);
        double t = 1;
        Eigen::VectorXd next = beta + step;
        double next_ll = p.penalized_log_likelihood(next, opts.ridge);
        double slack = 1e-10 * (1 + std::abs(ll));  // rounding noise in the likelihood sum
        while (next_ll < ll - slack && t > 1e-10) {
            t /= 2;
            next = beta + t * step;
            next_ll = p.penalized_log_likelihood(next, opts.ridge);
        }
        beta = next;
        ll = next_ll;
    }
    Eigen::VectorXd g = p.gradient(beta, opts.ridge);
    fit.gradient_norm = g.norm();
    fit.converged = fit.gradient_norm < opts.tolerance;

    Eigen::MatrixXd cov = hessian(beta).inverse();
    boost::math::normal normal;
    fit.names = p.names;
    fit.coefficients = beta;
    fit.n = static_cast<int>(rows.size());
    fit.log_likelihood = p.penalized_log_likelihood(beta, 0);
    for (Eigen::Index i = 0; i < m; ++i) {
        double se = std::sqrt(cov(i, i));
        double z = beta(i) / se;
        fit.std_errors.push_back(se);
        fit.wald_z.push_back(z);
        fit.wald_p_values.push_back(2 * boost::math::cdf(boost::math::complement(normal, std::abs(z))));
    }
    for (std::size_t c = 0; c < p.configs.size(); ++c) fit.alpha[p.configs[c]] = beta(static_cast<Eigen::Index>(c));
    if (opts.use_features) {
        auto k = static_cast<Eigen::Index>(p.configs.size());
        fit.beta_L = beta(k);
        fit.beta_A = beta(k + 1);
        fit.beta_H = beta(k + 2);
    }
    return fit;
}

nlohmann::json to_json(const RegressionFit& f) {
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < f.names.size(); ++i) {
        params.push_back({{"name", f.names[i]},
                          {"estimate", f.coefficients(static_cast<Eigen::Index>(i))},
                          {"std_error", f.std_errors[i]},
                          {"z", f.wald_z[i]},
                          {"p_value", f.wald_p_values[i]}});
    }
    return {{"parameters", params},
            {"converged", f.converged},
            {"iterations", f.iterations},
            {"gradient_norm", f.gradient_norm},
            {"log_likelihood", f.log_likelihood},
            {"n", f.n}};
}

LikelihoodRatioTest likelihood_ratio_test(const RegressionFit& restricted, const RegressionFit& full) {
    LikelihoodRatioTest t;
    t.df = static_cast<int>(full.coefficients.size() - restricted.coefficients.size());
    if (t.df <= 0) throw std::invalid_argument("the restricted model must have fewer parameters");
    if (restricted.n != full.n) throw std::invalid_argument("models were fitted to different rows");
    t.statistic = std::max(0.0, 2 * (full.log_likelihood - restricted.log_likelihood));
    boost::math::chi_squared chi(t.df);
    t.p_value = boost::math::cdf(boost::math::complement(chi, t.statistic));
    return t;
}

namespace {

struct ScoreGroup {
    double score;
    long pos = 0;
    long neg = 0;
};

std::vector<ScoreGroup> group_scores(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<ScoreGroup> groups;
    for (std::size_t i : order) {
        if (groups.empty() || groups.back().score != scores[i]) groups.push_back({scores[i]});
        (labels[i] ? groups.back().pos : groups.back().neg)++;
    }
    return groups;
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    auto groups = group_scores(scores, labels);
    long pos = 0, neg = 0, twice_wins = 0;
    for (const auto& g : groups) {
        twice_wins += g.pos * (2 * neg + g.neg);
        pos += g.pos;
        neg += g.neg;
    }
    if (pos == 0 || neg == 0) throw SingleClass();
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
    auto groups = group_scores(scores, labels);
    long pos = 0, neg = 0;
    for (const auto& g : groups) {
        pos += g.pos;
        neg += g.neg;
    }
    if (pos == 0 || neg == 0) throw SingleClass();
    std::vector<std::pair<double, double>> pts{{0, 0}};
    long tp = 0, fp = 0;
    for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
        tp += it->pos;
        fp += it->neg;
        pts.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
    }
    return pts;
}

// ---- records ----------------------------------------------------------------------------

nlohmann::json to_json(const RunRecord& r) {
    return {{"program", r.program_id}, {"config", r.config_id}, {"result", to_json(r.result)}};
}

namespace {

AttemptRecord attempt_from_json(const nlohmann::json& j) {
    AttemptRecord a;
    a.attempt_index = j.at("attempt").get<int>();
    a.kind = j.at("kind").get<std::string>() == "repair" ? PromptKind::Repair : PromptKind::Direct;
    a.provider = j.value("provider", "");
    a.error_class = error_class_from_string(j.at("error_class").get<std::string>());
    if (j.contains("verify_status") && !j["verify_status"].is_null()) {
        a.verify_status = verify_status_from_string(j["verify_status"].get<std::string>());
    }
    a.cheating_violations = j.value("cheating_violations", 0);
    a.notes = j.value("notes", std::vector<std::string>{});
    if (j.contains("loc")) a.loc = loc_from_json(j["loc"]);
    a.calls = j.value("calls", 0);
    a.cost = j.value("cost", 0.0);
    a.llm_latency_s = j.value("llm_latency_s", 0.0);
    a.verify_elapsed_s = j.value("verify_elapsed_s", 0.0);
    a.obligations_verified = j.value("obligations_verified", 0);
    a.obligations_failed = j.value("obligations_failed", 0);
    return a;
}

template <typename T>
std::optional<T> opt(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

}  // namespace

SolveResult solve_result_from_json(const nlohmann::json& j) {
    SolveResult r;
    r.solved = j.at("solved").get<bool>();
    for (const auto& a : j.at("attempts")) r.attempts.push_back(attempt_from_json(a));
    for (const auto& a : j.value("negative_retries", nlohmann::json::array())) r.negative_retries.push_back(attempt_from_json(a));
    r.final_program = opt<std::string>(j, "final_program");
    r.minimized_program = opt<std::string>(j, "minimized_program");
    r.negative_tests_passed = opt<bool>(j, "negative_tests_passed");
    for (const auto& f : j.value("negative_failures", nlohmann::json::array())) {
        r.negative_failures.push_back({f.at("marker").get<int>(), f.at("line").get<int>(), f.at("text").get<std::string>()});
    }
    return r;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    return {j.at("program").get<std::string>(), j.at("config").get<std::string>(), solve_result_from_json(j.at("result"))};
}

// ---- reports ----------------------------------------------------------------------------

namespace {

double round6(double v) { return std::round(v * 1e6) / 1e6; }

nlohmann::json rounded(const nlohmann::json& j) {
    if (j.is_number_float()) return round6(j.get<double>());
    if (j.is_array() || j.is_object()) {
        nlohmann::json out = j;
        for (auto it = out.begin(); it != out.end(); ++it) *it = rounded(*it);
        return out;
    }
    return j;
}

std::string pct(std::optional<double> v) {
    if (!v) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << *v * 100 << "%";
    return s.str();
}

}  // namespace

ExperimentReport build_report(std::vector<RunRecord> records, const Dataset& dataset,
                              const std::vector<ExperimentConfig>& configs, int k_max) {
    std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.program_id, a.config_id) < std::tie(b.program_id, b.config_id);
    });
    ExperimentReport rep;
    rep.k_max = k_max;

    std::vector<FeatureRow> rows;
    for (const auto& r : records) {
        const DatasetEntry* e = dataset.find(r.program_id);
        if (!e) continue;
        rows.push_back({r.program_id, r.config_id, e->features.L, e->features.A, e->features.H, r.result.solved});
    }
    try {
        rep.fit = fit_logistic(rows);
    } catch (const std::invalid_argument&) {
        rep.fit.reset();
    }
    if (rep.fit) {
        std::vector<double> scores;
        std::vector<bool> labels;
        for (const auto& row : rows) {
            scores.push_back(rep.fit->predict(row));
            labels.push_back(row.outcome);
        }
        rep.auc = roc_auc(scores, labels);
    }

    for (const auto& cfg : configs) {
        ConfigAggregate agg;
        agg.config_id = cfg.id;
        agg.strategy = std::string(to_string(cfg.run.strategy));
        std::vector<std::optional<int>> firsts;
        std::vector<LocStats> solutions, manuals;
        double cost = 0, latency = 0, verify = 0;
        long calls = 0, attempts = 0;
        std::vector<double> scores;
        std::vector<bool> labels;
        for (const auto& r : records) {
            if (r.config_id != cfg.id) continue;
            ++agg.programs;
            firsts.push_back(r.result.solved ? first_success(r.result.attempts) : std::nullopt);
            if (r.result.solved) ++agg.solved;
            if (r.result.negative_tests_passed == false) ++agg.negative_test_failures;
            for (const auto* list : {&r.result.attempts, &r.result.negative_retries}) {
                for (const auto& a : *list) {
                    cost += a.cost;
                    latency += a.llm_latency_s;
                    verify += a.verify_elapsed_s;
                    calls += a.calls;
                    ++attempts;
                }
            }
            const DatasetEntry* e = dataset.find(r.program_id);
            if (e && r.result.solved && r.result.final_program) {
                solutions.push_back(count_loc(parse(*r.result.final_program)));
                manuals.push_back(e->features);
            }
            if (e && rep.fit) {
                scores.push_back(rep.fit->predict({r.program_id, r.config_id, e->features.L, e->features.A, e->features.H, false}));
                labels.push_back(r.result.solved);
            }
        }
        for (int k = 1; k <= k_max; ++k) agg.success_at_k.push_back(firsts.empty() ? 0 : pass_at_k(firsts, k));
        if (calls > 0) {
            agg.mean_cost = cost / static_cast<double>(calls);
            agg.mean_llm_latency_s = latency / static_cast<double>(calls);
        }
        if (attempts > 0) agg.mean_verify_s = verify / static_cast<double>(attempts);
        if (!solutions.empty()) agg.extra_loc_percent = extra_loc_percent(solutions, manuals);
        try {
            if (!scores.empty()) agg.auc = roc_auc(scores, labels);
        } catch (const SingleClass&) {
            agg.auc.reset();
        }
        rep.aggregates.push_back(std::move(agg));
    }
    rep.records = std::move(records);
    return rep;
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json aggs = nlohmann::json::array();
    for (const auto& a : aggregates) {
        aggs.push_back({{"config", a.config_id},
                        {"strategy", a.strategy},
                        {"programs", a.programs},
                        {"solved", a.solved},
                        {"success_at_k", a.success_at_k},
                        {"mean_cost_per_call", a.mean_cost},
                        {"mean_latency_per_call_s", a.mean_llm_latency_s},
                        {"mean_verify_per_attempt_s", a.mean_verify_s},
                        {"extra_loc_percent", a.extra_loc_percent ? nlohmann::json(*a.extra_loc_percent) : nlohmann::json()},
                        {"negative_test_failures", a.negative_test_failures},
                        {"auc", a.auc ? nlohmann::json(*a.auc) : nlohmann::json()}});
    }
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) recs.push_back(specforge::to_json(r));
    nlohmann::json j{{"loc_convention", loc_convention},
                     {"k_max", k_max},
                     {"aggregates", aggs},
                     {"fit", fit ? specforge::to_json(*fit) : nlohmann::json()},
                     {"auc", auc ? nlohmann::json(*auc) : nlohmann::json()},
                     {"records", recs}};
    return rounded(j);
}

std::string ExperimentReport::summary_table() const {
    std::ostringstream out;
    out << std::left << std::setw(20) << "config" << std::setw(8) << "mode" << std::setw(9) << "solved" << std::setw(8)
        << "@1" << std::setw(8) << "@5" << std::setw(8) << "@10" << std::setw(12) << "cost/call" << std::setw(11)
        << "time/call" << "extra LOC\n";
    for (const auto& a : aggregates) {
        auto at = [&](int k) -> std::optional<double> {
            if (static_cast<int>(a.success_at_k.size()) < k) return std::nullopt;
            return a.success_at_k[static_cast<std::size_t>(k - 1)];
        };
        std::ostringstream cost, time, extra;
        cost << std::fixed << std::setprecision(4) << a.mean_cost;
        time << std::fixed << std::setprecision(2) << a.mean_llm_latency_s << "s";
        if (a.extra_loc_percent) {
            extra << std::fixed << std::setprecision(1) << *a.extra_loc_percent << "%";
        } else {
            extra << "-";
        }
        out << std::setw(20) << a.config_id << std::setw(8) << a.strategy << std::setw(9)
            << (std::to_string(a.solved) + "/" + std::to_string(a.programs)) << std::setw(8) << pct(at(1)) << std::setw(8)
            << pct(at(5)) << std::setw(8) << pct(at(10)) << std::setw(12) << cost.str() << std::setw(11) << time.str()
            << extra.str() << "\n";
    }
    if (fit && fit->beta_L) {
        out << std::fixed << std::setprecision(3) << "logistic fit: beta_L=" << *fit->beta_L << " beta_A=" << *fit->beta_A
            << " beta_H=" << *fit->beta_H << (fit->converged ? "" : " (not converged)") << "\n";
    }
    if (auc) out << std::fixed << std::setprecision(3) << "AUC=" << *auc << "\n";
    out << "extra LOC counts L+A lines\n";
    return out.str();
}

// ---- experiment runner ------------------------------------------------------------------

ExperimentReport run_experiment(const Dataset& dataset, const std::vector<ExperimentConfig>& configs, Verifier& verifier,
                                const ExperimentOptions& opts) {
    std::vector<RunRecord> done;
    std::set<std::pair<std::string, std::string>> finished;
    if (opts.records_path && fs::exists(*opts.records_path)) {
        std::ifstream in(*opts.records_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                RunRecord r = run_record_from_json(nlohmann::json::parse(line));
                if (finished.insert({r.program_id, r.config_id}).second) done.push_back(std::move(r));
            } catch (const std::exception&) {
                // torn write from an interrupted run
            }
        }
    }

    struct Job {
        const DatasetEntry* entry;
        const ExperimentConfig* config;
    };
    std::vector<Job> jobs;
    for (const auto& e : dataset.entries) {
        for (const auto& c : configs) {
            if (!finished.count({e.id, c.id})) jobs.push_back({&e, &c});
        }
    }

    std::ofstream out;
    if (opts.records_path) {
        if (opts.records_path->has_parent_path()) fs::create_directories(opts.records_path->parent_path());
        out.open(*opts.records_path, std::ios::app);
        if (!out) throw std::runtime_error("cannot write " + opts.records_path->string());
    }

    std::mutex mutex;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::string abort_reason;
    auto worker = [&] {
        for (;;) {
            if (abort) return;
            std::size_t i = next++;
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            try {
                SolveContext ctx;
                ctx.verifier = &verifier;
                ctx.manual = &job.entry->manual_text;
                RunRecord rec{job.entry->id, job.config->id, solve(job.entry->stripped_text, job.config->run, ctx)};
                std::lock_guard<std::mutex> lock(mutex);
                if (out.is_open()) out << to_json(rec).dump() << "\n" << std::flush;
                if (opts.on_record) opts.on_record(rec);
                done.push_back(std::move(rec));
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mutex);
                if (!abort) abort_reason = job.entry->id + " / " + job.config->id + ": " + e.what();
                abort = true;
                return;
            }
        }
    };
    int n = std::max(1, std::min<int>(opts.workers, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n && !jobs.empty(); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (abort) throw ExperimentAborted("experiment aborted at " + abort_reason);

    return build_report(std::move(done), dataset, configs, opts.k_max);
}

// ---- configuration ----------------------------------------------------------------------

ExperimentSetup load_experiment_setup(const fs::path& file) {
    if (!fs::exists(file)) throw std::invalid_argument(file.string() + " not found");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(file));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(file.string() + ": " + e.what());
    }
    fs::path base = file.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    ExperimentSetup s;
    if (j.contains("dataset")) s.dataset_root = resolve(j["dataset"].get<std::string>());
    s.workers = j.value("workers", s.workers);

    std::shared_ptr<ProviderClient> replay;
    if (j.contains("replay")) replay = std::make_shared<ReplayProvider>(resolve(j["replay"].get<std::string>()));
    auto http = std::make_shared<HttpChatProvider>();
    for (const auto& p : j.value("providers", nlohmann::json::array())) {
        ProviderConfig c = provider_config_from_json(p);
        s.providers.push_back({c, replay ? replay : std::static_pointer_cast<ProviderClient>(http)});
    }

    const nlohmann::json v = j.value("verifier", nlohmann::json::object());
    s.verifier_config.timeout_s = v.value("timeout_s", s.verifier_config.timeout_s);
    s.verifier_config.executable = v.value("executable", s.verifier_config.executable);
    s.verifier_config.extra_args = v.value("extra_args", s.verifier_config.extra_args);
    if (v.contains("mock")) {
        s.base_verifier = MockVerifier::from_json(nlohmann::json::parse(slurp(resolve(v["mock"].get<std::string>()))));
    } else {
        s.base_verifier = std::make_unique<ProcessVerifier>();
    }
    if (v.contains("cache")) s.cached_verifier = std::make_unique<CachedVerifier>(*s.base_verifier, resolve(v["cache"].get<std::string>()));

    for (const auto& c : j.value("configs", nlohmann::json::array())) {
        ExperimentConfig ec;
        ec.id = c.at("id").get<std::string>();
        RunConfig& r = ec.run;
        r.strategy = strategy_from_string(c.value("strategy", "repair"));
        r.max_direct_runs = c.value("max_direct_runs", r.max_direct_runs);
        r.max_repair_iterations = c.value("max_repair_iterations", r.max_repair_iterations);
        r.multimodel = c.value("multimodel", r.multimodel);
        r.minimize_on_success = c.value("minimize_on_success", r.minimize_on_success);
        r.check_negative_tests = c.value("check_negative_tests", r.check_negative_tests);
        r.negative_test_retry = c.value("negative_test_retry", r.negative_test_retry);
        r.diagnostic_budget = c.value("diagnostic_budget", r.diagnostic_budget);
        r.verifier = s.verifier_config;
        for (const auto& name : c.at("providers")) {
            auto it = std::find_if(s.providers.begin(), s.providers.end(),
                                   [&](const BoundProvider& b) { return b.config.name == name.get<std::string>(); });
            if (it == s.providers.end()) throw std::invalid_argument("config '" + ec.id + "' names unknown provider " + name.dump());
            r.providers.push_back(*it);
        }
        r.validate();
        s.configs.push_back(std::move(ec));
    }
    return s;
}

}  // namespace specforge
