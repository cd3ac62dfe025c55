#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "specforge/assistant_service.hpp"
#include "specforge/bench_harness.hpp"

using namespace specforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << text;
}

ServiceConfig service_config(ExperimentSetup& setup, const std::string& config_id, int retry_limit) {
    ServiceConfig cfg;
    if (setup.configs.empty()) {
        cfg.run.providers = setup.providers;
        cfg.run.verifier = setup.verifier_config;
    } else {
        auto it = std::find_if(setup.configs.begin(), setup.configs.end(),
                               [&](const ExperimentConfig& c) { return config_id.empty() || c.id == config_id; });
        if (it == setup.configs.end()) throw std::invalid_argument("no configuration named '" + config_id + "'");
        cfg.run = it->run;
    }
    cfg.verifier = &setup.verifier();
    cfg.ide_retry_limit = retry_limit;
    cfg.max_concurrent_jobs = 1;
    return cfg;
}

std::optional<SelectionSpan> parse_selection(const std::string& s) {
    if (s.empty()) return std::nullopt;
    SelectionSpan sel;
    char colon = 0;
    std::istringstream in(s);
    if (!(in >> sel.start_line >> colon >> sel.end_line) || colon != ':') {
        throw std::invalid_argument("selection must look like START:END");
    }
    return sel;
}

/// Runs one job, streaming its events to stderr. Returns the final snapshot.
JobSnapshot run_job(JobManager& jobs, JobRequest request, bool quiet) {
    std::string id = jobs.submit(std::move(request));
    long seen = 0;
    for (;;) {
        auto [events, state] = jobs.events(id, seen, 1.0);
        for (const auto& e : events) {
            if (!quiet) std::cerr << "[" << e.ordinal << "] " << e.summary << "\n";
            seen = e.ordinal;
        }
        if (is_terminal(state) && events.empty()) break;
    }
    return jobs.snapshot(id);
}

int finish_job(const JobSnapshot& snap, bool as_json, const std::string& out_path) {
    if (snap.state == JobState::Failed) {
        std::cerr << "error: " << snap.error.value_or("job failed") << "\n";
        return 2;
    }
    const json& r = *snap.result;
    if (as_json) {
        emit(r.dump(2) + "\n", out_path);
    } else {
        emit(r.value("program", std::string()), out_path);
        if (r.contains("best_effort")) std::cerr << r["best_effort"]["explanation"].get<std::string>();
    }
    return r.value("verified", false) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Annotation generation, checking, repair and minimization for Dafny programs"};
    app.require_subcommand(1);

    std::string config_path, config_id, out_path, selection, original_path;
    std::vector<std::string> files;
    int retry_limit = 3;
    bool as_json = false, quiet = false;

    auto* strip = app.add_subcommand("strip", "Remove specification and proof annotations");
    strip->add_option("file", files, "Dafny source")->required()->expected(1);
    strip->add_option("-o,--output", out_path, "Output file (default stdout)");

    auto* loc = app.add_subcommand("loc", "Count code (L), annotation (A) and helper (H) lines");
    loc->add_option("files", files, "Dafny sources")->required();

    std::string candidate_path;
    auto* cheat = app.add_subcommand("check-cheating", "Screen an annotated candidate against its original");
    cheat->add_option("original", original_path, "Unannotated program")->required();
    cheat->add_option("candidate", candidate_path, "Annotated program")->required();

    auto* verify = app.add_subcommand("verify", "Run the configured verifier on one file");
    verify->add_option("file", files, "Dafny source")->required()->expected(1);
    verify->add_option("-c,--config", config_path, "Setup file (providers, verifier, configs)")->required();

    auto add_job_options = [&](CLI::App* cmd) {
        cmd->add_option("file", files, "Dafny source")->required()->expected(1);
        cmd->add_option("-c,--config", config_path, "Setup file (providers, verifier, configs)")->required();
        cmd->add_option("--config-id", config_id, "Configuration to use (default: the first)");
        cmd->add_option("--retry-limit", retry_limit, "Repair iterations after the first attempt")->capture_default_str();
        cmd->add_option("-o,--output", out_path, "Write the result here (default stdout)");
        cmd->add_flag("--json", as_json, "Print the full result as JSON");
        cmd->add_flag("-q,--quiet", quiet, "Do not print progress");
    };
    auto* generate = app.add_subcommand("generate", "Generate annotations with the configured models");
    add_job_options(generate);
    generate->add_option("--select", selection, "Only annotate declarations on lines START:END");
    bool strip_first = false;
    generate->add_flag("--strip", strip_first, "Strip existing annotations before generating");
    auto* repair = app.add_subcommand("repair", "Repair the annotations of a program that does not verify");
    add_job_options(repair);
    repair->add_option("--select", selection, "Only rewrite declarations on lines START:END");
    auto* minimize_cmd = app.add_subcommand("minimize", "Remove redundant annotations from a verified program");
    add_job_options(minimize_cmd);
    minimize_cmd->add_option("--original", original_path, "The program before annotation")->required();

    std::string records_path, report_path;
    int workers = 0, k_max = 10;
    auto* bench = app.add_subcommand("bench", "Run every configuration on every dataset program");
    bench->add_option("-c,--config", config_path, "Experiment file")->required();
    bench->add_option("--records", records_path, "Run records (JSON lines); existing records are reused");
    bench->add_option("--report", report_path, "Write the report JSON here");
    bench->add_option("-j,--workers", workers, "Parallel jobs (default: from the experiment file)");
    bench->add_option("--k-max", k_max, "Largest k for success@k")->capture_default_str();

    auto* analyze = app.add_subcommand("analyze", "Rebuild the report from saved run records");
    analyze->add_option("-c,--config", config_path, "Experiment file")->required();
    analyze->add_option("--records", records_path, "Run records (JSON lines)")->required();
    analyze->add_option("--report", report_path, "Write the report JSON here");
    analyze->add_option("--k-max", k_max, "Largest k for success@k")->capture_default_str();

    int port = -1, max_jobs = 2;
    std::string artifacts;
    auto* serve = app.add_subcommand("serve", "Run the assistant service (JSON lines on stdin/stdout or TCP)");
    serve->add_option("-c,--config", config_path, "Setup file (providers, verifier, configs)")->required();
    serve->add_option("--config-id", config_id, "Default configuration (default: the first)");
    serve->add_option("--tcp", port, "Listen on 127.0.0.1:PORT instead of standard streams");
    serve->add_option("--max-jobs", max_jobs, "Jobs run at the same time")->capture_default_str();
    serve->add_option("--retry-limit", retry_limit, "Default repair iterations per job")->capture_default_str();
    serve->add_option("--artifacts", artifacts, "Write finished job reports to this directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*strip) {
            emit(strip_annotations(slurp(files[0])), out_path);
            return 0;
        }
        if (*loc) {
            LocStats total;
            for (const auto& f : files) {
                LocStats s = count_loc(parse(slurp(f), f));
                total += s;
                std::printf("%6d %6d %6d  %s\n", s.L, s.A, s.H, f.c_str());
            }
            if (files.size() > 1) std::printf("%6d %6d %6d  total\n", total.L, total.A, total.H);
            return 0;
        }
        if (*cheat) {
            SourceFile original = parse(slurp(original_path), original_path);
            SourceFile candidate = parse(slurp(candidate_path), candidate_path);
            auto violations = detect_cheating(original, candidate);
            for (const auto& v : violations) std::cout << to_string(v.kind) << " (line " << v.line << "): " << v.detail << "\n";
            if (violations.empty()) std::cout << "no violations\n";
            return violations.empty() ? 0 : 1;
        }
        if (*verify) {
            auto setup = load_experiment_setup(config_path);
            VerificationOutcome o = setup.verifier().verify(slurp(files[0]), setup.verifier_config);
            std::cout << to_json(o).dump(2) << "\n";
            return o.status == VerifyStatus::Success ? 0 : 1;
        }
        if (*generate || *repair || *minimize_cmd) {
            auto setup = load_experiment_setup(config_path);
            JobManager jobs(service_config(setup, config_id, retry_limit));
            JobRequest r;
            r.program_text = slurp(files[0]);
            r.selection = parse_selection(selection);
            if (*generate) {
                r.kind = JobKind::Generate;
                if (strip_first) r.program_text = strip_annotations(r.program_text);
            } else if (*repair) {
                r.kind = JobKind::Repair;
            } else {
                r.kind = JobKind::Minimize;
                r.original_text = slurp(original_path);
            }
            return finish_job(run_job(jobs, std::move(r), quiet), as_json, out_path);
        }
        if (*bench || *analyze) {
            auto setup = load_experiment_setup(config_path);
            if (!setup.dataset_root) throw std::invalid_argument("the experiment file names no dataset");
            Dataset dataset = load_dataset(*setup.dataset_root);
            for (const auto& w : dataset.warnings) std::cerr << "warning: " << w.id << ": " << w.message << "\n";
            ExperimentReport report;
            if (*bench) {
                ExperimentOptions opts;
                opts.workers = workers > 0 ? workers : setup.workers;
                opts.k_max = k_max;
                if (!records_path.empty()) opts.records_path = records_path;
                opts.on_record = [](const RunRecord& r) {
                    std::cerr << r.program_id << " / " << r.config_id << ": " << (r.result.solved ? "solved" : "unsolved")
                              << " after " << r.result.attempts.size() << " attempts\n";
                };
                report = run_experiment(dataset, setup.configs, setup.verifier(), opts);
            } else {
                std::vector<RunRecord> records;
                std::ifstream in(records_path);
                if (!in) throw std::runtime_error("cannot read " + records_path);
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    try {
                        records.push_back(run_record_from_json(json::parse(line)));
                    } catch (const json::exception&) {
                        std::cerr << "warning: skipping a malformed record line\n";
                    }
                }
                report = build_report(std::move(records), dataset, setup.configs, k_max);
            }
            std::cout << report.summary_table();
            if (!report_path.empty()) emit(report.to_json().dump(2) + "\n", report_path);
            return 0;
        }
        if (*serve) {
            auto setup = load_experiment_setup(config_path);
            ServiceConfig cfg = service_config(setup, config_id, retry_limit);
            cfg.max_concurrent_jobs = max_jobs;
            if (!artifacts.empty()) cfg.artifacts_dir = artifacts;
            AssistantService service(std::move(cfg));
            if (port >= 0) {
                service.serve_tcp(port, [](int bound) { std::cerr << "listening on 127.0.0.1:" << bound << "\n"; });
            } else {
                service.serve_stream(std::cin, std::cout);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
