// meshflow: solve, compare and audit branch-flow OPF formats on MATPOWER cases.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "meshflow/case_parser.hpp"
#include "meshflow/errors.hpp"
#include "meshflow/report.hpp"

namespace {

using namespace meshflow;

struct Args {
    std::string case_path;
    std::string family = "exact";
    std::string format;
    std::string penalty;
    std::string penalty_unit = "mvar";
    double tol = 1e-8;
    int max_iter = 200;
    bool no_ampacity = false;
    std::string out;
    std::string format_out = "json";
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    std::string currency = "$";
};

void add_common(CLI::App* cmd, Args& a, const std::string& default_format) {
    a.format = default_format;
    cmd->add_option("--case", a.case_path, "MATPOWER case file")->required();
    cmd->add_option("--family", a.family, "exact or approx")->capture_default_str();
    cmd->add_option("--format", a.format, "table format 1-12 or all")->capture_default_str();
    cmd->add_option("--tol", a.tol, "scaled KKT tolerance")->capture_default_str();
    cmd->add_option("--max-iter", a.max_iter, "iteration limit")->capture_default_str();
    cmd->add_flag("--no-ampacity", a.no_ampacity, "drop the ampacity rows");
    cmd->add_option("--out", a.out, "report path (default stdout)");
    cmd->add_option("--format-out", a.format_out, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();
    cmd->add_option("--seed", a.seed, "start from a seeded perturbation of the flat start");
    cmd->add_option("--penalty-unit", a.penalty_unit, "unit of q_o the penalty is quoted against: mvar or pu")
        ->check(CLI::IsMember({"mvar", "pu"}))
        ->capture_default_str();
    cmd->add_option("--currency", a.currency, "unit label for objectives")->capture_default_str();
    cmd->add_flag("-v,--verbose", a.verbose, "solver iteration log on stderr");
}

RunConfig make_config(const Args& a) {
    RunConfig cfg;
    cfg.case_path = a.case_path;
    cfg.family = parse_family(a.family);
    cfg.formats = parse_formats(a.format);
    cfg.penalties = a.penalty.empty() ? std::vector<double>{0.0} : parse_penalties(a.penalty);
    cfg.penalty_unit = a.penalty_unit == "pu" ? PenaltyUnit::PerUnit : PenaltyUnit::PerMvar;
    cfg.solver.tol_kkt = a.tol;
    cfg.solver.max_iter = a.max_iter;
    cfg.solver.verbose = a.verbose;
    cfg.ampacity = !a.no_ampacity;
    cfg.seed = a.seed;
    cfg.currency = a.currency;
    cfg.validate();
    return cfg;
}

void write_report(const Args& a, const std::string& case_name, const std::vector<RunReport>& runs) {
    const std::string text = a.format_out == "csv" ? to_csv(runs) : to_json(case_name, runs, a.currency);
    if (a.out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream file(a.out);
    if (!file) throw Error(ErrorKind::MissingFile, "cannot write " + a.out);
    file << text;
}

void log_run(const RunReport& r, const std::string& currency) {
    std::fprintf(stderr, "%s %s format %2d xi %g: %s objective %.6f %s, %d iterations, build %.3f s, solve %.3f s\n",
                 r.case_name.c_str(), to_string(r.family), r.format, r.penalty, to_string(r.status), r.objective,
                 currency.c_str(), r.iterations, r.build_time_s, r.solve_time_s);
}

enum class Mode { Solve, Compare, Gaps };

int run(const Args& a, Mode mode) {
    if (mode == Mode::Gaps && parse_family(a.family) != Family::Approximate) {
        throw Error(ErrorKind::InvalidSpec, "gaps needs --family approx");
    }
    const RunConfig cfg = make_config(a);
    std::vector<std::string> warnings;
    ConversionOptions conv;
    conv.ampacity = cfg.ampacity;
    const Network net = to_network(read_case_file(cfg.case_path), conv, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    const std::string name = case_name_from_path(cfg.case_path);
    std::vector<RunReport> runs;
    for (double xi : cfg.penalties) {
        for (int f : cfg.formats) {
            runs.push_back(run_one(net, name, cfg.family, f, xi, cfg));
            log_run(runs.back(), cfg.currency);
        }
    }
    write_report(a, name, runs);

    if (mode == Mode::Compare) {
        for (const Divergence& d : objective_divergence(runs)) {
            std::fprintf(stderr, "divergence: formats %d and %d differ by %.3f%% (distinct local optima)\n",
                         d.format_a, d.format_b, 100.0 * d.relative);
        }
    }
    int optimal = 0;
    for (const RunReport& r : runs) optimal += r.status == SolverStatus::Optimal;
    if (mode == Mode::Solve) return optimal == static_cast<int>(runs.size()) ? 0 : 2;
    return optimal > 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Branch-flow optimal power flow: exact and convex approximate formats"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Args solve_args, compare_args, gaps_args;
    CLI::App* solve = app.add_subcommand("solve", "solve one format (or all)");
    add_common(solve, solve_args, "1");
    solve->add_option("--penalty", solve_args.penalty, "reactive-loss penalty xi (approx only)");

    CLI::App* compare = app.add_subcommand("compare", "solve every format and compare objectives");
    add_common(compare, compare_args, "all");
    compare->add_option("--penalty", compare_args.penalty, "reactive-loss penalty xi (approx only)");

    CLI::App* gaps = app.add_subcommand("gaps", "approximation gaps over a penalty sweep");
    gaps_args.family = "approx";
    gaps_args.penalty = "0,0.3";
    add_common(gaps, gaps_args, "all");
    gaps->add_option("--penalty", gaps_args.penalty, "comma-separated penalty sweep")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*solve) return run(solve_args, Mode::Solve);
        if (*compare) return run(compare_args, Mode::Compare);
        return run(gaps_args, Mode::Gaps);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
