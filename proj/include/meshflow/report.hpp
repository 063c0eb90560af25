#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meshflow/ipm.hpp"
#include "meshflow/model.hpp"
#include "meshflow/network.hpp"

namespace meshflow {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
    std::string case_path;
    Family family = Family::Exact;
    std::vector<int> formats{1};      // table numbering 1-12
    std::vector<double> penalties{0.0};
    PenaltyUnit penalty_unit = PenaltyUnit::PerMvar;
    SolverOptions solver;
    bool ampacity = true;
    std::optional<std::uint64_t> seed;  // perturbed start instead of flat start
    std::string currency = "$";         // echoed in reports, never converted

    void validate() const;  // throws InvalidSpec
};

/// "all" or a single table format 1-12.
std::vector<int> parse_formats(std::string_view text);
/// Comma-separated non-negative numbers.
std::vector<double> parse_penalties(std::string_view text);
Family parse_family(std::string_view text);

struct RunReport {
    std::string case_name;
    Family family = Family::Exact;
    int format = 1;
    double objective = 0.0;
    SolverStatus status = SolverStatus::NumericFailure;
    int iterations = 0;
    double wall_time_s = 0.0;  // build + solve
    double gap_po_max = 0.0;
    double gap_qo_max = 0.0;
    double ybus_mismatch_max = 0.0;
    int ampacity_violations = 0;
    double penalty = 0.0;

    // not serialized
    double build_time_s = 0.0;
    double solve_time_s = 0.0;
};

inline constexpr std::array<const char*, 12> kReportFields = {
    "case",     "family",     "format",     "objective",         "status",              "iterations",
    "wall_time_s", "gap_po_max", "gap_qo_max", "ybus_mismatch_max", "ampacity_violations", "penalty"};

/// Builds, solves and audits one format.
RunReport run_one(const Network& network, std::string_view case_name, Family family, int table_format,
                  double penalty, const RunConfig& config);

/// Every (penalty, format) pair of the config, ordered by penalty then format.
std::vector<RunReport> run_all(const Network& network, std::string_view case_name, const RunConfig& config);

std::string case_name_from_path(std::string_view path);

std::string to_json(std::string_view case_name, const std::vector<RunReport>& runs,
                    std::string_view currency = "$");
std::string to_csv(const std::vector<RunReport>& runs);

/// Exact-format pairs whose objectives differ by more than `relative`.
struct Divergence {
    int format_a;
    int format_b;
    double relative;
};
std::vector<Divergence> objective_divergence(const std::vector<RunReport>& runs, double relative = 5e-3);

}  // namespace meshflow
