#include "meshflow/report.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "meshflow/analysis.hpp"
#include "meshflow/errors.hpp"

namespace meshflow {

void RunConfig::validate() const {
    if (formats.empty()) throw Error(ErrorKind::InvalidSpec, "no formats selected");
    for (int f : formats) {
        if (f < 1 || f > 12) throw Error(ErrorKind::InvalidSpec, "format must be 1-12 or all");
    }
    if (penalties.empty()) throw Error(ErrorKind::InvalidSpec, "no penalty values");
    for (double xi : penalties) {
        if (!(xi >= 0.0) || !std::isfinite(xi)) throw Error(ErrorKind::InvalidSpec, "penalty must be >= 0");
        if (xi > 0.0 && family == Family::Exact) {
            throw Error(ErrorKind::PenaltyOnExactModel, "--penalty needs --family approx");
        }
    }
    solver.validate();
}

std::vector<int> parse_formats(std::string_view text) {
    if (text == "all") {
        std::vector<int> all(12);
        for (int f = 1; f <= 12; ++f) all[f - 1] = f;
        return all;
    }
    int f = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), f);
    if (ec != std::errc{} || end != text.data() + text.size() || f < 1 || f > 12) {
        throw Error(ErrorKind::InvalidSpec, "format must be 1-12 or all, got '" + std::string(text) + "'");
    }
    return {f};
}

std::vector<double> parse_penalties(std::string_view text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        const std::string_view item = text.substr(pos, comma - pos);
        double xi = 0.0;
        const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), xi);
        if (item.empty() || ec != std::errc{} || end != item.data() + item.size() || !(xi >= 0.0) ||
            !std::isfinite(xi)) {
            throw Error(ErrorKind::InvalidSpec, "bad penalty value '" + std::string(item) + "'");
        }
        out.push_back(xi);
        pos = comma + 1;
    }
    return out;
}

Family parse_family(std::string_view text) {
    if (text == "exact") return Family::Exact;
    if (text == "approx" || text == "approximate") return Family::Approximate;
    throw Error(ErrorKind::InvalidSpec, "family must be exact or approx, got '" + std::string(text) + "'");
}

std::string case_name_from_path(std::string_view path) {
    return std::filesystem::path(path).stem().string();
}

RunReport run_one(const Network& net, std::string_view case_name, Family family, int table_format, double penalty,
                  const RunConfig& config) {
    using clock = std::chrono::steady_clock;
    RunReport rep;
    rep.case_name = std::string(case_name);
    rep.family = family;
    rep.format = table_format;
    rep.penalty = penalty;

    const auto t0 = clock::now();
    ModelSpec spec = ModelSpec::from_table_format(family, table_format, config.ampacity, penalty);
    spec.penalty_unit = config.penalty_unit;
    const ConstraintSystem sys = build_opf(net, spec);
    const auto t1 = clock::now();
    SolverResult result;
    if (config.seed) {
        const std::vector<double> start = perturbed_start(sys, *config.seed);
        result = solve(sys, config.solver, std::span<const double>(start));
    } else {
        result = solve(sys, config.solver);
    }
    const auto t2 = clock::now();

    rep.build_time_s = std::chrono::duration<double>(t1 - t0).count();
    rep.solve_time_s = std::chrono::duration<double>(t2 - t1).count();
    rep.wall_time_s = rep.build_time_s + rep.solve_time_s;
    rep.status = result.status;
    rep.objective = result.objective;
    rep.iterations = result.iterations;

    const OpfPoint pt = extract_point(sys, net, result.primal);
    const GapReport gaps = compute_gaps(pt, net);
    rep.gap_po_max = gaps.gap_po_max;
    rep.gap_qo_max = gaps.gap_qo_max;
    rep.ybus_mismatch_max = ybus_oracle(recover_solution(pt, net), net).max;
    rep.ampacity_violations = measurable_flows(pt, net).violations();
    return rep;
}

std::vector<RunReport> run_all(const Network& net, std::string_view case_name, const RunConfig& config) {
    config.validate();
    std::vector<RunReport> runs;
    for (double xi : config.penalties) {
        for (int f : config.formats) runs.push_back(run_one(net, case_name, config.family, f, xi, config));
    }
    return runs;
}

namespace {

nlohmann::json number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::string csv_number(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

}  // namespace

std::string to_json(std::string_view case_name, const std::vector<RunReport>& runs, std::string_view currency) {
    nlohmann::ordered_json doc;
    doc["tool_version"] = kToolVersion;
    doc["case"] = std::string(case_name);
    doc["currency"] = std::string(currency);
    doc["runs"] = nlohmann::ordered_json::array();
    for (const RunReport& r : runs) {
        nlohmann::ordered_json row;
        row["case"] = r.case_name;
        row["family"] = to_string(r.family);
        row["format"] = r.format;
        row["objective"] = number(r.objective);
        row["status"] = to_string(r.status);
        row["iterations"] = r.iterations;
        row["wall_time_s"] = number(r.wall_time_s);
        row["gap_po_max"] = number(r.gap_po_max);
        row["gap_qo_max"] = number(r.gap_qo_max);
        row["ybus_mismatch_max"] = number(r.ybus_mismatch_max);
        row["ampacity_violations"] = r.ampacity_violations;
        row["penalty"] = number(r.penalty);
        doc["runs"].push_back(std::move(row));
    }
    return doc.dump(2) + "\n";
}

std::string to_csv(const std::vector<RunReport>& runs) {
    std::ostringstream out;
    for (std::size_t k = 0; k < kReportFields.size(); ++k) out << (k ? "," : "") << kReportFields[k];
    out << "\n";
    for (const RunReport& r : runs) {
        out << r.case_name << ',' << to_string(r.family) << ',' << r.format << ',' << csv_number(r.objective) << ','
            << to_string(r.status) << ',' << r.iterations << ',' << csv_number(r.wall_time_s) << ','
            << csv_number(r.gap_po_max) << ',' << csv_number(r.gap_qo_max) << ','
            << csv_number(r.ybus_mismatch_max) << ',' << r.ampacity_violations << ',' << csv_number(r.penalty)
            << "\n";
    }
    return out.str();
}

std::vector<Divergence> objective_divergence(const std::vector<RunReport>& runs, double relative) {
    std::vector<Divergence> out;
    for (std::size_t a = 0; a < runs.size(); ++a) {
        for (std::size_t b = a + 1; b < runs.size(); ++b) {
            const RunReport &x = runs[a], &y = runs[b];
            if (x.family != Family::Exact || y.family != Family::Exact) continue;
            if (x.status != SolverStatus::Optimal || y.status != SolverStatus::Optimal) continue;
            if (x.penalty != y.penalty) continue;
            const double rel = std::abs(x.objective - y.objective) / std::max(std::abs(x.objective), 1e-12);
            if (rel > relative) out.push_back({x.format, y.format, rel});
        }
    }
    return out;
}

}  // namespace meshflow
