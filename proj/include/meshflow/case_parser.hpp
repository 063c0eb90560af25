#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meshflow/network.hpp"

namespace meshflow {

/// Rectangular numeric table with the source line of every row.
struct Table {
    std::vector<std::vector<double>> rows;
    std::vector<int> lines;

    std::size_t size() const noexcept { return rows.size(); }
    std::size_t cols() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
    bool empty() const noexcept { return rows.empty(); }
};

/// MATPOWER tables as read from disk, in MW/MVAr/degrees.
struct RawCase {
    std::string name;
    double base_mva = 0.0;
    Table bus;
    Table gen;
    Table branch;
    Table gencost;  // may be empty
};

/// Quadratic cost applied to every generator when the file carries no
/// gencost table. Coefficients are per MW, as in a gencost row.
struct CostCoefficients {
    double quadratic = 0.0;
    double linear = 0.0;
    double constant = 0.0;
};

RawCase parse_case(std::string_view text);
RawCase read_case_file(const std::string& path);

struct ConversionOptions {
    std::optional<CostCoefficients> cost_default;
    bool ampacity = true;  // false drops every rating
};

/// Validated per-unit network. `warnings` (optional) receives non-fatal notes
/// such as negative demands.
Network to_network(const RawCase& raw, const ConversionOptions& options = {},
                   std::vector<std::string>* warnings = nullptr);

/// Lossless text form of a network (JSON, full double precision).
std::string to_canonical(const Network& network);
Network network_from_canonical(std::string_view text);

}  // namespace meshflow
