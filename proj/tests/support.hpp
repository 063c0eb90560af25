#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "meshflow/case_parser.hpp"
#include "meshflow/model.hpp"

namespace meshflow::test {

inline std::string case_path(const std::string& name) {
    return std::string(MESHFLOW_CASE_DIR) + "/" + name + ".m";
}

inline std::string fixture_path(const std::string& name) {
    return std::string(MESHFLOW_FIXTURE_DIR) + "/" + name;
}

inline Network load_case(const std::string& name) { return to_network(read_case_file(case_path(name))); }

inline Network load_fixture(const std::string& file) { return to_network(read_case_file(fixture_path(file))); }

/// Uniform point strictly inside every box; unbounded coordinates in
/// [-1, 1] shifted inside a one-sided bound. Pinned variables keep their value.
inline std::vector<double> random_interior_point(const ConstraintSystem& sys, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.98), free(-1.0, 1.0);
    std::vector<double> x(sys.layout.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const Variable& v = sys.layout.vars[j];
        const bool lo = std::isfinite(v.lower), hi = std::isfinite(v.upper);
        if (lo && hi) x[j] = v.lower + u(rng) * (v.upper - v.lower);
        else if (lo) x[j] = v.lower + u(rng);
        else if (hi) x[j] = v.upper - u(rng);
        else x[j] = free(rng);
    }
    return x;
}

}  // namespace meshflow::test
