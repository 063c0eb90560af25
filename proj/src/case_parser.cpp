#include "meshflow/case_parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace meshflow {

namespace {

// MATPOWER column positions
namespace bus_col {
constexpr int id = 0, type = 1, pd = 2, qd = 3, gs = 4, bs = 5, base_kv = 9, vmax = 11, vmin = 12;
}
namespace gen_col {
constexpr int bus = 0, qmax = 3, qmin = 4, status = 7, pmax = 8, pmin = 9;
}
namespace branch_col {
constexpr int from = 0, to = 1, r = 2, x = 3, b = 4, rate_a = 5, tap = 8, shift = 9, status = 10,
              angmin = 11, angmax = 12;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Removes a trailing % comment, ignoring % inside single-quoted strings.
std::string_view strip_comment(std::string_view line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\'') quoted = !quoted;
        else if (line[i] == '%' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::optional<double> parse_number(std::string_view tok) {
    if (tok.empty()) return std::nullopt;
    bool negative = false;
    std::string_view body = tok;
    if (body.front() == '+' || body.front() == '-') {
        negative = body.front() == '-';
        body.remove_prefix(1);
    }
    if (body == "Inf" || body == "inf") {
        const double inf = std::numeric_limits<double>::infinity();
        return negative ? -inf : inf;
    }
    if (body.empty() || body.front() == '+' || body.front() == '-') return std::nullopt;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (ec != std::errc() || ptr != body.data() + body.size()) return std::nullopt;
    return negative ? -value : value;
}

class CaseReader {
  public:
    explicit CaseReader(std::string_view text) : text_(text) {}

    RawCase run() {
        std::size_t pos = 0;
        int line_no = 0;
        while (pos <= text_.size()) {
            std::size_t end = text_.find('\n', pos);
            if (end == std::string_view::npos) end = text_.size();
            ++line_no;
            line(strip_comment(text_.substr(pos, end - pos)), line_no);
            if (end == text_.size()) break;
            pos = end + 1;
        }
        if (state_ == State::Matrix) {
            throw Error(ErrorKind::SyntaxError, "unterminated matrix mpc." + field_, matrix_line_);
        }
        if (state_ == State::Cell) {
            throw Error(ErrorKind::SyntaxError, "unterminated cell array mpc." + field_, matrix_line_);
        }
        if (!have_base_) throw Error(ErrorKind::MissingSection, "baseMVA");
        if (!seen_bus_) throw Error(ErrorKind::MissingSection, "bus");
        if (!seen_gen_) throw Error(ErrorKind::MissingSection, "gen");
        if (!seen_branch_) throw Error(ErrorKind::MissingSection, "branch");
        check_shape(out_.bus, "bus", 13);
        check_shape(out_.gen, "gen", 10);
        check_shape(out_.branch, "branch", 13);
        if (!out_.gencost.empty()) {
            check_shape(out_.gencost, "gencost", 4);
            if (out_.gencost.size() != out_.gen.size()) {
                throw Error(ErrorKind::SyntaxError,
                            "gencost has " + std::to_string(out_.gencost.size()) + " rows for " +
                                std::to_string(out_.gen.size()) + " generators",
                            out_.gencost.lines.front());
            }
        }
        return std::move(out_);
    }

  private:
    enum class State { Top, Matrix, Cell };

    void check_shape(const Table& t, const std::string& name, std::size_t min_cols) {
        if (t.empty()) throw Error(ErrorKind::MissingSection, name + " (empty)");
        if (t.cols() < min_cols) {
            throw Error(ErrorKind::SyntaxError,
                        "mpc." + name + " needs at least " + std::to_string(min_cols) + " columns",
                        t.lines.front());
        }
    }

    void line(std::string_view raw, int line_no) {
        switch (state_) {
            case State::Matrix: matrix_content(raw, line_no); return;
            case State::Cell: cell_content(raw); return;
            case State::Top: break;
        }
        std::string_view s = trim(raw);
        if (s.empty()) return;
        if (s.starts_with("function")) {
            auto eq = s.find('=');
            if (eq == std::string_view::npos) {
                throw Error(ErrorKind::SyntaxError, "malformed function header", line_no);
            }
            out_.name = std::string(trim(s.substr(eq + 1)));
            return;
        }
        if (s == "end" || s == "end;" || s == "return" || s == "return;") return;
        if (!s.starts_with("mpc.")) {
            throw Error(ErrorKind::SyntaxError, "unexpected statement", line_no);
        }
        auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorKind::SyntaxError, "expected '=' in assignment", line_no);
        }
        field_ = std::string(trim(s.substr(4, eq - 4)));
        if (field_.empty()) throw Error(ErrorKind::SyntaxError, "empty field name", line_no);
        std::string_view rhs = trim(s.substr(eq + 1));
        if (rhs.starts_with("[")) {
            state_ = State::Matrix;
            matrix_line_ = line_no;
            current_ = Table{};
            pending_.clear();
            matrix_content(rhs.substr(1), line_no);
        } else if (rhs.starts_with("{")) {
            state_ = State::Cell;
            matrix_line_ = line_no;
            cell_content(rhs.substr(1));
        } else if (field_ == "baseMVA") {
            if (!rhs.ends_with(";")) throw Error(ErrorKind::SyntaxError, "missing ';'", line_no);
            auto v = parse_number(trim(rhs.substr(0, rhs.size() - 1)));
            if (!v) throw Error(ErrorKind::NonNumericEntry, "baseMVA", line_no, 1);
            out_.base_mva = *v;
            have_base_ = true;
        }
        // other scalar/string fields (version, ...) are ignored
    }

    void cell_content(std::string_view s) {
        bool quoted = false;
        for (char c : s) {
            if (c == '\'') quoted = !quoted;
            else if (c == '}' && !quoted) {
                state_ = State::Top;
                return;
            }
        }
    }

    void flush_row(int line_no) {
        if (pending_.empty()) return;
        if (!current_.rows.empty() && pending_.size() != current_.cols()) {
            throw Error(ErrorKind::SyntaxError,
                        "row has " + std::to_string(pending_.size()) + " columns, expected " +
                            std::to_string(current_.cols()),
                        line_no);
        }
        current_.rows.push_back(std::move(pending_));
        current_.lines.push_back(line_no);
        pending_.clear();
    }

    void matrix_content(std::string_view s, int line_no) {
        std::size_t i = 0;
        while (i < s.size()) {
            const char c = s[i];
            if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
                ++i;
                continue;
            }
            if (c == ';') {
                if (pending_.empty()) {
                    throw Error(ErrorKind::SyntaxError, "empty row", line_no);
                }
                flush_row(line_no);
                ++i;
                continue;
            }
            if (c == ']') {
                flush_row(line_no);
                std::string_view rest = trim(s.substr(i + 1));
                if (!rest.empty() && rest != ";") {
                    throw Error(ErrorKind::SyntaxError, "trailing text after ']'", line_no);
                }
                finish_matrix();
                state_ = State::Top;
                return;
            }
            std::size_t j = i;
            while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) && s[j] != ',' &&
                   s[j] != ';' && s[j] != ']') {
                ++j;
            }
            std::string_view tok = s.substr(i, j - i);
            auto v = parse_number(tok);
            if (!v) {
                throw Error(ErrorKind::NonNumericEntry, "'" + std::string(tok) + "' in mpc." + field_,
                            line_no, static_cast<int>(pending_.size() + 1));
            }
            pending_.push_back(*v);
            i = j;
        }
        // a newline also terminates a row
        flush_row(line_no);
    }

    void finish_matrix() {
        if (field_ == "bus") {
            out_.bus = std::move(current_);
            seen_bus_ = true;
        } else if (field_ == "gen") {
            out_.gen = std::move(current_);
            seen_gen_ = true;
        } else if (field_ == "branch") {
            out_.branch = std::move(current_);
            seen_branch_ = true;
        } else if (field_ == "gencost") {
            out_.gencost = std::move(current_);
        }
        current_ = Table{};
    }

    std::string_view text_;
    RawCase out_;
    State state_ = State::Top;
    std::string field_;
    int matrix_line_ = 0;
    Table current_;
    std::vector<double> pending_;
    bool have_base_ = false;
    bool seen_bus_ = false;
    bool seen_gen_ = false;
    bool seen_branch_ = false;
};

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

int as_bus_id(double v, int line) {
    if (!(v >= 1.0) || v != std::floor(v) || v > std::numeric_limits<int>::max()) {
        throw Error(ErrorKind::SyntaxError, "bus number must be a positive integer", line);
    }
    return static_cast<int>(v);
}

}  // namespace

RawCase parse_case(std::string_view text) { return CaseReader(text).run(); }

RawCase read_case_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingFile, path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_case(buffer.str());
}

Network to_network(const RawCase& raw, const ConversionOptions& options,
                   std::vector<std::string>* warnings) {
    const double base = raw.base_mva;
    if (!(base > 0.0) || !std::isfinite(base)) {
        throw Error(ErrorKind::InvalidNetwork, "baseMVA must be positive");
    }

    std::vector<Bus> buses;
    std::vector<int> isolated;
    int references = 0;
    for (std::size_t i = 0; i < raw.bus.size(); ++i) {
        const auto& row = raw.bus.rows[i];
        const int line = raw.bus.lines[i];
        const int type = static_cast<int>(row[bus_col::type]);
        if (type == 4) {
            isolated.push_back(as_bus_id(row[bus_col::id], line));
            continue;
        }
        Bus b;
        b.id = as_bus_id(row[bus_col::id], line);
        switch (type) {
            case 1: b.kind = BusKind::PQ; break;
            case 2: b.kind = BusKind::PV; break;
            case 3:
                b.kind = BusKind::Reference;
                ++references;
                break;
            default: throw Error(ErrorKind::SyntaxError, "unknown bus type " + std::to_string(type), line);
        }
        b.p_demand = row[bus_col::pd] / base;
        b.q_demand = row[bus_col::qd] / base;
        b.shunt_conductance = row[bus_col::gs] / base;
        b.shunt_susceptance = row[bus_col::bs] / base;
        b.base_kv = row[bus_col::base_kv];
        b.v_max = row[bus_col::vmax] > 0.0 ? row[bus_col::vmax] : 1.1;
        b.v_min = row[bus_col::vmin] > 0.0 ? row[bus_col::vmin] : 0.9;
        if (warnings && (b.p_demand < 0.0 || b.q_demand < 0.0)) {
            warnings->push_back("bus " + std::to_string(b.id) +
                                ": negative demand treated as a fixed injection");
        }
        buses.push_back(b);
    }
    if (references == 0) throw Error(ErrorKind::NoReferenceBus, "no bus of type 3");

    const bool has_gencost = !raw.gencost.empty();
    if (has_gencost && raw.gencost.size() != raw.gen.size()) {
        throw Error(ErrorKind::SyntaxError, "gencost rows do not match gen rows");
    }
    std::vector<Generator> generators;
    for (std::size_t i = 0; i < raw.gen.size(); ++i) {
        const auto& row = raw.gen.rows[i];
        if (row[gen_col::status] <= 0.0) continue;
        Generator g;
        g.bus_id = as_bus_id(row[gen_col::bus], raw.gen.lines[i]);
        g.p_min = row[gen_col::pmin] / base;
        g.p_max = row[gen_col::pmax] / base;
        g.q_min = row[gen_col::qmin] / base;
        g.q_max = row[gen_col::qmax] / base;
        if (has_gencost) {
            const auto& cost = raw.gencost.rows[i];
            const int line = raw.gencost.lines[i];
            const int model = static_cast<int>(cost[0]);
            if (model != 2) {
                throw Error(ErrorKind::UnsupportedCostModel,
                            model == 1 ? "piecewise-linear cost" : "cost model " + std::to_string(model), line);
            }
            const double ncost_raw = cost[3];
            if (ncost_raw != std::floor(ncost_raw) || ncost_raw < 0.0) {
                throw Error(ErrorKind::SyntaxError, "NCOST must be a non-negative integer", line);
            }
            const auto ncost = static_cast<std::size_t>(ncost_raw);
            if (ncost > 3) {
                throw Error(ErrorKind::UnsupportedCostModel,
                            "polynomial of degree " + std::to_string(ncost - 1) + " (at most 2 supported)", line);
            }
            if (cost.size() < 4 + ncost) {
                throw Error(ErrorKind::SyntaxError, "gencost row shorter than NCOST", line);
            }
            // coefficients are stored highest degree first
            double c[3] = {0.0, 0.0, 0.0};  // c0, c1, c2
            for (std::size_t k = 0; k < ncost; ++k) c[ncost - 1 - k] = cost[4 + k];
            g.cost_quadratic = c[2] * base * base;
            g.cost_linear = c[1] * base;
            g.cost_constant = c[0];
        } else if (options.cost_default) {
            g.cost_quadratic = options.cost_default->quadratic * base * base;
            g.cost_linear = options.cost_default->linear * base;
            g.cost_constant = options.cost_default->constant;
        } else {
            g.has_cost = false;
        }
        generators.push_back(g);
    }

    std::vector<BranchPi> branches;
    for (std::size_t i = 0; i < raw.branch.size(); ++i) {
        const auto& row = raw.branch.rows[i];
        const int line = raw.branch.lines[i];
        if (row[branch_col::status] <= 0.0) continue;
        if (row[branch_col::shift] != 0.0) {
            throw Error(ErrorKind::PhaseShifterPresent,
                        "shift " + std::to_string(row[branch_col::shift]) + " deg", line);
        }
        const double tap = row[branch_col::tap] == 0.0 ? 1.0 : row[branch_col::tap];
        PiParameters pi;
        try {
            pi = transformer_to_pi(row[branch_col::r], row[branch_col::x], row[branch_col::b], tap, 0.0);
        } catch (const Error& e) {
            throw Error(e.kind(), "branch row", line);
        }
        BranchPi br;
        br.from_bus = as_bus_id(row[branch_col::from], line);
        br.to_bus = as_bus_id(row[branch_col::to], line);
        br.resistance = pi.resistance;
        br.reactance = pi.reactance;
        br.shunt_conductance_s = pi.shunt_conductance_s;
        br.shunt_susceptance_s = pi.shunt_susceptance_s;
        br.shunt_conductance_r = pi.shunt_conductance_r;
        br.shunt_susceptance_r = pi.shunt_susceptance_r;
        if (options.ampacity) br.ampacity_sq = ampacity_sq_from_rating(row[branch_col::rate_a], base);
        const double amin = row[branch_col::angmin];
        const double amax = row[branch_col::angmax];
        if (amin == 0.0 && amax == 0.0) {
            br.angle_min = -kHalfPi;
            br.angle_max = kHalfPi;
        } else {
            br.angle_min = std::max(-kHalfPi, deg_to_rad(amin));
            br.angle_max = std::min(kHalfPi, deg_to_rad(amax));
        }
        if (std::find(isolated.begin(), isolated.end(), br.from_bus) != isolated.end() ||
            std::find(isolated.begin(), isolated.end(), br.to_bus) != isolated.end()) {
            throw Error(ErrorKind::InvalidNetwork, "in-service branch touches an isolated bus", line);
        }
        branches.push_back(br);
    }
    return Network(base, std::move(buses), std::move(generators), std::move(branches));
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

const char* kind_name(BusKind k) {
    switch (k) {
        case BusKind::PQ: return "PQ";
        case BusKind::PV: return "PV";
        case BusKind::Reference: return "Reference";
    }
    return "PQ";
}

BusKind kind_from(const std::string& s) {
    if (s == "PQ") return BusKind::PQ;
    if (s == "PV") return BusKind::PV;
    if (s == "Reference") return BusKind::Reference;
    throw Error(ErrorKind::InvalidNetwork, "unknown bus kind " + s);
}

}  // namespace

std::string to_canonical(const Network& network) {
    json j;
    j["base_mva"] = network.base_mva();
    j["buses"] = json::array();
    for (const Bus& b : network.buses()) {
        j["buses"].push_back({{"id", b.id},
                              {"kind", kind_name(b.kind)},
                              {"p_demand", b.p_demand},
                              {"q_demand", b.q_demand},
                              {"shunt_conductance", b.shunt_conductance},
                              {"shunt_susceptance", b.shunt_susceptance},
                              {"v_min", b.v_min},
                              {"v_max", b.v_max},
                              {"base_kv", b.base_kv}});
    }
    j["generators"] = json::array();
    for (const Generator& g : network.generators()) {
        j["generators"].push_back({{"bus_id", g.bus_id},
                                   {"p_min", g.p_min},
                                   {"p_max", g.p_max},
                                   {"q_min", g.q_min},
                                   {"q_max", g.q_max},
                                   {"cost_quadratic", g.cost_quadratic},
                                   {"cost_linear", g.cost_linear},
                                   {"cost_constant", g.cost_constant},
                                   {"has_cost", g.has_cost}});
    }
    j["branches"] = json::array();
    for (const BranchPi& br : network.branches()) {
        json e = {{"from_bus", br.from_bus},
                  {"to_bus", br.to_bus},
                  {"resistance", br.resistance},
                  {"reactance", br.reactance},
                  {"shunt_susceptance_s", br.shunt_susceptance_s},
                  {"shunt_susceptance_r", br.shunt_susceptance_r},
                  {"shunt_conductance_s", br.shunt_conductance_s},
                  {"shunt_conductance_r", br.shunt_conductance_r},
                  {"angle_min", br.angle_min},
                  {"angle_max", br.angle_max}};
        e["ampacity_sq"] = br.ampacity_sq ? json(*br.ampacity_sq) : json(nullptr);
        j["branches"].push_back(std::move(e));
    }
    return j.dump(1);
}

Network network_from_canonical(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
        std::vector<Bus> buses;
        for (const auto& e : j.at("buses")) {
            Bus b;
            b.id = e.at("id").get<int>();
            b.kind = kind_from(e.at("kind").get<std::string>());
            b.p_demand = e.at("p_demand");
            b.q_demand = e.at("q_demand");
            b.shunt_conductance = e.at("shunt_conductance");
            b.shunt_susceptance = e.at("shunt_susceptance");
            b.v_min = e.at("v_min");
            b.v_max = e.at("v_max");
            b.base_kv = e.at("base_kv");
            buses.push_back(b);
        }
        std::vector<Generator> gens;
        for (const auto& e : j.at("generators")) {
            Generator g;
            g.bus_id = e.at("bus_id").get<int>();
            g.p_min = e.at("p_min");
            g.p_max = e.at("p_max");
            g.q_min = e.at("q_min");
            g.q_max = e.at("q_max");
            g.cost_quadratic = e.at("cost_quadratic");
            g.cost_linear = e.at("cost_linear");
            g.cost_constant = e.at("cost_constant");
            g.has_cost = e.at("has_cost");
            gens.push_back(g);
        }
        std::vector<BranchPi> branches;
        for (const auto& e : j.at("branches")) {
            BranchPi br;
            br.from_bus = e.at("from_bus").get<int>();
            br.to_bus = e.at("to_bus").get<int>();
            br.resistance = e.at("resistance");
            br.reactance = e.at("reactance");
            br.shunt_susceptance_s = e.at("shunt_susceptance_s");
            br.shunt_susceptance_r = e.at("shunt_susceptance_r");
            br.shunt_conductance_s = e.at("shunt_conductance_s");
            br.shunt_conductance_r = e.at("shunt_conductance_r");
            br.angle_min = e.at("angle_min");
            br.angle_max = e.at("angle_max");
            if (!e.at("ampacity_sq").is_null()) br.ampacity_sq = e.at("ampacity_sq").get<double>();
            branches.push_back(br);
        }
        return Network(j.at("base_mva").get<double>(), std::move(buses), std::move(gens),
                       std::move(branches));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SyntaxError, std::string("canonical network: ") + e.what());
    }
}

}  // namespace meshflow
