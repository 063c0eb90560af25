#include "meshflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace meshflow {

const char* to_string(Family family) {
    return family == Family::Exact ? "exact" : "approx";
}

ModelSpec ModelSpec::from_table_format(Family family, int table_format, bool ampacity, double penalty_xi) {
    if (table_format < 1 || table_format > 12) {
        throw Error(ErrorKind::InvalidSpec, "table format must be in 1..12, got " + std::to_string(table_format));
    }
    ModelSpec spec;
    spec.family = family;
    spec.equation_format = (table_format - 1) % 6 + 1;
    spec.ampacity_channel = !ampacity            ? AmpacityChannel::None
                            : table_format <= 6 ? AmpacityChannel::ActiveLoss
                                                : AmpacityChannel::ReactiveLoss;
    spec.penalty_xi = penalty_xi;
    spec.validate();
    return spec;
}

int ModelSpec::table_format() const {
    return ampacity_channel == AmpacityChannel::ReactiveLoss ? equation_format + 6 : equation_format;
}

void ModelSpec::validate() const {
    if (equation_format < 1 || equation_format > 6) {
        throw Error(ErrorKind::InvalidSpec, "equation format must be in 1..6");
    }
    if (!(penalty_xi >= 0.0) || !std::isfinite(penalty_xi)) {
        throw Error(ErrorKind::InvalidSpec, "penalty must be finite and non-negative");
    }
}

int VariableLayout::add(VarKind kind, std::size_t entity, double lower, double upper) {
    vars.push_back({kind, entity, lower, upper});
    return static_cast<int>(vars.size() - 1);
}

const char* to_string(FormTag tag) {
    switch (tag) {
        case FormTag::BalanceP: return "BalanceP";
        case FormTag::BalanceQ: return "BalanceQ";
        case FormTag::SqDrop: return "SqDrop";
        case FormTag::SinDrop: return "SinDrop";
        case FormTag::CosDrop: return "CosDrop";
        case FormTag::LossP: return "LossP";
        case FormTag::LossQ: return "LossQ";
        case FormTag::LossRatio: return "LossRatio";
        case FormTag::AngleLimit: return "AngleLimit";
        case FormTag::AngleLink: return "AngleLink";
        case FormTag::LinBalanceP: return "LinBalanceP";
        case FormTag::LinBalanceQ: return "LinBalanceQ";
        case FormTag::LinSqDrop: return "LinSqDrop";
        case FormTag::LinSinDrop: return "LinSinDrop";
        case FormTag::LinCosDrop: return "LinCosDrop";
        case FormTag::ConeLossP: return "ConeLossP";
        case FormTag::ConeLossQ: return "ConeLossQ";
        case FormTag::FeasCone: return "FeasCone";
        case FormTag::AmpacityP: return "AmpacityP";
        case FormTag::AmpacityQ: return "AmpacityQ";
    }
    return "?";
}

RowKind row_kind(const Row& row) {
    switch (row.tag) {
        case FormTag::ConeLossP:
        case FormTag::ConeLossQ:
        case FormTag::FeasCone: return RowKind::RotatedCone;
        default: break;
    }
    if (row.terms.empty()) return row.sense == Sense::Equal ? RowKind::LinearEq : RowKind::LinearIneq;
    return RowKind::SmoothNonlinear;
}

// ---------------------------------------------------------------------------

double Objective::generation_cost(std::span<const double> x) const {
    double f = constant;
    for (const auto& t : cost) f += (t.quad * x[t.index] + t.lin) * x[t.index];
    return f;
}

double Objective::value(std::span<const double> x) const {
    double f = generation_cost(x);
    for (int i : penalty_vars) f += penalty_xi * x[i];
    return f;
}

void Objective::gradient(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : cost) out[t.index] += 2.0 * t.quad * x[t.index] + t.lin;
    for (int i : penalty_vars) out[i] += penalty_xi;
}

// ---------------------------------------------------------------------------

namespace {

double term_value(const Term& t, std::span<const double> x) {
    const auto& i = t.idx;
    switch (t.kind) {
        case Term::Kind::Square: return t.coef * x[i[0]] * x[i[0]];
        case Term::Kind::QuadOverSquare: {
            const double a = x[i[0]], b = x[i[1]], v = x[i[2]];
            return t.coef * (a * a + b * b) / (v * v);
        }
        case Term::Kind::QuadOverLin: {
            const double a = x[i[0]], b = i[1] >= 0 ? x[i[1]] : 0.0, w = x[i[2]];
            return t.coef * (a * a + b * b) / w;
        }
        case Term::Kind::ProdSin: return t.coef * x[i[0]] * x[i[1]] * std::sin(x[i[2]] - x[i[3]]);
        case Term::Kind::ProdCos: return t.coef * x[i[0]] * x[i[1]] * std::cos(x[i[2]] - x[i[3]]);
    }
    return 0.0;
}

void term_gradient(const Term& t, std::span<const double> x, std::vector<std::pair<int, double>>& out) {
    const auto& i = t.idx;
    const double c = t.coef;
    switch (t.kind) {
        case Term::Kind::Square: out.emplace_back(i[0], 2.0 * c * x[i[0]]); return;
        case Term::Kind::QuadOverSquare: {
            const double a = x[i[0]], b = x[i[1]], v = x[i[2]];
            const double v2 = v * v;
            out.emplace_back(i[0], 2.0 * c * a / v2);
            out.emplace_back(i[1], 2.0 * c * b / v2);
            out.emplace_back(i[2], -2.0 * c * (a * a + b * b) / (v2 * v));
            return;
        }
        case Term::Kind::QuadOverLin: {
            const double a = x[i[0]], b = i[1] >= 0 ? x[i[1]] : 0.0, w = x[i[2]];
            out.emplace_back(i[0], 2.0 * c * a / w);
            if (i[1] >= 0) out.emplace_back(i[1], 2.0 * c * b / w);
            out.emplace_back(i[2], -c * (a * a + b * b) / (w * w));
            return;
        }
        case Term::Kind::ProdSin: {
            const double u = x[i[0]], v = x[i[1]], d = x[i[2]] - x[i[3]];
            const double s = std::sin(d), k = std::cos(d);
            out.emplace_back(i[0], c * v * s);
            out.emplace_back(i[1], c * u * s);
            out.emplace_back(i[2], c * u * v * k);
            out.emplace_back(i[3], -c * u * v * k);
            return;
        }
        case Term::Kind::ProdCos: {
            const double u = x[i[0]], v = x[i[1]], d = x[i[2]] - x[i[3]];
            const double s = std::sin(d), k = std::cos(d);
            out.emplace_back(i[0], c * v * k);
            out.emplace_back(i[1], c * u * k);
            out.emplace_back(i[2], -c * u * v * s);
            out.emplace_back(i[3], c * u * v * s);
            return;
        }
    }
}

void push_lower(std::vector<HessianEntry>& out, int a, int b, double value) {
    if (value == 0.0) return;
    if (a >= b) out.push_back({a, b, value});
    else out.push_back({b, a, value});
}

void term_hessian(const Term& t, std::span<const double> x, double weight, std::vector<HessianEntry>& out) {
    const auto& i = t.idx;
    const double c = weight * t.coef;
    switch (t.kind) {
        case Term::Kind::Square: push_lower(out, i[0], i[0], 2.0 * c); return;
        case Term::Kind::QuadOverSquare: {
            const double a = x[i[0]], b = x[i[1]], v = x[i[2]];
            const double v2 = v * v, v3 = v2 * v;
            push_lower(out, i[0], i[0], 2.0 * c / v2);
            push_lower(out, i[1], i[1], 2.0 * c / v2);
            push_lower(out, i[0], i[2], -4.0 * c * a / v3);
            push_lower(out, i[1], i[2], -4.0 * c * b / v3);
            push_lower(out, i[2], i[2], 6.0 * c * (a * a + b * b) / (v2 * v2));
            return;
        }
        case Term::Kind::QuadOverLin: {
            const double a = x[i[0]], b = i[1] >= 0 ? x[i[1]] : 0.0, w = x[i[2]];
            const double w2 = w * w;
            push_lower(out, i[0], i[0], 2.0 * c / w);
            push_lower(out, i[0], i[2], -2.0 * c * a / w2);
            if (i[1] >= 0) {
                push_lower(out, i[1], i[1], 2.0 * c / w);
                push_lower(out, i[1], i[2], -2.0 * c * b / w2);
            }
            push_lower(out, i[2], i[2], 2.0 * c * (a * a + b * b) / (w2 * w));
            return;
        }
        case Term::Kind::ProdSin: {
            const double u = x[i[0]], v = x[i[1]], d = x[i[2]] - x[i[3]];
            const double s = std::sin(d), k = std::cos(d);
            push_lower(out, i[0], i[1], c * s);
            push_lower(out, i[0], i[2], c * v * k);
            push_lower(out, i[0], i[3], -c * v * k);
            push_lower(out, i[1], i[2], c * u * k);
            push_lower(out, i[1], i[3], -c * u * k);
            push_lower(out, i[2], i[2], -c * u * v * s);
            push_lower(out, i[3], i[3], -c * u * v * s);
            push_lower(out, i[2], i[3], c * u * v * s);
            return;
        }
        case Term::Kind::ProdCos: {
            const double u = x[i[0]], v = x[i[1]], d = x[i[2]] - x[i[3]];
            const double s = std::sin(d), k = std::cos(d);
            push_lower(out, i[0], i[1], c * k);
            push_lower(out, i[0], i[2], -c * v * s);
            push_lower(out, i[0], i[3], c * v * s);
            push_lower(out, i[1], i[2], -c * u * s);
            push_lower(out, i[1], i[3], c * u * s);
            push_lower(out, i[2], i[2], -c * u * v * k);
            push_lower(out, i[3], i[3], -c * u * v * k);
            push_lower(out, i[2], i[3], c * u * v * k);
            return;
        }
    }
}

}  // namespace

double evaluate(const Row& row, std::span<const double> x) {
    double r = row.constant;
    for (const auto& [i, a] : row.linear) r += a * x[i];
    for (const Term& t : row.terms) r += term_value(t, x);
    return r;
}

void gradient(const Row& row, std::span<const double> x, std::vector<std::pair<int, double>>& out) {
    for (const auto& entry : row.linear) out.push_back(entry);
    for (const Term& t : row.terms) term_gradient(t, x, out);
}

void hessian(const Row& row, std::span<const double> x, double weight, std::vector<HessianEntry>& out) {
    if (weight == 0.0) return;
    for (const Term& t : row.terms) term_hessian(t, x, weight, out);
}

// ---------------------------------------------------------------------------

AmpacityExpr ampacity_expr(const BranchPi& br, AmpacityChannel channel) {
    const double scale = channel == AmpacityChannel::ReactiveLoss ? br.reactance : br.resistance;
    const double b = br.shunt_susceptance_s;
    const double g = br.shunt_conductance_s;
    AmpacityExpr e;
    e.constant = br.ampacity_sq.value() * scale;
    e.v_sq = -(b * b + g * g) * scale;
    e.q_s = 2.0 * b * scale;
    e.p_s = -2.0 * g * scale;
    return e;
}

VariableLayout build_layout(const Network& network, Family family) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const std::size_t ng = network.num_generators();
    const std::size_t nb = network.num_buses();
    const std::size_t nl = network.num_branches();

    VariableLayout layout;
    layout.family = family;
    layout.gen_p.resize(ng);
    layout.gen_q.resize(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        const Generator& gen = network.generators()[g];
        layout.gen_p[g] = layout.add(VarKind::GenP, g, gen.p_min, gen.p_max);
        layout.gen_q[g] = layout.add(VarKind::GenQ, g, gen.q_min, gen.q_max);
    }
    layout.bus_voltage.resize(nb);
    layout.bus_angle.assign(nb, -1);
    for (std::size_t n = 0; n < nb; ++n) {
        const Bus& bus = network.buses()[n];
        if (family == Family::Exact) {
            layout.bus_voltage[n] = layout.add(VarKind::BusVoltage, n, bus.v_min, bus.v_max);
        } else {
            layout.bus_voltage[n] =
                layout.add(VarKind::BusVoltageSq, n, bus.v_min * bus.v_min, bus.v_max * bus.v_max);
        }
    }
    // the approximate family keeps nodal angles too: tying theta_l to them
    // is what closes every cycle
    for (std::size_t n = 0; n < nb; ++n) {
        const bool ref = n == network.reference_index();
        layout.bus_angle[n] = layout.add(VarKind::BusAngle, n, ref ? 0.0 : -std::numbers::pi,
                                         ref ? 0.0 : std::numbers::pi);
    }
    layout.flow_p.resize(nl);
    layout.flow_q.resize(nl);
    layout.loss_p.resize(nl);
    layout.loss_q.resize(nl);
    layout.branch_angle.assign(nl, -1);
    for (std::size_t l = 0; l < nl; ++l) {
        const BranchPi& br = network.branches()[l];
        layout.flow_p[l] = layout.add(VarKind::FlowP, l, -inf, inf);
        layout.flow_q[l] = layout.add(VarKind::FlowQ, l, -inf, inf);
        // sign of a loss follows its impedance; a zero impedance leaves it free
        layout.loss_p[l] = layout.add(VarKind::LossP, l, br.resistance > 0.0 ? 0.0 : -inf,
                                      br.resistance < 0.0 ? 0.0 : inf);
        layout.loss_q[l] = layout.add(VarKind::LossQ, l, br.reactance > 0.0 ? 0.0 : -inf,
                                      br.reactance < 0.0 ? 0.0 : inf);
        if (family == Family::Approximate) {
            layout.branch_angle[l] = layout.add(VarKind::BranchAngle, l, br.angle_min, br.angle_max);
        }
    }
    return layout;
}

namespace {

struct Membership {
    bool sq_drop = false;
    bool cos_drop = false;
    bool loss_p = false;  // equality or cone
    bool loss_q = false;
    bool ratio = false;   // X p_o = R q_o
};

Membership membership(int equation_format) {
    Membership m;
    m.sq_drop = equation_format <= 3;
    m.cos_drop = !m.sq_drop;
    switch ((equation_format - 1) % 3) {
        case 0: m.loss_p = m.loss_q = true; break;
        case 1: m.loss_p = m.ratio = true; break;
        default: m.loss_q = m.ratio = true; break;
    }
    return m;
}

void add_balance_rows(ConstraintSystem& sys, const Network& net, bool active) {
    const VariableLayout& lay = sys.layout;
    const bool exact = lay.family == Family::Exact;
    const auto& flow = active ? lay.flow_p : lay.flow_q;
    const auto& loss = active ? lay.loss_p : lay.loss_q;
    const auto& gens = active ? lay.gen_p : lay.gen_q;
    const FormTag tag = exact ? (active ? FormTag::BalanceP : FormTag::BalanceQ)
                              : (active ? FormTag::LinBalanceP : FormTag::LinBalanceQ);

    std::vector<Row> rows(net.num_buses());
    for (std::size_t n = 0; n < net.num_buses(); ++n) {
        Row& row = rows[n];
        row.tag = tag;
        row.sense = Sense::Equal;
        row.entity = n;
        const Bus& bus = net.buses()[n];
        row.constant = active ? -bus.p_demand : -bus.q_demand;
        // shunt: -G v^2 for active, +B v^2 for reactive
        const double shunt = active ? -net.total_shunt_conductance(n) : net.total_shunt_susceptance(n);
        const int v = lay.bus_voltage[n];
        if (exact) row.terms.push_back({Term::Kind::Square, shunt, {v, -1, -1, -1}});
        else row.linear.emplace_back(v, shunt);
    }
    for (std::size_t g = 0; g < net.num_generators(); ++g) {
        rows[net.gen_bus_index(g)].linear.emplace_back(gens[g], 1.0);
    }
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        // -sum(A+ p_s - A- p_o): sending end -p_s; receiving end +p_s - p_o
        rows[net.from_index(l)].linear.emplace_back(flow[l], -1.0);
        rows[net.to_index(l)].linear.emplace_back(flow[l], 1.0);
        rows[net.to_index(l)].linear.emplace_back(loss[l], -1.0);
    }
    for (Row& r : rows) sys.rows.push_back(std::move(r));
}

Row branch_row(FormTag tag, Sense sense, std::size_t l) {
    Row row;
    row.tag = tag;
    row.sense = sense;
    row.entity = l;
    return row;
}

void add_exact_branch_rows(ConstraintSystem& sys, const Network& net, const Membership& m) {
    const VariableLayout& lay = sys.layout;
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const double R = br.resistance, X = br.reactance;
        const int vs = lay.bus_voltage[net.from_index(l)];
        const int vr = lay.bus_voltage[net.to_index(l)];
        const int ts = lay.bus_angle[net.from_index(l)];
        const int tr = lay.bus_angle[net.to_index(l)];
        const int ps = lay.flow_p[l], qs = lay.flow_q[l], po = lay.loss_p[l], qo = lay.loss_q[l];

        if (m.sq_drop) {
            Row row = branch_row(FormTag::SqDrop, Sense::Equal, l);
            row.terms = {{Term::Kind::Square, 1.0, {vs, -1, -1, -1}}, {Term::Kind::Square, -1.0, {vr, -1, -1, -1}}};
            row.linear = {{ps, -2.0 * R}, {qs, -2.0 * X}, {po, R}, {qo, X}};
            sys.rows.push_back(std::move(row));
        }
        {
            Row row = branch_row(FormTag::SinDrop, Sense::Equal, l);
            row.terms = {{Term::Kind::ProdSin, 1.0, {vs, vr, ts, tr}}};
            row.linear = {{ps, -X}, {qs, R}};
            sys.rows.push_back(std::move(row));
        }
        if (m.cos_drop) {
            Row row = branch_row(FormTag::CosDrop, Sense::Equal, l);
            row.terms = {{Term::Kind::Square, 1.0, {vs, -1, -1, -1}}, {Term::Kind::ProdCos, -1.0, {vs, vr, ts, tr}}};
            row.linear = {{ps, -R}, {qs, -X}};
            sys.rows.push_back(std::move(row));
        }
        // the ratio row says nothing when the impedance of the kept loss form is
        // zero (R = 0 reduces it to p_o = 0 next to the p_o row); the loss it was meant
        // to fix would be free, so the other loss form stands in for it
        if (m.loss_p || (m.ratio && X == 0.0)) {
            Row row = branch_row(FormTag::LossP, Sense::Equal, l);
            row.linear = {{po, 1.0}};
            row.terms = {{Term::Kind::QuadOverSquare, -R, {ps, qs, vs, -1}}};
            sys.rows.push_back(std::move(row));
        }
        if (m.loss_q || (m.ratio && R == 0.0)) {
            Row row = branch_row(FormTag::LossQ, Sense::Equal, l);
            row.linear = {{qo, 1.0}};
            row.terms = {{Term::Kind::QuadOverSquare, -X, {ps, qs, vs, -1}}};
            sys.rows.push_back(std::move(row));
        }
        if (m.ratio) {
            Row row = branch_row(FormTag::LossRatio, Sense::Equal, l);
            row.linear = {{po, X}, {qo, -R}};
            sys.rows.push_back(std::move(row));
        }
    }
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const int ts = lay.bus_angle[net.from_index(l)];
        const int tr = lay.bus_angle[net.to_index(l)];
        Row upper = branch_row(FormTag::AngleLimit, Sense::LessEqual, l);
        upper.linear = {{ts, 1.0}, {tr, -1.0}};
        upper.constant = -br.angle_max;
        Row lower = branch_row(FormTag::AngleLimit, Sense::LessEqual, l);
        lower.linear = {{ts, -1.0}, {tr, 1.0}};
        lower.constant = br.angle_min;
        sys.rows.push_back(std::move(upper));
        sys.rows.push_back(std::move(lower));
    }
}

void add_approx_branch_rows(ConstraintSystem& sys, const Network& net, const Membership& m) {
    const VariableLayout& lay = sys.layout;
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const double R = br.resistance, X = br.reactance;
        const int Vs = lay.bus_voltage[net.from_index(l)];
        const int Vr = lay.bus_voltage[net.to_index(l)];
        const int ps = lay.flow_p[l], qs = lay.flow_q[l], po = lay.loss_p[l], qo = lay.loss_q[l];
        const int th = lay.branch_angle[l];

        {
            Row row = branch_row(FormTag::AngleLink, Sense::Equal, l);
            row.linear = {{th, 1.0},
                          {lay.bus_angle[net.from_index(l)], -1.0},
                          {lay.bus_angle[net.to_index(l)], 1.0}};
            sys.rows.push_back(std::move(row));
        }
        if (m.sq_drop) {
            Row row = branch_row(FormTag::LinSqDrop, Sense::Equal, l);
            row.linear = {{Vs, 1.0}, {Vr, -1.0}, {ps, -2.0 * R}, {qs, -2.0 * X}, {po, R}, {qo, X}};
            sys.rows.push_back(std::move(row));
        }
        {
            Row row = branch_row(FormTag::LinSinDrop, Sense::Equal, l);
            row.linear = {{th, 1.0}, {ps, -X}, {qs, R}};
            sys.rows.push_back(std::move(row));
        }
        if (m.cos_drop) {
            Row row = branch_row(FormTag::LinCosDrop, Sense::Equal, l);
            row.linear = {{Vs, 0.5}, {Vr, -0.5}, {ps, -R}, {qs, -X}};
            sys.rows.push_back(std::move(row));
        }
        if (m.ratio) {
            Row row = branch_row(FormTag::LossRatio, Sense::Equal, l);
            row.linear = {{po, X}, {qo, -R}};
            sys.rows.push_back(std::move(row));
        }
        if (m.loss_p) {
            Row row = branch_row(FormTag::ConeLossP, Sense::LessEqual, l);
            row.terms = {{Term::Kind::QuadOverLin, R, {ps, qs, Vs, -1}}};
            row.linear = {{po, -1.0}};
            sys.rows.push_back(std::move(row));
        }
        if (m.loss_q) {
            Row row = branch_row(FormTag::ConeLossQ, Sense::LessEqual, l);
            row.terms = {{Term::Kind::QuadOverLin, X, {ps, qs, Vs, -1}}};
            row.linear = {{qo, -1.0}};
            sys.rows.push_back(std::move(row));
        }
    }
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const double theta_max = std::max(std::abs(br.angle_min), std::abs(br.angle_max));
        const double s = std::sin(theta_max);
        // V_s V_r sin^2 >= theta^2  <=>  theta^2 / (sin^2 V_r) - V_s <= 0
        Row row = branch_row(FormTag::FeasCone, Sense::LessEqual, l);
        row.terms = {{Term::Kind::QuadOverLin, 1.0 / (s * s),
                      {lay.branch_angle[l], -1, lay.bus_voltage[net.to_index(l)], -1}}};
        row.linear = {{lay.bus_voltage[net.from_index(l)], -1.0}};
        sys.rows.push_back(std::move(row));
    }
}

}  // namespace

ConstraintSystem build_equations(const Network& network, const ModelSpec& spec) {
    spec.validate();
    ConstraintSystem sys;
    sys.spec = spec;
    if (spec.family == Family::Exact) sys.spec.penalty_xi = 0.0;
    sys.layout = build_layout(network, spec.family);
    add_balance_rows(sys, network, true);
    add_balance_rows(sys, network, false);
    const Membership m = membership(spec.equation_format);
    if (spec.family == Family::Exact) add_exact_branch_rows(sys, network, m);
    else add_approx_branch_rows(sys, network, m);
    return sys;
}

ConstraintSystem build_opf(const Network& network, const ModelSpec& spec) {
    ConstraintSystem sys = build_equations(network, spec);
    if (spec.ampacity_channel != AmpacityChannel::None) {
        sys = add_ampacity(std::move(sys), network, spec.ampacity_channel);
    }
    sys = attach_objective(std::move(sys), network);
    if (spec.family == Family::Approximate && spec.penalty_xi > 0.0) {
        const double q_scale = spec.penalty_unit == PenaltyUnit::PerMvar ? network.base_mva() : 1.0;
        sys = attach_penalty(std::move(sys), spec.penalty_xi, q_scale);
    }
    return sys;
}

ConstraintSystem add_ampacity(ConstraintSystem sys, const Network& network, AmpacityChannel channel) {
    if (channel == AmpacityChannel::None) return sys;
    const VariableLayout& lay = sys.layout;
    const bool active = channel == AmpacityChannel::ActiveLoss;
    for (std::size_t l = 0; l < network.num_branches(); ++l) {
        const BranchPi& br = network.branches()[l];
        if (!br.ampacity_sq) continue;
        // zero impedance in the channel makes the bound read loss <= 0, which
        // the loss equations already imply
        if ((active ? br.resistance : br.reactance) == 0.0) continue;
        const AmpacityExpr k = ampacity_expr(br, channel);
        Row row = branch_row(active ? FormTag::AmpacityP : FormTag::AmpacityQ, Sense::LessEqual, l);
        const int vs = lay.bus_voltage[network.from_index(l)];
        // loss - K <= 0
        row.linear = {{active ? lay.loss_p[l] : lay.loss_q[l], 1.0},
                      {lay.flow_p[l], -k.p_s},
                      {lay.flow_q[l], -k.q_s}};
        row.constant = -k.constant;
        if (lay.family == Family::Exact) {
            if (k.v_sq != 0.0) row.terms.push_back({Term::Kind::Square, -k.v_sq, {vs, -1, -1, -1}});
        } else {
            row.linear.emplace_back(vs, -k.v_sq);
        }
        sys.rows.push_back(std::move(row));
    }
    return sys;
}

ConstraintSystem attach_objective(ConstraintSystem sys, const Network& network) {
    sys.objective.cost.clear();
    sys.objective.constant = 0.0;
    for (std::size_t g = 0; g < network.num_generators(); ++g) {
        const Generator& gen = network.generators()[g];
        if (!gen.has_cost) {
            throw Error(ErrorKind::MissingCost, "generator " + std::to_string(g + 1) + " at bus " +
                                                    std::to_string(gen.bus_id));
        }
        sys.objective.cost.push_back({sys.layout.gen_p[g], gen.cost_quadratic, gen.cost_linear});
        sys.objective.constant += gen.cost_constant;
    }
    return sys;
}

ConstraintSystem attach_penalty(ConstraintSystem sys, double xi, double q_scale) {
    if (sys.layout.family != Family::Approximate) {
        throw Error(ErrorKind::PenaltyOnExactModel, "the loss penalty applies to the approximate model only");
    }
    if (!(xi >= 0.0) || !std::isfinite(xi)) throw Error(ErrorKind::InvalidSpec, "penalty must be >= 0");
    if (!(q_scale > 0.0) || !std::isfinite(q_scale)) throw Error(ErrorKind::InvalidSpec, "penalty scale must be > 0");
    sys.spec.penalty_xi = xi;
    sys.objective.penalty_xi = xi * q_scale;
    sys.objective.penalty_vars = xi > 0.0 ? sys.layout.loss_q : std::vector<int>{};
    return sys;
}

// ---------------------------------------------------------------------------

OpfPoint extract_point(const ConstraintSystem& sys, const Network& net, std::span<const double> x) {
    const VariableLayout& lay = sys.layout;
    OpfPoint pt;
    pt.family = lay.family;
    auto pick = [&](const std::vector<int>& idx) {
        std::vector<double> out(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) out[k] = x[idx[k]];
        return out;
    };
    pt.p_gen = pick(lay.gen_p);
    pt.q_gen = pick(lay.gen_q);
    pt.p_flow = pick(lay.flow_p);
    pt.q_flow = pick(lay.flow_q);
    pt.p_loss = pick(lay.loss_p);
    pt.q_loss = pick(lay.loss_q);
    pt.theta = pick(lay.bus_angle);
    if (lay.family == Family::Exact) {
        pt.v = pick(lay.bus_voltage);
        pt.v_sq.resize(pt.v.size());
        for (std::size_t n = 0; n < pt.v.size(); ++n) pt.v_sq[n] = pt.v[n] * pt.v[n];
        pt.theta_branch.resize(net.num_branches());
        for (std::size_t l = 0; l < net.num_branches(); ++l) {
            pt.theta_branch[l] = pt.theta[net.from_index(l)] - pt.theta[net.to_index(l)];
        }
    } else {
        pt.v_sq = pick(lay.bus_voltage);
        pt.v.resize(pt.v_sq.size());
        for (std::size_t n = 0; n < pt.v.size(); ++n) pt.v[n] = std::sqrt(std::max(0.0, pt.v_sq[n]));
        pt.theta_branch = pick(lay.branch_angle);
    }
    return pt;
}

std::vector<double> exact_primal(const VariableLayout& lay, const OpfPoint& pt) {
    if (lay.family != Family::Exact) throw Error(ErrorKind::InvalidSpec, "exact layout required");
    std::vector<double> x(lay.size(), 0.0);
    auto put = [&](const std::vector<int>& idx, const std::vector<double>& values) {
        for (std::size_t k = 0; k < idx.size() && k < values.size(); ++k) x[idx[k]] = values[k];
    };
    put(lay.gen_p, pt.p_gen);
    put(lay.gen_q, pt.q_gen);
    put(lay.bus_voltage, pt.v);
    put(lay.bus_angle, pt.theta);
    put(lay.flow_p, pt.p_flow);
    put(lay.flow_q, pt.q_flow);
    put(lay.loss_p, pt.p_loss);
    put(lay.loss_q, pt.q_loss);
    return x;
}

}  // namespace meshflow
