#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "meshflow/network.hpp"

namespace meshflow {

enum class Family { Exact, Approximate };
enum class AmpacityChannel { None, ActiveLoss, ReactiveLoss };
/// Unit of q_o that the penalty weight is quoted against.
enum class PenaltyUnit { PerMvar, PerUnit };

const char* to_string(Family family);

/// Which OPF to build. `equation_format` selects the row of the six-format
/// tables; the ampacity channel splits table formats 1-6 from 7-12.
struct ModelSpec {
    Family family = Family::Exact;
    int equation_format = 1;
    AmpacityChannel ampacity_channel = AmpacityChannel::ActiveLoss;
    double penalty_xi = 0.0;
    PenaltyUnit penalty_unit = PenaltyUnit::PerMvar;  // same convention as the cost data

    /// Table numbering 1-12: 1-6 active-loss channel, 7-12 reactive-loss
    /// channel. `ampacity=false` keeps the equation set but drops the current-limit rows.
    static ModelSpec from_table_format(Family family, int table_format, bool ampacity = true,
                                       double penalty_xi = 0.0);
    /// 1-12; the reactive channel maps to 7-12, None reports the active one.
    int table_format() const;
    void validate() const;  // throws InvalidSpec
};

enum class VarKind {
    GenP,
    GenQ,
    BusVoltage,    // v_n (exact)
    BusVoltageSq,  // V_n (approximate)
    BusAngle,      // theta_n
    FlowP,
    FlowQ,
    LossP,
    LossQ,
    BranchAngle,  // theta_l (approximate)
};

struct Variable {
    VarKind kind;
    std::size_t entity;  // generator, bus or branch position
    double lower;
    double upper;
};

/// Registry of decision variables. Index vectors hold -1 where a quantity
/// is absent in the family.
struct VariableLayout {
    Family family = Family::Exact;
    std::vector<Variable> vars;
    std::vector<int> gen_p, gen_q;
    std::vector<int> bus_voltage;  // v for exact, V for approximate
    std::vector<int> bus_angle;
    std::vector<int> flow_p, flow_q, loss_p, loss_q;
    std::vector<int> branch_angle;

    std::size_t size() const noexcept { return vars.size(); }
    int add(VarKind kind, std::size_t entity, double lower, double upper);
};

/// Equation identity of a row.
enum class FormTag {
    BalanceP,       // nodal active balance
    BalanceQ,       // nodal reactive balance
    SqDrop,         // v_s^2 - v_r^2 = 2(R p + X q) - R p_o - X q_o
    SinDrop,        // v_s v_r sin(theta_l) = X p - R q
    CosDrop,        // v_s^2 - v_s v_r cos(theta_l) = R p + X q
    LossP,          // p_o = R (p^2 + q^2) / v_s^2
    LossQ,          // q_o = X (p^2 + q^2) / v_s^2
    LossRatio,      // X p_o = R q_o
    AngleLimit,     // bounds on nodal angle differences (exact)
    AngleLink,      // theta_l = theta_s - theta_r (approximate)
    LinBalanceP,
    LinBalanceQ,
    LinSqDrop,      // V_s - V_r = 2(R p + X q) - R p_o - X q_o
    LinSinDrop,     // theta_l = X p - R q
    LinCosDrop,     // (V_s - V_r) / 2 = R p + X q
    ConeLossP,      // R (p^2 + q^2) / V_s <= p_o
    ConeLossQ,      // X (p^2 + q^2) / V_s <= q_o
    FeasCone,       // theta_l^2 <= V_s V_r sin^2(theta_max)
    AmpacityP,      // current limit through the active loss
    AmpacityQ,      // current limit through the reactive loss
};

inline constexpr std::size_t kFormTagCount = 20;

const char* to_string(FormTag tag);

enum class Sense { Equal, LessEqual };
enum class RowKind { LinearEq, LinearIneq, RotatedCone, SmoothNonlinear };

/// Smooth scalar kernel over at most four variables.
struct Term {
    enum class Kind {
        Square,          // c x0^2
        QuadOverSquare,  // c (x0^2 + x1^2) / x2^2
        QuadOverLin,     // c (x0^2 + x1^2) / x2, x1 may be -1
        ProdSin,         // c x0 x1 sin(x2 - x3)
        ProdCos,         // c x0 x1 cos(x2 - x3)
    };
    Kind kind;
    double coef;
    std::array<int, 4> idx{-1, -1, -1, -1};
};

/// r(x) = sum(linear) + constant + sum(terms); Equal means r = 0,
/// LessEqual means r <= 0.
struct Row {
    FormTag tag;
    Sense sense;
    std::size_t entity;  // bus or branch position
    std::vector<std::pair<int, double>> linear;
    double constant = 0.0;
    std::vector<Term> terms;
};

RowKind row_kind(const Row& row);

/// Separable quadratic generation cost plus a linear penalty on reactive losses.
struct Objective {
    struct Quadratic {
        int index;
        double quad;
        double lin;
    };
    std::vector<Quadratic> cost;
    double constant = 0.0;
    double penalty_xi = 0.0;  // weight per per-unit q_o
    std::vector<int> penalty_vars;

    double generation_cost(std::span<const double> x) const;
    double value(std::span<const double> x) const;
    void gradient(std::span<const double> x, std::span<double> out) const;  // overwrites out
};

struct ConstraintSystem {
    ModelSpec spec;
    VariableLayout layout;
    std::vector<Row> rows;
    Objective objective;
};

// --- row evaluation --------------------------------------------------------

double evaluate(const Row& row, std::span<const double> x);
/// Appends (index, value) pairs; indices may repeat and must be summed.
void gradient(const Row& row, std::span<const double> x, std::vector<std::pair<int, double>>& out);

struct HessianEntry {
    int row;  // row >= col
    int col;
    double value;
};
/// Appends weight * lower-triangular second derivatives; entries may repeat.
void hessian(const Row& row, std::span<const double> x, double weight, std::vector<HessianEntry>& out);

// --- builders --------------------------------------------------------------

/// Affine form of K^p / K^q over (V_s, p_s, q_s): value = v_sq*V_s + p_s*p + q_s*q + constant.
struct AmpacityExpr {
    double v_sq = 0.0;
    double p_s = 0.0;
    double q_s = 0.0;
    double constant = 0.0;

    double evaluate(double v_sq_value, double p, double q) const {
        return v_sq * v_sq_value + p_s * p + q_s * q + constant;
    }
};

/// Loss upper bound for the active (scale R) or reactive (scale X) channel.
/// Requires branch.ampacity_sq.
AmpacityExpr ampacity_expr(const BranchPi& branch, AmpacityChannel channel);

VariableLayout build_layout(const Network& network, Family family);

/// Full OPF: equations of the chosen format, ampacity rows per channel,
/// cost objective and (approximate only) the loss penalty.
ConstraintSystem build_opf(const Network& network, const ModelSpec& spec);

/// Equation rows only (no ampacity, empty objective).
ConstraintSystem build_equations(const Network& network, const ModelSpec& spec);

ConstraintSystem add_ampacity(ConstraintSystem system, const Network& network, AmpacityChannel channel);
ConstraintSystem attach_objective(ConstraintSystem system, const Network& network);
/// f' = f + xi * q_scale * sum(q_o), q_o in per-unit. build_opf passes the
/// MVA base as q_scale for PenaltyUnit::PerMvar.
ConstraintSystem attach_penalty(ConstraintSystem system, double xi, double q_scale = 1.0);

/// Physical quantities read out of a primal vector.
struct OpfPoint {
    Family family = Family::Exact;
    std::vector<double> p_gen, q_gen;
    std::vector<double> v;      // magnitude; sqrt(V) for approximate
    std::vector<double> v_sq;   // V; v^2 for exact
    std::vector<double> theta;  // nodal angle
    std::vector<double> p_flow, q_flow, p_loss, q_loss;
    std::vector<double> theta_branch;  // approximate: variable; exact: theta_s - theta_r
};

OpfPoint extract_point(const ConstraintSystem& system, const Network& network, std::span<const double> x);

/// Writes an exact-family point into a primal vector for `layout`.
std::vector<double> exact_primal(const VariableLayout& layout, const OpfPoint& point);

}  // namespace meshflow
