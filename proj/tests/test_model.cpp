#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "meshflow/model.hpp"
#include "support.hpp"

using namespace meshflow;

namespace {

using TagCount = std::map<FormTag, int>;

TagCount count_tags(const ConstraintSystem& sys) {
    TagCount out;
    for (const Row& r : sys.rows) ++out[r.tag];
    return out;
}

// Per-branch equation lists of the six formats, written out from the format
// tables (sq = voltage-magnitude drop, cos = cosine drop, the two loss forms
// and the loss ratio).
struct FormatRow {
    std::vector<FormTag> exact;
    std::vector<FormTag> approx;
};

const std::map<int, FormatRow>& format_table() {
    using F = FormTag;
    static const std::map<int, FormatRow> table = {
        {1, {{F::SqDrop, F::SinDrop, F::LossP, F::LossQ}, {F::LinSqDrop, F::LinSinDrop, F::ConeLossP, F::ConeLossQ}}},
        {2, {{F::SqDrop, F::SinDrop, F::LossP, F::LossRatio}, {F::LinSqDrop, F::LinSinDrop, F::LossRatio, F::ConeLossP}}},
        {3, {{F::SqDrop, F::SinDrop, F::LossQ, F::LossRatio}, {F::LinSqDrop, F::LinSinDrop, F::LossRatio, F::ConeLossQ}}},
        {4, {{F::SinDrop, F::CosDrop, F::LossP, F::LossQ}, {F::LinSinDrop, F::LinCosDrop, F::ConeLossP, F::ConeLossQ}}},
        {5, {{F::SinDrop, F::CosDrop, F::LossP, F::LossRatio}, {F::LinSinDrop, F::LinCosDrop, F::LossRatio, F::ConeLossP}}},
        {6, {{F::SinDrop, F::CosDrop, F::LossQ, F::LossRatio}, {F::LinSinDrop, F::LinCosDrop, F::LossRatio, F::ConeLossQ}}},
    };
    return table;
}

std::size_t rated_branches(const Network& net) {
    return std::count_if(net.branches().begin(), net.branches().end(),
                         [](const BranchPi& b) { return b.ampacity_sq.has_value(); });
}

// Flat point: v = 1 (V = 1), everything else 0.
std::vector<double> flat_point(const ConstraintSystem& sys) {
    std::vector<double> x(sys.layout.size(), 0.0);
    for (int v : sys.layout.bus_voltage) x[v] = 1.0;
    return x;
}

// AC-consistent point built from phasors: branch quantities are those of the
// series element, (V_s - V_r)/z, independent of the row formulas.
OpfPoint phasor_point(const Network& net, std::mt19937_64& rng) {
    using C = std::complex<double>;
    std::uniform_real_distribution<double> mag(0.95, 1.05), ang(-0.15, 0.15), gen(0.1, 0.9);
    OpfPoint pt;
    pt.family = Family::Exact;
    const std::size_t nb = net.num_buses();
    pt.v.resize(nb);
    pt.v_sq.resize(nb);
    pt.theta.resize(nb);
    for (std::size_t n = 0; n < nb; ++n) {
        pt.v[n] = mag(rng);
        pt.v_sq[n] = pt.v[n] * pt.v[n];
        pt.theta[n] = n == net.reference_index() ? 0.0 : ang(rng);
    }
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const std::size_t s = net.from_index(l), r = net.to_index(l);
        const C vs = std::polar(pt.v[s], pt.theta[s]), vr = std::polar(pt.v[r], pt.theta[r]);
        const C z(br.resistance, br.reactance);
        const C i = (vs - vr) / z;
        const C sending = vs * std::conj(i);
        const C loss = std::norm(i) * z;
        pt.p_flow.push_back(sending.real());
        pt.q_flow.push_back(sending.imag());
        pt.p_loss.push_back(loss.real());
        pt.q_loss.push_back(loss.imag());
        pt.theta_branch.push_back(pt.theta[s] - pt.theta[r]);
    }
    for (const Generator& g : net.generators()) {
        pt.p_gen.push_back(g.p_min + gen(rng) * (g.p_max - g.p_min));
        pt.q_gen.push_back(g.q_min + gen(rng) * (g.q_max - g.q_min));
    }
    return pt;
}

double branch_residual(const ConstraintSystem& sys, std::span<const double> x) {
    double worst = 0.0;
    for (const Row& r : sys.rows) {
        if (r.tag == FormTag::BalanceP || r.tag == FormTag::BalanceQ || r.tag == FormTag::AngleLimit) continue;
        worst = std::max(worst, std::abs(evaluate(r, x)));
    }
    return worst;
}

double equality_residual(const ConstraintSystem& sys, std::span<const double> x) {
    double worst = 0.0;
    for (const Row& r : sys.rows) {
        if (r.sense == Sense::Equal) worst = std::max(worst, std::abs(evaluate(r, x)));
    }
    return worst;
}

// Gauss-Newton minimum-norm projection onto the equality rows of `sys`.
std::vector<double> project(const ConstraintSystem& sys, std::vector<double> x) {
    std::vector<const Row*> eq;
    for (const Row& r : sys.rows) {
        if (r.sense == Sense::Equal) eq.push_back(&r);
    }
    const Eigen::Index m = static_cast<Eigen::Index>(eq.size());
    const Eigen::Index n = static_cast<Eigen::Index>(x.size());
    // the reference angle is a gauge, keep it at 0
    std::vector<char> frozen(x.size(), 0);
    for (std::size_t k = 0; k < sys.layout.size(); ++k) {
        if (sys.layout.vars[k].lower == sys.layout.vars[k].upper) frozen[k] = 1;
    }
    for (int it = 0; it < 30; ++it) {
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, n);
        Eigen::VectorXd r(m);
        std::vector<std::pair<int, double>> g;
        for (Eigen::Index i = 0; i < m; ++i) {
            r(i) = evaluate(*eq[i], x);
            g.clear();
            gradient(*eq[i], x, g);
            for (auto [j, val] : g) {
                if (!frozen[j]) J(i, j) += val;
            }
        }
        if (r.lpNorm<Eigen::Infinity>() < 1e-13) break;
        const Eigen::VectorXd dx = J.completeOrthogonalDecomposition().solve(r);
        for (Eigen::Index j = 0; j < n; ++j) x[j] -= dx(j);
    }
    return x;
}

}  // namespace

TEST(ModelSpec, TableFormatMapping) {
    for (int t = 1; t <= 12; ++t) {
        const ModelSpec s = ModelSpec::from_table_format(Family::Exact, t);
        EXPECT_EQ(s.equation_format, (t - 1) % 6 + 1);
        EXPECT_EQ(s.ampacity_channel, t <= 6 ? AmpacityChannel::ActiveLoss : AmpacityChannel::ReactiveLoss);
        EXPECT_EQ(s.table_format(), t);
    }
    EXPECT_EQ(ModelSpec::from_table_format(Family::Exact, 3, false).ampacity_channel, AmpacityChannel::None);
    EXPECT_THROW(ModelSpec::from_table_format(Family::Exact, 13), Error);
    EXPECT_THROW(ModelSpec::from_table_format(Family::Exact, 0), Error);
    ModelSpec bad;
    bad.equation_format = 7;
    EXPECT_THROW(bad.validate(), Error);
    bad.equation_format = 1;
    bad.penalty_xi = -0.1;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Membership, AllTwentyFourCombinations) {
    const Network net = test::load_fixture("three_bus.m");
    const int nb = static_cast<int>(net.num_buses());
    const int nl = static_cast<int>(net.num_branches());
    const int rated = static_cast<int>(rated_branches(net));
    for (Family family : {Family::Exact, Family::Approximate}) {
        for (int t = 1; t <= 12; ++t) {
            const ModelSpec spec = ModelSpec::from_table_format(family, t);
            const ConstraintSystem sys = build_opf(net, spec);
            const FormatRow& row = format_table().at(spec.equation_format);
            TagCount want;
            for (FormTag tag : family == Family::Exact ? row.exact : row.approx) want[tag] += nl;
            if (family == Family::Exact) {
                want[FormTag::BalanceP] = want[FormTag::BalanceQ] = nb;
                want[FormTag::AngleLimit] = 2 * nl;
            } else {
                want[FormTag::LinBalanceP] = want[FormTag::LinBalanceQ] = nb;
                want[FormTag::AngleLink] = nl;
                want[FormTag::FeasCone] = nl;
            }
            want[t <= 6 ? FormTag::AmpacityP : FormTag::AmpacityQ] = rated;
            EXPECT_EQ(count_tags(sys), want) << to_string(family) << " format " << t;
        }
    }
}

TEST(Membership, ZeroResistanceStandInRows) {
    // case9 has three R = 0 transformers; exact formats with the loss ratio
    // keep the reactive loss pinned by its own equation there
    const Network net = test::load_case("case9");
    int zero_r = 0;
    for (const BranchPi& br : net.branches()) zero_r += br.resistance == 0.0;
    ASSERT_EQ(zero_r, 3);
    for (int f : {2, 5}) {
        ModelSpec spec;
        spec.equation_format = f;
        const TagCount tags = count_tags(build_equations(net, spec));
        EXPECT_EQ(tags.at(FormTag::LossP), 9);
        EXPECT_EQ(tags.at(FormTag::LossQ), zero_r);
        EXPECT_EQ(tags.at(FormTag::LossRatio), 9);
        spec.family = Family::Approximate;
        const TagCount approx = count_tags(build_equations(net, spec));
        EXPECT_EQ(approx.count(FormTag::ConeLossQ), 0u);
    }
    for (int f : {3, 6}) {  // no X = 0 branch: nothing added
        ModelSpec spec;
        spec.equation_format = f;
        EXPECT_EQ(count_tags(build_equations(net, spec)).count(FormTag::LossP), 0u);
    }
}

TEST(BuildOpf, Case9ExactFormat1Counts) {
    const Network net = test::load_case("case9");
    ModelSpec spec;
    const ConstraintSystem sys = build_equations(net, spec);
    const TagCount tags = count_tags(sys);
    for (FormTag t : {FormTag::SqDrop, FormTag::SinDrop, FormTag::LossP, FormTag::LossQ}) EXPECT_EQ(tags.at(t), 9);
    EXPECT_EQ(tags.at(FormTag::BalanceP), 9);
    EXPECT_EQ(tags.at(FormTag::BalanceQ), 9);
    int equations = 0;
    for (const Row& r : sys.rows) equations += r.sense == Sense::Equal;
    EXPECT_EQ(equations, 9 * 4 + 9 * 2);
    EXPECT_EQ(tags.count(FormTag::CosDrop), 0u);
    EXPECT_EQ(tags.count(FormTag::LossRatio), 0u);
}

TEST(BuildOpf, Case9ApproximateFormat2Rows) {
    const Network net = test::load_case("case9");
    ModelSpec spec;
    spec.family = Family::Approximate;
    spec.equation_format = 2;
    const TagCount tags = count_tags(build_equations(net, spec));
    for (FormTag t : {FormTag::LinBalanceP, FormTag::LinBalanceQ, FormTag::LinSqDrop, FormTag::LinSinDrop,
                      FormTag::LossRatio, FormTag::ConeLossP, FormTag::FeasCone}) {
        EXPECT_EQ(tags.at(t), 9) << to_string(t);
    }
    EXPECT_EQ(tags.count(FormTag::ConeLossQ), 0u);
    EXPECT_EQ(tags.count(FormTag::SinDrop), 0u);
}

TEST(BuildOpf, ApproximateSystemsAreConvex) {
    const Network net = test::load_case("case30");
    for (int t = 1; t <= 12; ++t) {
        const ConstraintSystem sys = build_opf(net, ModelSpec::from_table_format(Family::Approximate, t, true, 0.3));
        for (const Row& r : sys.rows) {
            const RowKind k = row_kind(r);
            EXPECT_NE(k, RowKind::SmoothNonlinear) << to_string(r.tag);
            if (k == RowKind::RotatedCone) {
                EXPECT_EQ(r.sense, Sense::LessEqual);
                EXPECT_TRUE(r.tag == FormTag::ConeLossP || r.tag == FormTag::ConeLossQ || r.tag == FormTag::FeasCone);
                for (const Term& term : r.terms) EXPECT_GE(term.coef, 0.0);
            }
        }
    }
}

TEST(BuildOpf, FlatPointBalanceResidual) {
    const Network net = test::load_fixture("three_bus.m");
    for (Family family : {Family::Exact, Family::Approximate}) {
        ModelSpec spec;
        spec.family = family;
        const ConstraintSystem sys = build_equations(net, spec);
        const std::vector<double> x = flat_point(sys);
        for (const Row& r : sys.rows) {
            if (r.tag != FormTag::BalanceP && r.tag != FormTag::LinBalanceP) continue;
            const Bus& bus = net.buses()[r.entity];
            EXPECT_NEAR(evaluate(r, x), -bus.p_demand - net.total_shunt_conductance(r.entity), 1e-15);
        }
    }
}

TEST(Layout, BoundsFollowTheData) {
    const Network net = test::load_case("case30");
    const VariableLayout exact = build_layout(net, Family::Exact);
    const VariableLayout approx = build_layout(net, Family::Approximate);
    for (std::size_t n = 0; n < net.num_buses(); ++n) {
        const Bus& b = net.buses()[n];
        EXPECT_EQ(exact.vars[exact.bus_voltage[n]].lower, b.v_min);
        EXPECT_EQ(exact.vars[exact.bus_voltage[n]].upper, b.v_max);
        EXPECT_DOUBLE_EQ(approx.vars[approx.bus_voltage[n]].lower, b.v_min * b.v_min);
        EXPECT_DOUBLE_EQ(approx.vars[approx.bus_voltage[n]].upper, b.v_max * b.v_max);
    }
    const Variable& ref = exact.vars[exact.bus_angle[net.reference_index()]];
    EXPECT_EQ(ref.lower, 0.0);
    EXPECT_EQ(ref.upper, 0.0);
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        if (br.resistance > 0.0) {
            EXPECT_EQ(exact.vars[exact.loss_p[l]].lower, 0.0);
        }
        if (br.reactance > 0.0) {
            EXPECT_EQ(approx.vars[approx.loss_q[l]].lower, 0.0);
        }
        EXPECT_EQ(approx.vars[approx.branch_angle[l]].lower, br.angle_min);
        EXPECT_EQ(approx.vars[approx.branch_angle[l]].upper, br.angle_max);
        EXPECT_EQ(exact.branch_angle[l], -1);
    }
}

TEST(Objective, ConstantTermsAtZeroDispatch) {
    const Network net = test::load_case("case9");
    const ConstraintSystem sys = build_opf(net, ModelSpec{});
    std::vector<double> x(sys.layout.size(), 0.0);
    EXPECT_DOUBLE_EQ(sys.objective.value(x), 150.0 + 600.0 + 335.0);
}

TEST(Objective, MatchesPerGeneratorCost) {
    const Network net = test::load_case("case14");
    const ConstraintSystem sys = build_opf(net, ModelSpec{});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<double> x(sys.layout.size(), 0.0);
    double want = 0.0;
    for (std::size_t g = 0; g < net.num_generators(); ++g) {
        x[sys.layout.gen_p[g]] = u(rng);
        want += net.generators()[g].cost(x[sys.layout.gen_p[g]]);
    }
    EXPECT_NEAR(sys.objective.value(x), want, 1e-9 * want);
}

TEST(Objective, LinearCostGeneratorAndMissingCost) {
    const Network base = test::load_fixture("two_bus.m");
    std::vector<Generator> gens = base.generators();
    gens[0].cost_quadratic = 0.0;
    const Network linear(base.base_mva(), base.buses(), gens, base.branches());
    const ConstraintSystem sys = build_opf(linear, ModelSpec{});
    std::vector<double> x(sys.layout.size(), 0.0);
    const int p = sys.layout.gen_p[0];
    x[p] = 0.5;
    const double f1 = sys.objective.value(x);
    x[p] = 1.0;
    const double f2 = sys.objective.value(x);
    x[p] = 1.5;
    EXPECT_NEAR(sys.objective.value(x) - f2, f2 - f1, 1e-12);

    gens[0].has_cost = false;
    const Network costless(base.base_mva(), base.buses(), gens, base.branches());
    try {
        build_opf(costless, ModelSpec{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingCost);
    }
}

TEST(Ampacity, HandEvaluatedBound) {
    BranchPi br;
    br.resistance = 0.01;
    br.reactance = 0.1;
    br.shunt_susceptance_s = 0.1;
    br.ampacity_sq = 6.25;
    const AmpacityExpr kp = ampacity_expr(br, AmpacityChannel::ActiveLoss);
    EXPECT_NEAR(kp.evaluate(1.0, 0.0, 0.5), (6.25 - 0.01 + 0.1) * 0.01, 1e-12);
    EXPECT_NEAR(kp.evaluate(1.0, 0.0, 0.5), 0.0634, 1e-12);
    const AmpacityExpr kq = ampacity_expr(br, AmpacityChannel::ReactiveLoss);
    EXPECT_NEAR(kq.evaluate(1.0, 0.0, 0.5), 0.634, 1e-12);

    BranchPi bare;
    bare.resistance = 0.03;
    bare.reactance = 0.2;
    bare.ampacity_sq = 2.25;
    const AmpacityExpr k0 = ampacity_expr(bare, AmpacityChannel::ActiveLoss);
    EXPECT_EQ(k0.evaluate(1.07, 0.8, -0.3), 2.25 * 0.03);
    EXPECT_EQ(k0.v_sq, 0.0);
    EXPECT_EQ(k0.p_s, 0.0);
    EXPECT_EQ(k0.q_s, 0.0);
}

TEST(Ampacity, GeneralBracketAgainstFormula) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        BranchPi br;
        br.resistance = 0.05 * std::abs(u(rng));
        br.reactance = 0.3 * std::abs(u(rng)) + 0.01;
        br.shunt_conductance_s = 0.02 * std::abs(u(rng));
        br.shunt_susceptance_s = 0.2 * u(rng);
        br.ampacity_sq = 1.0 + std::abs(u(rng));
        const double V = 1.0 + 0.1 * u(rng), p = u(rng), q = u(rng);
        const double G = br.shunt_conductance_s, B = br.shunt_susceptance_s;
        const double bracket = *br.ampacity_sq - V * B * B + 2 * q * B - V * G * G - 2 * p * G;
        EXPECT_NEAR(ampacity_expr(br, AmpacityChannel::ActiveLoss).evaluate(V, p, q), bracket * br.resistance, 1e-12);
        EXPECT_NEAR(ampacity_expr(br, AmpacityChannel::ReactiveLoss).evaluate(V, p, q), bracket * br.reactance, 1e-12);
    }
}

TEST(Ampacity, RowsOnlyForRatedBranches) {
    const Network rated = test::load_fixture("two_bus.m");
    ConversionOptions off;
    off.ampacity = false;
    const Network unrated = to_network(read_case_file(test::fixture_path("two_bus.m")), off);
    for (Family family : {Family::Exact, Family::Approximate}) {
        ModelSpec spec;
        spec.family = family;
        const ConstraintSystem eq = build_equations(unrated, spec);
        const ConstraintSystem with = add_ampacity(eq, unrated, AmpacityChannel::ActiveLoss);
        EXPECT_EQ(with.rows.size(), eq.rows.size());

        // rated: one row, residual p_o - K^p at a point
        const ConstraintSystem sys = add_ampacity(build_equations(rated, spec), rated, AmpacityChannel::ActiveLoss);
        const Row& row = sys.rows.back();
        ASSERT_EQ(row.tag, FormTag::AmpacityP);
        std::vector<double> x(sys.layout.size(), 0.0);
        const double v = 1.02;
        x[sys.layout.bus_voltage[0]] = family == Family::Exact ? v : v * v;
        x[sys.layout.flow_p[0]] = 0.4;
        x[sys.layout.flow_q[0]] = 0.2;
        x[sys.layout.loss_p[0]] = 0.003;
        const double K = ampacity_expr(rated.branches()[0], AmpacityChannel::ActiveLoss).evaluate(v * v, 0.4, 0.2);
        EXPECT_NEAR(evaluate(row, x), 0.003 - K, 1e-14);
    }
}

TEST(Penalty, Arithmetic) {
    const Network net = test::load_case("case9");
    ModelSpec spec;
    spec.family = Family::Approximate;
    const ConstraintSystem base = build_opf(net, spec);
    std::vector<double> x(base.layout.size(), 0.0);
    for (std::size_t g = 0; g < net.num_generators(); ++g) x[base.layout.gen_p[g]] = 0.7;
    const double f = base.objective.value(x);

    EXPECT_EQ(attach_penalty(base, 0.0).objective.value(x), f);
    const ConstraintSystem pen = attach_penalty(base, 0.3);
    EXPECT_EQ(pen.objective.value(x), f);  // all q_o = 0
    x[base.layout.loss_q[0]] = 0.2;
    x[base.layout.loss_q[4]] = 0.3;
    EXPECT_NEAR(pen.objective.value(x), f + 0.15, 1e-12);
    EXPECT_EQ(pen.objective.generation_cost(x), f);

    // build_opf quotes the weight per MVAr by default
    const ConstraintSystem per_mvar = build_opf(net, ModelSpec::from_table_format(Family::Approximate, 1, true, 0.3));
    EXPECT_NEAR(per_mvar.objective.value(x), f + 0.3 * 100.0 * 0.5, 1e-9);
    ModelSpec per_unit = ModelSpec::from_table_format(Family::Approximate, 1, true, 0.3);
    per_unit.penalty_unit = PenaltyUnit::PerUnit;
    EXPECT_NEAR(build_opf(net, per_unit).objective.value(x), f + 0.15, 1e-12);

    try {
        attach_penalty(build_opf(net, ModelSpec{}), 0.3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PenaltyOnExactModel);
    }
    // the exact family ignores a penalty set on its ModelSpec
    ModelSpec exact = ModelSpec::from_table_format(Family::Exact, 1, true, 0.3);
    EXPECT_EQ(build_opf(net, exact).objective.penalty_xi, 0.0);
}

TEST(Objective, GradientMatchesDifferences) {
    const Network net = test::load_case("case9");
    const ConstraintSystem sys = build_opf(net, ModelSpec::from_table_format(Family::Approximate, 4, true, 0.3));
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(sys.layout.size());
    for (double& v : x) v = u(rng);
    std::vector<double> g(x.size());
    sys.objective.gradient(x, g);
    for (std::size_t j = 0; j < x.size(); ++j) {
        std::vector<double> a = x, b = x;
        a[j] += 1e-6;
        b[j] -= 1e-6;
        const double fd = (sys.objective.value(a) - sys.objective.value(b)) / 2e-6;
        EXPECT_NEAR(g[j], fd, 1e-6 * std::max(1.0, std::abs(g[j])));
    }
}

TEST(Equivalence, PhasorPointsSatisfyEveryExactFormat) {
    for (const char* file : {"three_bus.m", "two_bus.m"}) {
        const Network net = test::load_fixture(file);
        std::mt19937_64 rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            const OpfPoint pt = phasor_point(net, rng);
            for (int f = 1; f <= 6; ++f) {
                ModelSpec spec;
                spec.equation_format = f;
                const ConstraintSystem sys = build_equations(net, spec);
                EXPECT_LT(branch_residual(sys, exact_primal(sys.layout, pt)), 1e-13) << file << " format " << f;
            }
        }
    }
}

TEST(Equivalence, ProjectedPointsTransferAcrossFormats) {
    // perturb a phasor point, pull it back onto the equations of format i,
    // then evaluate the rows of every other format
    const Network net = test::load_fixture("three_bus.m");
    std::mt19937_64 rng(23);
    std::normal_distribution<double> noise(0.0, 1e-3);
    std::vector<ConstraintSystem> systems;
    for (int f = 1; f <= 6; ++f) {
        ModelSpec spec;
        spec.equation_format = f;
        systems.push_back(build_equations(net, spec));
    }
    for (int trial = 0; trial < 10; ++trial) {
        const OpfPoint pt = phasor_point(net, rng);
        for (int i = 0; i < 6; ++i) {
            std::vector<double> x = exact_primal(systems[i].layout, pt);
            for (std::size_t k = 0; k < x.size(); ++k) {
                if (systems[i].layout.vars[k].lower != systems[i].layout.vars[k].upper) x[k] += noise(rng);
            }
            x = project(systems[i], x);
            ASSERT_LT(equality_residual(systems[i], x), 1e-8);
            for (int j = 0; j < 6; ++j) {
                EXPECT_LT(equality_residual(systems[j], x), 1e-6) << "format " << i + 1 << " -> " << j + 1;
            }
        }
    }
}

TEST(ExtractPoint, RoundTripsExactPrimal) {
    const Network net = test::load_fixture("three_bus.m");
    std::mt19937_64 rng(31);
    const OpfPoint pt = phasor_point(net, rng);
    const ConstraintSystem sys = build_opf(net, ModelSpec{});
    const OpfPoint back = extract_point(sys, net, exact_primal(sys.layout, pt));
    EXPECT_EQ(back.v, pt.v);
    EXPECT_EQ(back.theta, pt.theta);
    EXPECT_EQ(back.p_flow, pt.p_flow);
    EXPECT_EQ(back.q_loss, pt.q_loss);
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        EXPECT_DOUBLE_EQ(back.theta_branch[l], pt.theta_branch[l]);
    }
}
