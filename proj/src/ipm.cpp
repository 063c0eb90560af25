#include "meshflow/ipm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "meshflow/errors.hpp"
#include "meshflow/sparse_ldl.hpp"

namespace meshflow {

void SolverOptions::validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(tol_kkt) || max_iter <= 0 || !positive(mu_init) || !positive(inertia_regularization_init) ||
        !(bound_relax >= 0.0)) {
        throw Error(ErrorKind::InvalidSpec, "solver options must be positive");
    }
    if (!(mu_shrink > 0.0 && mu_shrink < 1.0)) throw Error(ErrorKind::InvalidSpec, "mu_shrink must lie in (0,1)");
    if (!(fraction_to_boundary > 0.0 && fraction_to_boundary < 1.0)) {
        throw Error(ErrorKind::InvalidSpec, "fraction_to_boundary must lie in (0,1)");
    }
    if (!(linesearch.armijo > 0.0 && linesearch.armijo < 0.5) ||
        !(linesearch.backtrack > 0.0 && linesearch.backtrack < 1.0) || linesearch.max_backtracks <= 0) {
        throw Error(ErrorKind::InvalidSpec, "invalid line search parameters");
    }
}

const char* to_string(SolverStatus status) {
    switch (status) {
        case SolverStatus::Optimal: return "Optimal";
        case SolverStatus::MaxIterations: return "MaxIterations";
        case SolverStatus::InfeasibleDetected: return "InfeasibleDetected";
        case SolverStatus::NumericFailure: return "NumericFailure";
    }
    return "?";
}

std::vector<double> flat_start(const ConstraintSystem& system) {
    std::vector<double> x(system.layout.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const Variable& v = system.layout.vars[j];
        if (v.lower > v.upper) {
            throw Error(ErrorKind::EmptyInterior, "variable " + std::to_string(j) + " has lower > upper");
        }
        double value = 0.0;
        switch (v.kind) {
            case VarKind::BusVoltage:
            case VarKind::BusVoltageSq: value = 1.0; break;
            case VarKind::BusAngle:
            case VarKind::BranchAngle: value = 0.0; break;
            case VarKind::FlowP:
            case VarKind::FlowQ:
            case VarKind::LossP:
            case VarKind::LossQ: value = 1e-4; break;
            case VarKind::GenP:
            case VarKind::GenQ:
                if (std::isfinite(v.lower) && std::isfinite(v.upper)) value = 0.5 * (v.lower + v.upper);
                else if (std::isfinite(v.lower)) value = std::max(v.lower, 0.0);
                else if (std::isfinite(v.upper)) value = std::min(v.upper, 0.0);
                break;
        }
        x[j] = std::clamp(value, v.lower, v.upper);
    }
    return x;
}

std::vector<double> perturbed_start(const ConstraintSystem& system, std::uint64_t seed, double spread) {
    std::vector<double> x = flat_start(system);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
        const Variable& v = system.layout.vars[j];
        const double u = unit(rng);
        if (v.lower == v.upper) continue;
        const bool boxed = std::isfinite(v.lower) && std::isfinite(v.upper);
        double value = x[j] + u * spread * (boxed ? v.upper - v.lower : 1.0);
        // stay a small margin inside every finite bound
        const double margin = boxed ? 0.01 * (v.upper - v.lower) : 1e-3;
        if (std::isfinite(v.lower)) value = std::max(value, v.lower + margin);
        if (std::isfinite(v.upper)) value = std::min(value, v.upper - margin);
        x[j] = value;
    }
    return x;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDamping = 1e-5;       // linear damping on single-bounded variables
constexpr double kSigmaBound = 1e10;    // bound multiplier safeguard
constexpr double kBarrierTol = 10.0;    // barrier subproblem tolerance factor
constexpr double kScaleMax = 100.0;     // s_max of the scaled optimality error
constexpr double kGradTarget = 100.0;   // gradient-based scaling target

using SparseRow = std::vector<std::pair<int, double>>;

// Marks linear equality rows that repeat an earlier one up to a scale factor
// (e.g. two loss rows that both pin a loss to zero on a branch with R = 0).
// Keeping them makes the Jacobian rank deficient, and the dual regularization
// needed then caps the attainable feasibility when multipliers are large.
std::vector<char> parallel_linear_equalities(const ConstraintSystem& sys) {
    std::vector<char> dropped(sys.rows.size(), 0);
    std::map<std::vector<std::pair<int, double>>, std::vector<std::pair<std::size_t, double>>> seen;
    for (std::size_t i = 0; i < sys.rows.size(); ++i) {
        const Row& row = sys.rows[i];
        if (row.sense != Sense::Equal) continue;
        if (std::any_of(row.terms.begin(), row.terms.end(), [](const Term& t) { return t.coef != 0.0; })) continue;
        std::map<int, double> merged;
        for (const auto& [j, a] : row.linear) merged[j] += a;
        std::vector<std::pair<int, double>> key;
        for (const auto& [j, a] : merged) {
            if (a != 0.0) key.emplace_back(j, a);
        }
        if (key.empty()) continue;
        const double lead = key.front().second;
        for (auto& e : key) e.second /= lead;
        const double constant = row.constant / lead;
        auto& bucket = seen[key];
        const bool repeat = std::any_of(bucket.begin(), bucket.end(), [&](const auto& prior) {
            return std::abs(prior.second - constant) <= 1e-14 * std::max(1.0, std::abs(constant));
        });
        if (repeat) dropped[i] = 1;
        else bucket.emplace_back(i, constant);
    }
    return dropped;
}

// Scaled problem over the non-pinned variables.
class Problem {
public:
    Problem(const ConstraintSystem& sys, const SolverOptions& opt) : sys_(sys) {
        const auto& vars = sys.layout.vars;
        n_all_ = static_cast<int>(vars.size());
        pos_.assign(n_all_, -1);
        for (int j = 0; j < n_all_; ++j) {
            if (vars[j].lower == vars[j].upper) continue;
            pos_[j] = static_cast<int>(free_.size());
            free_.push_back(j);
            const double l = vars[j].lower, u = vars[j].upper;
            lower_.push_back(std::isfinite(l) ? l - opt.bound_relax * std::max(1.0, std::abs(l)) : -kInf);
            upper_.push_back(std::isfinite(u) ? u + opt.bound_relax * std::max(1.0, std::abs(u)) : kInf);
        }
        const std::vector<char> dropped = parallel_linear_equalities(sys);
        for (std::size_t i = 0; i < sys.rows.size(); ++i) {
            if (dropped[i]) continue;
            (sys.rows[i].sense == Sense::Equal ? eq_ : ineq_).push_back(static_cast<int>(i));
        }
        row_scale_.assign(sys.rows.size(), 1.0);
        scatter_.assign(free_.size(), -1);
        slack_lower_ = -opt.bound_relax;
    }

    int n() const { return static_cast<int>(free_.size()); }
    int m() const { return static_cast<int>(sys_.rows.size()); }
    int m_eq() const { return static_cast<int>(eq_.size()); }
    int m_ineq() const { return static_cast<int>(ineq_.size()); }
    const std::vector<int>& eq() const { return eq_; }
    const std::vector<int>& ineq() const { return ineq_; }
    const std::vector<int>& free_vars() const { return free_; }
    double lower(int k) const { return lower_[k]; }
    double upper(int k) const { return upper_[k]; }
    double slack_lower() const { return slack_lower_; }
    double obj_scale() const { return obj_scale_; }
    const std::vector<double>& row_scale() const { return row_scale_; }

    void compute_scaling(std::span<const double> x) {
        std::vector<double> g(n());
        objective_gradient_raw(x, g);
        double gmax = 0.0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        obj_scale_ = gmax > kGradTarget ? kGradTarget / gmax : 1.0;
        std::vector<SparseRow> jac;
        jacobian_raw(x, jac);
        for (int i = 0; i < m(); ++i) {
            double rmax = 0.0;
            for (const auto& [k, v] : jac[i]) rmax = std::max(rmax, std::abs(v));
            row_scale_[i] = rmax > kGradTarget ? kGradTarget / rmax : 1.0;
        }
    }

    double objective(std::span<const double> x) const { return obj_scale_ * sys_.objective.value(x); }

    void objective_gradient(std::span<const double> x, std::vector<double>& g) const {
        objective_gradient_raw(x, g);
        for (double& v : g) v *= obj_scale_;
    }

    void constraints(std::span<const double> x, std::vector<double>& c) const {
        c.resize(m());
        for (int i = 0; i < m(); ++i) c[i] = row_scale_[i] * evaluate(sys_.rows[i], x);
    }

    void jacobian(std::span<const double> x, std::vector<SparseRow>& jac) {
        jacobian_raw(x, jac);
        for (int i = 0; i < m(); ++i) {
            for (auto& e : jac[i]) e.second *= row_scale_[i];
        }
    }

    // Lower triangle of the scaled Lagrangian Hessian in free coordinates.
    void hessian(std::span<const double> x, std::span<const double> y, std::vector<SparseLdl::Entry>& out) const {
        out.clear();
        for (const auto& t : sys_.objective.cost) {
            const int k = pos_[t.index];
            if (k >= 0 && t.quad != 0.0) out.push_back({k, k, 2.0 * t.quad * obj_scale_});
        }
        std::vector<HessianEntry> h;
        for (int i = 0; i < m(); ++i) {
            if (y[i] == 0.0 || sys_.rows[i].terms.empty()) continue;
            h.clear();
            meshflow::hessian(sys_.rows[i], x, y[i] * row_scale_[i], h);
            for (const auto& e : h) {
                const int r = pos_[e.row], c = pos_[e.col];
                if (r >= 0 && c >= 0) out.push_back({std::max(r, c), std::min(r, c), e.value});
            }
        }
    }

private:
    void objective_gradient_raw(std::span<const double> x, std::vector<double>& g) const {
        std::vector<double> full(n_all_);
        sys_.objective.gradient(x, full);
        g.assign(n(), 0.0);
        for (int k = 0; k < n(); ++k) g[k] = full[free_[k]];
    }

    void jacobian_raw(std::span<const double> x, std::vector<SparseRow>& jac) {
        jac.resize(m());
        std::vector<std::pair<int, double>> raw;
        for (int i = 0; i < m(); ++i) {
            raw.clear();
            gradient(sys_.rows[i], x, raw);
            SparseRow& row = jac[i];
            row.clear();
            for (const auto& [j, v] : raw) {
                const int k = pos_[j];
                if (k < 0) continue;
                if (scatter_[k] >= 0) {
                    row[scatter_[k]].second += v;
                } else {
                    scatter_[k] = static_cast<int>(row.size());
                    row.emplace_back(k, v);
                }
            }
            for (const auto& e : row) scatter_[e.first] = -1;
        }
    }

    const ConstraintSystem& sys_;
    int n_all_ = 0;
    std::vector<int> pos_;
    std::vector<int> free_;
    std::vector<double> lower_, upper_;
    std::vector<int> eq_, ineq_;
    std::vector<double> row_scale_;
    std::vector<int> scatter_;
    double obj_scale_ = 1.0;
    double slack_lower_ = 0.0;
};

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double one_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m += std::abs(x);
    return m;
}

struct Iterate {
    std::vector<double> x;   // full primal (pinned entries fixed)
    std::vector<double> s;   // per inequality
    std::vector<double> y;   // per row (scaled problem)
    std::vector<double> zl, zu;  // per free variable
    std::vector<double> w;   // per inequality
};

class Solver {
public:
    Solver(const ConstraintSystem& sys, const SolverOptions& opt) : sys_(sys), opt_(opt), prob_(sys, opt) {}

    SolverResult run(std::optional<std::span<const double>> start);

private:
    // --- problem quantities at the current iterate ------------------------
    void evaluate_all();
    double violation(const std::vector<double>& c, std::span<const double> s) const;
    void residuals(double mu, double& dual, double& primal, double& compl_mu, double& s_d, double& s_c) const;
    double error(double mu) const;

    bool factor_kkt(double mu);
    void solve_kkt(const std::vector<double>& rhs, std::vector<double>& sol);

    const ConstraintSystem& sys_;
    SolverOptions opt_;
    Problem prob_;
    Iterate it_;

    // evaluation cache at it_
    double f_ = 0.0;
    std::vector<double> grad_;
    std::vector<double> c_;
    std::vector<SparseRow> jac_;
    std::vector<SparseLdl::Entry> hess_;

    SparseLdl ldl_;
    std::vector<SparseLdl::Entry> kkt_entries_;
    double delta_w_last_ = 0.0;
    double delta_w_ = 0.0, delta_c_ = 0.0;
    std::vector<double> sigma_x_, sigma_s_;
};

void Solver::evaluate_all() {
    f_ = prob_.objective(it_.x);
    prob_.objective_gradient(it_.x, grad_);
    prob_.constraints(it_.x, c_);
    prob_.jacobian(it_.x, jac_);
}

double Solver::violation(const std::vector<double>& c, std::span<const double> s) const {
    double v = 0.0;
    for (int e : prob_.eq()) v += std::abs(c[e]);
    for (std::size_t k = 0; k < prob_.ineq().size(); ++k) v += std::abs(c[prob_.ineq()[k]] + s[k]);
    return v;
}

void Solver::residuals(double mu, double& dual, double& primal, double& compl_mu, double& s_d,
                       double& s_c) const {
    const int n = prob_.n();
    std::vector<double> rx(grad_);
    for (int i = 0; i < prob_.m(); ++i) {
        for (const auto& [k, v] : jac_[i]) rx[k] += v * it_.y[i];
    }
    for (int k = 0; k < n; ++k) rx[k] += -it_.zl[k] + it_.zu[k];
    dual = inf_norm(rx);
    for (std::size_t k = 0; k < prob_.ineq().size(); ++k) {
        dual = std::max(dual, std::abs(it_.y[prob_.ineq()[k]] - it_.w[k]));
    }
    primal = 0.0;
    for (int e : prob_.eq()) primal = std::max(primal, std::abs(c_[e]));
    for (std::size_t k = 0; k < prob_.ineq().size(); ++k) {
        primal = std::max(primal, std::abs(c_[prob_.ineq()[k]] + it_.s[k]));
    }
    compl_mu = 0.0;
    double zsum = 0.0;
    int zcount = 0;
    const auto& fv = prob_.free_vars();
    for (int k = 0; k < n; ++k) {
        const double x = it_.x[fv[k]];
        if (std::isfinite(prob_.lower(k))) {
            compl_mu = std::max(compl_mu, std::abs((x - prob_.lower(k)) * it_.zl[k] - mu));
            zsum += std::abs(it_.zl[k]);
            ++zcount;
        }
        if (std::isfinite(prob_.upper(k))) {
            compl_mu = std::max(compl_mu, std::abs((prob_.upper(k) - x) * it_.zu[k] - mu));
            zsum += std::abs(it_.zu[k]);
            ++zcount;
        }
    }
    for (std::size_t k = 0; k < prob_.ineq().size(); ++k) {
        compl_mu = std::max(compl_mu, std::abs((it_.s[k] - prob_.slack_lower()) * it_.w[k] - mu));
        zsum += std::abs(it_.w[k]);
        ++zcount;
    }
    const double ysum = one_norm(it_.y);
    const int total = prob_.m() + zcount;
    s_d = total > 0 ? std::max(kScaleMax, (ysum + zsum) / total) / kScaleMax : 1.0;
    s_c = zcount > 0 ? std::max(kScaleMax, zsum / zcount) / kScaleMax : 1.0;
}

double Solver::error(double mu) const {
    double dual, primal, compl_mu, s_d, s_c;
    residuals(mu, dual, primal, compl_mu, s_d, s_c);
    return std::max({dual / s_d, primal, compl_mu / s_c});
}

bool Solver::factor_kkt(double mu) {
    (void)mu;
    const int n = prob_.n(), me = prob_.m_eq(), mi = prob_.m_ineq();
    const int dim = n + me + mi;
    std::vector<SparseLdl::Entry>& entries = kkt_entries_;
    auto assemble = [&](double dw, double dc) {
        entries = hess_;
        for (int k = 0; k < n; ++k) entries.push_back({k, k, sigma_x_[k] + dw});
        for (int e = 0; e < me; ++e) {
            const int r = n + e;
            for (const auto& [k, v] : jac_[prob_.eq()[e]]) entries.push_back({r, k, v});
            entries.push_back({r, r, -dc});
        }
        for (int q = 0; q < mi; ++q) {
            const int r = n + me + q;
            for (const auto& [k, v] : jac_[prob_.ineq()[q]]) entries.push_back({r, k, v});
            entries.push_back({r, r, -1.0 / sigma_s_[q] - dc});
        }
    };
    auto correct = [&](const Inertia& in) { return in.zero == 0 && in.positive == n && in.negative == me + mi; };

    delta_w_ = 0.0;
    delta_c_ = 0.0;
    assemble(0.0, 0.0);
    ldl_.factorize(dim, entries);
    if (correct(ldl_.inertia())) return true;
    // zero pivots or too few negative eigenvalues point at dependent constraint rows
    if (ldl_.singular() || ldl_.inertia().negative < me + mi) delta_c_ = 1e-8 * std::pow(mu, 0.25);
    delta_w_ = delta_w_last_ == 0.0 ? opt_.inertia_regularization_init
                                    : std::max(1e-20, delta_w_last_ / 3.0);
    const double growth = delta_w_last_ == 0.0 ? 100.0 : 8.0;
    while (delta_w_ < 1e40) {
        assemble(delta_w_, delta_c_);
        ldl_.factorize(dim, entries);
        if (correct(ldl_.inertia())) {
            delta_w_last_ = delta_w_;
            return true;
        }
        delta_w_ *= growth;
    }
    return false;
}

void Solver::solve_kkt(const std::vector<double>& rhs, std::vector<double>& sol) {
    for (;;) {
        sol = rhs;
        const double res = ldl_.solve_refined(sol, 5);
        const double scale = std::max({1.0, inf_norm(rhs), inf_norm(sol)});
        if (res <= 1e-10 * scale || ldl_.pivot_threshold() >= 0.5) return;
        // inaccurate: refactor with stricter pivoting
        ldl_.set_pivot_threshold(std::min(0.5, std::max(1e-4, std::pow(ldl_.pivot_threshold(), 0.5))));
        ldl_.factorize(ldl_.size(), kkt_entries_);
    }
}

SolverResult Solver::run(std::optional<std::span<const double>> start) {
    const auto t0 = std::chrono::steady_clock::now();
    SolverResult result;
    const int n = prob_.n(), m = prob_.m(), mi = prob_.m_ineq();
    const auto& fv = prob_.free_vars();
    const auto& ineq = prob_.ineq();

    // --- initial point ------------------------------------------------------
    it_.x = start ? std::vector<double>(start->begin(), start->end()) : flat_start(sys_);
    if (it_.x.size() != sys_.layout.size()) throw Error(ErrorKind::InvalidSpec, "start vector has wrong size");
    for (std::size_t j = 0; j < it_.x.size(); ++j) {
        const Variable& v = sys_.layout.vars[j];
        if (v.lower == v.upper) it_.x[j] = v.lower;
    }
    for (int k = 0; k < n; ++k) {
        const double l = prob_.lower(k), u = prob_.upper(k);
        double& x = it_.x[fv[k]];
        const double width = u - l;
        if (std::isfinite(l)) x = std::max(x, l + std::min(1e-2 * std::max(1.0, std::abs(l)), 1e-2 * width));
        if (std::isfinite(u)) x = std::min(x, u - std::min(1e-2 * std::max(1.0, std::abs(u)), 1e-2 * width));
    }
    prob_.compute_scaling(it_.x);
    result.objective_scale = prob_.obj_scale();
    result.row_scale = prob_.row_scale();

    double mu = opt_.mu_init;
    const double mu_min = opt_.tol_kkt / 10.0;
    result.mu_history.push_back(mu);

    evaluate_all();
    it_.s.resize(mi);
    it_.w.resize(mi);
    it_.y.assign(m, 0.0);
    const double s_push = 1e-2 * std::max(1.0, std::abs(prob_.slack_lower()));
    for (int q = 0; q < mi; ++q) {
        it_.s[q] = std::max(-c_[ineq[q]], prob_.slack_lower() + s_push);
        it_.w[q] = mu / (it_.s[q] - prob_.slack_lower());
        it_.y[ineq[q]] = it_.w[q];
    }
    it_.zl.assign(n, 0.0);
    it_.zu.assign(n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double x = it_.x[fv[k]];
        if (std::isfinite(prob_.lower(k))) it_.zl[k] = mu / (x - prob_.lower(k));
        if (std::isfinite(prob_.upper(k))) it_.zu[k] = mu / (prob_.upper(k) - x);
    }

    auto single_lower = [&](int k) { return std::isfinite(prob_.lower(k)) && !std::isfinite(prob_.upper(k)); };
    auto single_upper = [&](int k) { return !std::isfinite(prob_.lower(k)) && std::isfinite(prob_.upper(k)); };

    // barrier part of the merit function (objective excluded)
    auto barrier = [&](std::span<const double> x, std::span<const double> s, double mu_) {
        double b = 0.0;
        for (int k = 0; k < n; ++k) {
            const double xv = x[fv[k]];
            if (std::isfinite(prob_.lower(k))) {
                const double g = xv - prob_.lower(k);
                if (!(g > 0.0)) return kInf;
                b -= mu_ * std::log(g);
                if (single_lower(k)) b += kDamping * mu_ * g;
            }
            if (std::isfinite(prob_.upper(k))) {
                const double g = prob_.upper(k) - xv;
                if (!(g > 0.0)) return kInf;
                b -= mu_ * std::log(g);
                if (single_upper(k)) b += kDamping * mu_ * g;
            }
        }
        for (int q = 0; q < mi; ++q) {
            const double g = s[q] - prob_.slack_lower();
            if (!(g > 0.0)) return kInf;
            b -= mu_ * std::log(g);
        }
        return b;
    };

    double nu = 1.0;  // l1 penalty weight of the merit function
    int consecutive_failures = 0;
    result.status = SolverStatus::MaxIterations;
    int iter = 0;
    std::vector<double> rhs, sol, ctrial, dx(n), ds(mi), dy(m), dzl(n), dzu(n), dw(mi);
    std::vector<double> sigma_l(n), sigma_u(n);
    std::vector<double> xtrial, strial;

    for (;; ++iter) {
        // --- convergence and barrier update --------------------------------
        double dual, primal, compl0, s_d, s_c;
        residuals(0.0, dual, primal, compl0, s_d, s_c);
        result.kkt_residuals = {dual / s_d, primal, compl0 / s_c};
        if (std::max({dual / s_d, primal, compl0 / s_c}) <= opt_.tol_kkt) {
            result.status = SolverStatus::Optimal;
            break;
        }
        if (iter >= opt_.max_iter) {
            result.status = SolverStatus::MaxIterations;
            break;
        }
        while (mu > mu_min && error(mu) <= kBarrierTol * mu) {
            const double next = std::max(mu_min, std::min(opt_.mu_shrink * mu, std::pow(mu, 1.5)));
            if (!(next < mu)) break;
            mu = next;
            result.mu_history.push_back(mu);
        }
        const double tau = std::max(opt_.fraction_to_boundary, 1.0 - mu);
        if (opt_.verbose) {
            std::fprintf(stderr, "%3d f %.8e inf_pr %.2e inf_du %.2e compl %.2e mu %.1e\n", iter,
                         f_ / prob_.obj_scale(), primal, dual / s_d, compl0 / s_c, mu);
        }

        // --- Newton system ----------------------------------------------------
        sigma_x_.assign(n, 0.0);
        for (int k = 0; k < n; ++k) {
            const double x = it_.x[fv[k]];
            sigma_l[k] = std::isfinite(prob_.lower(k)) ? it_.zl[k] / (x - prob_.lower(k)) : 0.0;
            sigma_u[k] = std::isfinite(prob_.upper(k)) ? it_.zu[k] / (prob_.upper(k) - x) : 0.0;
            sigma_x_[k] = sigma_l[k] + sigma_u[k];
        }
        sigma_s_.resize(mi);
        for (int q = 0; q < mi; ++q) sigma_s_[q] = it_.w[q] / (it_.s[q] - prob_.slack_lower());

        prob_.hessian(it_.x, it_.y, hess_);
        if (!factor_kkt(mu)) {
            result.status = SolverStatus::NumericFailure;
            break;
        }

        // gradient of the barrier merit in x and s
        std::vector<double> gphi_x(grad_), gphi_s(mi);
        for (int k = 0; k < n; ++k) {
            const double x = it_.x[fv[k]];
            if (std::isfinite(prob_.lower(k))) {
                gphi_x[k] -= mu / (x - prob_.lower(k));
                if (single_lower(k)) gphi_x[k] += kDamping * mu;
            }
            if (std::isfinite(prob_.upper(k))) {
                gphi_x[k] += mu / (prob_.upper(k) - x);
                if (single_upper(k)) gphi_x[k] -= kDamping * mu;
            }
        }
        for (int q = 0; q < mi; ++q) gphi_s[q] = -mu / (it_.s[q] - prob_.slack_lower());

        const int me = prob_.m_eq();
        auto build_rhs = [&](const std::vector<double>& cval, std::span<const double> sval) {
            rhs.assign(n + m, 0.0);
            for (int k = 0; k < n; ++k) rhs[k] = -gphi_x[k];
            for (int i = 0; i < m; ++i) {
                for (const auto& [k, v] : jac_[i]) rhs[k] -= v * it_.y[i];
            }
            for (int e = 0; e < me; ++e) rhs[n + e] = -cval[prob_.eq()[e]];
            for (int q = 0; q < mi; ++q) {
                const double gap = it_.s[q] - prob_.slack_lower();
                rhs[n + me + q] =
                    -(cval[ineq[q]] + sval[q]) - (mu / gap - it_.y[ineq[q]]) / sigma_s_[q];
            }
        };
        auto unpack = [&](const std::vector<double>& z) {
            for (int k = 0; k < n; ++k) dx[k] = z[k];
            for (int e = 0; e < me; ++e) dy[prob_.eq()[e]] = z[n + e];
            for (int q = 0; q < mi; ++q) {
                const int i = ineq[q];
                dy[i] = z[n + me + q];
                const double gap = it_.s[q] - prob_.slack_lower();
                ds[q] = (mu / gap - it_.y[i] - dy[i]) / sigma_s_[q];
            }
        };
        build_rhs(c_, it_.s);
        solve_kkt(rhs, sol);
        unpack(sol);

        for (int k = 0; k < n; ++k) {
            const double x = it_.x[fv[k]];
            dzl[k] = std::isfinite(prob_.lower(k)) ? mu / (x - prob_.lower(k)) - it_.zl[k] - sigma_l[k] * dx[k] : 0.0;
            dzu[k] = std::isfinite(prob_.upper(k)) ? mu / (prob_.upper(k) - x) - it_.zu[k] + sigma_u[k] * dx[k] : 0.0;
        }
        for (int q = 0; q < mi; ++q) {
            const double gap = it_.s[q] - prob_.slack_lower();
            dw[q] = mu / gap - it_.w[q] - sigma_s_[q] * ds[q];
        }

        // --- step lengths -------------------------------------------------------
        auto primal_max = [&](const std::vector<double>& dxv, const std::vector<double>& dsv) {
            double alpha = 1.0;
            for (int k = 0; k < n; ++k) {
                const double x = it_.x[fv[k]];
                if (dxv[k] < 0.0 && std::isfinite(prob_.lower(k))) {
                    alpha = std::min(alpha, -tau * (x - prob_.lower(k)) / dxv[k]);
                }
                if (dxv[k] > 0.0 && std::isfinite(prob_.upper(k))) {
                    alpha = std::min(alpha, tau * (prob_.upper(k) - x) / dxv[k]);
                }
            }
            for (int q = 0; q < mi; ++q) {
                if (dsv[q] < 0.0) alpha = std::min(alpha, -tau * (it_.s[q] - prob_.slack_lower()) / dsv[q]);
            }
            return alpha;
        };
        const double alpha_max = primal_max(dx, ds);
        double alpha_dual = 1.0;
        for (int k = 0; k < n; ++k) {
            if (dzl[k] < 0.0) alpha_dual = std::min(alpha_dual, -tau * it_.zl[k] / dzl[k]);
            if (dzu[k] < 0.0) alpha_dual = std::min(alpha_dual, -tau * it_.zu[k] / dzu[k]);
        }
        for (int q = 0; q < mi; ++q) {
            if (dw[q] < 0.0) alpha_dual = std::min(alpha_dual, -tau * it_.w[q] / dw[q]);
        }

        // --- merit line search ------------------------------------------------
        const double theta0 = violation(c_, it_.s);
        double directional = 0.0;
        for (int k = 0; k < n; ++k) directional += gphi_x[k] * dx[k];
        for (int q = 0; q < mi; ++q) directional += gphi_s[q] * ds[q];
        double curvature = 0.0;
        for (const auto& e : hess_) {
            curvature += (e.row == e.col ? 1.0 : 2.0) * e.value * dx[e.row] * dx[e.col];
        }
        for (int k = 0; k < n; ++k) curvature += sigma_x_[k] * dx[k] * dx[k];
        for (int q = 0; q < mi; ++q) curvature += sigma_s_[q] * ds[q] * ds[q];
        // first-order change of the l1 violation along the step; differs from
        // -theta0 when dual regularization is active
        double dtheta = 0.0;
        {
            auto add = [&](double c, double jd) { dtheta += c > 0.0 ? jd : c < 0.0 ? -jd : std::abs(jd); };
            for (int e = 0; e < me; ++e) {
                const int i = prob_.eq()[e];
                double jd = 0.0;
                for (const auto& [k, v] : jac_[i]) jd += v * dx[k];
                add(c_[i], jd);
            }
            for (int q = 0; q < mi; ++q) {
                const int i = ineq[q];
                double jd = ds[q];
                for (const auto& [k, v] : jac_[i]) jd += v * dx[k];
                add(c_[i] + it_.s[q], jd);
            }
        }
        if (dtheta < 0.0) {
            const double required = (directional + 0.5 * std::max(0.0, curvature)) / (-0.9 * dtheta);
            if (nu < required) nu = 1.5 * required;
        }
        const double slope = directional + nu * dtheta;
        const double phi0 = f_ + barrier(it_.x, it_.s, mu) + nu * theta0;

        auto trial_point = [&](double alpha, const std::vector<double>& dxv, const std::vector<double>& dsv) {
            xtrial = it_.x;
            for (int k = 0; k < n; ++k) xtrial[fv[k]] += alpha * dxv[k];
            strial = it_.s;
            for (int q = 0; q < mi; ++q) strial[q] += alpha * dsv[q];
        };
        auto merit_at = [&](double& theta) {
            const double b = barrier(xtrial, strial, mu);
            if (!std::isfinite(b)) return kInf;
            prob_.constraints(xtrial, ctrial);
            const double f = prob_.objective(xtrial);
            theta = violation(ctrial, strial);
            const double phi = f + b + nu * theta;
            return std::isfinite(phi) ? phi : kInf;
        };

        double alpha = alpha_max;
        bool accepted = false;
        const double slack_eps = 10.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(phi0));
        for (int bt = 0; bt <= opt_.linesearch.max_backtracks; ++bt) {
            trial_point(alpha, dx, ds);
            double theta = 0.0;
            const double phi = merit_at(theta);
            if (phi <= phi0 + opt_.linesearch.armijo * alpha * slope + slack_eps) {
                accepted = true;
                break;
            }
            if (bt == 0 && opt_.linesearch.second_order_correction && std::isfinite(phi) && theta >= theta0) {
                // second-order correction against the Maratos effect
                std::vector<double> csoc(m), ssoc(mi);
                for (int i = 0; i < m; ++i) csoc[i] = alpha * c_[i] + ctrial[i];
                for (int q = 0; q < mi; ++q) ssoc[q] = alpha * it_.s[q] + strial[q];
                build_rhs(csoc, ssoc);
                // primal residual rows must keep the undamped dual rhs
                solve_kkt(rhs, sol);
                std::vector<double> dx_soc(n), ds_soc(mi);
                for (int k = 0; k < n; ++k) dx_soc[k] = sol[k];
                for (int q = 0; q < mi; ++q) {
                    const int i = ineq[q];
                    const double gap = it_.s[q] - prob_.slack_lower();
                    ds_soc[q] = (mu / gap - it_.y[i] - sol[n + me + q]) / sigma_s_[q];
                }
                const double alpha_soc = primal_max(dx_soc, ds_soc);
                trial_point(alpha_soc, dx_soc, ds_soc);
                double theta_soc = 0.0;
                const double phi_soc = merit_at(theta_soc);
                if (phi_soc <= phi0 + opt_.linesearch.armijo * alpha * slope + slack_eps) {
                    accepted = true;
                    alpha = alpha_soc;
                    dx = dx_soc;
                    ds = ds_soc;
                    for (int e = 0; e < me; ++e) dy[prob_.eq()[e]] = sol[n + e];
                    for (int q = 0; q < mi; ++q) dy[ineq[q]] = sol[n + me + q];
                    break;
                }
            }
            alpha *= opt_.linesearch.backtrack;
        }

        if (!accepted) {
            ++consecutive_failures;
            if (theta0 > 1e-4 && consecutive_failures >= 3) {
                result.status = SolverStatus::InfeasibleDetected;
                break;
            }
            // accept a short step anyway; repeated failure ends in MaxIterations
            alpha = std::min(alpha_max, 1e-2);
            trial_point(alpha, dx, ds);
        } else {
            consecutive_failures = 0;
        }

        if (opt_.verbose) {
            std::fprintf(stderr, "    alpha_max %.2e alpha %.2e alpha_dual %.2e dw %.1e dc %.1e nu %.2e %s\n", alpha_max,
                         alpha, alpha_dual, delta_w_, delta_c_, nu, accepted ? "" : "(ls failed)");
        }

        // --- update -----------------------------------------------------------
        it_.x = xtrial;
        it_.s = strial;
        for (int i = 0; i < m; ++i) it_.y[i] += alpha * dy[i];
        for (int k = 0; k < n; ++k) {
            it_.zl[k] += alpha_dual * dzl[k];
            it_.zu[k] += alpha_dual * dzu[k];
        }
        for (int q = 0; q < mi; ++q) it_.w[q] += alpha_dual * dw[q];
        for (int k = 0; k < n; ++k) {
            const double x = it_.x[fv[k]];
            if (std::isfinite(prob_.lower(k))) {
                const double g = x - prob_.lower(k);
                it_.zl[k] = std::clamp(it_.zl[k], mu / (kSigmaBound * g), kSigmaBound * mu / g);
            }
            if (std::isfinite(prob_.upper(k))) {
                const double g = prob_.upper(k) - x;
                it_.zu[k] = std::clamp(it_.zu[k], mu / (kSigmaBound * g), kSigmaBound * mu / g);
            }
        }
        for (int q = 0; q < mi; ++q) {
            const double g = it_.s[q] - prob_.slack_lower();
            it_.w[q] = std::clamp(it_.w[q], mu / (kSigmaBound * g), kSigmaBound * mu / g);
        }
        evaluate_all();
        if (!std::isfinite(f_) || !std::isfinite(inf_norm(c_))) {
            result.status = SolverStatus::NumericFailure;
            break;
        }
    }

    // --- unscaled result ----------------------------------------------------------
    result.iterations = iter;
    result.primal = it_.x;
    result.objective = sys_.objective.value(it_.x);
    const double os = prob_.obj_scale();
    result.multipliers.resize(m);
    for (int i = 0; i < m; ++i) result.multipliers[i] = it_.y[i] * prob_.row_scale()[i] / os;
    result.bound_lower.assign(sys_.layout.size(), 0.0);
    result.bound_upper.assign(sys_.layout.size(), 0.0);
    for (int k = 0; k < n; ++k) {
        result.bound_lower[fv[k]] = it_.zl[k] / os;
        result.bound_upper[fv[k]] = it_.zu[k] / os;
    }
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace

SolverResult solve(const ConstraintSystem& system, const SolverOptions& options,
                   std::optional<std::span<const double>> start) {
    options.validate();
    Solver solver(system, options);
    return solver.run(start);
}

// ---------------------------------------------------------------------------

DerivativeReport derivative_check(const ConstraintSystem& system, std::span<const double> point, double step) {
    DerivativeReport report;
    std::vector<double> x(point.begin(), point.end());
    std::vector<std::pair<int, double>> g;
    std::vector<HessianEntry> h;

    auto dense_gradient = [&](const Row& row, const std::vector<int>& vars, std::span<const double> at) {
        g.clear();
        gradient(row, at, g);
        std::vector<double> out(vars.size(), 0.0);
        for (const auto& [j, v] : g) {
            const auto it = std::find(vars.begin(), vars.end(), j);
            out[it - vars.begin()] += v;
        }
        return out;
    };

    for (const Row& row : system.rows) {
        std::vector<int> vars;
        for (const auto& [j, v] : row.linear) vars.push_back(j);
        for (const Term& t : row.terms) {
            for (int j : t.idx) {
                if (j >= 0) vars.push_back(j);
            }
        }
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        const std::size_t nv = vars.size();

        auto& tag = report.by_tag[static_cast<std::size_t>(row.tag)];
        ++tag.rows;
        const std::vector<double> analytic = dense_gradient(row, vars, x);
        std::vector<double> hess(nv * nv, 0.0);
        h.clear();
        hessian(row, x, 1.0, h);
        for (const auto& e : h) {
            const std::size_t a = std::find(vars.begin(), vars.end(), e.row) - vars.begin();
            const std::size_t b = std::find(vars.begin(), vars.end(), e.col) - vars.begin();
            hess[a * nv + b] += e.value;
            if (a != b) hess[b * nv + a] += e.value;
        }

        for (std::size_t a = 0; a < nv; ++a) {
            const int j = vars[a];
            const double saved = x[j];
            x[j] = saved + step;
            const double fp = evaluate(row, x);
            const std::vector<double> gp = dense_gradient(row, vars, x);
            x[j] = saved - step;
            const double fm = evaluate(row, x);
            const std::vector<double> gm = dense_gradient(row, vars, x);
            x[j] = saved;

            const double numeric = (fp - fm) / (2.0 * step);
            tag.jacobian = std::max(tag.jacobian, std::abs(analytic[a] - numeric) / std::max(1.0, std::abs(analytic[a])));
            for (std::size_t b = 0; b < nv; ++b) {
                const double hn = (gp[b] - gm[b]) / (2.0 * step);
                const double ha = hess[b * nv + a];
                tag.hessian = std::max(tag.hessian, std::abs(ha - hn) / std::max(1.0, std::abs(ha)));
            }
        }
        report.worst_jacobian = std::max(report.worst_jacobian, tag.jacobian);
        report.worst_hessian = std::max(report.worst_hessian, tag.hessian);
    }
    return report;
}

KktResiduals kkt_certificate(const ConstraintSystem& system, const SolverResult& result,
                             const SolverOptions& options) {
    const std::size_t nvar = system.layout.size();
    const std::span<const double> x = result.primal;
    const double os = result.objective_scale;

    std::vector<double> stat(nvar);
    system.objective.gradient(x, stat);
    std::vector<std::pair<int, double>> g;
    double feas = 0.0;
    double compl_max = 0.0;
    double ysum = 0.0, zsum = 0.0;
    int zcount = 0;
    for (std::size_t i = 0; i < system.rows.size(); ++i) {
        const Row& row = system.rows[i];
        const double y = result.multipliers[i];
        g.clear();
        gradient(row, x, g);
        for (const auto& [j, v] : g) stat[j] += y * v;
        const double d = result.row_scale[i];
        const double c = d * evaluate(row, x);
        const double y_scaled = y * os / d;
        ysum += std::abs(y_scaled);
        if (row.sense == Sense::Equal) {
            feas = std::max(feas, std::abs(c));
        } else {
            feas = std::max(feas, std::max(0.0, c - options.bound_relax));
            compl_max = std::max(compl_max, std::abs(y_scaled * (-c + options.bound_relax)));
            zsum += std::abs(y_scaled);
            ++zcount;
        }
    }
    double stat_max = 0.0;
    for (std::size_t j = 0; j < nvar; ++j) {
        const Variable& v = system.layout.vars[j];
        if (v.lower == v.upper) continue;
        stat[j] += -result.bound_lower[j] + result.bound_upper[j];
        stat_max = std::max(stat_max, std::abs(stat[j]) * os);
        if (std::isfinite(v.lower)) {
            const double l = v.lower - options.bound_relax * std::max(1.0, std::abs(v.lower));
            feas = std::max(feas, std::max(0.0, v.lower - x[j]) / std::max(1.0, std::abs(v.lower)) -
                                      options.bound_relax);
            compl_max = std::max(compl_max, std::abs(result.bound_lower[j] * os * (x[j] - l)));
            zsum += std::abs(result.bound_lower[j] * os);
            ++zcount;
        }
        if (std::isfinite(v.upper)) {
            const double u = v.upper + options.bound_relax * std::max(1.0, std::abs(v.upper));
            feas = std::max(feas, std::max(0.0, x[j] - v.upper) / std::max(1.0, std::abs(v.upper)) -
                                      options.bound_relax);
            compl_max = std::max(compl_max, std::abs(result.bound_upper[j] * os * (u - x[j])));
            zsum += std::abs(result.bound_upper[j] * os);
            ++zcount;
        }
    }
    const int total = static_cast<int>(system.rows.size()) + zcount;
    const double s_d = total > 0 ? std::max(kScaleMax, (ysum + zsum) / total) / kScaleMax : 1.0;
    const double s_c = zcount > 0 ? std::max(kScaleMax, zsum / zcount) / kScaleMax : 1.0;
    return {stat_max / s_d, std::max(0.0, feas), compl_max / s_c};
}

}  // namespace meshflow
