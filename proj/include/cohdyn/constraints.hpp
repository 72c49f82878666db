#ifndef COHDYN_CONSTRAINTS_HPP
#define COHDYN_CONSTRAINTS_HPP

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cohdyn/classical.hpp"
#include "cohdyn/expr.hpp"
#include "cohdyn/fock.hpp"

namespace cohdyn {

// ---------------------------------------------------------------------------
// Operator tables

/// Name of the operator Q^k in standard tables ("Q", "Q2", "Q3", ...).
inline std::string q_power_name(int k) { return k == 1 ? "Q" : "Q" + std::to_string(k); }

/// Table for one oscillator:
///   Q, P, P2, H, V, Vp (V'), Vpp (V''), QP = (QP+PQ)/2,
///   Q2..Q{max_power}, and Q3P = (Q^3 P + P Q^3)/2.
inline OperatorTable make_operator_table(const Oscillator& osc, int max_power = 8)
{
    OperatorTable t(osc.basis.dimension());
    t.add("Q", osc.q).add("P", osc.p).add("H", osc.h);
    t.add("P2", symmetrized_product(osc.p, osc.p));
    const Polynomial& v = osc.potential.polynomial();
    t.add("V", apply_potential(v, osc.q));
    t.add("Vp", apply_potential(v.derivative(1), osc.q));
    t.add("Vpp", apply_potential(v.derivative(2), osc.q));
    t.add("QP", symmetrized_product(osc.q, osc.p));
    const int top = std::max(max_power, 3);
    for (int k = 2; k <= top; ++k) t.add(q_power_name(k), apply_potential(Polynomial::monomial(k), osc.q));
    t.add("Q3P", symmetrized_product(t.at("Q3"), osc.p));
    return t;
}

// ---------------------------------------------------------------------------
// Expression builders

inline ObservableExpr ex(const std::string& name) { return ObservableExpr::expect(name); }
inline ObservableExpr cst(double c) { return ObservableExpr::constant(c); }

/// Delta(A, B) = <sym(AB)> - <A><B>, with sym(AB) pre-registered under `sym`.
inline ObservableExpr correlation_expr(const std::string& sym, const std::string& a, const std::string& b)
{
    return ex(sym) - ex(a) * ex(b);
}

/// <A^2> - <A>^2.
inline ObservableExpr variance_expr(const std::string& square, const std::string& a)
{
    return ex(square) - ObservableExpr::pow(ex(a), 2);
}

/// p(<arg>) for a polynomial p.
inline ObservableExpr polynomial_of(const Polynomial& poly, const ObservableExpr& arg)
{
    std::vector<ObservableExpr> terms;
    for (std::size_t k = 0; k < poly.coefficients().size(); ++k) {
        const double c = poly.coeff(k);
        if (c == 0.0) continue;
        if (k == 0)
            terms.push_back(cst(c));
        else
            terms.push_back(c * ObservableExpr::pow(arg, static_cast<int>(k)));
    }
    return ObservableExpr::sum(std::move(terms));
}

/// <(Q - <Q>)^n> expanded binomially over the Q^j leaves.
inline ObservableExpr central_moment_expr(int n)
{
    if (n < 1) throw std::invalid_argument("central_moment_expr: order must be >= 1");
    std::vector<ObservableExpr> terms;
    double binom = 1.0;
    for (int j = 0; j <= n; ++j) {
        if (j > 0) binom = binom * (n - j + 1) / j;
        const double c = ((n - j) % 2 == 0 ? 1.0 : -1.0) * binom;
        std::vector<ObservableExpr> f{cst(c)};
        if (j > 0) f.push_back(ex(q_power_name(j)));
        if (n - j > 0) f.push_back(ObservableExpr::pow(ex("Q"), n - j));
        terms.push_back(ObservableExpr::product(std::move(f)));
    }
    return ObservableExpr::sum(std::move(terms));
}

// ---------------------------------------------------------------------------
// Constraint sets

/// Coherent probe points: Re alpha in {-1, 0, 1}, Im alpha in {+-0.4, +-1.2}
/// (12 points, |alpha| <= 1.57).
inline std::vector<CoherentPoint> probe_points(const OscillatorParams& params)
{
    std::vector<CoherentPoint> pts;
    const double sq = std::sqrt(2.0 / params.m_omega());
    const double sp = std::sqrt(2.0 * params.m_omega());
    for (double re : {-1.0, 0.0, 1.0})
        for (double im : {-1.2, -0.4, 0.4, 1.2}) pts.push_back({re * sq, im * sp});
    return pts;
}

/// Named constraint expressions over one operator table. Construction
/// checks that every member vanishes (within 1e-8) on the coherent probe
/// points the basis can resolve.
class ConstraintSet {
public:
    using Entry = std::pair<std::string, ObservableExpr>;

    ConstraintSet(OperatorTable ops, const OscillatorParams& params, std::vector<Entry> entries)
        : ops_(std::move(ops)), entries_(std::move(entries))
    {
        for (const auto& [name, f] : entries_)
            for (const auto& leaf : f.leaves())
                if (!ops_.contains(leaf))
                    throw std::invalid_argument("ConstraintSet: '" + name + "' references unknown operator '" + leaf + "'");
        const FockBasis basis(ops_.dimension());
        for (const auto& pt : probe_points(params)) {
            PureState s = PureState::fock(basis.dimension(), 0);
            try {
                s = coherent_state(basis, params, pt);
            } catch (const UnderResolvedError&) {
                continue;
            }
            for (const auto& [name, f] : entries_) {
                const double r = expr_eval(f, ops_, s);
                if (!(std::abs(r) < 1e-8))
                    throw std::invalid_argument("ConstraintSet: '" + name + "' does not vanish on coherent probe (" +
                                                format_double(pt.q) + ", " + format_double(pt.p) + "): " +
                                                format_double(r));
            }
        }
    }

    const OperatorTable& operators() const { return ops_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    const ObservableExpr& operator[](const std::string& name) const
    {
        for (const auto& [n, f] : entries_)
            if (n == name) return f;
        throw std::out_of_range("ConstraintSet: no constraint named '" + name + "'");
    }

    double eval(const std::string& name, const PureState& s) const { return expr_eval((*this)[name], ops_, s); }

private:
    OperatorTable ops_;
    std::vector<Entry> entries_;
};

/// f_q = (dQ)^2 - 1/(2 m w), f_p = (dP)^2 - m w / 2.
inline ConstraintSet dispersion_constraints(const OscillatorParams& params, const OperatorTable& ops)
{
    return ConstraintSet(ops, params,
                         {{"f_q", variance_expr("Q2", "Q") - params.sigma2_q()},
                          {"f_p", variance_expr("P2", "P") - params.sigma2_p()}});
}

inline ConstraintSet dispersion_constraints(const OscillatorParams& params, const Operator& q, const Operator& p)
{
    OperatorTable t(q.dimension());
    t.add("Q", q).add("P", p).add("Q2", symmetrized_product(q, q)).add("P2", symmetrized_product(p, p));
    return dispersion_constraints(params, t);
}

/// Odd and even central-moment constraints f_q{2k-1}, f_q{2k} for
/// k = 2 .. floor((order + 1) / 2). Even targets are (2k-1)!!/(2 m w)^k.
inline ConstraintSet moment_constraints(const OscillatorParams& params, const OperatorTable& ops, int order)
{
    if (order < 1) throw std::invalid_argument("moment_constraints: order must be >= 1");
    std::vector<ConstraintSet::Entry> out;
    for (int k = 2; k <= (order + 1) / 2; ++k) {
        const double target = double_factorial_odd(k) * std::pow(params.sigma2_q(), k);
        out.emplace_back("f_q" + std::to_string(2 * k - 1), central_moment_expr(2 * k - 1));
        out.emplace_back("f_q" + std::to_string(2 * k), central_moment_expr(2 * k) - target);
    }
    return ConstraintSet(ops, params, std::move(out));
}

inline ConstraintSet moment_constraints(const OscillatorParams& params, const Operator& q, int order)
{
    OperatorTable t(q.dimension());
    t.add("Q", q);
    for (int k = 2; k <= std::max(order + 1, 2); ++k) t.add(q_power_name(k), apply_potential(Polynomial::monomial(k), q));
    return moment_constraints(params, t, order);
}

/// Phi_q = <V>_psi - <V>_alpha(psi), Phi_p = <P^2>_psi - <P^2>_alpha(psi).
/// The coherent-state values are closed forms in <Q>, <P>: the smoothed
/// potential at <Q>, and <P>^2 + m w / 2.
inline ConstraintSet alternative_constraints(const PolynomialPotential& v, const OscillatorParams& params,
                                             const OperatorTable& ops)
{
    const Polynomial veff = smooth_potential(v.polynomial(), params.sigma2_q());
    return ConstraintSet(ops, params,
                         {{"Phi_q", ex("V") - polynomial_of(veff, ex("Q"))},
                          {"Phi_p", ex("P2") - ObservableExpr::pow(ex("P"), 2) - params.sigma2_p()}});
}

// ---------------------------------------------------------------------------
// Projection onto the coherent-state manifold

struct Projection {
    CoherentPoint point;
    PureState lifted;
};

/// alpha(psi) = (<Q>, <P>) and the coherent state sitting there.
inline Projection project_to_gamma(const PureState& s, const FockBasis& basis, const OscillatorParams& params,
                                   const Operator& q, const Operator& p)
{
    require_resolved(s, "project_to_gamma");
    const CoherentPoint pt{expect(s, q), expect(s, p)};
    return {pt, coherent_state(basis, params, pt)};
}

inline Projection project_to_gamma(const PureState& s, const Oscillator& osc)
{
    return project_to_gamma(s, osc.basis, osc.params, osc.q, osc.p);
}

// ---------------------------------------------------------------------------
// Multipliers and total Hamiltonians

/// Multipliers as functions of the state (expression trees).
struct MultiplierAssignment {
    ObservableExpr lambda_q;
    ObservableExpr lambda_p;
};

struct MultiplierValues {
    double lambda_q = 0.0;
    double lambda_p = 0.0;
};

/// lambda_p = -1/(2m), lambda_q = -<V''(Q)>/2, the values that stop the
/// Q-P correlation from drifting on the coherent manifold.
inline MultiplierAssignment dispersion_multipliers(const OscillatorParams& params)
{
    return {-0.5 * ex("Vpp"), cst(-1.0 / (2.0 * params.mass()))};
}

inline MultiplierValues dispersion_multipliers(const PureState& s, const PolynomialPotential& v,
                                               const OscillatorParams& params, const Operator& q)
{
    require_resolved(s, "dispersion_multipliers");
    const Operator vpp = apply_potential(v.polynomial().derivative(2), q);
    return {-0.5 * expect(s, vpp), -1.0 / (2.0 * params.mass())};
}

inline MultiplierValues evaluate(const MultiplierAssignment& m, const OperatorTable& ops, const PureState& s)
{
    return {expr_eval(m.lambda_q, ops, s), expr_eval(m.lambda_p, ops, s)};
}

/// d/dt Delta(Q, P) = 2 ( (dP)^2/2m - <V''>(dQ)^2/2 + lambda_p (dP)^2 - lambda_q (dQ)^2 ).
inline double correlation_rate(const PureState& s, const PolynomialPotential& v, const OscillatorParams& params,
                               MultiplierValues lambda, const Operator& q, const Operator& p)
{
    require_resolved(s, "correlation_rate");
    const double vq = variance(s, q);
    const double vp = variance(s, p);
    const double vpp = expect(s, apply_potential(v.polynomial().derivative(2), q));
    return 2.0 * (vp / (2.0 * params.mass()) - vpp * vq / 2.0 + lambda.lambda_p * vp - lambda.lambda_q * vq);
}

/// <H> + lambda_q f_q + lambda_p f_p with the multipliers frozen at the
/// given values.
inline ObservableExpr dispersion_total_hamiltonian(const OscillatorParams& params, MultiplierValues lambda)
{
    return ex("H") + lambda.lambda_q * (variance_expr("Q2", "Q") - params.sigma2_q()) +
           lambda.lambda_p * (variance_expr("P2", "P") - params.sigma2_p());
}

/// Known-bad fixture: the candidate total Hamiltonian built from the
/// dispersion constraints alone,
///   <P>^2/2m + <V> - <V''>/2 ((dQ)^2 - 1/(2 m w)).
/// It keeps Delta(Q, P) fixed on the manifold but not Delta(f(Q), P) for
/// general f.
inline ObservableExpr naive_total_hamiltonian(const OscillatorParams& params)
{
    return (1.0 / (2.0 * params.mass())) * ObservableExpr::pow(ex("P"), 2) + ex("V") -
           (0.5 * ex("Vpp")) * (variance_expr("Q2", "Q") - params.sigma2_q());
}

/// <H> + lambda_q Phi_q + lambda_p Phi_p with lambda_q = -1, lambda_p = -1/(2m).
inline ObservableExpr constrained_total_hamiltonian(const ConstraintSet& phi, const OscillatorParams& params)
{
    return ex("H") + (-1.0) * phi["Phi_q"] + (-1.0 / (2.0 * params.mass())) * phi["Phi_p"];
}

/// Compatibility residual {f, H_total}: the rate of change of f under the
/// flow of H_total.
inline double compatibility_residual(const ObservableExpr& f, const ObservableExpr& h_total, const OperatorTable& ops,
                                     const PureState& s)
{
    return expr_bracket(f, h_total, ops, s);
}

// ---------------------------------------------------------------------------
// Probe states and audit reports

/// Random state supported on the lowest `support` levels.
inline PureState random_state(std::size_t dimension, std::size_t support, std::mt19937_64& rng)
{
    if (support == 0 || support > dimension) throw std::invalid_argument("random_state: bad support");
    std::normal_distribution<double> g(0.0, 1.0);
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dimension));
    for (std::size_t k = 0; k < support; ++k) v(static_cast<Eigen::Index>(k)) = cplx(g(rng), g(rng));
    return PureState::normalized(std::move(v));
}

/// Random coherent point with |alpha| <= max_alpha.
inline CoherentPoint random_coherent_point(const OscillatorParams& params, double max_alpha, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = max_alpha * std::sqrt(u(rng));
    const double th = 2.0 * M_PI * u(rng);
    return {r * std::cos(th) * std::sqrt(2.0 / params.m_omega()), r * std::sin(th) * std::sqrt(2.0 * params.m_omega())};
}

/// {check name -> {state label -> residual}}.
struct AuditReport {
    std::map<std::string, std::map<std::string, double>> residuals;

    void record(const std::string& check, const std::string& label, double value) { residuals[check][label] = value; }

    double max_abs(const std::string& check) const
    {
        double worst = 0.0;
        auto it = residuals.find(check);
        if (it == residuals.end()) return 0.0;
        for (const auto& kv : it->second) worst = std::max(worst, std::abs(kv.second));
        return worst;
    }

    nlohmann::json to_json() const { return residuals; }
};

/// First-class brackets on coherent probes and the closed-form identities
/// {f_q,f_p} = 4 Delta(Q,P), {f_q,<H>} = (2/m) Delta(Q,P),
/// {f_p,<H>} = -2 Delta(V'(Q),P) on arbitrary probes.
inline AuditReport bracket_audit(const Oscillator& osc, const OperatorTable& ops,
                                 const std::vector<CoherentPoint>& coherent_points,
                                 const std::vector<PureState>& off_manifold)
{
    const auto fs = dispersion_constraints(osc.params, ops);
    const auto& fq = fs["f_q"];
    const auto& fp = fs["f_p"];
    const auto h = ex("H");
    AuditReport rep;
    for (std::size_t i = 0; i < coherent_points.size(); ++i) {
        const auto s = osc.coherent(coherent_points[i]);
        const std::string label = "coherent[" + std::to_string(i) + "]";
        rep.record("{f_q,f_p}", label, expr_bracket(fq, fp, ops, s));
        rep.record("{f_q,H}", label, expr_bracket(fq, h, ops, s));
        rep.record("{f_p,H}", label, expr_bracket(fp, h, ops, s));
    }
    const Operator vp = ops.at("Vp");
    for (std::size_t i = 0; i < off_manifold.size(); ++i) {
        const auto& s = off_manifold[i];
        const std::string label = "state[" + std::to_string(i) + "]";
        const double cov = covariance(s, osc.q, osc.p);
        rep.record("{f_q,f_p}-4cov", label, expr_bracket(fq, fp, ops, s) - 4.0 * cov);
        rep.record("{f_q,H}-(2/m)cov", label, expr_bracket(fq, h, ops, s) - 2.0 / osc.params.mass() * cov);
        rep.record("{f_p,H}+2cov(V',P)", label, expr_bracket(fp, h, ops, s) + 2.0 * covariance(s, vp, osc.p));
    }
    return rep;
}

/// Odd and even central-moment constraints evaluated on coherent states,
/// relative to the Gaussian target for the even orders.
inline AuditReport moments_audit(const Oscillator& osc, int order, const std::vector<CoherentPoint>& points)
{
    AuditReport rep;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto s = osc.coherent(points[i]);
        const std::string label = "coherent[" + std::to_string(i) + "]";
        for (int k = 1; k <= order; ++k) {
            const double m = central_moment(s, osc.q, k);
            if (k % 2 == 1) {
                rep.record("moment" + std::to_string(k), label, m);
            } else {
                const double target = double_factorial_odd(k / 2) * std::pow(osc.params.sigma2_q(), k / 2);
                rep.record("moment" + std::to_string(k), label, m / target - 1.0);
            }
        }
    }
    return rep;
}

} // namespace cohdyn

#endif
