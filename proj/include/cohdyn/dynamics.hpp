#ifndef COHDYN_DYNAMICS_HPP
#define COHDYN_DYNAMICS_HPP

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohdyn/classical.hpp"
#include "cohdyn/expr.hpp"
#include "cohdyn/fock.hpp"

namespace cohdyn {

/// exp(-i H dt) for a time-independent hermitian H, from one spectral
/// decomposition. The step matrix is formed once; each application is a
/// single matrix-vector product.
class Propagator {
public:
    Propagator(const Operator& h, double dt) : dt_(dt)
    {
        if (!h.is_hermitian()) throw std::invalid_argument("make_propagator: Hamiltonian must be hermitian");
        if (!(dt >= 0.0) || !std::isfinite(dt)) throw std::invalid_argument("make_propagator: dt must be >= 0");
        Eigen::SelfAdjointEigenSolver<Matrix> es(h.matrix());
        if (es.info() != Eigen::Success) throw std::runtime_error("make_propagator: eigen-decomposition failed");
        values_ = es.eigenvalues();
        vectors_ = es.eigenvectors();

        const auto n = vectors_.rows();
        const double scale = std::max(1.0, h.matrix().cwiseAbs().maxCoeff());
        reconstruction_error_ =
            (h.matrix() - vectors_ * values_.asDiagonal() * vectors_.adjoint()).cwiseAbs().maxCoeff() / scale;
        unitarity_error_ = (vectors_.adjoint() * vectors_ - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
        if (reconstruction_error_ >= 1e-10 || unitarity_error_ >= 1e-10)
            throw std::runtime_error("make_propagator: spectral decomposition inaccurate");

        Vector phases(n);
        for (Eigen::Index k = 0; k < n; ++k) phases(k) = std::exp(-I * values_(k) * dt);
        step_ = vectors_ * phases.asDiagonal() * vectors_.adjoint();
    }

    double dt() const { return dt_; }
    const Eigen::VectorXd& eigenvalues() const { return values_; }
    const Matrix& eigenvectors() const { return vectors_; }
    /// max |H - U diag U^dagger| relative to max |H|.
    double reconstruction_error() const { return reconstruction_error_; }
    double unitarity_error() const { return unitarity_error_; }

    PureState apply(const PureState& s) const
    {
        if (s.dimension() != static_cast<std::size_t>(step_.rows()))
            throw DimensionMismatch(s.dimension(), static_cast<std::size_t>(step_.rows()));
        return PureState::unchecked(step_ * s.amplitudes());
    }

private:
    double dt_;
    Eigen::VectorXd values_;
    Matrix vectors_;
    Matrix step_;
    double reconstruction_error_ = 0.0;
    double unitarity_error_ = 0.0;
};

inline Propagator make_propagator(const Operator& h, double dt) { return Propagator(h, dt); }

struct ObservableSample {
    double time = 0.0;
    double q = 0.0;
    double p = 0.0;
    double varQ = 0.0;
    double varP = 0.0;
    double covQP = 0.0;
    double energy = 0.0;
    double norm_error = 0.0;
    double tail_mass = 0.0;
};

struct TimeSeries {
    double dt = 0.0;
    std::vector<ObservableSample> samples;
    /// Step at which the tail mass crossed the abort threshold, if any.
    std::optional<std::size_t> breach_step;

    bool complete() const { return !breach_step.has_value(); }
    std::size_t size() const { return samples.size(); }
};

inline ObservableSample observe(const PureState& s, double t, const Operator& q, const Operator& p, const Operator& h)
{
    ObservableSample o;
    o.time = t;
    // Normalize for the moments so that norm drift is reported separately.
    const double n2 = s.amplitudes().squaredNorm();
    const PureState u = PureState::unchecked(s.amplitudes() / std::sqrt(n2));
    const Vector& psi = u.amplitudes();
    const Vector qv = q.matrix() * psi;
    const Vector pv = p.matrix() * psi;
    o.q = psi.dot(qv).real();
    o.p = psi.dot(pv).real();
    o.varQ = qv.squaredNorm() - o.q * o.q;
    o.varP = pv.squaredNorm() - o.p * o.p;
    o.covQP = qv.dot(pv).real() - o.q * o.p;
    o.energy = psi.dot(h.matrix() * psi).real();
    o.norm_error = std::abs(n2 - 1.0);
    o.tail_mass = s.tail_mass() / n2;
    return o;
}

/// Tail mass above which propagation stops and the partial series is returned.
inline constexpr double kEvolutionAbortTail = 1e-6;

/// Samples at t = 0, dt, ..., steps*dt under the exact propagator.
inline TimeSeries evolve_schrodinger(const PureState& start, const Propagator& prop, std::size_t steps,
                                     const Operator& q, const Operator& p, const Operator& h)
{
    if (!(start.tail_mass() < 1e-10))
        throw UnderResolvedError("evolve_schrodinger: initial state under-resolved", start.tail_mass());
    TimeSeries ts;
    ts.dt = prop.dt();
    ts.samples.reserve(steps + 1);
    PureState s = start;
    ts.samples.push_back(observe(s, 0.0, q, p, h));
    for (std::size_t k = 1; k <= steps; ++k) {
        s = prop.apply(s);
        ts.samples.push_back(observe(s, static_cast<double>(k) * prop.dt(), q, p, h));
        if (ts.samples.back().tail_mass > kEvolutionAbortTail) {
            ts.breach_step = k;
            break;
        }
    }
    return ts;
}

inline TimeSeries evolve_schrodinger(const PureState& start, const Oscillator& osc, double dt, std::size_t steps)
{
    return evolve_schrodinger(start, make_propagator(osc.h, dt), steps, osc.q, osc.p, osc.h);
}

// ---------------------------------------------------------------------------
// Flow of a function of (<Q>, <P>)

struct FlowOptions {
    /// Replace the state by coherent(<Q>, <P>) after every step.
    bool resnap = false;
};

/// Hamiltonian flow on state space of H(q, p) evaluated at q = <Q>, p = <P>:
///   i psi' = (dH/dq Q + dH/dp P) psi.
/// The generator is a displacement, so exp(-i dt (a Q + b P)) is applied as
/// exp(-i dt a Q) exp(-i dt b P) up to a global phase, each factor from a
/// cached eigendecomposition of Q or P.
class ConstrainedFlow {
public:
    ConstrainedFlow(HamiltonianFunction h, const Operator& q, const Operator& p, FlowOptions opts = {})
        : h_(std::move(h)), q_(q), p_(p), opts_(opts)
    {
        if (q.dimension() != p.dimension()) throw DimensionMismatch(q.dimension(), p.dimension());
        Eigen::SelfAdjointEigenSolver<Matrix> eq(q.matrix());
        Eigen::SelfAdjointEigenSolver<Matrix> ep(p.matrix());
        if (eq.info() != Eigen::Success || ep.info() != Eigen::Success)
            throw std::runtime_error("ConstrainedFlow: eigen-decomposition failed");
        uq_ = eq.eigenvectors();
        lq_ = eq.eigenvalues();
        up_ = ep.eigenvectors();
        lp_ = ep.eigenvalues();
    }

    const HamiltonianFunction& hamiltonian() const { return h_; }

    /// Explicit midpoint: coefficients re-evaluated after a half step.
    PureState step(const PureState& s, double dt) const
    {
        require_resolved(s, "constrained_flow_step");
        const auto [q0, p0] = mean_qp(s.amplitudes());
        const Vector half = displace(s.amplitudes(), h_.dH_dq(q0), h_.dH_dp(p0), 0.5 * dt);
        const auto [qh, ph] = mean_qp(half);
        Vector next = displace(s.amplitudes(), h_.dH_dq(qh), h_.dH_dp(ph), dt);
        if (opts_.resnap) return resnap(next, s.dimension());
        PureState out = PureState::unchecked(std::move(next));
        if (!(out.tail_mass() < kResolvedTail))
            throw UnderResolvedError("constrained_flow_step: state leaked into truncation tail", out.tail_mass());
        return out;
    }

    std::pair<double, double> mean_qp(const Vector& psi) const
    {
        return {psi.dot(q_.matrix() * psi).real(), psi.dot(p_.matrix() * psi).real()};
    }

private:
    Vector displace(const Vector& psi, double a, double b, double dt) const
    {
        Vector v = up_.adjoint() * psi;
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) *= std::exp(-I * (b * dt) * lp_(k));
        v = up_ * v;
        v = uq_.adjoint() * v;
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) *= std::exp(-I * (a * dt) * lq_(k));
        return uq_ * v;
    }

    PureState resnap(const Vector& psi, std::size_t n) const
    {
        const auto [q, p] = mean_qp(psi);
        // Width of the coherent state is read off the Q matrix: Q_01 = 1/sqrt(2 m w).
        const double q01 = std::abs(q_.matrix()(0, 1));
        const double mw = 1.0 / (2.0 * q01 * q01);
        return coherent_state(FockBasis(n), OscillatorParams(h_.mass, mw / h_.mass), {q, p});
    }

    HamiltonianFunction h_;
    Operator q_;
    Operator p_;
    FlowOptions opts_;
    Matrix uq_, up_;
    Eigen::VectorXd lq_, lp_;
};

/// One step without reusing decompositions; prefer ConstrainedFlow for runs.
inline PureState constrained_flow_step(const PureState& s, const HamiltonianFunction& h, const Operator& q,
                                       const Operator& p, double dt)
{
    return ConstrainedFlow(h, q, p).step(s, dt);
}

/// Runs the flow and records the same observables as evolve_schrodinger.
inline TimeSeries evolve_constrained(const PureState& start, const ConstrainedFlow& flow, double dt, std::size_t steps,
                                     const Operator& q, const Operator& p, const Operator& h)
{
    TimeSeries ts;
    ts.dt = dt;
    ts.samples.reserve(steps + 1);
    PureState s = start;
    ts.samples.push_back(observe(s, 0.0, q, p, h));
    for (std::size_t k = 1; k <= steps; ++k) {
        try {
            s = flow.step(s, dt);
        } catch (const UnderResolvedError&) {
            ts.breach_step = k;
            break;
        }
        ts.samples.push_back(observe(s, static_cast<double>(k) * dt, q, p, h));
    }
    return ts;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvVersionLine = "# cohdyn-csv-v1";
inline constexpr const char* kCsvHeader = "time,q,p,varQ,varP,covQP,energy,norm_error,tail_mass";

inline void write_csv(std::ostream& os, const std::vector<ObservableSample>& samples)
{
    os << kCsvVersionLine << '\n' << kCsvHeader << '\n';
    for (const auto& s : samples) {
        os << format_double(s.time) << ',' << format_double(s.q) << ',' << format_double(s.p) << ','
           << format_double(s.varQ) << ',' << format_double(s.varP) << ',' << format_double(s.covQP) << ','
           << format_double(s.energy) << ',' << format_double(s.norm_error) << ',' << format_double(s.tail_mass)
           << '\n';
    }
}

inline void write_csv(std::ostream& os, const TimeSeries& ts) { write_csv(os, ts.samples); }

/// Coarse trajectories use the same schema: coherent dispersions, zero
/// correlation, no norm drift and no tail.
inline std::vector<ObservableSample> as_samples(const PhaseTrajectory& tr, const OscillatorParams& params)
{
    std::vector<ObservableSample> out;
    out.reserve(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
        ObservableSample s;
        s.time = tr.time[i];
        s.q = tr.q[i];
        s.p = tr.p[i];
        s.varQ = params.sigma2_q();
        s.varP = params.sigma2_p();
        s.energy = tr.energy[i];
        out.push_back(s);
    }
    return out;
}

inline void write_csv(std::ostream& os, const PhaseTrajectory& tr, const OscillatorParams& params)
{
    write_csv(os, as_samples(tr, params));
}

} // namespace cohdyn

#endif
