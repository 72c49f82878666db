#ifndef COHDYN_CLASSICAL_HPP
#define COHDYN_CLASSICAL_HPP

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cohdyn/fock.hpp"
#include "cohdyn/polynomial.hpp"

namespace cohdyn {

/// Gaussian convolution of V with variance sigma2:
///   sum_k sigma2^k / (2^k k!) V^(2k)
/// The series terminates for polynomials, so the result is exact.
inline Polynomial smooth_potential(const Polynomial& v, double sigma2)
{
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw std::invalid_argument("smooth_potential: sigma2 must be positive");
    Polynomial out = v;
    double weight = 1.0;
    for (std::size_t k = 1; 2 * k <= v.degree(); ++k) {
        weight *= sigma2 / (2.0 * static_cast<double>(k));
        out += weight * v.derivative(2 * k);
    }
    return out;
}

/// Separable function p^2/(2m) + U(q) on the coherent-state manifold.
struct HamiltonianFunction {
    enum class Kind { Effective, Classical };

    double mass = 1.0;
    Polynomial potential;
    Kind kind = Kind::Classical;
    /// Constant removed from the effective Hamiltonian (the zero-point part
    /// of <P^2>/2m). Reported only; never enters value() or forces.
    double dropped_constant = 0.0;

    double value(double q, double p) const { return p * p / (2.0 * mass) + potential(q); }
    double dH_dq(double q) const { return potential.derivative()(q); }
    double dH_dp(double p) const { return p / mass; }
};

/// p^2/2m + V_eff(q), V_eff = V smoothed with variance 1/(2 m w).
inline HamiltonianFunction effective_hamiltonian(const PolynomialPotential& v, const OscillatorParams& params)
{
    if (!params.consistent_with(v.polynomial()))
        throw std::invalid_argument("effective_hamiltonian: oscillator parameters inconsistent with V''(0)");
    return {params.mass(), smooth_potential(v.polynomial(), params.sigma2_q()), HamiltonianFunction::Kind::Effective,
            params.frequency() / 4.0};
}

inline HamiltonianFunction classical_hamiltonian(const Polynomial& v, double mass)
{
    if (!(mass > 0.0)) throw std::invalid_argument("classical_hamiltonian: mass must be positive");
    return {mass, v, HamiltonianFunction::Kind::Classical, 0.0};
}

struct PhaseTrajectory {
    double dt = 0.0;
    std::vector<double> time;
    std::vector<double> q;
    std::vector<double> p;
    std::vector<double> energy;

    std::size_t size() const { return time.size(); }

    /// |E_end - E_0| / |E_0| (absolute when E_0 = 0).
    double relative_energy_drift() const
    {
        if (energy.empty()) return 0.0;
        const double scale = std::abs(energy.front()) > 0.0 ? std::abs(energy.front()) : 1.0;
        return std::abs(energy.back() - energy.front()) / scale;
    }
    double max_relative_energy_error() const
    {
        if (energy.empty()) return 0.0;
        const double scale = std::abs(energy.front()) > 0.0 ? std::abs(energy.front()) : 1.0;
        double worst = 0.0;
        for (double e : energy) worst = std::max(worst, std::abs(e - energy.front()) / scale);
        return worst;
    }
};

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " at step " + std::to_string(step)), step_(step)
    {
    }
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Position Verlet (drift-kick-drift); records steps + 1 samples.
inline PhaseTrajectory leapfrog_trajectory(const HamiltonianFunction& h, CoherentPoint start, double dt,
                                           std::size_t steps)
{
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("leapfrog_trajectory: dt must be positive");
    const Polynomial force = -1.0 * h.potential.derivative();
    PhaseTrajectory tr;
    tr.dt = dt;
    tr.time.reserve(steps + 1);
    tr.q.reserve(steps + 1);
    tr.p.reserve(steps + 1);
    tr.energy.reserve(steps + 1);

    double q = start.q;
    double p = start.p;
    auto record = [&](std::size_t k) {
        tr.time.push_back(static_cast<double>(k) * dt);
        tr.q.push_back(q);
        tr.p.push_back(p);
        tr.energy.push_back(h.value(q, p));
    };
    record(0);
    const double half = 0.5 * dt / h.mass;
    for (std::size_t k = 1; k <= steps; ++k) {
        q += half * p;
        p += dt * force(q);
        q += half * p;
        if (!std::isfinite(q) || !std::isfinite(p)) throw IntegrationError("leapfrog_trajectory: non-finite state", k);
        record(k);
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Several coordinates

/// Polynomial in n coordinates as a sum of monomials c * prod x_i^k_i.
class MultiOscillatorPotential {
public:
    using Powers = std::vector<int>;

    explicit MultiOscillatorPotential(std::size_t coordinates) : n_(coordinates) {}

    MultiOscillatorPotential& add(double coeff, Powers powers)
    {
        if (powers.size() != n_) throw std::invalid_argument("MultiOscillatorPotential: wrong number of exponents");
        for (int k : powers)
            if (k < 0) throw std::invalid_argument("MultiOscillatorPotential: negative exponent");
        auto& c = terms_[std::move(powers)];
        c += coeff;
        return *this;
    }

    std::size_t coordinates() const { return n_; }
    const std::map<Powers, double>& terms() const { return terms_; }

    double coeff(const Powers& powers) const
    {
        auto it = terms_.find(powers);
        return it == terms_.end() ? 0.0 : it->second;
    }

    double operator()(const std::vector<double>& x) const
    {
        if (x.size() != n_) throw std::invalid_argument("MultiOscillatorPotential: wrong number of coordinates");
        double acc = 0.0;
        for (const auto& [pw, c] : terms_) {
            double t = c;
            for (std::size_t i = 0; i < n_; ++i) t *= std::pow(x[i], pw[i]);
            acc += t;
        }
        return acc;
    }

    /// Highest pure power along coordinate i is even with positive coefficient.
    bool confining_along_axes() const
    {
        for (std::size_t i = 0; i < n_; ++i) {
            int top = -1;
            double c = 0.0;
            for (const auto& [pw, coeff] : terms_) {
                if (coeff == 0.0) continue;
                bool axis = true;
                for (std::size_t j = 0; j < n_; ++j)
                    if (j != i && pw[j] != 0) axis = false;
                if (axis && pw[i] > top) {
                    top = pw[i];
                    c = coeff;
                }
            }
            if (top < 2 || top % 2 != 0 || c <= 0.0) return false;
        }
        return true;
    }

    friend bool operator==(const MultiOscillatorPotential&, const MultiOscillatorPotential&) = default;

private:
    std::size_t n_;
    std::map<Powers, double> terms_;
};

/// Product-Gaussian smoothing: each monomial factor x_i^k is smoothed in
/// one dimension with variance sigma2s[i], then the factors are multiplied out.
inline MultiOscillatorPotential smooth_multi(const MultiOscillatorPotential& v, const std::vector<double>& sigma2s)
{
    const auto n = v.coordinates();
    if (sigma2s.size() != n) throw std::invalid_argument("smooth_multi: sigma2s length does not match coordinates");
    MultiOscillatorPotential out(n);
    for (const auto& [powers, c] : v.terms()) {
        // Expand the product of the smoothed one-dimensional factors.
        std::vector<std::pair<MultiOscillatorPotential::Powers, double>> acc{{MultiOscillatorPotential::Powers(n, 0), c}};
        for (std::size_t i = 0; i < n; ++i) {
            const Polynomial factor = smooth_potential(Polynomial::monomial(static_cast<std::size_t>(powers[i])), sigma2s[i]);
            std::vector<std::pair<MultiOscillatorPotential::Powers, double>> next;
            for (const auto& [pw, coeff] : acc)
                for (std::size_t k = 0; k < factor.coefficients().size(); ++k) {
                    if (factor.coeff(k) == 0.0) continue;
                    auto np = pw;
                    np[i] = static_cast<int>(k);
                    next.emplace_back(std::move(np), coeff * factor.coeff(k));
                }
            acc = std::move(next);
        }
        for (auto& [pw, coeff] : acc) out.add(coeff, std::move(pw));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Large-mass scan

/// How the oscillator frequency follows the mass during a scan.
enum class FrequencyConvention {
    /// w stays at the base value, so sigma^2 = 1/(2 m w) falls like 1/m.
    HeldFixed,
    /// w = sqrt(2 v_2 / m) re-derived from the fixed potential; sigma^2 ~ m^(-1/2).
    Rederived,
};

struct ScalingReport {
    FrequencyConvention convention = FrequencyConvention::HeldFixed;
    std::vector<double> masses;
    std::vector<double> sup_difference;
    double fitted_slope = 0.0;
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw std::invalid_argument("loglog_slope: abscissae are identical");
    return sxy / sxx;
}

/// sup over a 1001-point grid on [-a, a] of |V_eff - V| for each mass
/// base_mass * factor, plus the fitted log-log slope against mass.
inline ScalingReport limit_scan(const PolynomialPotential& v, const OscillatorParams& base,
                                const std::vector<double>& mass_factors, double interval,
                                FrequencyConvention convention = FrequencyConvention::HeldFixed)
{
    if (mass_factors.empty()) throw std::invalid_argument("limit_scan: no mass factors");
    if (!(interval > 0.0)) throw std::invalid_argument("limit_scan: interval half-width must be positive");
    for (std::size_t i = 0; i < mass_factors.size(); ++i) {
        if (!(mass_factors[i] >= 1.0)) throw std::invalid_argument("limit_scan: mass factors must be >= 1");
        if (i > 0 && !(mass_factors[i] > mass_factors[i - 1]))
            throw std::invalid_argument("limit_scan: mass factors must be increasing");
    }
    constexpr int kGrid = 1001;
    ScalingReport rep;
    rep.convention = convention;
    for (double f : mass_factors) {
        const double m = base.mass() * f;
        const OscillatorParams params = convention == FrequencyConvention::Rederived
                                            ? OscillatorParams::from_potential(m, v)
                                            : OscillatorParams(m, base.frequency());
        const Polynomial diff = smooth_potential(v.polynomial(), params.sigma2_q()) - v.polynomial();
        double sup = 0.0;
        for (int i = 0; i < kGrid; ++i) {
            const double x = -interval + 2.0 * interval * i / (kGrid - 1);
            sup = std::max(sup, std::abs(diff(x)));
        }
        rep.masses.push_back(m);
        rep.sup_difference.push_back(sup);
    }
    rep.fitted_slope = rep.masses.size() >= 2 ? loglog_slope(rep.masses, rep.sup_difference) : 0.0;
    return rep;
}

} // namespace cohdyn

#endif
