#include <gtest/gtest.h>

#include <random>

#include "cohdyn/classical.hpp"
#include "oracles.hpp"

using namespace cohdyn;

namespace {

const PolynomialPotential kHarmonic{0.0, 0.0, 0.5};
const PolynomialPotential kQuartic{0.0, 0.0, 0.5, 0.0, 0.1};

void expect_coeffs_near(const Polynomial& a, const Polynomial& b, double tol)
{
    const auto d = std::max(a.degree(), b.degree());
    for (std::size_t k = 0; k <= d; ++k) EXPECT_NEAR(a.coeff(k), b.coeff(k), tol) << "x^" << k;
}

Polynomial random_polynomial(std::size_t degree, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> c(degree + 1);
    for (auto& x : c) x = u(rng);
    return Polynomial(c);
}

} // namespace

TEST(Smoothing, QuarticMonomial)
{
    for (double s : {0.1, 0.5, 2.0}) {
        const Polynomial got = smooth_potential(Polynomial::monomial(4), s);
        EXPECT_EQ(got, (Polynomial{3 * s * s, 0.0, 6 * s, 0.0, 1.0}));
        for (double x : {-1.3, 0.0, 0.4, 2.2})
            EXPECT_NEAR(got(x), oracle::gauss_hermite([](double y) { return y * y * y * y; }, x, s), 1e-10);
    }
}

TEST(Smoothing, QuarticExampleAtHalf)
{
    const Polynomial got = smooth_potential(kQuartic.polynomial(), 0.5);
    expect_coeffs_near(got, Polynomial{0.325, 0.0, 0.8, 0.0, 0.1}, 1e-15);
    for (double x : {-1.0, 0.3, 1.7})
        EXPECT_NEAR(got(x), oracle::gauss_hermite([](double y) { return 0.5 * y * y + 0.1 * y * y * y * y; }, x, 0.5),
                    1e-10);
}

TEST(Smoothing, SmallVarianceLimitIsLinear)
{
    const Polynomial v = kQuartic.polynomial();
    const Polynomial d1 = smooth_potential(v, 1e-3) - v;
    const Polynomial d2 = smooth_potential(v, 1e-4) - v;
    // Leading correction sigma^2/2 V'' is linear in sigma^2.
    for (std::size_t k = 0; k <= 2; k += 2) EXPECT_NEAR(d1.coeff(k) / d2.coeff(k), 10.0, 1e-2) << k;
    EXPECT_THROW(smooth_potential(v, 0.0), std::invalid_argument);
}

TEST(Smoothing, LinearityExact)
{
    std::mt19937_64 rng(21);
    for (int i = 0; i < 30; ++i) {
        const Polynomial a = random_polynomial(8, rng), b = random_polynomial(5, rng);
        const double s = 0.3 + 0.1 * i;
        const Polynomial lhs = smooth_potential(2.0 * a + (-3.0) * b, s);
        const Polynomial rhs = 2.0 * smooth_potential(a, s) + (-3.0) * smooth_potential(b, s);
        expect_coeffs_near(lhs, rhs, 1e-12 * 1e3);
    }
}

TEST(Smoothing, Semigroup)
{
    std::mt19937_64 rng(22);
    for (int i = 0; i < 30; ++i) {
        const Polynomial v = random_polynomial(10, rng);
        const double s1 = 0.05 + 0.02 * i, s2 = 0.3;
        expect_coeffs_near(smooth_potential(smooth_potential(v, s1), s2), smooth_potential(v, s1 + s2), 1e-12 * 1e2);
    }
}

TEST(Smoothing, QuadratureAgreement)
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ux(-2.0, 2.0);
    for (std::size_t deg = 0; deg <= 10; ++deg) {
        const Polynomial v = random_polynomial(deg, rng);
        for (double s : {0.1, 0.5, 2.0}) {
            const Polynomial sm = smooth_potential(v, s);
            for (int t = 0; t < 20; ++t) {
                const double x = ux(rng);
                const double ref = oracle::gauss_hermite([&](double y) { return v(y); }, x, s);
                EXPECT_NEAR(sm(x), ref, 1e-9 * std::max(1.0, std::abs(ref))) << deg << " " << s;
            }
        }
    }
}

TEST(Smoothing, MatchesCoherentExpectation)
{
    // The quantum side: <coherent(q,p)| V(Q) |coherent(q,p)>.
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (double mass : {1.0, 4.0}) {
        const auto params = OscillatorParams::from_potential(mass, kQuartic);
        const FockBasis basis(128);
        auto [q, p] = canonical_operators(basis, params);
        const Operator vq = apply_potential(kQuartic.polynomial(), q);
        const Polynomial veff = smooth_potential(kQuartic.polynomial(), params.sigma2_q());
        for (int i = 0; i < 20; ++i) {
            const CoherentPoint pt{u(rng), u(rng)};
            EXPECT_NEAR(expect(coherent_state(basis, params, pt), vq), veff(pt.q), 1e-8);
        }
    }
}

TEST(Hamiltonians, EffectiveAndClassicalValues)
{
    const OscillatorParams unit(1.0, 1.0);
    const auto heff = effective_hamiltonian(kQuartic, unit);
    EXPECT_EQ(heff.kind, HamiltonianFunction::Kind::Effective);
    EXPECT_NEAR(heff.value(1.0, 0.0), 1.225, 1e-14);
    const auto hcl = classical_hamiltonian(kQuartic, 1.0);
    EXPECT_EQ(hcl.kind, HamiltonianFunction::Kind::Classical);
    EXPECT_NEAR(hcl.value(1.0, 0.0), 0.6, 1e-15);
    EXPECT_NEAR(heff.value(1.0, 0.0) - hcl.value(1.0, 0.0), 0.625, 1e-14);

    const auto hh = effective_hamiltonian(kHarmonic, unit);
    EXPECT_NEAR(hh.value(0.3, -0.4) - classical_hamiltonian(kHarmonic, 1.0).value(0.3, -0.4), 0.25, 1e-15);
    EXPECT_DOUBLE_EQ(hh.dropped_constant, 0.25);
    EXPECT_EQ(hh.potential.derivative(), kHarmonic.polynomial().derivative());
    EXPECT_THROW(effective_hamiltonian(kQuartic, OscillatorParams(1.0, 2.0)), std::invalid_argument);

    const auto c = classical_hamiltonian(Polynomial{0.7, 0.0, 0.5}, 1.0);
    EXPECT_DOUBLE_EQ(c.value(0.0, 0.0), 0.7);
    EXPECT_DOUBLE_EQ(classical_hamiltonian(kHarmonic, 1.0).value(1.0, 0.0), 0.5);
    const auto g = classical_hamiltonian(kQuartic, 2.0);
    EXPECT_DOUBLE_EQ(g.dH_dq(1.5), 1.5 + 0.4 * 1.5 * 1.5 * 1.5);
    EXPECT_DOUBLE_EQ(g.dH_dp(3.0), 1.5);
}

TEST(Leapfrog, HarmonicPeriod)
{
    const auto h = classical_hamiltonian(kHarmonic, 1.0);
    const double dt = 2 * M_PI / 6283;
    const auto tr = leapfrog_trajectory(h, {1.0, 0.0}, dt, 6283);
    EXPECT_EQ(tr.size(), 6284u);
    EXPECT_NEAR(tr.time.back(), 2 * M_PI, 1e-12);
    EXPECT_NEAR(tr.q.back(), 1.0, 1e-5);
    EXPECT_NEAR(tr.p.back(), 0.0, 1e-5);
    EXPECT_LT(std::abs(tr.relative_energy_drift()), 1e-8);
    EXPECT_LT(tr.max_relative_energy_error(), 1e-6);
}

TEST(Leapfrog, Reversibility)
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    const auto h = effective_hamiltonian(kQuartic, OscillatorParams(1.0, 1.0));
    for (int i = 0; i < 10; ++i) {
        const CoherentPoint start{u(rng), u(rng)};
        const auto fwd = leapfrog_trajectory(h, start, 1e-3, 2000);
        // Reverse by flipping the momentum and integrating forward again.
        const auto back = leapfrog_trajectory(h, {fwd.q.back(), -fwd.p.back()}, 1e-3, 2000);
        EXPECT_NEAR(back.q.back(), start.q, 1e-9);
        EXPECT_NEAR(-back.p.back(), start.p, 1e-9);
    }
}

TEST(Leapfrog, QuarticEnergyDriftBounded)
{
    const auto h = effective_hamiltonian(kQuartic, OscillatorParams(1.0, 1.0));
    const auto tr = leapfrog_trajectory(h, {1.0, 0.0}, 1e-3, 20000);
    EXPECT_LT(tr.max_relative_energy_error(), 1e-6);
}

TEST(Leapfrog, BlowUpReportsStep)
{
    const auto h = classical_hamiltonian(Polynomial{0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1e3}, 1.0);
    try {
        leapfrog_trajectory(h, {5.0, 0.0}, 0.5, 100);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LE(e.step(), 100u);
    }
}

TEST(MultiOscillator, SmoothingExamples)
{
    MultiOscillatorPotential cross(2);
    cross.add(1.0, {1, 1});
    const auto sc = smooth_multi(cross, {0.3, 0.7});
    EXPECT_EQ(sc.terms(), cross.terms());

    MultiOscillatorPotential sq(2);
    sq.add(1.0, {2, 2});
    const double s1 = 0.3, s2 = 0.7;
    const auto ss = smooth_multi(sq, {s1, s2});
    EXPECT_DOUBLE_EQ(ss.coeff({2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(ss.coeff({2, 0}), s2);
    EXPECT_DOUBLE_EQ(ss.coeff({0, 2}), s1);
    EXPECT_DOUBLE_EQ(ss.coeff({0, 0}), s1 * s2);
    for (auto x : {std::vector<double>{0.4, -1.1}, std::vector<double>{1.5, 0.2}}) {
        const double f1 = oracle::gauss_hermite([](double y) { return y * y; }, x[0], s1);
        const double f2 = oracle::gauss_hermite([](double y) { return y * y; }, x[1], s2);
        EXPECT_NEAR(ss(x), f1 * f2, 1e-12);
    }
    EXPECT_THROW(smooth_multi(sq, {0.3}), std::invalid_argument);
}

TEST(MultiOscillator, AxisConfinement)
{
    MultiOscillatorPotential v(2);
    v.add(0.5, {2, 0}).add(0.5, {0, 2}).add(0.1, {4, 0}).add(0.3, {1, 1});
    EXPECT_TRUE(v.confining_along_axes());
    MultiOscillatorPotential w(2);
    w.add(0.5, {2, 0}).add(-0.1, {0, 4});
    EXPECT_FALSE(w.confining_along_axes());
    EXPECT_THROW(w.add(1.0, {1}), std::invalid_argument);
}

TEST(LimitScan, QuarticSlopeWithFixedFrequency)
{
    const auto rep = limit_scan(kQuartic, OscillatorParams(1.0, 1.0), {1.0, 10.0, 100.0}, 1.0);
    EXPECT_NEAR(rep.fitted_slope, -1.0, 0.05);
    for (std::size_t i = 1; i < rep.sup_difference.size(); ++i)
        EXPECT_LT(rep.sup_difference[i], rep.sup_difference[i - 1]);
}

TEST(LimitScan, HarmonicConstantShift)
{
    const auto rep =
        limit_scan(kHarmonic, OscillatorParams(1.0, 1.0), {1.0, 10.0, 100.0}, 1.0, FrequencyConvention::Rederived);
    for (std::size_t i = 0; i < rep.masses.size(); ++i) {
        const double w = std::sqrt(1.0 / rep.masses[i]);
        EXPECT_NEAR(rep.sup_difference[i], w / 4.0, 1e-14);
    }
    EXPECT_NEAR(rep.fitted_slope, -0.5, 1e-12);
}

TEST(LimitScan, UnitFactorMatchesDirectSmoothing)
{
    const OscillatorParams base(1.0, 1.0);
    const auto rep = limit_scan(kQuartic, base, {1.0}, 1.0);
    const Polynomial diff = smooth_potential(kQuartic.polynomial(), base.sigma2_q()) - kQuartic.polynomial();
    // |diff| is even and increasing on [0, 1], so the sup sits at the edge.
    EXPECT_DOUBLE_EQ(rep.sup_difference[0], std::abs(diff(1.0)));
    EXPECT_THROW(limit_scan(kQuartic, base, {1.0, 0.5}, 1.0), std::invalid_argument);
    EXPECT_THROW(limit_scan(kQuartic, base, {0.5}, 1.0), std::invalid_argument);
}

TEST(LimitScan, LogLogSlope)
{
    EXPECT_NEAR(loglog_slope({1, 10, 100}, {3, 0.3, 0.03}), -1.0, 1e-12);
    EXPECT_THROW(loglog_slope({1}, {1}), std::invalid_argument);
}
