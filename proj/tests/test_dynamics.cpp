#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cohdyn/dynamics.hpp"

using namespace cohdyn;

namespace {

const PolynomialPotential kHarmonic{0.0, 0.0, 0.5};
const PolynomialPotential kQuartic{0.0, 0.0, 0.5, 0.0, 0.1};

double overlap(const PureState& a, const PureState& b) { return std::abs(a.amplitudes().dot(b.amplitudes())); }

void expect_uniform_grid(const TimeSeries& ts)
{
    for (std::size_t i = 1; i < ts.size(); ++i) {
        EXPECT_GT(ts.samples[i].time, ts.samples[i - 1].time);
        EXPECT_NEAR(ts.samples[i].time - ts.samples[i - 1].time, ts.dt, 1e-12);
    }
}

} // namespace

TEST(Propagator, ZeroStepIsIdentity)
{
    const auto osc = Oscillator::make(64, 1.0, kQuartic);
    const auto s = osc.coherent({0.8, -0.6});
    const auto out = make_propagator(osc.h, 0.0).apply(s);
    EXPECT_LT((out.amplitudes() - s.amplitudes()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Propagator, HarmonicPeriodAndQuarterTurn)
{
    const auto osc = Oscillator::make(64, 1.0, kHarmonic);
    const auto s = osc.coherent({1.0, 0.0});
    EXPECT_NEAR(overlap(s, make_propagator(osc.h, 2 * M_PI).apply(s)), 1.0, 1e-9);
    const auto quarter = make_propagator(osc.h, M_PI / 2).apply(s);
    EXPECT_NEAR(expect(quarter, osc.q), 0.0, 1e-9);
    EXPECT_NEAR(expect(quarter, osc.p), -1.0, 1e-9);
}

TEST(Propagator, DecompositionQualityAndRejection)
{
    const auto osc = Oscillator::make(128, 1.0, kQuartic);
    const auto prop = make_propagator(osc.h, 0.01);
    EXPECT_LT(prop.reconstruction_error(), 1e-10);
    EXPECT_LT(prop.unitarity_error(), 1e-10);
    EXPECT_THROW(make_propagator(Operator::general(osc.q.matrix() * osc.p.matrix()), 0.1), std::invalid_argument);
    EXPECT_THROW(make_propagator(osc.h, -1.0), std::invalid_argument);
    EXPECT_THROW(prop.apply(PureState::fock(64, 0)), DimensionMismatch);
}

TEST(Propagator, UnitarityOverManySteps)
{
    const auto osc = Oscillator::make(64, 1.0, kQuartic);
    const auto prop = make_propagator(osc.h, 0.01);
    PureState s = osc.coherent({0.5, 0.5});
    for (int k = 0; k < 10000; ++k) s = prop.apply(s);
    EXPECT_LT(s.norm_error(), 1e-9);
}

TEST(Schrodinger, HarmonicCoherentStaysMinimal)
{
    const auto osc = Oscillator::make(64, 1.0, kHarmonic);
    const auto ts = evolve_schrodinger(osc.coherent({1.0, 0.5}), osc, 0.01, 1000);
    ASSERT_TRUE(ts.complete());
    EXPECT_EQ(ts.size(), 1001u);
    expect_uniform_grid(ts);
    for (const auto& o : ts.samples) {
        EXPECT_NEAR(o.varQ, 0.5, 1e-8);
        EXPECT_LT(o.norm_error, 1e-9);
    }
}

TEST(Schrodinger, HarmonicMatchesRotatingSolutionOverTenPeriods)
{
    const double m = 2.0, w = 0.5;
    const PolynomialPotential v{0.0, 0.0, 0.5 * m * w * w};
    const auto osc = Oscillator::make(64, m, v);
    const CoherentPoint start{0.9, -0.7};
    const double period = 2 * M_PI / w;
    const std::size_t steps = 4000;
    const auto ts = evolve_schrodinger(osc.coherent(start), osc, 10 * period / steps, steps);
    ASSERT_TRUE(ts.complete());
    double worst = 0.0;
    for (const auto& o : ts.samples) {
        const double c = std::cos(w * o.time), sn = std::sin(w * o.time);
        const double q = start.q * c + start.p / (m * w) * sn;
        const double p = start.p * c - m * w * start.q * sn;
        worst = std::max({worst, std::abs(o.q - q), std::abs(o.p - p)});
    }
    EXPECT_LT(worst, 1e-8);
}

TEST(Schrodinger, QuarticDispersionGrows)
{
    const auto osc = Oscillator::make(256, 1.0, kQuartic);
    const auto ts = evolve_schrodinger(osc.coherent({1.0, 0.0}), osc, 0.01, 2000);
    ASSERT_TRUE(ts.complete());
    double peak = 0.0;
    for (const auto& o : ts.samples) peak = std::max(peak, o.varQ);
    EXPECT_GT(peak, 1.1 * 0.5);
    // Engine value recorded at this configuration.
    EXPECT_NEAR(peak, 1.2100004477, 1e-8);
    for (const auto& o : ts.samples) EXPECT_NEAR(o.energy, ts.samples.front().energy, 1e-9);
}

TEST(Schrodinger, UnderResolvedStartAndBreach)
{
    const auto osc = Oscillator::make(32, 1.0, kQuartic);
    const auto prop = make_propagator(osc.h, 0.05);
    EXPECT_THROW(evolve_schrodinger(PureState::fock(32, 31), prop, 10, osc.q, osc.p, osc.h), UnderResolvedError);

    // A basis too small for the quartic spreading loses the state to the tail.
    const auto start = osc.coherent({2.5, 0.0});
    ASSERT_LT(start.tail_mass(), 1e-10);
    const auto ts = evolve_schrodinger(start, prop, 2000, osc.q, osc.p, osc.h);
    ASSERT_FALSE(ts.complete());
    EXPECT_EQ(ts.size(), *ts.breach_step + 1);
    EXPECT_GT(ts.samples.back().tail_mass, kEvolutionAbortTail);
}

TEST(ConstrainedFlow, HarmonicQuarterTurn)
{
    const auto osc = Oscillator::make(64, 1.0, kHarmonic);
    const ConstrainedFlow flow(effective_hamiltonian(kHarmonic, osc.params), osc.q, osc.p);
    const std::size_t steps = 1571;
    const double dt = (M_PI / 2) / steps;
    PureState s = osc.coherent({1.0, 0.0});
    for (std::size_t k = 0; k < steps; ++k) {
        const PureState next = flow.step(s, dt);
        EXPECT_LT(std::abs(next.amplitudes().squaredNorm() - s.amplitudes().squaredNorm()), 1e-12);
        s = next;
    }
    EXPECT_NEAR(expect(s, osc.q), 0.0, 1e-6);
    EXPECT_NEAR(expect(s, osc.p), -1.0, 1e-6);
}

TEST(ConstrainedFlow, FixedPointOfPureQuarticWell)
{
    const auto osc = Oscillator::make(64, 1.0, kHarmonic);
    const auto h = classical_hamiltonian(Polynomial::monomial(4), 1.0);
    PureState s = osc.coherent({0.0, 0.0});
    for (int k = 0; k < 100; ++k) s = constrained_flow_step(s, h, osc.q, osc.p, 1e-2);
    EXPECT_NEAR(expect(s, osc.q), 0.0, 1e-10);
    EXPECT_NEAR(expect(s, osc.p), 0.0, 1e-10);
}

TEST(ConstrainedFlow, StaysOnCoherentManifold)
{
    const auto osc = Oscillator::make(64, 1.0, kQuartic);
    const ConstrainedFlow flow(effective_hamiltonian(kQuartic, osc.params), osc.q, osc.p);
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const double r = 2.0 * u(rng), th = 2 * M_PI * u(rng);
        const CoherentPoint pt{std::sqrt(2.0) * r * std::cos(th), std::sqrt(2.0) * r * std::sin(th)};
        const auto ts = evolve_constrained(osc.coherent(pt), flow, 1e-3, 1000, osc.q, osc.p, osc.h);
        ASSERT_TRUE(ts.complete());
        for (const auto& o : ts.samples) {
            EXPECT_LT(std::abs(o.varQ - 0.5), 1e-6);
            EXPECT_LT(std::abs(o.varP - 0.5), 1e-6);
            EXPECT_LT(std::abs(o.covQP), 1e-6);
        }
        // The dispersion constraints evaluated directly stay well below 1e-8.
        EXPECT_LT(std::abs(ts.samples.back().varQ - osc.params.sigma2_q()), 1e-8);
        EXPECT_LT(std::abs(ts.samples.back().varP - osc.params.sigma2_p()), 1e-8);
    }
}

TEST(ConstrainedFlow, AgreesWithLeapfrogAfterOnePeriod)
{
    const auto osc = Oscillator::make(128, 1.0, kQuartic);
    const auto h = effective_hamiltonian(kQuartic, osc.params);
    const std::size_t steps = 6283;
    const double dt = 2 * M_PI / steps;
    const auto ts = evolve_constrained(osc.coherent({1.0, 0.0}), ConstrainedFlow(h, osc.q, osc.p), dt, steps, osc.q,
                                       osc.p, osc.h);
    const auto tr = leapfrog_trajectory(h, {1.0, 0.0}, dt, steps);
    ASSERT_TRUE(ts.complete());
    EXPECT_NEAR(ts.samples.back().q, tr.q.back(), 1e-5);
    EXPECT_NEAR(ts.samples.back().p, tr.p.back(), 1e-5);
}

TEST(ConstrainedFlow, ResnapAgreesWithPlainFlow)
{
    const auto osc = Oscillator::make(64, 1.0, kQuartic);
    const auto h = effective_hamiltonian(kQuartic, osc.params);
    const ConstrainedFlow plain(h, osc.q, osc.p);
    const ConstrainedFlow snapped(h, osc.q, osc.p, FlowOptions{true});
    const auto a = evolve_constrained(osc.coherent({1.0, 0.3}), plain, 1e-3, 500, osc.q, osc.p, osc.h);
    const auto b = evolve_constrained(osc.coherent({1.0, 0.3}), snapped, 1e-3, 500, osc.q, osc.p, osc.h);
    EXPECT_NEAR(a.samples.back().q, b.samples.back().q, 1e-9);
    EXPECT_NEAR(a.samples.back().p, b.samples.back().p, 1e-9);
}

TEST(ConstrainedFlow, DriftOutOfBasisStopsRun)
{
    const auto osc = Oscillator::make(32, 1.0, kHarmonic);
    // Constant force: the coherent state slides out of the basis.
    const auto h = classical_hamiltonian(Polynomial{0.0, -5.0}, 1.0);
    const auto ts = evolve_constrained(osc.coherent({0.0, 0.0}), ConstrainedFlow(h, osc.q, osc.p), 1e-2, 2000, osc.q,
                                       osc.p, osc.h);
    ASSERT_FALSE(ts.complete());
    EXPECT_EQ(ts.size(), *ts.breach_step);
    EXPECT_THROW(constrained_flow_step(PureState::fock(32, 31), h, osc.q, osc.p, 1e-2), UnderResolvedError);
}

TEST(Csv, HeaderAndRoundTrip)
{
    const auto osc = Oscillator::make(32, 1.0, kQuartic);
    const auto ts = evolve_schrodinger(osc.coherent({0.3, 0.1}), osc, 0.1, 5);
    std::ostringstream os;
    write_csv(os, ts);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, kCsvVersionLine);
    std::getline(is, line);
    EXPECT_EQ(line, "time,q,p,varQ,varP,covQP,energy,norm_error,tail_mass");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        std::vector<double> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
        ASSERT_EQ(cells.size(), 9u);
        const auto& o = ts.samples[rows];
        EXPECT_EQ(cells[0], o.time);
        EXPECT_EQ(cells[1], o.q);
        EXPECT_EQ(cells[3], o.varQ);
        EXPECT_EQ(cells[6], o.energy);
        ++rows;
    }
    EXPECT_EQ(rows, ts.size());
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Csv, CoarseTrajectoryUsesSameSchema)
{
    const OscillatorParams unit(1.0, 1.0);
    const auto tr = leapfrog_trajectory(effective_hamiltonian(kQuartic, unit), {1.0, 0.0}, 1e-2, 3);
    const auto rows = as_samples(tr, unit);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[2].q, tr.q[2]);
    EXPECT_EQ(rows[2].varQ, 0.5);
    EXPECT_EQ(rows[2].covQP, 0.0);
}
