#ifndef COHDYN_FOCK_HPP
#define COHDYN_FOCK_HPP

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cohdyn/polynomial.hpp"

namespace cohdyn {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

inline constexpr cplx I{0.0, 1.0};

/// Raised when a state carries too much weight near the truncation edge
/// for a result to be trusted.
class UnderResolvedError : public std::runtime_error {
public:
    UnderResolvedError(const std::string& what, double tail)
        : std::runtime_error(what + " (tail mass " + std::to_string(tail) + ")"), tail_(tail)
    {
    }
    double tail_mass() const { return tail_; }

private:
    double tail_;
};

class DimensionMismatch : public std::invalid_argument {
public:
    DimensionMismatch(std::size_t a, std::size_t b)
        : std::invalid_argument("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b))
    {
    }
};

/// Tail-mass ceiling above which a state is considered under-resolved.
inline constexpr double kResolvedTail = 1e-8;

/// Sink for non-fatal diagnostics. Operations append to it when given one.
using Warnings = std::vector<std::string>;

class FockBasis {
public:
    explicit FockBasis(std::size_t dimension) : n_(dimension)
    {
        if (n_ < 4) throw std::invalid_argument("FockBasis: dimension must be at least 4");
    }
    std::size_t dimension() const { return n_; }
    friend bool operator==(const FockBasis&, const FockBasis&) = default;

private:
    std::size_t n_;
};

/// Mass and frequency of one oscillator (hbar = 1).
class OscillatorParams {
public:
    OscillatorParams(double mass, double frequency) : m_(mass), w_(frequency)
    {
        if (!(m_ > 0.0) || !std::isfinite(m_)) throw std::invalid_argument("OscillatorParams: mass must be positive");
        if (!(w_ > 0.0) || !std::isfinite(w_))
            throw std::invalid_argument("OscillatorParams: frequency must be positive");
    }

    /// Frequency fixed by V''(0) = m w^2, i.e. w = sqrt(2 v_2 / m).
    static OscillatorParams from_potential(double mass, const PolynomialPotential& v)
    {
        if (!(mass > 0.0)) throw std::invalid_argument("OscillatorParams: mass must be positive");
        return {mass, std::sqrt(2.0 * v.polynomial().coeff(2) / mass)};
    }

    double mass() const { return m_; }
    double frequency() const { return w_; }
    double m_omega() const { return m_ * w_; }
    /// Coherent-state position variance 1/(2 m w).
    double sigma2_q() const { return 1.0 / (2.0 * m_ * w_); }
    /// Coherent-state momentum variance m w / 2.
    double sigma2_p() const { return m_ * w_ / 2.0; }

    bool consistent_with(const Polynomial& v, double rel_tol = 1e-12) const
    {
        const double curvature = 2.0 * v.coeff(2);
        const double mw2 = m_ * w_ * w_;
        return std::abs(curvature - mw2) <= rel_tol * std::max(std::abs(curvature), std::abs(mw2));
    }

    friend bool operator==(const OscillatorParams&, const OscillatorParams&) = default;

private:
    double m_;
    double w_;
};

struct CoherentPoint {
    double q = 0.0;
    double p = 0.0;
    friend bool operator==(const CoherentPoint&, const CoherentPoint&) = default;
};

/// Dense operator on a truncated basis. Operators flagged hermitian are
/// exactly self-adjoint entrywise (they are symmetrized on construction
/// after a relative 1e-12 check).
class Operator {
public:
    Operator() = default;

    static Operator general(Matrix m)
    {
        Operator op;
        op.m_ = std::move(m);
        op.hermitian_ = false;
        return op;
    }

    static Operator hermitian(Matrix m, double rel_tol = 1e-12)
    {
        if (m.rows() != m.cols()) throw std::invalid_argument("Operator: matrix must be square");
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        const double asym = (m - m.adjoint()).cwiseAbs().maxCoeff();
        if (asym >= rel_tol * scale)
            throw std::invalid_argument("Operator: matrix is not hermitian (asymmetry " + std::to_string(asym) + ")");
        Operator op;
        op.m_ = (m + m.adjoint()) * 0.5;
        op.hermitian_ = true;
        return op;
    }

    static Operator identity(std::size_t n) { return hermitian(Matrix::Identity(n, n)); }

    const Matrix& matrix() const { return m_; }
    std::size_t dimension() const { return static_cast<std::size_t>(m_.rows()); }
    bool is_hermitian() const { return hermitian_; }

    cplx operator()(std::size_t row, std::size_t col) const { return m_(row, col); }

private:
    Matrix m_;
    bool hermitian_ = false;
};

/// Normalized amplitude vector over the Fock basis, with the truncation
/// diagnostic tail_mass (weight in the top tenth of basis levels).
class PureState {
public:
    /// Requires sum |c|^2 = 1 within 1e-12.
    explicit PureState(Vector amplitudes) : c_(std::move(amplitudes))
    {
        if (c_.size() == 0) throw std::invalid_argument("PureState: empty amplitude vector");
        const double n2 = c_.squaredNorm();
        if (std::abs(n2 - 1.0) > 1e-12)
            throw std::invalid_argument("PureState: amplitudes not normalized (norm^2 = " + std::to_string(n2) + ")");
        tail_ = compute_tail(c_);
    }

    static PureState normalized(Vector amplitudes)
    {
        const double n = amplitudes.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("PureState: cannot normalize zero vector");
        return PureState(Vector(amplitudes / n));
    }

    /// No normalization check; propagators use this so that drift stays visible.
    static PureState unchecked(Vector amplitudes)
    {
        PureState s;
        s.c_ = std::move(amplitudes);
        s.tail_ = compute_tail(s.c_);
        return s;
    }

    static PureState fock(std::size_t dimension, std::size_t n)
    {
        if (n >= dimension) throw std::invalid_argument("PureState::fock: level outside basis");
        Vector v = Vector::Zero(static_cast<Eigen::Index>(dimension));
        v(static_cast<Eigen::Index>(n)) = 1.0;
        return PureState(std::move(v));
    }

    const Vector& amplitudes() const { return c_; }
    std::size_t dimension() const { return static_cast<std::size_t>(c_.size()); }
    double tail_mass() const { return tail_; }
    double norm_error() const { return std::abs(c_.squaredNorm() - 1.0); }
    bool resolved(double tol = kResolvedTail) const { return tail_ < tol; }

    /// Number of top basis levels that count towards the tail mass.
    static std::size_t tail_levels(std::size_t n) { return std::max<std::size_t>(1, (n + 9) / 10); }

    friend PureState tensor(const PureState& a, const PureState& b);

private:
    PureState() = default;

    static double compute_tail(const Vector& c)
    {
        const auto n = static_cast<std::size_t>(c.size());
        const auto k = tail_levels(n);
        return c.tail(static_cast<Eigen::Index>(k)).squaredNorm();
    }

    Vector c_;
    double tail_ = 0.0;
};

/// Throws UnderResolvedError when the state leaks past `tol`.
inline void require_resolved(const PureState& s, const char* who, double tol = kResolvedTail)
{
    if (!(s.tail_mass() < tol)) throw UnderResolvedError(std::string(who) + ": state under-resolved", s.tail_mass());
}

// ---------------------------------------------------------------------------
// Operators

/// Lowering a|n> = sqrt(n)|n-1> and raising a^dagger; raising truncates the
/// top level to zero.
inline std::pair<Operator, Operator> ladder_operators(const FockBasis& basis)
{
    const auto n = static_cast<Eigen::Index>(basis.dimension());
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
    Matrix ad = a.adjoint();
    return {Operator::general(std::move(a)), Operator::general(std::move(ad))};
}

/// Q = (a + a^dagger)/sqrt(2 m w), P = i sqrt(m w / 2) (a^dagger - a).
inline std::pair<Operator, Operator> canonical_operators(const FockBasis& basis, const OscillatorParams& params)
{
    auto [a, ad] = ladder_operators(basis);
    const double mw = params.m_omega();
    Matrix q = (a.matrix() + ad.matrix()) / std::sqrt(2.0 * mw);
    Matrix p = I * std::sqrt(mw / 2.0) * (ad.matrix() - a.matrix());
    return {Operator::hermitian(std::move(q)), Operator::hermitian(std::move(p))};
}

inline Operator operator+(const Operator& a, const Operator& b)
{
    if (a.dimension() != b.dimension()) throw DimensionMismatch(a.dimension(), b.dimension());
    Matrix m = a.matrix() + b.matrix();
    return a.is_hermitian() && b.is_hermitian() ? Operator::hermitian(std::move(m)) : Operator::general(std::move(m));
}

inline Operator operator*(double s, const Operator& a)
{
    Matrix m = s * a.matrix();
    return a.is_hermitian() ? Operator::hermitian(std::move(m)) : Operator::general(std::move(m));
}

inline Operator operator-(const Operator& a, const Operator& b) { return a + (-1.0) * b; }

/// Plain matrix product; hermitian only if the result happens to be.
inline Operator product(const Operator& a, const Operator& b)
{
    if (a.dimension() != b.dimension()) throw DimensionMismatch(a.dimension(), b.dimension());
    return Operator::general(a.matrix() * b.matrix());
}

/// (AB + BA)/2 for hermitian A, B.
inline Operator symmetrized_product(const Operator& a, const Operator& b)
{
    if (a.dimension() != b.dimension()) throw DimensionMismatch(a.dimension(), b.dimension());
    Matrix ab = a.matrix() * b.matrix();
    return Operator::hermitian(0.5 * (ab + ab.adjoint()));
}

inline Operator kron(const Operator& a, const Operator& b)
{
    const auto na = a.matrix().rows();
    const auto nb = b.matrix().rows();
    Matrix m(na * nb, na * nb);
    for (Eigen::Index i = 0; i < na; ++i)
        for (Eigen::Index j = 0; j < na; ++j) m.block(i * nb, j * nb, nb, nb) = a.matrix()(i, j) * b.matrix();
    return a.is_hermitian() && b.is_hermitian() ? Operator::hermitian(std::move(m)) : Operator::general(std::move(m));
}

/// Product state |a> (x) |b>. The tail mass is the probability that either
/// factor sits in its own tail.
inline PureState tensor(const PureState& a, const PureState& b)
{
    const auto na = a.amplitudes().size();
    const auto nb = b.amplitudes().size();
    Vector v(na * nb);
    for (Eigen::Index i = 0; i < na; ++i) v.segment(i * nb, nb) = a.amplitudes()(i) * b.amplitudes();
    PureState s;
    s.c_ = std::move(v);
    s.tail_ = 1.0 - (1.0 - a.tail_mass()) * (1.0 - b.tail_mass());
    return s;
}

/// Sum_k v_k Q^k by Horner recursion on matrices.
inline Operator apply_potential(const Polynomial& v, const Operator& q, Warnings* warnings = nullptr)
{
    if (!q.is_hermitian()) throw std::invalid_argument("apply_potential: Q must be hermitian");
    const auto n = q.matrix().rows();
    if (warnings && v.degree() >= q.dimension() / 2)
        warnings->push_back("apply_potential: degree " + std::to_string(v.degree()) +
                            " is large for basis dimension " + std::to_string(q.dimension()) +
                            "; matrix elements near the truncation edge are unreliable");
    const auto& c = v.coefficients();
    if (c.empty()) return Operator::hermitian(Matrix::Zero(n, n));
    Matrix acc = c.back() * Matrix::Identity(n, n);
    for (auto k = c.size() - 1; k-- > 0;) {
        acc = acc * q.matrix();
        acc.diagonal().array() += c[k];
    }
    return Operator::hermitian(std::move(acc), 1e-9);
}

/// H = P^2/(2m) + V(Q).
inline Operator build_hamiltonian(const OscillatorParams& params, const PolynomialPotential& v, const FockBasis& basis,
                                  Warnings* warnings = nullptr)
{
    if (!params.consistent_with(v.polynomial()))
        throw std::invalid_argument("build_hamiltonian: m w^2 = " +
                                    std::to_string(params.mass() * params.frequency() * params.frequency()) +
                                    " does not match V''(0) = " + std::to_string(2.0 * v.polynomial().coeff(2)));
    auto [q, p] = canonical_operators(basis, params);
    Matrix kinetic = p.matrix() * p.matrix() / (2.0 * params.mass());
    Operator pot = apply_potential(v.polynomial(), q, warnings);
    return Operator::hermitian(kinetic + pot.matrix(), 1e-9);
}

/// Complex amplitude alpha = sqrt(m w/2) q + i p / sqrt(2 m w).
inline cplx coherent_amplitude(const OscillatorParams& params, CoherentPoint point)
{
    const double mw = params.m_omega();
    return {std::sqrt(mw / 2.0) * point.q, point.p / std::sqrt(2.0 * mw)};
}

/// c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!), renormalized after truncation.
inline PureState coherent_state(const FockBasis& basis, const OscillatorParams& params, CoherentPoint point)
{
    if (!std::isfinite(point.q) || !std::isfinite(point.p))
        throw std::invalid_argument("coherent_state: non-finite point");
    const cplx alpha = coherent_amplitude(params, point);
    const auto n = static_cast<Eigen::Index>(basis.dimension());
    Vector c(n);
    c(0) = std::exp(-0.5 * std::norm(alpha));
    for (Eigen::Index k = 1; k < n; ++k) c(k) = c(k - 1) * alpha / std::sqrt(static_cast<double>(k));
    PureState s = PureState::normalized(std::move(c));
    if (!s.resolved())
        throw UnderResolvedError("coherent_state: basis of dimension " + std::to_string(n) +
                                     " too small for |alpha| = " + std::to_string(std::abs(alpha)),
                                 s.tail_mass());
    return s;
}

// ---------------------------------------------------------------------------
// Expectations

inline cplx expectation(const PureState& s, const Operator& a)
{
    if (s.dimension() != a.dimension()) throw DimensionMismatch(s.dimension(), a.dimension());
    return s.amplitudes().dot(a.matrix() * s.amplitudes());
}

/// Real expectation of a hermitian operator; rejects an imaginary part
/// above 1e-12 relative to |A psi|.
inline double expect(const PureState& s, const Operator& a)
{
    if (!a.is_hermitian()) throw std::invalid_argument("expect: operator is not flagged hermitian");
    if (s.dimension() != a.dimension()) throw DimensionMismatch(s.dimension(), a.dimension());
    const Vector av = a.matrix() * s.amplitudes();
    const cplx z = s.amplitudes().dot(av);
    if (std::abs(z.imag()) > 1e-12 * std::max(1.0, av.norm()))
        throw std::runtime_error("expect: imaginary part " + std::to_string(z.imag()) + " for hermitian operator");
    return z.real();
}

/// Symmetrized covariance 1/2 <AB + BA> - <A><B>.
inline double covariance(const PureState& s, const Operator& a, const Operator& b)
{
    if (!a.is_hermitian() || !b.is_hermitian()) throw std::invalid_argument("covariance: operators must be hermitian");
    if (s.dimension() != a.dimension()) throw DimensionMismatch(s.dimension(), a.dimension());
    if (s.dimension() != b.dimension()) throw DimensionMismatch(s.dimension(), b.dimension());
    const Vector& psi = s.amplitudes();
    const Vector av = a.matrix() * psi;
    const Vector bv = b.matrix() * psi;
    const double sym = av.dot(bv).real();
    return sym - psi.dot(av).real() * psi.dot(bv).real();
}

inline double variance(const PureState& s, const Operator& a) { return covariance(s, a, a); }

/// <(Q - <Q>)^k>. Rejects states whose shifted powers reach into the
/// truncation tail, where the matrix powers stop matching the true operator.
inline double central_moment(const PureState& s, const Operator& q, int k)
{
    if (k < 1) throw std::invalid_argument("central_moment: order must be >= 1");
    require_resolved(s, "central_moment");
    const double mean = expect(s, q);
    const auto n = q.matrix().rows();
    Matrix shifted = q.matrix();
    shifted.diagonal().array() -= mean;

    // <psi| X^k |psi> = <X^j psi | X^(k-j) psi> with j = k/2.
    const int j = k / 2;
    Vector left = s.amplitudes();
    for (int i = 0; i < j; ++i) left = shifted * left;
    Vector right = left;
    for (int i = j; i < k - j; ++i) right = shifted * right;

    const auto top = static_cast<Eigen::Index>(PureState::tail_levels(static_cast<std::size_t>(n)));
    for (const Vector* v : {&left, &right}) {
        const double total = v->squaredNorm();
        if (total > 0.0 && v->tail(top).squaredNorm() > kResolvedTail * total)
            throw UnderResolvedError("central_moment: order " + std::to_string(k) + " reaches the truncation edge",
                                     v->tail(top).squaredNorm() / total);
    }
    return left.dot(right).real();
}

/// Operators of one oscillator on a truncated basis, built once.
struct Oscillator {
    FockBasis basis;
    OscillatorParams params;
    PolynomialPotential potential;
    Operator q;
    Operator p;
    Operator h;

    static Oscillator make(std::size_t dimension, double mass, const PolynomialPotential& v, Warnings* warnings = nullptr)
    {
        FockBasis basis(dimension);
        auto params = OscillatorParams::from_potential(mass, v);
        auto [q, p] = canonical_operators(basis, params);
        auto h = build_hamiltonian(params, v, basis, warnings);
        return {basis, params, v, std::move(q), std::move(p), std::move(h)};
    }

    PureState coherent(CoherentPoint pt) const { return coherent_state(basis, params, pt); }
};

} // namespace cohdyn

#endif
