#ifndef COHDYN_POLYNOMIAL_HPP
#define COHDYN_POLYNOMIAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cohdyn {

/// Real polynomial in one variable, stored by ascending power:
/// coefficient k multiplies x^k. Trailing zeros are trimmed so that
/// degree() is the index of the leading nonzero coefficient.
class Polynomial {
public:
    Polynomial() = default;
    Polynomial(std::initializer_list<double> coeffs) : coeffs_(coeffs) { trim(); }
    explicit Polynomial(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) { trim(); }

    static Polynomial monomial(std::size_t power, double coeff = 1.0)
    {
        std::vector<double> c(power + 1, 0.0);
        c[power] = coeff;
        return Polynomial(std::move(c));
    }

    const std::vector<double>& coefficients() const { return coeffs_; }

    /// Coefficient of x^k, zero past the stored range.
    double coeff(std::size_t k) const { return k < coeffs_.size() ? coeffs_[k] : 0.0; }

    /// Degree of the zero polynomial is reported as 0.
    std::size_t degree() const { return coeffs_.empty() ? 0 : coeffs_.size() - 1; }
    bool is_zero() const { return coeffs_.empty(); }

    double operator()(double x) const
    {
        double acc = 0.0;
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * x + *it;
        return acc;
    }

    Polynomial derivative(std::size_t order = 1) const
    {
        if (order == 0) return *this;
        if (coeffs_.size() <= order) return {};
        std::vector<double> out(coeffs_.size() - order);
        for (std::size_t k = order; k < coeffs_.size(); ++k) {
            double falling = 1.0;
            for (std::size_t j = 0; j < order; ++j) falling *= static_cast<double>(k - j);
            out[k - order] = falling * coeffs_[k];
        }
        return Polynomial(std::move(out));
    }

    /// Bounded below and growing at both ends: even degree >= 2 with a
    /// positive leading coefficient.
    bool is_confining() const
    {
        const auto d = degree();
        return !coeffs_.empty() && d >= 2 && d % 2 == 0 && coeffs_.back() > 0.0;
    }

    Polynomial& operator+=(const Polynomial& o)
    {
        if (o.coeffs_.size() > coeffs_.size()) coeffs_.resize(o.coeffs_.size(), 0.0);
        for (std::size_t k = 0; k < o.coeffs_.size(); ++k) coeffs_[k] += o.coeffs_[k];
        trim();
        return *this;
    }
    Polynomial& operator*=(double s)
    {
        for (auto& c : coeffs_) c *= s;
        trim();
        return *this;
    }
    friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
    friend Polynomial operator-(Polynomial a, Polynomial b) { return a += (b *= -1.0); }
    friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
    friend Polynomial operator*(const Polynomial& a, const Polynomial& b)
    {
        if (a.is_zero() || b.is_zero()) return {};
        std::vector<double> out(a.coeffs_.size() + b.coeffs_.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.coeffs_.size(); ++i)
            for (std::size_t j = 0; j < b.coeffs_.size(); ++j) out[i + j] += a.coeffs_[i] * b.coeffs_[j];
        return Polynomial(std::move(out));
    }
    friend bool operator==(const Polynomial&, const Polynomial&) = default;

private:
    void trim()
    {
        while (!coeffs_.empty() && coeffs_.back() == 0.0) coeffs_.pop_back();
    }

    std::vector<double> coeffs_;
};

/// Potential energy V(x) of one oscillator. Confining, with a positive
/// quadratic coefficient so that the small-oscillation frequency is real.
class PolynomialPotential {
public:
    explicit PolynomialPotential(Polynomial v) : poly_(std::move(v))
    {
        for (double c : poly_.coefficients())
            if (!std::isfinite(c)) throw std::invalid_argument("potential: non-finite coefficient");
        if (!poly_.is_confining())
            throw std::invalid_argument("potential: leading coefficient must have even degree >= 2 and be positive");
        if (poly_.coeff(2) <= 0.0)
            throw std::invalid_argument("potential: quadratic coefficient v_2 must be positive");
    }
    PolynomialPotential(std::initializer_list<double> coeffs) : PolynomialPotential(Polynomial(coeffs)) {}

    const Polynomial& polynomial() const { return poly_; }
    operator const Polynomial&() const { return poly_; }
    double operator()(double x) const { return poly_(x); }
    std::size_t degree() const { return poly_.degree(); }

    friend bool operator==(const PolynomialPotential&, const PolynomialPotential&) = default;

private:
    Polynomial poly_;
};

/// (2k-1)!! with the convention (-1)!! = 1.
inline double double_factorial_odd(int k)
{
    double r = 1.0;
    for (int j = 2 * k - 1; j > 1; j -= 2) r *= j;
    return r;
}

} // namespace cohdyn

#endif
