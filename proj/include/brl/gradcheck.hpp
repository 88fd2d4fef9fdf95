#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "brl/errors.hpp"

namespace brl {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
template <class Fn>
std::vector<double> finite_difference_gradient(Fn&& f, std::span<const double> x, double step) {
    if (!(step > 0.0)) throw ParameterError("finite-difference step must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = probe[i];
        probe[i] = xi + step;
        const double up = f(std::span<const double>(probe));
        probe[i] = xi - step;
        const double down = f(std::span<const double>(probe));
        probe[i] = xi;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Cosine of the angle between a and b; 0 if either is the zero vector.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ParameterError("cosine of vectors with different sizes");
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ParameterError("relative error of vectors with different sizes");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double scale = std::max(norm2(a), norm2(b));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

} // namespace brl
