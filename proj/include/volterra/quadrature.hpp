#pragma once

// Gauss-Legendre rules and geometrically graded panels for integrands with
// ln^k s behaviour at the lower end.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace volterra::quad {

template <class T, int P>
struct GaussLegendre {
    std::array<T, P> x{}; ///< nodes on [-1,1]
    std::array<T, P> w{};

    GaussLegendre()
    {
        for (int i = 0; i < P; ++i) {
            T z = std::cos(std::numbers::pi_v<T> * (T(i) + T(0.75)) / (T(P) + T(0.5)));
            T dp = 0;
            for (int it = 0; it < 100; ++it) {
                T p0 = 1, p1 = z;
                for (int k = 2; k <= P; ++k) {
                    const T p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = P * (z * p1 - p0) / (z * z - 1);
                const T dz = p1 / dp;
                z -= dz;
                if (std::abs(dz) <= std::numeric_limits<T>::epsilon()) break;
            }
            x[static_cast<std::size_t>(i)] = z;
            w[static_cast<std::size_t>(i)] = 2 / ((1 - z * z) * dp * dp);
        }
    }
};

template <class T>
const GaussLegendre<T, 16>& gl16()
{
    static const GaussLegendre<T, 16> rule;
    return rule;
}

/// Calls visit(s, weight) for a 16-point rule on each panel of [lo, hi]. Panels double
/// in width away from lo; lo = 0 uses `zero_panels` halvings of hi instead.
template <class T, class Visit>
void graded(T lo, T hi, Visit&& visit, int zero_panels = 80)
{
    if (!(hi > lo)) return;
    const auto& g = gl16<T>();
    auto panel = [&](T a, T b) {
        const T c = (a + b) / 2, r = (b - a) / 2;
        for (int k = 0; k < 16; ++k) visit(c + r * g.x[static_cast<std::size_t>(k)], r * g.w[static_cast<std::size_t>(k)]);
    };
    if (lo == T(0)) {
        T b = hi;
        for (int q = 0; q < zero_panels; ++q) {
            panel(b / 2, b);
            b /= 2;
        }
        return;
    }
    T a = lo;
    while (a < hi) {
        const T b = std::min(hi, 2 * a);
        panel(a, b);
        a = b;
    }
}

} // namespace volterra::quad
