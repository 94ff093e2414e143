#pragma once

// Truncated Taylor series in one variable. Coefficient k holds f^(k)/k!.
// Nests: Taylor<Taylor<double, 3>, 1> carries a first derivative of a 3-jet.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <type_traits>

namespace mfl {

template <class T, int K>
struct Taylor {
    std::array<T, K + 1> c{};

    Taylor() {
        for (auto& v : c) v = T(0.0);
    }
    Taylor(double v) : Taylor() { c[0] = T(v); }
    template <class U = T, std::enable_if_t<!std::is_same_v<U, double>, int> = 0>
    Taylor(const T& v) : Taylor() {
        c[0] = v;
    }

    static Taylor variable(const T& value, const T& slope) {
        Taylor x(value);
        if constexpr (K >= 1) x.c[1] = slope;
        return x;
    }

    const T& value() const { return c[0]; }

    Taylor& operator+=(const Taylor& o) {
        for (int k = 0; k <= K; ++k) c[k] += o.c[k];
        return *this;
    }
    Taylor& operator-=(const Taylor& o) {
        for (int k = 0; k <= K; ++k) c[k] -= o.c[k];
        return *this;
    }
    Taylor& operator*=(const Taylor& o) { return *this = *this * o; }
    Taylor& operator/=(const Taylor& o) { return *this = *this / o; }

    Taylor operator-() const {
        Taylor r;
        for (int k = 0; k <= K; ++k) r.c[k] = -c[k];
        return r;
    }

    friend Taylor operator+(Taylor a, const Taylor& b) { return a += b; }
    friend Taylor operator-(Taylor a, const Taylor& b) { return a -= b; }
    friend Taylor operator*(const Taylor& a, const Taylor& b) {
        Taylor r;
        for (int k = 0; k <= K; ++k)
            for (int j = 0; j <= k; ++j) r.c[k] += a.c[j] * b.c[k - j];
        return r;
    }
    friend Taylor operator/(const Taylor& a, const Taylor& b) {
        Taylor q;
        for (int k = 0; k <= K; ++k) {
            T acc = a.c[k];
            for (int j = 1; j <= k; ++j) acc -= b.c[j] * q.c[k - j];
            q.c[k] = acc / b.c[0];
        }
        return q;
    }

    friend bool operator<(const Taylor& a, const Taylor& b) { return a.c[0] < b.c[0]; }
    friend bool operator>(const Taylor& a, const Taylor& b) { return a.c[0] > b.c[0]; }
    friend bool operator<=(const Taylor& a, const Taylor& b) { return a.c[0] <= b.c[0]; }
    friend bool operator>=(const Taylor& a, const Taylor& b) { return a.c[0] >= b.c[0]; }
    friend bool operator==(const Taylor& a, const Taylor& b) { return a.c == b.c; }
    friend bool operator!=(const Taylor& a, const Taylor& b) { return !(a == b); }
};

template <class T, int K>
Taylor<T, K> exp(const Taylor<T, K>& a) {
    using std::exp;
    Taylor<T, K> e;
    e.c[0] = exp(a.c[0]);
    for (int k = 1; k <= K; ++k) {
        T acc(0.0);
        for (int j = 1; j <= k; ++j) acc += double(j) * a.c[j] * e.c[k - j];
        e.c[k] = acc / double(k);
    }
    return e;
}

template <class T, int K>
void sincos(const Taylor<T, K>& a, Taylor<T, K>& s, Taylor<T, K>& co) {
    using std::cos;
    using std::sin;
    s.c[0] = sin(a.c[0]);
    co.c[0] = cos(a.c[0]);
    for (int k = 1; k <= K; ++k) {
        T ds(0.0), dc(0.0);
        for (int j = 1; j <= k; ++j) {
            ds += double(j) * a.c[j] * co.c[k - j];
            dc -= double(j) * a.c[j] * s.c[k - j];
        }
        s.c[k] = ds / double(k);
        co.c[k] = dc / double(k);
    }
}

template <class T, int K>
Taylor<T, K> sin(const Taylor<T, K>& a) {
    Taylor<T, K> s, c;
    sincos(a, s, c);
    return s;
}

template <class T, int K>
Taylor<T, K> cos(const Taylor<T, K>& a) {
    Taylor<T, K> s, c;
    sincos(a, s, c);
    return c;
}

template <class T, int K>
Taylor<T, K> sqrt(const Taylor<T, K>& a) {
    using std::sqrt;
    Taylor<T, K> r;
    r.c[0] = sqrt(a.c[0]);
    for (int k = 1; k <= K; ++k) {
        T acc = a.c[k];
        for (int j = 1; j < k; ++j) acc -= r.c[j] * r.c[k - j];
        r.c[k] = acc / (2.0 * r.c[0]);
    }
    return r;
}

template <class T, int K>
Taylor<T, K> abs(const Taylor<T, K>& a) {
    return a.c[0] < T(0.0) ? -a : a;
}

template <class T, int K>
Taylor<T, K> abs2(const Taylor<T, K>& a) {
    return a * a;
}

template <class T, int K>
bool isfinite(const Taylor<T, K>& a) {
    using std::isfinite;
    for (const auto& v : a.c)
        if (!isfinite(v)) return false;
    return true;
}

template <class T, int K>
const Taylor<T, K>& conj(const Taylor<T, K>& a) {
    return a;
}
template <class T, int K>
const Taylor<T, K>& real(const Taylor<T, K>& a) {
    return a;
}
template <class T, int K>
Taylor<T, K> imag(const Taylor<T, K>&) {
    return Taylor<T, K>(0.0);
}

// Leading coefficient of any nesting depth.
inline double scalar_part(double v) { return v; }
template <class T, int K>
double scalar_part(const Taylor<T, K>& a) {
    return scalar_part(a.c[0]);
}

using Jet3 = Taylor<double, 3>;

}  // namespace mfl

namespace Eigen {

template <class T, int K>
struct NumTraits<mfl::Taylor<T, K>> : NumTraits<double> {
    using Real = mfl::Taylor<T, K>;
    using NonInteger = mfl::Taylor<T, K>;
    using Nested = mfl::Taylor<T, K>;
    using Literal = mfl::Taylor<T, K>;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = (K + 1) * NumTraits<T>::ReadCost,
        AddCost = (K + 1) * NumTraits<T>::AddCost,
        MulCost = (K + 1) * (K + 1) * NumTraits<T>::MulCost
    };
    static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
    static inline Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
    static inline Real highest() { return Real(NumTraits<double>::highest()); }
    static inline Real lowest() { return Real(NumTraits<double>::lowest()); }
    static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <class T, int K, typename BinaryOp>
struct ScalarBinaryOpTraits<mfl::Taylor<T, K>, double, BinaryOp> {
    using ReturnType = mfl::Taylor<T, K>;
};
template <class T, int K, typename BinaryOp>
struct ScalarBinaryOpTraits<double, mfl::Taylor<T, K>, BinaryOp> {
    using ReturnType = mfl::Taylor<T, K>;
};

}  // namespace Eigen
