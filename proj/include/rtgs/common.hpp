#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rtgs {

// ---------------------------------------------------------------------------
// Errors

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw DataError(cat(std::forward<Args>(args)...));
}

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra

struct Vec2 {
    double x = 0, y = 0;
};

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? *this / n : Vec3{};
    }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
};

struct Quat {
    double w = 1, x = 0, y = 0, z = 0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const {
        double n = norm();
        if (n == 0) return {1, 0, 0, 0};
        return {w / n, x / n, y / n, z / n};
    }
    Mat3 to_matrix() const {
        Mat3 r;
        r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
               2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
               2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
        return r;
    }
};

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// std:: distributions are implementation-defined, so the generators here are
// spelled out to keep seeded runs bit-identical everywhere.

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller, no spare caching so call order stays obvious.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    Quat random_rotation() {
        // Shoemake uniform quaternion sampling.
        double u1 = uniform(), u2 = uniform(), u3 = uniform();
        double s1 = std::sqrt(1 - u1), s2 = std::sqrt(u1);
        return Quat{s1 * std::sin(2 * M_PI * u2), s1 * std::cos(2 * M_PI * u2),
                    s2 * std::sin(2 * M_PI * u3), s2 * std::cos(2 * M_PI * u3)}
            .normalized();
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n), ascending.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

  private:
    uint64_t state_;
};

inline std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
    if (k >= n) {
        std::vector<size_t> all(n);
        for (size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    // Floyd's algorithm, then sort for a canonical order.
    std::vector<size_t> picked;
    picked.reserve(k);
    std::vector<bool> in(n, false);
    for (size_t j = n - k; j < n; ++j) {
        size_t t = next_below(j + 1);
        if (in[t]) t = j;
        in[t] = true;
        picked.push_back(t);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

// ---------------------------------------------------------------------------
// Bounded parallelism.
//
// Work is split by disjoint index ranges so every output element is written by
// exactly one thread; results are bit-identical for any thread count.

inline int& thread_cap() {
    static int cap = 1;
    return cap;
}

inline void set_thread_cap(int n) {
    thread_cap() = n < 1 ? 1 : n;
}

inline void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body) {
    int workers = thread_cap();
    if (workers > 1 && n > 1) {
        size_t w = std::min<size_t>(workers, n);
        size_t chunk = (n + w - 1) / w;
        std::vector<std::thread> pool;
        pool.reserve(w);
        for (size_t t = 0; t < w; ++t) {
            size_t lo = t * chunk;
            size_t hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&body, lo, hi] { body(lo, hi); });
        }
        for (auto& th : pool) th.join();
    } else {
        body(0, n);
    }
}

}  // namespace rtgs
