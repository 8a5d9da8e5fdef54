#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ttl {

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based generator: a stream is identified by (seed, a, b), so view i of
// sample s can be drawn independently of evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t s = seed;
        state_ = splitmix64(s);
        s ^= 0x6a09e667f3bcc909ULL + a;
        state_ ^= splitmix64(s);
        s ^= 0xbb67ae8584caa73bULL + b;
        state_ ^= splitmix64(s);
        // burn-in so nearby streams decorrelate
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1), 53-bit mantissa, identical on every platform
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    double normal(double mean = 0.0, double stddev = 1.0);

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for config hashes and frozen-weight checksums
class Fnv1a {
public:
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return hash_; }
    std::string hex() const;

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace ttl
