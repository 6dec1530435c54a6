#ifndef CRIMEALARM_COMMON_HPP
#define CRIMEALARM_COMMON_HPP

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace crimealarm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy mapped onto distinct process exit codes by the CLI.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using rng_t = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}
} // namespace detail

// Deterministic seed derivation: all randomness in the project flows through
// generators seeded by (base seed, purpose tag, indices). Parallel or resumed
// work re-derives the exact same streams from the counters alone.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = detail::splitmix64(base ^ detail::fnv1a(tag));
    h = detail::splitmix64(h ^ a);
    h = detail::splitmix64(h ^ b);
    h = detail::splitmix64(h ^ c);
    return h;
}

inline rng_t make_rng(std::uint64_t base, std::string_view tag,
                      std::uint64_t a = 0, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
    return rng_t(derive_seed(base, tag, a, b, c));
}

inline double uniform01(rng_t& rng) {
    // 53-bit mantissa draw in [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Rate-limited stderr warnings; each call site gets its own counter.
class warn_limiter {
public:
    explicit warn_limiter(int limit = 3) : limit_(limit) {}
    template <typename... Args>
    void operator()(const char* fmt, Args... args) {
        int n = count_.fetch_add(1, std::memory_order_relaxed);
        if (n < limit_) {
            std::fprintf(stderr, "warning: ");
            std::fprintf(stderr, fmt, args...);
            std::fprintf(stderr, n + 1 == limit_ ? " (suppressing further)\n" : "\n");
        }
    }

private:
    int limit_;
    std::atomic<int> count_{0};
};

} // namespace crimealarm

#endif // CRIMEALARM_COMMON_HPP
