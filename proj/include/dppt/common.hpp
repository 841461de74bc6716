#pragma once

#include <cstdarg>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dppt {

// Error taxonomy. The CLI maps these onto process exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// printf-style formatting into a std::string.
std::string strf(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from DPPT_LOG_LEVEL (error|info|debug), default info.
LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Deterministic RNG (xoshiro256++ seeded via splitmix64). The standard
// library distributions are implementation-defined, so everything that
// must reproduce bit-for-bit draws through this.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // uniform in [0,1) with 53-bit resolution
    double uniform();
    double uniform(double lo, double hi);
    // standard normal via Box-Muller (no cached spare; one value per 2 draws)
    double normal();
    // normal(0, sigma) resampled until |x| <= 2*sigma
    double truncated_normal(double sigma);
    // uniform integer in [0, n)
    uint64_t below(uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream, e.g. one per dataset sample.
    Rng fork(uint64_t stream) const;

private:
    uint64_t s_[4];
    uint64_t seed_;
};

std::string iso8601_utc_now();

// Git revision captured at configure time ("unknown" outside a checkout).
std::string source_revision();

}  // namespace dppt
