#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vb {

// Contract violations (API misuse, bad shapes, bad arguments).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Shape mismatch between operands.
struct DimensionError : ContractError {
    using ContractError::ContractError;
};

// NaN/Inf produced by a numeric kernel.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration file or flag.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File read/write failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class Dtype { f32, f64 };

// Global compute precision. f32 quantizes every op output to float,
// f64 keeps full double precision (used by the gradient-check suite).
Dtype default_dtype();
void set_default_dtype(Dtype d);

struct DtypeScope {
    explicit DtypeScope(Dtype d) : saved_(default_dtype()) { set_default_dtype(d); }
    ~DtypeScope() { set_default_dtype(saved_); }
    DtypeScope(const DtypeScope&) = delete;
    DtypeScope& operator=(const DtypeScope&) = delete;

  private:
    Dtype saved_;
};

// Deterministic RNG. Raw bits come from mt19937_64; the mappings to
// uniform/normal/int are implemented here so streams are reproducible
// across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; caches the paired draw.
    double normal();

    // Uniform integer in [0, n).
    int uniform_int(int n);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n);

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64-style mixer for deriving independent sub-seeds.
uint64_t mix_seed(uint64_t a, uint64_t b);

// Fixed numeric formatting shared by CSV writers (deterministic output).
std::string format_number(double v);

}  // namespace vb
