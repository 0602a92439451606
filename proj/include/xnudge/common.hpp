#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xnudge {

using Vec = std::vector<double>;

// Error taxonomy. ConfigError (and subclasses) map to CLI exit code 2,
// everything else to 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct SchemaError : ConfigError {
    using ConfigError::ConfigError;
};
struct ContractError : Error {
    using Error::Error;
};
struct VocabularyError : Error {
    using Error::Error;
};
struct StratificationError : Error {
    using Error::Error;
};
struct NumericsError : Error {
    using Error::Error;
};
struct StageError : Error {
    using Error::Error;
};

/// Binary decision label, strictly -1 or +1.
class Label {
public:
    Label() = default;

    static Label positive() { return Label(+1); }
    static Label negative() { return Label(-1); }

    static Label from_int(int v) {
        if (v != -1 && v != 1)
            throw ContractError("label must be -1 or +1, got " + std::to_string(v));
        return Label(v);
    }

    // Global tie rule: a zero score maps to +1.
    static Label from_sign(double score) { return score >= 0.0 ? positive() : negative(); }

    // Global tie rule: p = 0.5 maps to +1.
    static Label from_prob(double p) { return p >= 0.5 ? positive() : negative(); }

    int value() const { return v_; }
    bool is_positive() const { return v_ > 0; }
    Label flipped() const { return Label(-v_); }

    friend bool operator==(Label a, Label b) { return a.v_ == b.v_; }
    friend bool operator!=(Label a, Label b) { return a.v_ != b.v_; }

private:
    explicit Label(int v) : v_(v) {}
    int v_ = 1;
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow
inline double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

/// Stamped into every artifact a run writes.
struct Provenance {
    std::string config_hash;
    uint64_t seed = 0;
};

} // namespace xnudge
