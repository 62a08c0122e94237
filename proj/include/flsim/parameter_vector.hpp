#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

// Flat vector of all model weights; the unit of aggregation. Its length is
// fixed by the model architecture and must match across every client and
// round of an experiment.
struct ParameterVector {
    std::vector<double> values;

    ParameterVector() = default;
    explicit ParameterVector(std::size_t dim) : values(dim, 0.0) {}
    explicit ParameterVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    const double& operator[](std::size_t i) const { return values[i]; }

    void add_scaled(const ParameterVector& other, double s) {
        require_same_size(other, "add_scaled");
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * other.values[i];
    }

    double l2_norm() const {
        long double acc = 0.0L;
        for (double v : values) acc += static_cast<long double>(v) * v;
        return static_cast<double>(std::sqrt(acc));
    }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void require_same_size(const ParameterVector& other, const char* what) const {
        if (values.size() != other.values.size()) {
            throw std::invalid_argument(std::string(what) + ": parameter length mismatch (" +
                                        std::to_string(values.size()) + " vs " +
                                        std::to_string(other.values.size()) + ")");
        }
    }
};

inline ParameterVector operator+(const ParameterVector& a, const ParameterVector& b) {
    a.require_same_size(b, "operator+");
    ParameterVector out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline ParameterVector operator-(const ParameterVector& a, const ParameterVector& b) {
    a.require_same_size(b, "operator-");
    ParameterVector out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline ParameterVector scaled(const ParameterVector& a, double s) {
    ParameterVector out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

inline double max_abs_difference(const ParameterVector& a, const ParameterVector& b) {
    a.require_same_size(b, "max_abs_difference");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace flsim
