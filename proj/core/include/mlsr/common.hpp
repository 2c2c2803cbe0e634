#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlsr {

// Shape/dimension mismatch between tensors.
class DimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (rank too large, indivisible channels, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API misuse (non-scalar loss, alpha outside [0,1], ...).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File system / decode failures; message always names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

}  // namespace mlsr
