#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnaft {

// Dense row-major float tensor, rank 1 or 2. Values are 32-bit; reductions
// that need more precision accumulate in 64-bit at the point of use.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    bool trainable = false;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d, bool train = false)
        : shape(std::move(s)), data(std::move(d)), trainable(train) {}

    static Tensor zeros(std::vector<int> s) {
        int64_t n = size_of(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
    }

    static Tensor full(std::vector<int> s, float v) {
        int64_t n = size_of(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    static int64_t size_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int rows() const { return rank() == 2 ? shape[0] : 1; }
    int cols() const { return rank() == 2 ? shape[1] : shape[0]; }

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline bool all_finite(const Tensor& t) {
    for (float v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace mnaft
