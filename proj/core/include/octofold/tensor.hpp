// Dense row-major tensor of 32-bit floats, the carrier for features,
// activations, parameters and gradients. Reductions accumulate in double
// and round once on store.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace octofold {

class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape. Every dim must be positive.
    explicit Tensor(std::vector<std::int64_t> shape);

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, float value);
    static Tensor from(std::vector<std::int64_t> shape, std::vector<float> values);

    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const;
    const std::vector<std::int64_t>& shape() const { return shape_; }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool empty() const { return values_.empty(); }

    float* data() { return values_.data(); }
    const float* data() const { return values_.data(); }

    float& at(std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    float at(std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }
    float& at(std::int64_t i, std::int64_t j) { return values_[static_cast<std::size_t>(i * dim(1) + j)]; }
    float at(std::int64_t i, std::int64_t j) const { return values_[static_cast<std::size_t>(i * dim(1) + j)]; }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return values_[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return values_[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
    }

    void fill(float value);

    /// Throws NumericError naming `context` if any value is NaN or infinite.
    void check_finite(const char* context) const;

    std::string shape_str() const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<float> values_;
};

}  // namespace octofold
