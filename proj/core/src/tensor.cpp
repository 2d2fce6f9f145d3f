#include "octofold/tensor.hpp"

#include <cmath>
#include <sstream>

#include "octofold/errors.hpp"

namespace octofold {

namespace {

std::int64_t checked_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw DimensionError("tensor dims must be positive");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    values_.assign(static_cast<std::size_t>(checked_count(shape_)), 0.0f);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, float value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<std::int64_t> shape, std::vector<float> values) {
    if (checked_count(shape) != static_cast<std::int64_t>(values.size()))
        throw DimensionError("tensor: value count does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = std::move(values);
    return t;
}

std::int64_t Tensor::dim(int i) const {
    if (i < 0 || i >= rank()) throw DimensionError("tensor: dim index out of range");
    return shape_[static_cast<std::size_t>(i)];
}

void Tensor::fill(float value) {
    for (float& v : values_) v = value;
}

void Tensor::check_finite(const char* context) const {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            std::ostringstream os;
            os << context << ": non-finite value at flat index " << i;
            throw NumericError(os.str());
        }
    }
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << ")";
    return os.str();
}

}  // namespace octofold
