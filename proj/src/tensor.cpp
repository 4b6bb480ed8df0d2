#include "gridforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridforge/error.hpp"

namespace gridforge {

static std::size_t checked_numel(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be >= 1");
        n *= e;
    }
    return n;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    std::size_t n = checked_numel(shape);
    Tensor t;
    t.shape_ = shape;
    t.data_.assign(n, value);
    return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
    std::size_t n = checked_numel(shape);
    if (n != data.size())
        throw ShapeError("data size " + std::to_string(data.size()) +
                         " does not match shape element count " + std::to_string(n));
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::move(data);
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw IndexError("axis out of range");
    return shape_[axis];
}

double& Tensor::at(std::size_t i) {
    std::size_t idx[] = {i};
    return data_[offset(idx)];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    std::size_t idx[] = {i, j};
    return data_[offset(idx)];
}

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    std::size_t idx[] = {i, j, k};
    return data_[offset(idx)];
}

std::size_t Tensor::offset(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size())
        throw IndexError("index rank " + std::to_string(idx.size()) +
                         " does not match tensor rank " + std::to_string(shape_.size()));
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
        if (idx[d] >= shape_[d])
            throw IndexError("index " + std::to_string(idx[d]) + " out of range for axis " +
                             std::to_string(d) + " with extent " + std::to_string(shape_[d]));
        off = off * shape_[d] + idx[d];
    }
    return off;
}

Tensor Tensor::set(std::span<const std::size_t> idx, double value) const {
    Tensor copy = *this;
    copy.data_[offset(idx)] = value;
    return copy;
}

Tensor Tensor::map(const std::function<double(double)>& f) const {
    Tensor out = *this;
    for (double& v : out.data_) v = f(v);
    return out;
}

double Tensor::reduce(Reduce op) const {
    if (data_.empty() && op != Reduce::sum)
        throw ShapeError("reduce max/mean requires a non-empty tensor");
    switch (op) {
        case Reduce::sum: {
            double s = 0.0;
            for (double v : data_) s += v;
            return s;
        }
        case Reduce::max:
            return *std::max_element(data_.begin(), data_.end());
        case Reduce::mean: {
            double s = 0.0;
            for (double v : data_) s += v;
            return s / static_cast<double>(data_.size());
        }
    }
    throw Error("unreachable");
}

Tensor Tensor::reshape(const Shape& shape) const {
    std::size_t n = checked_numel(shape);
    if (n != data_.size()) throw ShapeError("reshape must preserve element count");
    Tensor t;
    t.shape_ = shape;
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace gridforge
