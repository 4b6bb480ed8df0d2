#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace gridforge {

using Shape = std::vector<std::size_t>;

/// Dense multi-dimensional array of doubles, row-major, with the channel
/// axis last. Grids are (rows, cols, channels); series are (length,
/// channels). Treated as a value type: functions take tensors by const
/// reference and return new ones, so tensors are safe to share across
/// threads once built.
class Tensor {
public:
    enum class Reduce { sum, max, mean };

    Tensor() = default;

    /// All-zero tensor. Throws ShapeError on an empty shape or a zero extent.
    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    /// Adopts `data`, which must have exactly product(shape) entries.
    static Tensor from_data(const Shape& shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    // Checked element access; throws IndexError out of range.
    double& at(std::size_t i);
    double& at(std::size_t i, std::size_t j);
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }
    double at(std::size_t i, std::size_t j) const { return const_cast<Tensor*>(this)->at(i, j); }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return const_cast<Tensor*>(this)->at(i, j, k);
    }

    /// Row-major flat offset of a full index tuple (checked).
    std::size_t offset(std::span<const std::size_t> idx) const;

    double get(std::span<const std::size_t> idx) const { return data_[offset(idx)]; }
    /// Returns a copy identical except at `idx`.
    Tensor set(std::span<const std::size_t> idx, double value) const;

    /// Same shape, f applied to every entry.
    Tensor map(const std::function<double(double)>& f) const;
    /// Mathematical sum / max / mean of all entries; max and mean require a
    /// non-empty tensor.
    double reduce(Reduce op) const;

    /// Same data reinterpreted under a new shape of equal element count.
    Tensor reshape(const Shape& shape) const;

    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace gridforge
