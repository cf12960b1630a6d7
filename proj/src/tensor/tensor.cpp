#include "ccnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace ccnet {

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index extent : shape) n *= extent;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

void check_extents(const Shape& shape) {
    for (Index extent : shape) {
        if (extent <= 0) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_ = Eigen::VectorXd::Constant(ccnet::numel(shape_), fill);
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (ccnet::numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                    to_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::VectorXd::Map(values.begin(), static_cast<Index>(values.size()))) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, value); }

Index Tensor::dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for shape " + to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

Index Tensor::offset(std::initializer_list<Index> index) const {
    if (static_cast<Index>(index.size()) != rank()) throw std::invalid_argument("index rank mismatch");
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : index) {
        if (i < 0 || i >= shape_[axis]) throw std::out_of_range("index out of range for shape " + to_string(shape_));
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<Index> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<Index> index) const { return data_[offset(index)]; }

MatrixMap Tensor::matrix(Index rows, Index cols) {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor " + to_string(shape_));
    return MatrixMap(data_.data(), rows, cols);
}

ConstMatrixMap Tensor::matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor " + to_string(shape_));
    return ConstMatrixMap(data_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (ccnet::numel(shape) != numel()) {
        throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const { return data_.allFinite(); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    if (a.numel() == 0) return 0.0;
    return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

}  // namespace ccnet
