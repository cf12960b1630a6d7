#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ccnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, Eigen::VectorXd data);
    Tensor(Shape shape, std::initializer_list<double> values);

    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index numel() const { return data_.size(); }
    // Negative axes count from the back.
    Index dim(Index axis) const;

    Eigen::VectorXd& data() { return data_; }
    const Eigen::VectorXd& data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](Index i) { return data_[i]; }
    double operator[](Index i) const { return data_[i]; }

    double& at(std::initializer_list<Index> index);
    double at(std::initializer_list<Index> index) const;

    MatrixMap matrix(Index rows, Index cols);
    ConstMatrixMap matrix(Index rows, Index cols) const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool value) { requires_grad_ = value; }

private:
    Index offset(std::initializer_list<Index> index) const;

    Shape shape_;
    Eigen::VectorXd data_;
    bool requires_grad_ = false;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ccnet
