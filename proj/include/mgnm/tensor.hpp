#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgnm {

// Base class for all structured errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, invalid configs, out-of-range ids.
// The CLI maps these to exit code 1, everything else to 2.
struct UserError : Error {
    using Error::Error;
};

// Shape mismatch in a matrix op; message carries the op name and both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Dense 2-D matrix of doubles, row-major. Value semantics; shape is fixed
// at construction. `requires_grad` marks the tensor as trainable when it
// is registered on a Tape (see tape.hpp).
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0);
    Tensor(int rows, int cols, std::vector<double> values);

    static Tensor identity(int n);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }

    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
    std::string shape_str() const;

    bool all_finite() const;
    double max_abs_diff(const Tensor& other) const;

    bool requires_grad = false;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Eager helpers for non-tape code paths (evaluation, oracles live in tests).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Immutable sparse matrix in coordinate form, sorted by (row, col) with no
// duplicates. Always a constant with respect to differentiation: the ops
// that consume one never propagate gradients into it.
class SparseMatrix {
public:
    struct Entry {
        int row;
        int col;
        double value;
    };

    SparseMatrix() = default;
    // Sorts the entries; throws Error on duplicate coordinates or indices
    // outside rows x cols.
    SparseMatrix(int rows, int cols, std::vector<Entry> entries);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const std::vector<Entry>& entries() const { return entries_; }

    // S * x; requires cols() == x.rows().
    Tensor multiply(const Tensor& dense) const;
    // S^T * x; used by the tape's backward rule for sparse products.
    Tensor multiply_transposed(const Tensor& dense) const;

    Tensor to_dense() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<Entry> entries_;
};

}  // namespace mgnm
