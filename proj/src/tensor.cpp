#include "mgnm/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mgnm {

Tensor::Tensor(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw Error("tensor: negative dimension " + shape_str());
}

Tensor::Tensor(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (rows < 0 || cols < 0) throw Error("tensor: negative dimension " + shape_str());
    if (data_.size() != static_cast<std::size_t>(rows) * cols)
        throw Error("tensor: value count " + std::to_string(data_.size()) + " does not match shape " + shape_str());
}

Tensor Tensor::identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) throw Error("tensor: ragged initializer");
        int j = 0;
        for (double v : row) t(i, j++) = v;
        ++i;
    }
    return t;
}

std::string Tensor::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::max_abs_diff(const Tensor& other) const {
    if (!same_shape(other)) throw ShapeError("max_abs_diff: " + shape_str() + " vs " + other.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::fabs(data_[i] - other.data_[i]));
    return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

SparseMatrix::SparseMatrix(int rows, int cols, std::vector<Entry> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Entry& e = entries_[i];
        if (e.row < 0 || e.row >= rows_ || e.col < 0 || e.col >= cols_)
            throw Error("sparse: entry (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                        ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
        if (i > 0 && entries_[i - 1].row == e.row && entries_[i - 1].col == e.col)
            throw Error("sparse: duplicate entry at (" + std::to_string(e.row) + "," + std::to_string(e.col) + ")");
    }
}

Tensor SparseMatrix::multiply(const Tensor& dense) const {
    if (cols_ != dense.rows())
        throw ShapeError("spmm: " + std::to_string(rows_) + "x" + std::to_string(cols_) + " vs " + dense.shape_str());
    Tensor out(rows_, dense.cols());
    for (const Entry& e : entries_)
        for (int j = 0; j < dense.cols(); ++j) out(e.row, j) += e.value * dense(e.col, j);
    return out;
}

Tensor SparseMatrix::multiply_transposed(const Tensor& dense) const {
    if (rows_ != dense.rows())
        throw ShapeError("spmm_t: " + std::to_string(cols_) + "x" + std::to_string(rows_) + " vs " + dense.shape_str());
    Tensor out(cols_, dense.cols());
    for (const Entry& e : entries_)
        for (int j = 0; j < dense.cols(); ++j) out(e.col, j) += e.value * dense(e.row, j);
    return out;
}

Tensor SparseMatrix::to_dense() const {
    Tensor out(rows_, cols_);
    for (const Entry& e : entries_) out(e.row, e.col) = e.value;
    return out;
}

}  // namespace mgnm
