#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace tetradiff
{
    /// Dense row-major [rows x cols] array of doubles. Per-vertex features use one row per vertex.
    class Tensor
    {
    public:
        Tensor() = default;
        Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
        Tensor(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data))
        {
            if (data_.size() != rows_ * cols_)
            {
                throw ShapeError("Tensor: data size does not match shape");
            }
        }
        Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
            : Tensor(rows, cols, std::vector<double>(values))
        {
        }

        std::size_t rows() const { return rows_; }
        std::size_t cols() const { return cols_; }
        std::size_t size() const { return data_.size(); }
        bool empty() const { return data_.empty(); }

        double & operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
        double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
        double & operator[](std::size_t i) { return data_[i]; }
        double operator[](std::size_t i) const { return data_[i]; }

        std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
        std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

        std::span<double> values() { return data_; }
        std::span<const double> values() const { return data_; }
        double * data() { return data_.data(); }
        const double * data() const { return data_.data(); }

        void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

        bool same_shape(const Tensor & o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

        Tensor & operator+=(const Tensor & o)
        {
            require_same_shape(o, "+=");
            for (std::size_t i = 0; i < data_.size(); ++i)
            {
                data_[i] += o.data_[i];
            }
            return *this;
        }

        Tensor & operator-=(const Tensor & o)
        {
            require_same_shape(o, "-=");
            for (std::size_t i = 0; i < data_.size(); ++i)
            {
                data_[i] -= o.data_[i];
            }
            return *this;
        }

        Tensor & operator*=(double s)
        {
            for (auto & v : data_)
            {
                v *= s;
            }
            return *this;
        }

        /// this += s * o
        void axpy(double s, const Tensor & o)
        {
            require_same_shape(o, "axpy");
            for (std::size_t i = 0; i < data_.size(); ++i)
            {
                data_[i] += s * o.data_[i];
            }
        }

        bool all_finite() const
        {
            return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
        }

        void require_same_shape(const Tensor & o, const char * what) const
        {
            if (!same_shape(o))
            {
                throw ShapeError(std::string("Tensor ") + what + ": shape mismatch " + shape_string() + " vs " + o.shape_string());
            }
        }

        std::string shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

        friend bool operator==(const Tensor &, const Tensor &) = default;

    private:
        std::size_t rows_ = 0;
        std::size_t cols_ = 0;
        std::vector<double> data_;
    };

    inline Tensor operator+(Tensor a, const Tensor & b) { return a += b; }
    inline Tensor operator-(Tensor a, const Tensor & b) { return a -= b; }
    inline Tensor operator*(Tensor a, double s) { return a *= s; }
    inline Tensor operator*(double s, Tensor a) { return a *= s; }

    inline double dot(const Tensor & a, const Tensor & b)
    {
        a.require_same_shape(b, "dot");
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            s += a[i] * b[i];
        }
        return s;
    }

    inline double squared_norm(const Tensor & a) { return dot(a, a); }
    inline double norm(const Tensor & a) { return std::sqrt(squared_norm(a)); }

    inline double max_abs_diff(const Tensor & a, const Tensor & b)
    {
        a.require_same_shape(b, "max_abs_diff");
        double m = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            m = std::max(m, std::abs(a[i] - b[i]));
        }
        return m;
    }
} // namespace tetradiff
