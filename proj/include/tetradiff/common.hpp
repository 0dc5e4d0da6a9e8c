#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tetradiff
{
    /// Base class of every error raised by the library.
    struct Error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    /// Array shapes or levels do not line up.
    struct ShapeError : Error
    {
        using Error::Error;
    };

    /// Input data violates a documented invariant (corrupt file, bad mesh, bad config).
    struct ValidationError : Error
    {
        using Error::Error;
    };

    /// File header, magic or version is not what the reader expects.
    struct FormatError : ValidationError
    {
        using ValidationError::ValidationError;
    };

    struct IoError : Error
    {
        using Error::Error;
    };

    struct Vec3
    {
        double x = 0.0, y = 0.0, z = 0.0;

        constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
        constexpr double & operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

        constexpr Vec3 & operator+=(const Vec3 & o) { x += o.x; y += o.y; z += o.z; return *this; }
        constexpr Vec3 & operator-=(const Vec3 & o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
        constexpr Vec3 & operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

        friend constexpr bool operator==(const Vec3 &, const Vec3 &) = default;
    };

    constexpr Vec3 operator+(Vec3 a, const Vec3 & b) { return a += b; }
    constexpr Vec3 operator-(Vec3 a, const Vec3 & b) { return a -= b; }
    constexpr Vec3 operator-(const Vec3 & a) { return {-a.x, -a.y, -a.z}; }
    constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    constexpr Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }

    constexpr double dot(const Vec3 & a, const Vec3 & b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

    constexpr Vec3 cross(const Vec3 & a, const Vec3 & b)
    {
        return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
    }

    inline double norm(const Vec3 & a) { return std::sqrt(dot(a, a)); }
    constexpr double squared_norm(const Vec3 & a) { return dot(a, a); }
    inline double distance(const Vec3 & a, const Vec3 & b) { return norm(a - b); }
    constexpr double squared_distance(const Vec3 & a, const Vec3 & b) { return squared_norm(a - b); }

    /// Six times the signed volume of tetrahedron (a, b, c, d).
    constexpr double orient3d(const Vec3 & a, const Vec3 & b, const Vec3 & c, const Vec3 & d)
    {
        return dot(b - a, cross(c - a, d - a));
    }

    inline double tet_volume(const Vec3 & a, const Vec3 & b, const Vec3 & c, const Vec3 & d)
    {
        return orient3d(a, b, c, d) / 6.0;
    }

    struct Aabb
    {
        Vec3 lo{1e300, 1e300, 1e300};
        Vec3 hi{-1e300, -1e300, -1e300};

        void expand(const Vec3 & p)
        {
            for (std::size_t i = 0; i < 3; ++i)
            {
                lo[i] = std::min(lo[i], p[i]);
                hi[i] = std::max(hi[i], p[i]);
            }
        }

        void expand(const Aabb & b)
        {
            expand(b.lo);
            expand(b.hi);
        }

        Vec3 center() const { return (lo + hi) * 0.5; }
        Vec3 extent() const { return hi - lo; }

        /// Squared distance from p to the box (0 inside).
        double squared_distance_to(const Vec3 & p) const
        {
            double d2 = 0.0;
            for (std::size_t i = 0; i < 3; ++i)
            {
                const double v = p[i] < lo[i] ? lo[i] - p[i] : (p[i] > hi[i] ? p[i] - hi[i] : 0.0);
                d2 += v * v;
            }
            return d2;
        }
    };
} // namespace tetradiff
