#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tetradiff::binio
{
    // Little-endian fixed-width encoding, independent of host byte order.

    inline void put_u64(std::ostream & out, std::uint64_t v)
    {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out.write(b, 8);
    }

    inline void put_u32(std::ostream & out, std::uint32_t v)
    {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out.write(b, 4);
    }

    inline void put_f64(std::ostream & out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

    inline void put_string(std::ostream & out, const std::string & s)
    {
        put_u64(out, s.size());
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    inline void put_tensor(std::ostream & out, const Tensor & t)
    {
        put_u64(out, t.rows());
        put_u64(out, t.cols());
        for (double v : t.values()) put_f64(out, v);
    }

    inline void read_exact(std::istream & in, char * dst, std::size_t n)
    {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
        {
            throw FormatError("unexpected end of file (size mismatch)");
        }
    }

    inline std::uint64_t get_u64(std::istream & in)
    {
        unsigned char b[8];
        read_exact(in, reinterpret_cast<char *>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    inline std::uint32_t get_u32(std::istream & in)
    {
        unsigned char b[4];
        read_exact(in, reinterpret_cast<char *>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    inline double get_f64(std::istream & in) { return std::bit_cast<double>(get_u64(in)); }

    inline std::string get_string(std::istream & in, std::uint64_t max_len = 1ULL << 32)
    {
        const auto n = get_u64(in);
        if (n > max_len)
        {
            throw FormatError("string length out of range");
        }
        std::string s(n, '\0');
        read_exact(in, s.data(), n);
        return s;
    }

    inline Tensor get_tensor(std::istream & in)
    {
        const auto rows = get_u64(in);
        const auto cols = get_u64(in);
        if (rows > (1ULL << 32) || cols > (1ULL << 32) || rows * cols > (1ULL << 34))
        {
            throw FormatError("tensor shape out of range");
        }
        std::vector<double> data(rows * cols);
        for (auto & v : data) v = get_f64(in);
        return Tensor(rows, cols, std::move(data));
    }
} // namespace tetradiff::binio
