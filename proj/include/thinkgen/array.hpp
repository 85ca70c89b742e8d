#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "thinkgen/error.hpp"
#include "thinkgen/rng.hpp"

namespace thinkgen {

#ifdef THINKGEN_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Checked mode rejects NaN/Inf at array creation. On by default; fast runs
// may switch it off.
inline std::atomic<bool>& numerics_check_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
inline bool numerics_checking() { return numerics_check_flag().load(std::memory_order_relaxed); }
inline void set_numerics_checking(bool on) { numerics_check_flag().store(on, std::memory_order_relaxed); }

// Dense row-major real array. Immutable by convention once built (training
// code mutates parameters only through the optimizer).
struct Array {
    Shape shape;
    std::vector<real> data;

    Array() = default;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return numel() == 1; }
    int64_t ndim() const { return static_cast<int64_t>(shape.size()); }

    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const {
        if (shape.empty()) return 1;
        int64_t c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    real& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    real at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }
    real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    void validate(const char* where = "array") const {
        int64_t n = 1;
        for (int64_t e : shape) {
            if (e <= 0) throw ShapeError(std::string(where) + ": non-positive extent in " + shape_str(shape));
            n *= e;
        }
        if (n != numel())
            throw ShapeError(std::string(where) + ": shape " + shape_str(shape) + " does not match " +
                             std::to_string(numel()) + " values");
        if (numerics_checking()) {
            for (real v : data) {
                if (!std::isfinite(v)) throw NumericsError(std::string(where) + ": non-finite value");
            }
        }
    }

    static Array zeros(Shape s) {
        Array a;
        int64_t n = 1;
        for (int64_t e : s) n *= e;
        a.shape = std::move(s);
        a.data.assign(static_cast<size_t>(n), real(0));
        a.validate("zeros");
        return a;
    }

    static Array full(Shape s, real v) {
        Array a = zeros(std::move(s));
        for (real& x : a.data) x = v;
        a.validate("full");
        return a;
    }

    static Array scalar(real v) { return full({1}, v); }

    static Array from(Shape s, std::vector<real> values) {
        Array a;
        a.shape = std::move(s);
        a.data = std::move(values);
        a.validate("from");
        return a;
    }

    static Array from(std::initializer_list<real> values) {
        return from({static_cast<int64_t>(values.size())}, std::vector<real>(values));
    }

    static Array randn(Shape s, RngStream& rng, real stddev = real(1)) {
        Array a = zeros(std::move(s));
        for (real& x : a.data) x = static_cast<real>(rng.normal()) * stddev;
        a.validate("randn");
        return a;
    }

    Array reshaped(Shape s) const {
        Array a;
        a.shape = std::move(s);
        a.data = data;
        a.validate("reshaped");
        return a;
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }
};

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t array_hash(const Array& a) {
    uint64_t h = fnv1a64(a.shape.data(), a.shape.size() * sizeof(int64_t));
    return fnv1a64(a.data.data(), a.data.size() * sizeof(real), h);
}

// --- TGAR blob format -------------------------------------------------------
// magic "TGAR" | version u32 | ndim u32 | shape u64[ndim] | f64 payload (LE).
// The payload is always written as 64-bit, independent of the build's `real`.

inline void save_array(std::ostream& os, const Array& a) {
    os.write("TGAR", 4);
    uint32_t version = 1;
    uint32_t ndim = static_cast<uint32_t>(a.shape.size());
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int64_t e : a.shape) {
        uint64_t u = static_cast<uint64_t>(e);
        os.write(reinterpret_cast<const char*>(&u), 8);
    }
    for (real v : a.data) {
        double d = static_cast<double>(v);
        os.write(reinterpret_cast<const char*>(&d), 8);
    }
    if (!os) throw IoError("failed writing TGAR blob");
}

inline void save_array(const std::string& path, const Array& a) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    save_array(os, a);
}

inline Array load_array(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TGAR", 4) != 0) throw IoError("bad TGAR magic");
    uint32_t version = 0, ndim = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&ndim), 4);
    if (!is || version != 1) throw IoError("unsupported TGAR version");
    if (ndim > 8) throw IoError("TGAR ndim out of range");
    Shape shape(ndim);
    int64_t n = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        uint64_t u = 0;
        is.read(reinterpret_cast<char*>(&u), 8);
        shape[i] = static_cast<int64_t>(u);
        n *= shape[i];
    }
    std::vector<real> values(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double d = 0;
        is.read(reinterpret_cast<char*>(&d), 8);
        values[static_cast<size_t>(i)] = static_cast<real>(d);
    }
    if (!is) throw IoError("truncated TGAR blob");
    return Array::from(std::move(shape), std::move(values));
}

inline Array load_array(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    return load_array(is);
}

} // namespace thinkgen
