#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pkinet/rng.hpp"

namespace pkinet {

// Scalar precision of a tensor. A constructor choice, not two types: gradient
// checks run in F64, inference paths may run in F32.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(DType dt);
std::size_t dtype_size(DType dt);

// Rank-4 shape, channels-first: (batch, channels, height, width).
struct Shape {
    std::int64_t b = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return b * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense rank-4 tensor, contiguous row-major: element (b,c,y,x) lives at
// flat index ((b*C + c)*H + y)*W + x. Immutable by convention once an op
// has produced it; every op below is a pure function.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape s, DType dt);

    static Tensor zeros(Shape s, DType dt = DType::F64);
    static Tensor full(Shape s, double value, DType dt = DType::F64);
    static Tensor from_values(Shape s, const std::vector<double>& values,
                              DType dt = DType::F64);
    static Tensor random_uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0,
                                 DType dt = DType::F64);

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return numel() == 0; }

    template <class T> T* data();
    template <class T> const T* data() const;

    // Element access as double regardless of dtype (test/oracle convenience).
    double get(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const;
    void set(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x, double v);
    double get_flat(std::int64_t i) const;
    void set_flat(std::int64_t i, double v);

    std::int64_t index_of(std::int64_t b, std::int64_t c, std::int64_t y,
                          std::int64_t x) const {
        return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Tensor to(DType dt) const;
    void fill(double v);

    bool bitwise_equal(const Tensor& other) const;

private:
    Shape shape_{};
    DType dtype_ = DType::F64;
    std::variant<std::vector<float>, std::vector<double>> data_ =
        std::vector<double>{};
};

// ---- elementwise / pooling / splitting primitives ----

Tensor elementwise_add(const Tensor& a, const Tensor& b);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& t);
Tensor silu(const Tensor& t);
Tensor scale(const Tensor& t, double s);

// Mean over all spatial positions; output shape (B, C, 1, 1).
Tensor global_avg_pool(const Tensor& t);

// k x k mean with zero padding; border windows still divide by k*k
// (count-include-pad).
Tensor avg_pool2d(const Tensor& t, int k, int stride, int pad);

// First tensor holds channels [0, at), second [at, C).
std::pair<Tensor, Tensor> channel_split(const Tensor& t, std::int64_t at);
Tensor channel_concat(const Tensor& a, const Tensor& b);

// ---- thread pool knob (used by conv forward; 1 = fully serial) ----
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over [0, n) split across the configured thread count.
// Work items must write disjoint outputs; results are identical for any
// thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace pkinet
