#include "pkinet/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pkinet {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << b << "," << c << "," << h << "," << w << ")";
    return os.str();
}

static void check_shape_valid(const Shape& s) {
    if (s.b < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw std::invalid_argument("tensor shape " + s.str() +
                                    " has a dimension < 1");
    }
}

Tensor::Tensor(Shape s, DType dt) : shape_(s), dtype_(dt) {
    check_shape_valid(s);
    const auto n = static_cast<std::size_t>(s.numel());
    if (dt == DType::F32) {
        data_ = std::vector<float>(n, 0.0f);
    } else {
        data_ = std::vector<double>(n, 0.0);
    }
}

Tensor Tensor::zeros(Shape s, DType dt) { return Tensor(s, dt); }

Tensor Tensor::full(Shape s, double value, DType dt) {
    Tensor t(s, dt);
    t.fill(value);
    return t;
}

Tensor Tensor::from_values(Shape s, const std::vector<double>& values, DType dt) {
    Tensor t(s, dt);
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
        throw std::invalid_argument("from_values: got " +
                                    std::to_string(values.size()) +
                                    " values for shape " + s.str());
    }
    for (std::int64_t i = 0; i < s.numel(); ++i) t.set_flat(i, values[static_cast<std::size_t>(i)]);
    return t;
}

Tensor Tensor::random_uniform(Shape s, Rng& rng, double lo, double hi, DType dt) {
    Tensor t(s, dt);
    for (std::int64_t i = 0; i < s.numel(); ++i) t.set_flat(i, rng.uniform(lo, hi));
    return t;
}

template <class T> T* Tensor::data() {
    auto* v = std::get_if<std::vector<T>>(&data_);
    if (!v) {
        throw std::logic_error(std::string("tensor data accessed as wrong dtype (is ") +
                               dtype_name(dtype_) + ")");
    }
    return v->data();
}

template <class T> const T* Tensor::data() const {
    const auto* v = std::get_if<std::vector<T>>(&data_);
    if (!v) {
        throw std::logic_error(std::string("tensor data accessed as wrong dtype (is ") +
                               dtype_name(dtype_) + ")");
    }
    return v->data();
}

template float* Tensor::data<float>();
template double* Tensor::data<double>();
template const float* Tensor::data<float>() const;
template const double* Tensor::data<double>() const;

double Tensor::get(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return get_flat(index_of(b, c, y, x));
}

void Tensor::set(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x, double v) {
    set_flat(index_of(b, c, y, x), v);
}

double Tensor::get_flat(std::int64_t i) const {
    if (dtype_ == DType::F32) return static_cast<double>(data<float>()[i]);
    return data<double>()[i];
}

void Tensor::set_flat(std::int64_t i, double v) {
    if (dtype_ == DType::F32) {
        data<float>()[i] = static_cast<float>(v);
    } else {
        data<double>()[i] = v;
    }
}

Tensor Tensor::to(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor out(shape_, dt);
    for (std::int64_t i = 0; i < numel(); ++i) out.set_flat(i, get_flat(i));
    return out;
}

void Tensor::fill(double v) {
    for (std::int64_t i = 0; i < numel(); ++i) set_flat(i, v);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (!(shape_ == other.shape_) || dtype_ != other.dtype_) return false;
    if (dtype_ == DType::F32) {
        return std::memcmp(data<float>(), other.data<float>(),
                           static_cast<std::size_t>(numel()) * 4) == 0;
    }
    return std::memcmp(data<double>(), other.data<double>(),
                       static_cast<std::size_t>(numel()) * 8) == 0;
}

// ---- op helpers ----

static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.shape().str() + " vs " + b.shape().str());
    }
}

static void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype()) {
        throw std::invalid_argument(std::string(op) + ": dtype mismatch " +
                                    dtype_name(a.dtype()) + " vs " +
                                    dtype_name(b.dtype()));
    }
}

template <class T, class F>
static void map2(const Tensor& a, const Tensor& b, Tensor& out, F f) {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
}

template <class T, class F>
static void map1(const Tensor& a, Tensor& out, F f) {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
    require_same_shape("elementwise_add", a, b);
    require_same_dtype("elementwise_add", a, b);
    Tensor out(a.shape(), a.dtype());
    if (a.dtype() == DType::F32) {
        map2<float>(a, b, out, [](float x, float y) { return x + y; });
    } else {
        map2<double>(a, b, out, [](double x, double y) { return x + y; });
    }
    return out;
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    require_same_shape("elementwise_mul", a, b);
    require_same_dtype("elementwise_mul", a, b);
    Tensor out(a.shape(), a.dtype());
    if (a.dtype() == DType::F32) {
        map2<float>(a, b, out, [](float x, float y) { return x * y; });
    } else {
        map2<double>(a, b, out, [](double x, double y) { return x * y; });
    }
    return out;
}

Tensor sigmoid(const Tensor& t) {
    Tensor out(t.shape(), t.dtype());
    if (t.dtype() == DType::F32) {
        map1<float>(t, out, [](float x) { return 1.0f / (1.0f + std::exp(-x)); });
    } else {
        map1<double>(t, out, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }
    return out;
}

Tensor silu(const Tensor& t) {
    Tensor out(t.shape(), t.dtype());
    if (t.dtype() == DType::F32) {
        map1<float>(t, out, [](float x) { return x / (1.0f + std::exp(-x)); });
    } else {
        map1<double>(t, out, [](double x) { return x / (1.0 + std::exp(-x)); });
    }
    return out;
}

Tensor scale(const Tensor& t, double s) {
    Tensor out(t.shape(), t.dtype());
    if (t.dtype() == DType::F32) {
        const float fs = static_cast<float>(s);
        map1<float>(t, out, [fs](float x) { return x * fs; });
    } else {
        map1<double>(t, out, [s](double x) { return x * s; });
    }
    return out;
}

template <class T>
static void gap_impl(const Tensor& t, Tensor& out) {
    const Shape s = t.shape();
    const T* p = t.data<T>();
    T* po = out.data<T>();
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t b = 0; b < s.b; ++b) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* base = p + (b * s.c + c) * hw;
            T acc = 0;
            for (std::int64_t i = 0; i < hw; ++i) acc += base[i];
            po[b * s.c + c] = acc / static_cast<T>(hw);
        }
    }
}

Tensor global_avg_pool(const Tensor& t) {
    Tensor out(Shape{t.shape().b, t.shape().c, 1, 1}, t.dtype());
    if (t.dtype() == DType::F32) gap_impl<float>(t, out);
    else gap_impl<double>(t, out);
    return out;
}

template <class T>
static void avg_pool_impl(const Tensor& t, Tensor& out, int k, int stride, int pad) {
    const Shape si = t.shape();
    const Shape so = out.shape();
    const T* p = t.data<T>();
    T* po = out.data<T>();
    const T inv = static_cast<T>(1) / static_cast<T>(k * k);
    for (std::int64_t b = 0; b < si.b; ++b) {
        for (std::int64_t c = 0; c < si.c; ++c) {
            const T* in = p + (b * si.c + c) * si.h * si.w;
            T* o = po + (b * so.c + c) * so.h * so.w;
            for (std::int64_t oy = 0; oy < so.h; ++oy) {
                for (std::int64_t ox = 0; ox < so.w; ++ox) {
                    T acc = 0;
                    for (int i = 0; i < k; ++i) {
                        const std::int64_t y = oy * stride - pad + i;
                        if (y < 0 || y >= si.h) continue;
                        for (int j = 0; j < k; ++j) {
                            const std::int64_t x = ox * stride - pad + j;
                            if (x < 0 || x >= si.w) continue;
                            acc += in[y * si.w + x];
                        }
                    }
                    o[oy * so.w + ox] = acc * inv;
                }
            }
        }
    }
}

Tensor avg_pool2d(const Tensor& t, int k, int stride, int pad) {
    if (k < 1 || k % 2 == 0) {
        throw std::invalid_argument("avg_pool2d: kernel size must be odd and >= 1, got " +
                                    std::to_string(k));
    }
    if (stride < 1) throw std::invalid_argument("avg_pool2d: stride must be >= 1");
    const Shape si = t.shape();
    const std::int64_t oh = (si.h + 2 * pad - k) / stride + 1;
    const std::int64_t ow = (si.w + 2 * pad - k) / stride + 1;
    if (oh < 1 || ow < 1) {
        throw std::invalid_argument("avg_pool2d: non-positive output dims for input " +
                                    si.str() + " with k=" + std::to_string(k));
    }
    Tensor out(Shape{si.b, si.c, oh, ow}, t.dtype());
    if (t.dtype() == DType::F32) avg_pool_impl<float>(t, out, k, stride, pad);
    else avg_pool_impl<double>(t, out, k, stride, pad);
    return out;
}

// Copies min(src.C - c_from, dst.C - c_to_begin) channels per batch item.
template <class T>
static void copy_channels(const Tensor& src, Tensor& dst, std::int64_t c_from,
                          std::int64_t c_to_begin) {
    const Shape ss = src.shape();
    const Shape ds = dst.shape();
    const std::int64_t hw = ss.h * ss.w;
    const T* p = src.data<T>();
    T* q = dst.data<T>();
    const std::int64_t span = (ss.c - c_from) < (ds.c - c_to_begin)
                                  ? (ss.c - c_from)
                                  : (ds.c - c_to_begin);
    for (std::int64_t b = 0; b < ss.b; ++b) {
        const T* sp = p + (b * ss.c + c_from) * hw;
        T* dp = q + (b * ds.c + c_to_begin) * hw;
        std::memcpy(dp, sp, static_cast<std::size_t>(span * hw) * sizeof(T));
    }
}

std::pair<Tensor, Tensor> channel_split(const Tensor& t, std::int64_t at) {
    const Shape s = t.shape();
    if (at <= 0 || at >= s.c) {
        throw std::invalid_argument("channel_split: split index " + std::to_string(at) +
                                    " out of range for C=" + std::to_string(s.c));
    }
    Tensor lo(Shape{s.b, at, s.h, s.w}, t.dtype());
    Tensor hi(Shape{s.b, s.c - at, s.h, s.w}, t.dtype());
    if (t.dtype() == DType::F32) {
        copy_channels<float>(t, lo, 0, 0);
        copy_channels<float>(t, hi, at, 0);
    } else {
        copy_channels<double>(t, lo, 0, 0);
        copy_channels<double>(t, hi, at, 0);
    }
    return {std::move(lo), std::move(hi)};
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    require_same_dtype("channel_concat", a, b);
    if (sa.b != sb.b || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("channel_concat: batch/spatial mismatch " +
                                    sa.str() + " vs " + sb.str());
    }
    Tensor out(Shape{sa.b, sa.c + sb.c, sa.h, sa.w}, a.dtype());
    if (a.dtype() == DType::F32) {
        copy_channels<float>(a, out, 0, 0);
        copy_channels<float>(b, out, 0, sa.c);
    } else {
        copy_channels<double>(a, out, 0, 0);
        copy_channels<double>(b, out, 0, sa.c);
    }
    return out;
}

// ---- threading ----

static std::atomic<int> g_threads{1};

void set_num_threads(int n) {
    if (n < 1) throw std::invalid_argument("set_num_threads: need n >= 1");
    g_threads.store(n);
}

int num_threads() { return g_threads.load(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int nt = num_threads();
    if (nt <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const int workers = static_cast<int>(nt < n ? nt : n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = (lo + chunk < n) ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

} // namespace pkinet
