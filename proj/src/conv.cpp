#include "pkinet/conv.hpp"

#include <stdexcept>
#include <string>

namespace pkinet {

void validate_conv(const Shape& ws, const Tensor* bias, const ConvGeom& g) {
    if (g.groups < 1) throw std::invalid_argument("conv: groups must be >= 1");
    if (g.stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
    if (g.dilation < 1) throw std::invalid_argument("conv: dilation must be >= 1");
    if (g.pad_h < 0 || g.pad_w < 0) throw std::invalid_argument("conv: negative padding");
    if (ws.b % g.groups != 0) {
        throw std::invalid_argument("conv: out_channels " + std::to_string(ws.b) +
                                    " not divisible by groups " + std::to_string(g.groups));
    }
    if (bias) {
        const Shape bs = bias->shape();
        if (bs.b != 1 || bs.c != ws.b || bs.h != 1 || bs.w != 1) {
            throw std::invalid_argument("conv: bias shape " + bs.str() +
                                        " does not match out_channels " +
                                        std::to_string(ws.b));
        }
    }
}

std::pair<std::int64_t, std::int64_t> conv_output_dims(const Shape& in, const Shape& ws,
                                                       const ConvGeom& g) {
    const std::int64_t eff_h = static_cast<std::int64_t>(g.dilation) * (ws.h - 1) + 1;
    const std::int64_t eff_w = static_cast<std::int64_t>(g.dilation) * (ws.w - 1) + 1;
    if (eff_h > in.h + 2 * g.pad_h || eff_w > in.w + 2 * g.pad_w) {
        throw std::invalid_argument("conv: effective kernel " + std::to_string(eff_h) +
                                    "x" + std::to_string(eff_w) +
                                    " does not fit padded input " + in.str());
    }
    const std::int64_t oh = (in.h + 2 * g.pad_h - eff_h) / g.stride + 1;
    const std::int64_t ow = (in.w + 2 * g.pad_w - eff_w) / g.stride + 1;
    if (oh < 1 || ow < 1) {
        throw std::invalid_argument("conv: zero-size output for input " + in.str());
    }
    return {oh, ow};
}

static void check_input(const Tensor& input, const Tensor& weights, const Tensor* bias,
                        const ConvGeom& g) {
    validate_conv(weights.shape(), bias, g);
    if (input.dtype() != weights.dtype() || (bias && bias->dtype() != weights.dtype())) {
        throw std::invalid_argument("conv: input/weights/bias dtype mismatch");
    }
    const std::int64_t want = weights.shape().c * g.groups;
    if (input.shape().c != want) {
        throw std::invalid_argument("conv: input has " + std::to_string(input.shape().c) +
                                    " channels, kernel expects " + std::to_string(want));
    }
}

// Reference path: direct accumulation, one output element at a time. The
// accumulation order (channel, then kernel row, then kernel column) is the
// contract the im2col path must reproduce bit-for-bit.
template <class T>
static void conv2d_direct(const Tensor& input, const Tensor& weights, const Tensor* bias,
                          const ConvGeom& g, Tensor& out) {
    const Shape si = input.shape();
    const Shape so = out.shape();
    const Shape ws = weights.shape();
    const T* in = input.data<T>();
    const T* w = weights.data<T>();
    const T* bp = bias ? bias->data<T>() : nullptr;
    T* o = out.data<T>();

    const std::int64_t cpg = ws.c;            // input channels per group
    const std::int64_t opg = ws.b / g.groups; // output channels per group
    const std::int64_t khw = ws.h * ws.w;

    parallel_for(so.b * so.c, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t bo = lo; bo < hi; ++bo) {
            const std::int64_t b = bo / so.c;
            const std::int64_t oc = bo % so.c;
            const std::int64_t grp = oc / opg;
            const T* wbase = w + oc * cpg * khw;
            T* obase = o + (b * so.c + oc) * so.h * so.w;
            for (std::int64_t oy = 0; oy < so.h; ++oy) {
                for (std::int64_t ox = 0; ox < so.w; ++ox) {
                    T acc = bp ? bp[oc] : static_cast<T>(0);
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const T* ibase = in + (b * si.c + grp * cpg + c) * si.h * si.w;
                        const T* wrow = wbase + c * khw;
                        for (std::int64_t i = 0; i < ws.h; ++i) {
                            const std::int64_t y = oy * g.stride - g.pad_h + i * g.dilation;
                            if (y < 0 || y >= si.h) continue;
                            for (std::int64_t j = 0; j < ws.w; ++j) {
                                const std::int64_t x = ox * g.stride - g.pad_w + j * g.dilation;
                                if (x < 0 || x >= si.w) continue;
                                acc += wrow[i * ws.w + j] * ibase[y * si.w + x];
                            }
                        }
                    }
                    obase[oy * so.w + ox] = acc;
                }
            }
        }
    });
}

// im2col + row-major matmul fast path (groups == 1). Column entries follow
// the (c, i, j) order of the direct path so the partial sums associate
// identically and the two paths agree bit-for-bit.
template <class T>
static void conv2d_im2col(const Tensor& input, const Tensor& weights, const Tensor* bias,
                          const ConvGeom& g, Tensor& out) {
    const Shape si = input.shape();
    const Shape so = out.shape();
    const Shape ws = weights.shape();
    const T* in = input.data<T>();
    const T* w = weights.data<T>();
    const T* bp = bias ? bias->data<T>() : nullptr;
    T* o = out.data<T>();

    const std::int64_t cols = so.h * so.w;
    const std::int64_t taps = ws.c * ws.h * ws.w;
    std::vector<T> patch(static_cast<std::size_t>(taps * cols));

    for (std::int64_t b = 0; b < si.b; ++b) {
        std::int64_t row = 0;
        for (std::int64_t c = 0; c < ws.c; ++c) {
            for (std::int64_t i = 0; i < ws.h; ++i) {
                for (std::int64_t j = 0; j < ws.w; ++j, ++row) {
                    T* dst = patch.data() + row * cols;
                    const T* ibase = in + (b * si.c + c) * si.h * si.w;
                    std::int64_t idx = 0;
                    for (std::int64_t oy = 0; oy < so.h; ++oy) {
                        const std::int64_t y = oy * g.stride - g.pad_h + i * g.dilation;
                        for (std::int64_t ox = 0; ox < so.w; ++ox, ++idx) {
                            const std::int64_t x = ox * g.stride - g.pad_w + j * g.dilation;
                            dst[idx] = (y < 0 || y >= si.h || x < 0 || x >= si.w)
                                           ? static_cast<T>(0)
                                           : ibase[y * si.w + x];
                        }
                    }
                }
            }
        }
        for (std::int64_t oc = 0; oc < so.c; ++oc) {
            T* obase = o + (b * so.c + oc) * cols;
            const T b0 = bp ? bp[oc] : static_cast<T>(0);
            for (std::int64_t x = 0; x < cols; ++x) obase[x] = b0;
            const T* wrow = w + oc * taps;
            for (std::int64_t t = 0; t < taps; ++t) {
                const T wv = wrow[t];
                const T* prow = patch.data() + t * cols;
                for (std::int64_t x = 0; x < cols; ++x) obase[x] += wv * prow[x];
            }
        }
    }
}

Tensor conv2d_raw(const Tensor& input, const Tensor& weights, const Tensor* bias,
                  const ConvGeom& geom, ConvAlgo algo) {
    check_input(input, weights, bias, geom);
    const auto [oh, ow] = conv_output_dims(input.shape(), weights.shape(), geom);
    Tensor out(Shape{input.shape().b, weights.shape().b, oh, ow}, input.dtype());
    const bool im2col = algo == ConvAlgo::Im2col && geom.groups == 1;
    if (input.dtype() == DType::F32) {
        if (im2col) conv2d_im2col<float>(input, weights, bias, geom, out);
        else conv2d_direct<float>(input, weights, bias, geom, out);
    } else {
        if (im2col) conv2d_im2col<double>(input, weights, bias, geom, out);
        else conv2d_direct<double>(input, weights, bias, geom, out);
    }
    return out;
}

Tensor conv2d(const Tensor& input, const ConvKernel& kernel, ConvAlgo algo) {
    return conv2d_raw(input, kernel.weights, kernel.bias ? &*kernel.bias : nullptr,
                      kernel.geom, algo);
}

Tensor pointwise(const Tensor& input, const ConvKernel& kernel) {
    if (kernel.kh() != 1 || kernel.kw() != 1 || kernel.geom.groups != 1) {
        throw std::invalid_argument("pointwise: kernel must be 1x1 with groups=1");
    }
    return conv2d(input, kernel, ConvAlgo::Direct);
}

Tensor strip_pair(const Tensor& input, const ConvKernel& horiz, const ConvKernel& vert) {
    if (!horiz.is_strip() || horiz.kh() != 1) {
        throw std::invalid_argument("strip_pair: horiz kernel must be a depthwise 1xk strip");
    }
    if (!vert.is_strip() || vert.kw() != 1) {
        throw std::invalid_argument("strip_pair: vert kernel must be a depthwise kx1 strip");
    }
    if (horiz.kw() != vert.kh()) {
        throw std::invalid_argument("strip_pair: strip lengths differ (" +
                                    std::to_string(horiz.kw()) + " vs " +
                                    std::to_string(vert.kh()) + ")");
    }
    if (horiz.in_channels() != vert.in_channels()) {
        throw std::invalid_argument("strip_pair: channel counts differ");
    }
    return conv2d(conv2d(input, horiz), vert);
}

} // namespace pkinet
