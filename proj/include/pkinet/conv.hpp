#pragma once

#include <optional>

#include "pkinet/tensor.hpp"

namespace pkinet {

struct ConvGeom {
    int stride = 1;
    int pad_h = 0;
    int pad_w = 0;
    int dilation = 1;
    int groups = 1;
};

// 2D convolution parameters. Weights are (out_channels, in_channels/groups,
// k_h, k_w); bias, when present, is (1, out_channels, 1, 1).
struct ConvKernel {
    Tensor weights;
    std::optional<Tensor> bias;
    ConvGeom geom;

    std::int64_t out_channels() const { return weights.shape().b; }
    std::int64_t in_channels() const { return weights.shape().c * geom.groups; }
    int kh() const { return static_cast<int>(weights.shape().h); }
    int kw() const { return static_cast<int>(weights.shape().w); }

    bool is_depthwise() const {
        return geom.groups == in_channels() && geom.groups == out_channels();
    }
    bool is_strip() const {
        return is_depthwise() && ((kh() == 1) != (kw() == 1));
    }
};

enum class ConvAlgo { Direct, Im2col };

// Zero-padded cross-correlation:
//   out[b,o,y,x] = bias[o] + sum_{c in group(o)} sum_{i,j}
//       w[o,c,i,j] * in[b,c, y*s - pad_h + i*d, x*s - pad_w + j*d]
// H_out = floor((H + 2*pad_h - d*(k_h - 1) - 1) / s) + 1, same for W.
Tensor conv2d(const Tensor& input, const ConvKernel& kernel,
              ConvAlgo algo = ConvAlgo::Direct);

// Same operation without bundling weights into a ConvKernel (no copies).
Tensor conv2d_raw(const Tensor& input, const Tensor& weights, const Tensor* bias,
                  const ConvGeom& geom, ConvAlgo algo = ConvAlgo::Direct);

// 1x1 groups=1 convolution: per-pixel linear map across channels.
Tensor pointwise(const Tensor& input, const ConvKernel& kernel);

// Applies a 1 x k depthwise strip then a k x 1 depthwise strip, the pair
// approximating a k x k depthwise kernel at a fraction of the weights.
Tensor strip_pair(const Tensor& input, const ConvKernel& horiz, const ConvKernel& vert);

void validate_conv(const Shape& weights, const Tensor* bias, const ConvGeom& geom);

// Output spatial dims; throws if non-positive or the effective kernel extent
// does not fit the padded input.
std::pair<std::int64_t, std::int64_t> conv_output_dims(const Shape& in, const Shape& weights,
                                                       const ConvGeom& geom);

} // namespace pkinet
