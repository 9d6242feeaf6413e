#pragma once

#include "rtgs/tensor.hpp"

namespace rtgs {

// ---------------------------------------------------------------------------
// 2D convolution over a single (C, H, W) feature map. Zero padding, stride 1
// or 2. Kernel layout (Cout, Cin, kh, kw). Forward parallelizes over output
// channels; every output element is owned by one thread, so results do not
// depend on the thread count.

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, size_t stride,
                     size_t pad) {
    if (x.shape().size() != 3 || k.shape().size() != 4)
        fail("conv2d: need input [CxHxW] and kernel [OxCxKhxKw], got ", shape_str(x.shape()),
             " and ", shape_str(k.shape()));
    if (stride != 1 && stride != 2) fail("conv2d: stride must be 1 or 2, got ", stride);
    size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != ci)
        fail("conv2d: channel mismatch ", shape_str(x.shape()), " vs ", shape_str(k.shape()));
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        fail("conv2d: input ", shape_str(x.shape()), " smaller than kernel ",
             shape_str(k.shape()), " at pad ", pad);
    if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != co))
        fail("conv2d: bias shape ", shape_str(bias.shape()), " does not match ", co, " outputs");

    size_t ho = (h + 2 * pad - kh) / stride + 1;
    size_t wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(co * ho * wo, 0.0);

    const double* xd = x.data().data();
    const double* kd = k.data().data();
    parallel_for(co, [&](size_t lo, size_t hi) {
        for (size_t oc = lo; oc < hi; ++oc) {
            double b = bias.defined() ? bias.data()[oc] : 0.0;
            for (size_t oy = 0; oy < ho; ++oy)
                for (size_t ox = 0; ox < wo; ++ox) {
                    double acc = b;
                    for (size_t ic = 0; ic < ci; ++ic)
                        for (size_t ky = 0; ky < kh; ++ky) {
                            long iy = long(oy * stride + ky) - long(pad);
                            if (iy < 0 || iy >= long(h)) continue;
                            const double* xrow = xd + (ic * h + iy) * w;
                            const double* krow = kd + ((oc * ci + ic) * kh + ky) * kw;
                            for (size_t kx = 0; kx < kw; ++kx) {
                                long ix = long(ox * stride + kx) - long(pad);
                                if (ix < 0 || ix >= long(w)) continue;
                                acc += xrow[ix] * krow[kx];
                            }
                        }
                    out[(oc * ho + oy) * wo + ox] = acc;
                }
        }
    });

    auto xn = x.node(), kn = k.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> parents = {x, k};
    if (bias.defined()) parents.push_back(bias);
    return make_op(
        {co, ho, wo}, std::move(out), parents,
        [xn, kn, bn, ci, h, w, co, kh, kw, ho, wo, stride, pad](TensorNode& n) {
            const double* g = n.grad.data();
            if (xn->requires_grad) {
                double* gx = xn->grad.data();
                const double* kd = kn->value.data();
                parallel_for(ci, [&](size_t lo, size_t hi) {
                    for (size_t ic = lo; ic < hi; ++ic)
                        for (size_t oc = 0; oc < co; ++oc)
                            for (size_t oy = 0; oy < ho; ++oy)
                                for (size_t ox = 0; ox < wo; ++ox) {
                                    double gv = g[(oc * ho + oy) * wo + ox];
                                    if (gv == 0) continue;
                                    for (size_t ky = 0; ky < kh; ++ky) {
                                        long iy = long(oy * stride + ky) - long(pad);
                                        if (iy < 0 || iy >= long(h)) continue;
                                        for (size_t kx = 0; kx < kw; ++kx) {
                                            long ix = long(ox * stride + kx) - long(pad);
                                            if (ix < 0 || ix >= long(w)) continue;
                                            gx[(ic * h + iy) * w + ix] +=
                                                gv * kd[((oc * ci + ic) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                });
            }
            if (kn->requires_grad) {
                double* gk = kn->grad.data();
                const double* xd = xn->value.data();
                parallel_for(co, [&](size_t lo, size_t hi) {
                    for (size_t oc = lo; oc < hi; ++oc)
                        for (size_t oy = 0; oy < ho; ++oy)
                            for (size_t ox = 0; ox < wo; ++ox) {
                                double gv = g[(oc * ho + oy) * wo + ox];
                                if (gv == 0) continue;
                                for (size_t ic = 0; ic < ci; ++ic)
                                    for (size_t ky = 0; ky < kh; ++ky) {
                                        long iy = long(oy * stride + ky) - long(pad);
                                        if (iy < 0 || iy >= long(h)) continue;
                                        for (size_t kx = 0; kx < kw; ++kx) {
                                            long ix = long(ox * stride + kx) - long(pad);
                                            if (ix < 0 || ix >= long(w)) continue;
                                            gk[((oc * ci + ic) * kh + ky) * kw + kx] +=
                                                gv * xd[(ic * h + iy) * w + ix];
                                        }
                                    }
                            }
                });
            }
            if (bn && bn->requires_grad) {
                for (size_t oc = 0; oc < co; ++oc) {
                    double s = 0;
                    for (size_t i = 0; i < ho * wo; ++i) s += g[oc * ho * wo + i];
                    bn->grad[oc] += s;
                }
            }
        });
}

inline Tensor conv2d(const Tensor& x, const Tensor& k, size_t stride, size_t pad) {
    return conv2d(x, k, Tensor{}, stride, pad);
}

// ---------------------------------------------------------------------------
// Bilinear x2 upsampling of a (C, H, W) map. Output sample o reads input
// position (o + 0.5)/2 - 0.5, clamped at the borders.

inline Tensor upsample2x(const Tensor& x) {
    if (x.shape().size() != 3) fail("upsample2x expects [CxHxW], got ", shape_str(x.shape()));
    size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    size_t ho = h * 2, wo = w * 2;

    // Per-axis taps: index0, index1, weight of index1.
    auto taps = [](size_t o, size_t n, size_t& i0, size_t& i1, double& f) {
        double src = (double(o) + 0.5) / 2.0 - 0.5;
        double fl = std::floor(src);
        f = src - fl;
        long a = long(fl);
        i0 = size_t(std::clamp(a, 0L, long(n) - 1));
        i1 = size_t(std::clamp(a + 1, 0L, long(n) - 1));
    };

    std::vector<double> out(c * ho * wo);
    for (size_t ch = 0; ch < c; ++ch) {
        const double* in = x.data().data() + ch * h * w;
        double* o = out.data() + ch * ho * wo;
        for (size_t oy = 0; oy < ho; ++oy) {
            size_t y0, y1;
            double fy;
            taps(oy, h, y0, y1, fy);
            for (size_t ox = 0; ox < wo; ++ox) {
                size_t x0, x1;
                double fx;
                taps(ox, w, x0, x1, fx);
                o[oy * wo + ox] = (1 - fy) * ((1 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1]) +
                                  fy * ((1 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1]);
            }
        }
    }
    auto xn = x.node();
    return make_op({c, ho, wo}, std::move(out), {x}, [xn, c, h, w, ho, wo, taps](TensorNode& n) {
        for (size_t ch = 0; ch < c; ++ch) {
            double* gx = xn->grad.data() + ch * h * w;
            const double* g = n.grad.data() + ch * ho * wo;
            for (size_t oy = 0; oy < ho; ++oy) {
                size_t y0, y1;
                double fy;
                taps(oy, h, y0, y1, fy);
                for (size_t ox = 0; ox < wo; ++ox) {
                    size_t x0, x1;
                    double fx;
                    taps(ox, w, x0, x1, fx);
                    double gv = g[oy * wo + ox];
                    gx[y0 * w + x0] += gv * (1 - fy) * (1 - fx);
                    gx[y0 * w + x1] += gv * (1 - fy) * fx;
                    gx[y1 * w + x0] += gv * fy * (1 - fx);
                    gx[y1 * w + x1] += gv * fy * fx;
                }
            }
        }
    });
}

}  // namespace rtgs
