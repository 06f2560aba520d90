#include "mdmask/kernels.hpp"

namespace mdmask::kernels::ref {

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d) {
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.cout; ++co)
            for (int oh = 0; oh < d.oh; ++oh)
                for (int ow = 0; ow < d.ow; ++ow) {
                    float acc = 0.0f;
                    for (int ci = 0; ci < d.cin; ++ci)
                        for (int p = 0; p < d.kh; ++p) {
                            const int ih = oh * d.stride - d.pad + p;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int q = 0; q < d.kw; ++q) {
                                const int iw = ow * d.stride - d.pad + q;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += x[((static_cast<int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] *
                                       w[((static_cast<int64_t>(co) * d.cin + ci) * d.kh + p) * d.kw + q];
                            }
                        }
                    y[((static_cast<int64_t>(n) * d.cout + co) * d.oh + oh) * d.ow + ow] = acc;
                }
}

void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d) {
    // Gather form: each dx element sums the output positions it fed.
    for (int n = 0; n < d.n; ++n)
        for (int ci = 0; ci < d.cin; ++ci)
            for (int ih = 0; ih < d.h; ++ih)
                for (int iw = 0; iw < d.w; ++iw) {
                    float acc = 0.0f;
                    for (int co = 0; co < d.cout; ++co)
                        for (int p = 0; p < d.kh; ++p) {
                            const int th = ih + d.pad - p;
                            if (th < 0 || th % d.stride != 0) continue;
                            const int oh = th / d.stride;
                            if (oh >= d.oh) continue;
                            for (int q = 0; q < d.kw; ++q) {
                                const int tw = iw + d.pad - q;
                                if (tw < 0 || tw % d.stride != 0) continue;
                                const int ow = tw / d.stride;
                                if (ow >= d.ow) continue;
                                acc += dy[((static_cast<int64_t>(n) * d.cout + co) * d.oh + oh) * d.ow + ow] *
                                       w[((static_cast<int64_t>(co) * d.cin + ci) * d.kh + p) * d.kw + q];
                            }
                        }
                    dx[((static_cast<int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
                }
}

void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d) {
    for (int co = 0; co < d.cout; ++co)
        for (int ci = 0; ci < d.cin; ++ci)
            for (int p = 0; p < d.kh; ++p)
                for (int q = 0; q < d.kw; ++q) {
                    float acc = 0.0f;
                    for (int n = 0; n < d.n; ++n)
                        for (int oh = 0; oh < d.oh; ++oh) {
                            const int ih = oh * d.stride - d.pad + p;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int ow = 0; ow < d.ow; ++ow) {
                                const int iw = ow * d.stride - d.pad + q;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += dy[((static_cast<int64_t>(n) * d.cout + co) * d.oh + oh) * d.ow + ow] *
                                       x[((static_cast<int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw];
                            }
                        }
                    dw[((static_cast<int64_t>(co) * d.cin + ci) * d.kh + p) * d.kw + q] += acc;
                }
}

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout) {
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < dout; ++o) {
            float acc = b ? b[o] : 0.0f;
            for (int j = 0; j < din; ++j)
                acc += x[static_cast<int64_t>(i) * din + j] * w[static_cast<int64_t>(o) * din + j];
            y[static_cast<int64_t>(i) * dout + o] = acc;
        }
}

void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < din; ++j) {
            float acc = 0.0f;
            for (int o = 0; o < dout; ++o)
                acc += dy[static_cast<int64_t>(i) * dout + o] * w[static_cast<int64_t>(o) * din + j];
            dx[static_cast<int64_t>(i) * din + j] += acc;
        }
}

void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout) {
    for (int o = 0; o < dout; ++o)
        for (int j = 0; j < din; ++j) {
            float acc = 0.0f;
            for (int i = 0; i < n; ++i)
                acc += dy[static_cast<int64_t>(i) * dout + o] * x[static_cast<int64_t>(i) * din + j];
            dw[static_cast<int64_t>(o) * din + j] += acc;
        }
}

void dense_backward_bias(const float* dy, float* db, int n, int dout) {
    for (int o = 0; o < dout; ++o) {
        float acc = 0.0f;
        for (int i = 0; i < n; ++i) acc += dy[static_cast<int64_t>(i) * dout + o];
        db[o] += acc;
    }
}

void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k) {
    const int oh = h / k, ow = w / k;
    for (int i = 0; i < n * c; ++i)
        for (int ph = 0; ph < oh; ++ph)
            for (int pw = 0; pw < ow; ++pw) {
                const int64_t base = static_cast<int64_t>(i) * h * w;
                float best = x[base + static_cast<int64_t>(ph * k) * w + pw * k];
                int64_t best_idx = base + static_cast<int64_t>(ph * k) * w + pw * k;
                for (int dh = 0; dh < k; ++dh)
                    for (int dw_ = 0; dw_ < k; ++dw_) {
                        const int64_t idx = base + static_cast<int64_t>(ph * k + dh) * w + (pw * k + dw_);
                        if (x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                const int64_t out = (static_cast<int64_t>(i) * oh + ph) * ow + pw;
                y[out] = best;
                argmax[out] = static_cast<int32_t>(best_idx);
            }
}

void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel) {
    for (int64_t i = 0; i < out_numel; ++i) dx[argmax[i]] += dy[i];
}

} // namespace mdmask::kernels::ref
