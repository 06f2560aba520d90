#include "mdmask/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mdmask::kernels {

namespace {
#ifdef _OPENMP
std::atomic<bool> g_parallel{true};
#else
std::atomic<bool> g_parallel{false};
#endif

// Small workloads run serially even in parallel mode; the result is
// identical either way, only scheduling differs.
constexpr int64_t kMinParallelWork = 1 << 12;
} // namespace

void set_parallel(bool enabled) {
#ifndef _OPENMP
    enabled = false;
#endif
    g_parallel.store(enabled, std::memory_order_relaxed);
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace par {

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d) {
    const int64_t work = static_cast<int64_t>(d.n) * d.cout * d.oh * d.ow * d.cin * d.kh * d.kw;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.cout; ++co) {
            const float* wc = w + static_cast<int64_t>(co) * d.cin * d.kh * d.kw;
            for (int oh = 0; oh < d.oh; ++oh)
                for (int ow = 0; ow < d.ow; ++ow) {
                    float acc = 0.0f;
                    for (int ci = 0; ci < d.cin; ++ci) {
                        const float* xc = x + (static_cast<int64_t>(n) * d.cin + ci) * d.h * d.w;
                        const float* wk = wc + static_cast<int64_t>(ci) * d.kh * d.kw;
                        for (int p = 0; p < d.kh; ++p) {
                            const int ih = oh * d.stride - d.pad + p;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int q = 0; q < d.kw; ++q) {
                                const int iw = ow * d.stride - d.pad + q;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += xc[static_cast<int64_t>(ih) * d.w + iw] * wk[p * d.kw + q];
                            }
                        }
                    }
                    y[((static_cast<int64_t>(n) * d.cout + co) * d.oh + oh) * d.ow + ow] = acc;
                }
        }
}

void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d) {
    const int64_t work = static_cast<int64_t>(d.n) * d.cin * d.h * d.w * d.cout * d.kh * d.kw;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int n = 0; n < d.n; ++n)
        for (int ci = 0; ci < d.cin; ++ci)
            for (int ih = 0; ih < d.h; ++ih)
                for (int iw = 0; iw < d.w; ++iw) {
                    float acc = 0.0f;
                    for (int co = 0; co < d.cout; ++co) {
                        const float* dyc = dy + (static_cast<int64_t>(n) * d.cout + co) * d.oh * d.ow;
                        const float* wk = w + (static_cast<int64_t>(co) * d.cin + ci) * d.kh * d.kw;
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
                                acc += dyc[static_cast<int64_t>(oh) * d.ow + ow] * wk[p * d.kw + q];
                            }
                        }
                    }
                    dx[((static_cast<int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
                }
}

void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d) {
    const int64_t work = static_cast<int64_t>(d.cout) * d.cin * d.kh * d.kw * d.n * d.oh * d.ow;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int co = 0; co < d.cout; ++co)
        for (int ci = 0; ci < d.cin; ++ci)
            for (int p = 0; p < d.kh; ++p)
                for (int q = 0; q < d.kw; ++q) {
                    float acc = 0.0f;
                    for (int n = 0; n < d.n; ++n) {
                        const float* dyc = dy + (static_cast<int64_t>(n) * d.cout + co) * d.oh * d.ow;
                        const float* xc = x + (static_cast<int64_t>(n) * d.cin + ci) * d.h * d.w;
                        for (int oh = 0; oh < d.oh; ++oh) {
                            const int ih = oh * d.stride - d.pad + p;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int ow = 0; ow < d.ow; ++ow) {
                                const int iw = ow * d.stride - d.pad + q;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += dyc[static_cast<int64_t>(oh) * d.ow + ow] *
                                       xc[static_cast<int64_t>(ih) * d.w + iw];
                            }
                        }
                    }
                    dw[((static_cast<int64_t>(co) * d.cin + ci) * d.kh + p) * d.kw + q] += acc;
                }
}

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout) {
    const int64_t work = static_cast<int64_t>(n) * din * dout;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < dout; ++o) {
            const float* xi = x + static_cast<int64_t>(i) * din;
            const float* wo = w + static_cast<int64_t>(o) * din;
            float acc = b ? b[o] : 0.0f;
            for (int j = 0; j < din; ++j) acc += xi[j] * wo[j];
            y[static_cast<int64_t>(i) * dout + o] = acc;
        }
}

void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout) {
    const int64_t work = static_cast<int64_t>(n) * din * dout;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < din; ++j) {
            float acc = 0.0f;
            for (int o = 0; o < dout; ++o)
                acc += dy[static_cast<int64_t>(i) * dout + o] * w[static_cast<int64_t>(o) * din + j];
            dx[static_cast<int64_t>(i) * din + j] += acc;
        }
}

void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout) {
    const int64_t work = static_cast<int64_t>(n) * din * dout;
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
    for (int o = 0; o < dout; ++o)
        for (int j = 0; j < din; ++j) {
            float acc = 0.0f;
            for (int i = 0; i < n; ++i)
                acc += dy[static_cast<int64_t>(i) * dout + o] * x[static_cast<int64_t>(i) * din + j];
            dw[static_cast<int64_t>(o) * din + j] += acc;
        }
}

void dense_backward_bias(const float* dy, float* db, int n, int dout) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(n) * dout > kMinParallelWork)
    for (int o = 0; o < dout; ++o) {
        float acc = 0.0f;
        for (int i = 0; i < n; ++i) acc += dy[static_cast<int64_t>(i) * dout + o];
        db[o] += acc;
    }
}

void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k) {
    const int oh = h / k, ow = w / k;
    const int64_t work = static_cast<int64_t>(n) * c * h * w;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
    for (int i = 0; i < n * c; ++i) {
        const int64_t base = static_cast<int64_t>(i) * h * w;
        for (int ph = 0; ph < oh; ++ph)
            for (int pw = 0; pw < ow; ++pw) {
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
}

void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel) {
    // Windows are disjoint (stride == k), so writes never collide.
#pragma omp parallel for schedule(static) if (out_numel > kMinParallelWork)
    for (int64_t i = 0; i < out_numel; ++i) dx[argmax[i]] += dy[i];
}

} // namespace par

#define MDMASK_DISPATCH(fn, ...) \
    (parallel_enabled() ? par::fn(__VA_ARGS__) : ref::fn(__VA_ARGS__))

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d) {
    MDMASK_DISPATCH(conv2d_forward, x, w, y, d);
}
void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d) {
    MDMASK_DISPATCH(conv2d_backward_input, dy, w, dx, d);
}
void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d) {
    MDMASK_DISPATCH(conv2d_backward_weight, dy, x, dw, d);
}
void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout) {
    MDMASK_DISPATCH(dense_forward, x, w, b, y, n, din, dout);
}
void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout) {
    MDMASK_DISPATCH(dense_backward_input, dy, w, dx, n, din, dout);
}
void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout) {
    MDMASK_DISPATCH(dense_backward_weight, dy, x, dw, n, din, dout);
}
void dense_backward_bias(const float* dy, float* db, int n, int dout) {
    MDMASK_DISPATCH(dense_backward_bias, dy, db, n, dout);
}
void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k) {
    MDMASK_DISPATCH(maxpool_forward, x, y, argmax, n, c, h, w, k);
}
void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel) {
    MDMASK_DISPATCH(maxpool_backward, dy, argmax, dx, out_numel);
}

#undef MDMASK_DISPATCH

} // namespace mdmask::kernels
