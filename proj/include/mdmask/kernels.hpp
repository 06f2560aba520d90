#pragma once

#include <cstdint>

namespace mdmask::kernels {

// Geometry of one conv2d call. Output size must already be consistent:
// oh = (h + 2*pad - kh)/stride + 1, ow likewise.
struct Conv2dDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int oh, ow;
};

// Process-wide switch between the serial reference kernels and the OpenMP
// ones. Both produce bit-identical results: parallelism is only over
// independent output elements and each element keeps its serial
// accumulation order.
void set_parallel(bool enabled);
bool parallel_enabled();
int thread_count();

// Serial reference implementations. Kept as the oracle the parallel
// kernels are tested and benchmarked against.
namespace ref {

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d);
void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d);
void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d);

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout);
void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout);
void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout);
void dense_backward_bias(const float* dy, float* db, int n, int dout);

// Non-overlapping windows (stride == k). argmax holds flat input indices.
void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k);
void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel);

} // namespace ref

// OpenMP implementations, bit-identical to ref::.
namespace par {

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d);
void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d);
void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d);

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout);
void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout);
void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout);
void dense_backward_bias(const float* dy, float* db, int n, int dout);

void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k);
void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel);

} // namespace par

// Dispatchers used by the op layer; route to par:: or ref:: per the switch.
void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d);
void conv2d_backward_input(const float* dy, const float* w, float* dx, const Conv2dDims& d);
void conv2d_backward_weight(const float* dy, const float* x, float* dw, const Conv2dDims& d);
void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int n, int din, int dout);
void dense_backward_input(const float* dy, const float* w, float* dx, int n, int din, int dout);
void dense_backward_weight(const float* dy, const float* x, float* dw, int n, int din, int dout);
void dense_backward_bias(const float* dy, float* db, int n, int dout);
void maxpool_forward(const float* x, float* y, int32_t* argmax,
                     int n, int c, int h, int w, int k);
void maxpool_backward(const float* dy, const int32_t* argmax, float* dx, int64_t out_numel);

} // namespace mdmask::kernels
