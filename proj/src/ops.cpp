#include "mdmask/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mdmask/kernels.hpp"

namespace mdmask::ops {

namespace {

TensorPtr make_out(std::vector<int> shape, std::initializer_list<TensorPtr> inputs) {
    bool rg = false;
    for (const auto& t : inputs) rg = rg || (t && t->requires_grad);
    return Tensor::make(std::move(shape), rg);
}

// Gradient of `out` as seen by a backward closure; empty means no
// downstream gradient reached it.
const std::vector<float>* out_grad(const TensorPtr& out) {
    return out->grad.empty() ? nullptr : &out->grad;
}

} // namespace

TensorPtr conv2d(Graph& g, const TensorPtr& x, const TensorPtr& w, int stride, int pad) {
    if (x->ndim() != 4 || w->ndim() != 4)
        throw DimensionError("conv2d expects 4-d input and kernel, got " + shape_str(x->shape) +
                             " and " + shape_str(w->shape));
    if (x->dim(1) != w->dim(1))
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x->shape) +
                             " kernel " + shape_str(w->shape));
    if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");

    kernels::Conv2dDims d;
    d.n = x->dim(0);
    d.cin = x->dim(1);
    d.h = x->dim(2);
    d.w = x->dim(3);
    d.cout = w->dim(0);
    d.kh = w->dim(2);
    d.kw = w->dim(3);
    d.stride = stride;
    d.pad = pad;
    const int th = d.h + 2 * pad - d.kh;
    const int tw = d.w + 2 * pad - d.kw;
    if (th < 0 || tw < 0 || th % stride != 0 || tw % stride != 0)
        throw DimensionError("conv2d: output size is not integral for input " + shape_str(x->shape) +
                             " kernel " + shape_str(w->shape) + " stride " + std::to_string(stride) +
                             " pad " + std::to_string(pad));
    d.oh = th / stride + 1;
    d.ow = tw / stride + 1;

    auto y = make_out({d.n, d.cout, d.oh, d.ow}, {x, w});
    kernels::conv2d_forward(x->data.data(), w->data.data(), y->data.data(), d);

    if (y->requires_grad) {
        g.record([x, w, y, d]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (x->requires_grad) {
                x->ensure_grad();
                kernels::conv2d_backward_input(gy->data(), w->data.data(), x->grad.data(), d);
            }
            if (w->requires_grad) {
                w->ensure_grad();
                kernels::conv2d_backward_weight(gy->data(), x->data.data(), w->grad.data(), d);
            }
        });
    }
    return y;
}

TensorPtr batchnorm(Graph& g, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                    const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                    float eps, float momentum) {
    if (x->ndim() != 4) throw DimensionError("batchnorm expects 4-d input, got " + shape_str(x->shape));
    const int n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (gamma->numel() != c || beta->numel() != c || running_mean->numel() != c ||
        running_var->numel() != c)
        throw DimensionError("batchnorm parameter size != channel count " + std::to_string(c));
    const int64_t m = static_cast<int64_t>(n) * h * w;
    if (m == 0) throw DimensionError("batchnorm: zero batch");

    auto y = make_out(x->shape, {x, gamma, beta});
    const int64_t plane = static_cast<int64_t>(h) * w;
    const int64_t cstride = static_cast<int64_t>(c) * plane;

    // Per-channel mean / inv-std actually used for normalization.
    std::vector<float> mean(c), inv(c);
    auto xhat = std::make_shared<std::vector<float>>(x->data.size());

    for (int ci = 0; ci < c; ++ci) {
        float mu, var;
        if (training) {
            float s = 0.0f;
            for (int ni = 0; ni < n; ++ni) {
                const float* p = x->data.data() + ni * cstride + ci * plane;
                for (int64_t i = 0; i < plane; ++i) s += p[i];
            }
            mu = s / static_cast<float>(m);
            float sq = 0.0f;
            for (int ni = 0; ni < n; ++ni) {
                const float* p = x->data.data() + ni * cstride + ci * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const float dlt = p[i] - mu;
                    sq += dlt * dlt;
                }
            }
            var = sq / static_cast<float>(m);
            running_mean->data[ci] = (1.0f - momentum) * running_mean->data[ci] + momentum * mu;
            running_var->data[ci] = (1.0f - momentum) * running_var->data[ci] + momentum * var;
        } else {
            mu = running_mean->data[ci];
            var = running_var->data[ci];
        }
        mean[ci] = mu;
        inv[ci] = 1.0f / std::sqrt(var + eps);
        const float ga = gamma->data[ci], be = beta->data[ci];
        for (int ni = 0; ni < n; ++ni) {
            const float* p = x->data.data() + ni * cstride + ci * plane;
            float* xh = xhat->data() + ni * cstride + ci * plane;
            float* py = y->data.data() + ni * cstride + ci * plane;
            for (int64_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * inv[ci];
                py[i] = ga * xh[i] + be;
            }
        }
    }

    if (y->requires_grad) {
        g.record([x, gamma, beta, y, xhat, inv = std::move(inv), training, n, c, plane, cstride, m]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            for (int ci = 0; ci < c; ++ci) {
                float sum_dy = 0.0f, sum_dy_xh = 0.0f;
                for (int ni = 0; ni < n; ++ni) {
                    const float* pdy = gy->data() + ni * cstride + ci * plane;
                    const float* pxh = xhat->data() + ni * cstride + ci * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_dy += pdy[i];
                        sum_dy_xh += pdy[i] * pxh[i];
                    }
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad[ci] += sum_dy;
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad[ci] += sum_dy_xh;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    const float ga = gamma->data[ci];
                    const float k = ga * inv[ci];
                    const float mdy = sum_dy / static_cast<float>(m);
                    const float mdyxh = sum_dy_xh / static_cast<float>(m);
                    for (int ni = 0; ni < n; ++ni) {
                        const float* pdy = gy->data() + ni * cstride + ci * plane;
                        const float* pxh = xhat->data() + ni * cstride + ci * plane;
                        float* pdx = x->grad.data() + ni * cstride + ci * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            if (training)
                                pdx[i] += k * (pdy[i] - mdy - pxh[i] * mdyxh);
                            else
                                pdx[i] += k * pdy[i];
                        }
                    }
                }
            }
        });
    }
    return y;
}

TensorPtr dense(Graph& g, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->ndim() != 2 || w->ndim() != 2)
        throw DimensionError("dense expects 2-d input and weight, got " + shape_str(x->shape) +
                             " and " + shape_str(w->shape));
    const int n = x->dim(0), din = x->dim(1), dout = w->dim(0);
    if (w->dim(1) != din)
        throw DimensionError("dense: input width " + std::to_string(din) + " != weight width " +
                             std::to_string(w->dim(1)));
    if (b && b->numel() != dout) throw DimensionError("dense: bias size != output size");

    auto y = make_out({n, dout}, {x, w, b});
    kernels::dense_forward(x->data.data(), w->data.data(), b ? b->data.data() : nullptr,
                           y->data.data(), n, din, dout);

    if (y->requires_grad) {
        g.record([x, w, b, y, n, din, dout]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (x->requires_grad) {
                x->ensure_grad();
                kernels::dense_backward_input(gy->data(), w->data.data(), x->grad.data(), n, din, dout);
            }
            if (w->requires_grad) {
                w->ensure_grad();
                kernels::dense_backward_weight(gy->data(), x->data.data(), w->grad.data(), n, din, dout);
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                kernels::dense_backward_bias(gy->data(), b->grad.data(), n, dout);
            }
        });
    }
    return y;
}

TensorPtr relu(Graph& g, const TensorPtr& x) {
    auto y = make_out(x->shape, {x});
    for (size_t i = 0; i < x->data.size(); ++i) y->data[i] = x->data[i] > 0.0f ? x->data[i] : 0.0f;
    if (y->requires_grad) {
        g.record([x, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            x->ensure_grad();
            for (size_t i = 0; i < x->data.size(); ++i)
                if (x->data[i] > 0.0f) x->grad[i] += (*gy)[i];
        });
    }
    return y;
}

TensorPtr maxpool2d(Graph& g, const TensorPtr& x, int k) {
    if (x->ndim() != 4) throw DimensionError("maxpool2d expects 4-d input");
    const int n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (k < 1 || h % k != 0 || w % k != 0)
        throw DimensionError("maxpool2d: window " + std::to_string(k) + " must divide " +
                             shape_str(x->shape));
    auto y = make_out({n, c, h / k, w / k}, {x});
    auto argmax = std::make_shared<std::vector<int32_t>>(y->data.size());
    kernels::maxpool_forward(x->data.data(), y->data.data(), argmax->data(), n, c, h, w, k);
    if (y->requires_grad) {
        g.record([x, y, argmax]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            x->ensure_grad();
            kernels::maxpool_backward(gy->data(), argmax->data(), x->grad.data(),
                                      static_cast<int64_t>(y->numel()));
        });
    }
    return y;
}

TensorPtr softmax_cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->ndim() != 2) throw DimensionError("softmax_cross_entropy expects 2-d logits");
    const int n = logits->dim(0), kk = logits->dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch " + std::to_string(n));
    for (int lbl : labels)
        if (lbl < 0 || lbl >= kk)
            throw DimensionError("label " + std::to_string(lbl) + " out of range [0," +
                                 std::to_string(kk) + ")");

    auto probs = std::make_shared<std::vector<float>>(logits->data.size());
    auto loss = make_out({1}, {logits});
    float total = 0.0f;
    for (int i = 0; i < n; ++i) {
        const float* row = logits->data.data() + static_cast<int64_t>(i) * kk;
        float* prow = probs->data() + static_cast<int64_t>(i) * kk;
        float mx = row[0];
        for (int j = 1; j < kk; ++j) mx = std::max(mx, row[j]);
        float denom = 0.0f;
        for (int j = 0; j < kk; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < kk; ++j) prow[j] /= denom;
        total += std::log(denom) - (row[labels[i]] - mx);
    }
    loss->data[0] = total / static_cast<float>(n);

    if (loss->requires_grad) {
        g.record([logits, loss, probs, labels, n, kk]() {
            const auto* gy = out_grad(loss);
            if (!gy) return;
            logits->ensure_grad();
            const float scale = (*gy)[0] / static_cast<float>(n);
            for (int i = 0; i < n; ++i) {
                const float* prow = probs->data() + static_cast<int64_t>(i) * kk;
                float* grow = logits->grad.data() + static_cast<int64_t>(i) * kk;
                for (int j = 0; j < kk; ++j)
                    grow[j] += scale * (prow[j] - (j == labels[i] ? 1.0f : 0.0f));
            }
        });
    }
    return loss;
}

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw DimensionError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto y = make_out(a->shape, {a, b});
    for (size_t i = 0; i < y->data.size(); ++i) y->data[i] = a->data[i] + b->data[i];
    if (y->requires_grad) {
        g.record([a, b, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += (*gy)[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += (*gy)[i];
            }
        });
    }
    return y;
}

TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw DimensionError("mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto y = make_out(a->shape, {a, b});
    for (size_t i = 0; i < y->data.size(); ++i) y->data[i] = a->data[i] * b->data[i];
    if (y->requires_grad) {
        g.record([a, b, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += (*gy)[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += (*gy)[i] * a->data[i];
            }
        });
    }
    return y;
}

TensorPtr masked(Graph& g, const TensorPtr& w, const TensorPtr& m) {
    if (w->shape != m->shape)
        throw DimensionError("masked: shape mismatch " + shape_str(w->shape) + " vs " +
                             shape_str(m->shape));
    auto y = make_out(w->shape, {w, m});
    for (size_t i = 0; i < y->data.size(); ++i)
        y->data[i] = m->data[i] != 0.0f ? w->data[i] : 0.0f;
    if (y->requires_grad) {
        g.record([w, m, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (w->requires_grad) {
                w->ensure_grad();
                for (size_t i = 0; i < w->grad.size(); ++i)
                    if (m->data[i] != 0.0f) w->grad[i] += (*gy)[i];
            }
            if (m->requires_grad) {
                m->ensure_grad();
                for (size_t i = 0; i < m->grad.size(); ++i) m->grad[i] += (*gy)[i] * w->data[i];
            }
        });
    }
    return y;
}

namespace {

void check_broadcast_arity(const TensorPtr& k, const std::vector<int>& shape) {
    const int64_t kn = k->numel();
    if (kn != 1 && (shape.empty() || kn != shape[0]))
        throw DimensionError("broadcast: k numel " + std::to_string(kn) + " incompatible with " +
                             shape_str(shape));
}

} // namespace

TensorPtr broadcast_scale(Graph& g, const TensorPtr& k, const TensorPtr& x) {
    check_broadcast_arity(k, x->shape);
    const bool per_channel = k->numel() != 1;
    const int64_t rows = per_channel ? x->dim(0) : 1;
    const int64_t inner = x->numel() / rows;

    auto y = make_out(x->shape, {k, x});
    for (int64_t r = 0; r < rows; ++r) {
        const float kv = k->data[per_channel ? static_cast<size_t>(r) : 0];
        for (int64_t i = 0; i < inner; ++i) y->data[r * inner + i] = kv * x->data[r * inner + i];
    }
    if (y->requires_grad) {
        g.record([k, x, y, per_channel, rows, inner]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            if (k->requires_grad) {
                k->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    float acc = 0.0f;
                    for (int64_t i = 0; i < inner; ++i)
                        acc += (*gy)[r * inner + i] * x->data[r * inner + i];
                    k->grad[per_channel ? static_cast<size_t>(r) : 0] += acc;
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const float kv = k->data[per_channel ? static_cast<size_t>(r) : 0];
                    for (int64_t i = 0; i < inner; ++i) x->grad[r * inner + i] += kv * (*gy)[r * inner + i];
                }
            }
        });
    }
    return y;
}

TensorPtr broadcast_fill(Graph& g, const TensorPtr& k, const std::vector<int>& shape) {
    check_broadcast_arity(k, shape);
    const bool per_channel = k->numel() != 1;
    auto y = make_out(shape, {k});
    const int64_t rows = per_channel ? shape[0] : 1;
    const int64_t inner = y->numel() / rows;
    for (int64_t r = 0; r < rows; ++r) {
        const float kv = k->data[per_channel ? static_cast<size_t>(r) : 0];
        for (int64_t i = 0; i < inner; ++i) y->data[r * inner + i] = kv;
    }
    if (y->requires_grad) {
        g.record([k, y, per_channel, rows, inner]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            k->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                float acc = 0.0f;
                for (int64_t i = 0; i < inner; ++i) acc += (*gy)[r * inner + i];
                k->grad[per_channel ? static_cast<size_t>(r) : 0] += acc;
            }
        });
    }
    return y;
}

TensorPtr custom_grad(Graph& g, const TensorPtr& x, const std::function<float(float)>& forward_fn,
                      const std::function<float(float)>& backward_scale_fn) {
    auto y = make_out(x->shape, {x});
    for (size_t i = 0; i < x->data.size(); ++i) y->data[i] = forward_fn(x->data[i]);
    if (y->requires_grad) {
        g.record([x, y, backward_scale_fn]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i)
                x->grad[i] += (*gy)[i] * backward_scale_fn(x->data[i]);
        });
    }
    return y;
}

TensorPtr sum(Graph& g, const TensorPtr& x) {
    auto y = make_out({1}, {x});
    float acc = 0.0f;
    for (float v : x->data) acc += v;
    y->data[0] = acc;
    if (y->requires_grad) {
        g.record([x, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += (*gy)[0];
        });
    }
    return y;
}

TensorPtr reshape(Graph& g, const TensorPtr& x, std::vector<int> shape) {
    if (shape_numel(shape) != x->numel())
        throw DimensionError("reshape: numel mismatch " + shape_str(x->shape) + " -> " +
                             shape_str(shape));
    auto y = make_out(std::move(shape), {x});
    y->data = x->data;
    if (y->requires_grad) {
        g.record([x, y]() {
            const auto* gy = out_grad(y);
            if (!gy) return;
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += (*gy)[i];
        });
    }
    return y;
}

} // namespace mdmask::ops
