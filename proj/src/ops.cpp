#include "fosp/ops.hpp"

#include "fosp/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace fosp::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                              b.shape().str());
    }
}

template <class F>
Tensor unary(const Tensor& x, F&& forward, auto&& derivative) {
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
    Tensor result = Tensor::make_result(x.shape(), std::move(out), {x});
    detail::Node* o = result.node();
    detail::Node* a = x.node();
    result.set_backward([o, a, derivative] {
        if (!a->requires_grad) return;
        auto& g = a->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * derivative(a->value[i], o->value[i]);
    });
    return result;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// Unfold one sample (C,H,W) into a (C*k*k, Ho*Wo) matrix.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* col) {
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* x) {
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        double* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Per-axis interpolation taps for half-pixel-centre bilinear resampling.
struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> w_hi;
};

Taps make_taps(int in, int out) {
    Taps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.w_hi.resize(out);
    const double ratio = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        t.lo[i] = lo;
        t.hi[i] = hi;
        t.w_hi[i] = src - lo;
    }
    return t;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    Tensor r = Tensor::make_result(a.shape(), std::move(out), {a, b});
    detail::Node* o = r.node();
    detail::Node* pa = a.node();
    detail::Node* pb = b.node();
    r.set_backward([o, pa, pb] {
        for (detail::Node* p : {pa, pb}) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
    });
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    Tensor r = Tensor::make_result(a.shape(), std::move(out), {a, b});
    detail::Node* o = r.node();
    detail::Node* pa = a.node();
    detail::Node* pb = b.node();
    r.set_backward([o, pa, pb] {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
        }
    });
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    Tensor r = Tensor::make_result(a.shape(), std::move(out), {a, b});
    detail::Node* o = r.node();
    detail::Node* pa = a.node();
    detail::Node* pb = b.node();
    r.set_backward([o, pa, pb] {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * pa->value[i];
        }
    });
    return r;
}

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double s) { return s * (1.0 - s); });
}

Tensor gelu(const Tensor& x) {
    return unary(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); },
        [](double v, double) {
            const double inner = kGeluC * (v + 0.044715 * v * v * v);
            const double t = std::tanh(inner);
            const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
        });
}

namespace {
Tensor channel_broadcast(const Tensor& x, const Tensor& q, bool keep_identity, const char* op) {
    const Shape& s = x.shape();
    const Shape& qs = q.shape();
    if (qs.c != 1 || qs.n != s.n || qs.h != s.h || qs.w != s.w) {
        throw ValidationError(std::string(op) + ": spatial mismatch, feature " + s.str() +
                              " vs map " + qs.str());
    }
    const std::size_t plane = s.plane();
    auto xv = x.data();
    auto qv = q.data();
    std::vector<double> out(xv.size());
    const double identity = keep_identity ? 1.0 : 0.0;
    for (int n = 0; n < s.n; ++n) {
        const double* qp = qv.data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) out[base + i] = xv[base + i] * (qp[i] + identity);
        }
    }
    Tensor r = Tensor::make_result(s, std::move(out), {x, q});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    detail::Node* pq = q.node();
    r.set_backward([o, px, pq, s, plane, identity] {
        if (px->requires_grad) {
            auto& g = px->grad_buffer();
            for (int n = 0; n < s.n; ++n) {
                const double* qp = pq->value.data() + n * plane;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) g[base + i] += o->grad[base + i] * (qp[i] + identity);
                }
            }
        }
        if (pq->requires_grad) {
            auto& g = pq->grad_buffer();
            for (int n = 0; n < s.n; ++n) {
                double* gp = g.data() + n * plane;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gp[i] += o->grad[base + i] * px->value[base + i];
                }
            }
        }
    });
    return r;
}
}  // namespace

Tensor query_guide(const Tensor& x, const Tensor& q) { return channel_broadcast(x, q, true, "query_guide"); }

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& q) {
    return channel_broadcast(x, q, false, "mul_channel_broadcast");
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Shape& s = x.shape();
    if (gamma.numel() != static_cast<std::size_t>(s.c) || beta.numel() != static_cast<std::size_t>(s.c)) {
        throw ValidationError("layer_norm_channels: affine size does not match " + s.str());
    }
    const std::size_t plane = s.plane();
    const std::size_t positions = static_cast<std::size_t>(s.n) * plane;
    std::vector<double> xhat(x.numel()), rstd(positions), out(x.numel());
    auto xv = x.data();
    auto g = gamma.data();
    auto b = beta.data();
    for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double mu = 0.0;
            for (int c = 0; c < s.c; ++c) mu += xv[base + c * plane + p];
            mu /= s.c;
            double var = 0.0;
            for (int c = 0; c < s.c; ++c) {
                const double d = xv[base + c * plane + p] - mu;
                var += d * d;
            }
            const double r = 1.0 / std::sqrt(var / s.c + eps);
            rstd[n * plane + p] = r;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = base + c * plane + p;
                xhat[i] = (xv[i] - mu) * r;
                out[i] = xhat[i] * g[c] + b[c];
            }
        }
    }
    Tensor r = Tensor::make_result(s, std::move(out), {x, gamma, beta});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    detail::Node* pg = gamma.node();
    detail::Node* pb = beta.node();
    r.set_backward([o, px, pg, pb, s, plane, xhat = std::move(xhat), rstd = std::move(rstd)] {
        const auto& gv = pg->value;
        for (int n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    const double d = o->grad[i] * gv[c];
                    mean_d += d;
                    mean_dx += d * xhat[i];
                }
                mean_d /= s.c;
                mean_dx /= s.c;
                const double r = rstd[n * plane + p];
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    if (px->requires_grad) {
                        px->grad_buffer()[i] += r * (o->grad[i] * gv[c] - mean_d - xhat[i] * mean_dx);
                    }
                    if (pg->requires_grad) pg->grad_buffer()[c] += o->grad[i] * xhat[i];
                    if (pb->requires_grad) pb->grad_buffer()[c] += o->grad[i];
                }
            }
        }
    });
    return r;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    const Shape& s = x.shape();
    const Shape& ws = weight.shape();
    if (ws.c != s.c || ws.h != ws.w) {
        throw ValidationError("conv2d: input " + s.str() + " incompatible with weight " + ws.str());
    }
    if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
        throw ValidationError("conv2d: bias size does not match output channels");
    }
    const int k = ws.h;
    const int ho = (s.h + 2 * pad - k) / stride + 1;
    const int wo = (s.w + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ValidationError("conv2d: input " + s.str() + " too small for kernel");
    const int cout = ws.n;
    const int rows = s.c * k * k;
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    const bool pointwise = (k == 1 && stride == 1 && pad == 0);

    const Shape out_shape{s.n, cout, ho, wo};
    std::vector<double> out(out_shape.numel());
    std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
    ConstMatrixMap wmat(weight.data().data(), cout, rows);
    for (int n = 0; n < s.n; ++n) {
        const double* xn = x.data().data() + static_cast<std::size_t>(n) * s.c * s.plane();
        const double* colp = xn;
        if (!pointwise) {
            im2col(xn, s.c, s.h, s.w, k, stride, pad, ho, wo, col.data());
            colp = col.data();
        }
        MatrixMap omat(out.data() + static_cast<std::size_t>(n) * cout * cols, cout, cols);
        omat.noalias() = wmat * ConstMatrixMap(colp, rows, cols);
        if (bias.defined()) {
            auto b = bias.data();
            for (int co = 0; co < cout; ++co) omat.row(co).array() += b[co];
        }
    }

    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    Tensor r = Tensor::make_result(out_shape, std::move(out), parents);
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    detail::Node* pw = weight.node();
    detail::Node* pb = bias.defined() ? bias.node() : nullptr;
    r.set_backward([=] {
        std::vector<double> colbuf(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
        ConstMatrixMap wm(pw->value.data(), cout, rows);
        for (int n = 0; n < s.n; ++n) {
            ConstMatrixMap gout(o->grad.data() + static_cast<std::size_t>(n) * cout * cols, cout, cols);
            const double* xn = px->value.data() + static_cast<std::size_t>(n) * s.c * s.plane();
            if (pw->requires_grad) {
                const double* colp = xn;
                if (!pointwise) {
                    im2col(xn, s.c, s.h, s.w, k, stride, pad, ho, wo, colbuf.data());
                    colp = colbuf.data();
                }
                MatrixMap gw(pw->grad_buffer().data(), cout, rows);
                gw.noalias() += gout * ConstMatrixMap(colp, rows, cols).transpose();
            }
            if (pb && pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                for (int co = 0; co < cout; ++co) gb[co] += gout.row(co).sum();
            }
            if (px->requires_grad) {
                double* gx = px->grad_buffer().data() + static_cast<std::size_t>(n) * s.c * s.plane();
                if (pointwise) {
                    MatrixMap gxm(gx, rows, cols);
                    gxm.noalias() += wm.transpose() * gout;
                } else {
                    MatrixMap gcol(colbuf.data(), rows, cols);
                    gcol.noalias() = wm.transpose() * gout;
                    col2im(colbuf.data(), s.c, s.h, s.w, k, stride, pad, ho, wo, gx);
                }
            }
        }
    });
    return r;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (out_h <= 0 || out_w <= 0) throw ValidationError("resize_bilinear: non-positive target size");
    if (s.h == out_h && s.w == out_w) {
        return scale(x, 1.0);
    }
    const Taps ty = make_taps(s.h, out_h);
    const Taps tx = make_taps(s.w, out_w);
    const Shape out_shape{s.n, s.c, out_h, out_w};
    std::vector<double> out(out_shape.numel());
    auto xv = x.data();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * s.plane();
        double* dst = out.data() + p * out_shape.plane();
        for (int oy = 0; oy < out_h; ++oy) {
            const double wy = ty.w_hi[oy];
            const double* r0 = src + static_cast<std::size_t>(ty.lo[oy]) * s.w;
            const double* r1 = src + static_cast<std::size_t>(ty.hi[oy]) * s.w;
            for (int ox = 0; ox < out_w; ++ox) {
                const double wx = tx.w_hi[ox];
                const int x0 = tx.lo[ox];
                const int x1 = tx.hi[ox];
                const double top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
                const double bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
                dst[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor r = Tensor::make_result(out_shape, std::move(out), {x});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    r.set_backward([o, px, s, out_shape, ty, tx, planes] {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            double* gsrc = g.data() + p * s.plane();
            const double* gdst = o->grad.data() + p * out_shape.plane();
            for (int oy = 0; oy < out_shape.h; ++oy) {
                const double wy = ty.w_hi[oy];
                double* r0 = gsrc + static_cast<std::size_t>(ty.lo[oy]) * s.w;
                double* r1 = gsrc + static_cast<std::size_t>(ty.hi[oy]) * s.w;
                for (int ox = 0; ox < out_shape.w; ++ox) {
                    const double gv = gdst[static_cast<std::size_t>(oy) * out_shape.w + ox];
                    const double wx = tx.w_hi[ox];
                    const int x0 = tx.lo[ox];
                    const int x1 = tx.hi[ox];
                    r0[x0] += gv * (1.0 - wy) * (1.0 - wx);
                    r0[x1] += gv * (1.0 - wy) * wx;
                    r1[x0] += gv * wy * (1.0 - wx);
                    r1[x1] += gv * wy * wx;
                }
            }
        }
    });
    return r;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    const Shape& s = x.shape();
    const Shape out_shape{s.n, s.c, s.h * factor, s.w * factor};
    std::vector<double> out(out_shape.numel());
    auto xv = x.data();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * s.plane();
        double* dst = out.data() + p * out_shape.plane();
        for (int y = 0; y < out_shape.h; ++y)
            for (int xx = 0; xx < out_shape.w; ++xx)
                dst[static_cast<std::size_t>(y) * out_shape.w + xx] = src[(y / factor) * s.w + xx / factor];
    }
    Tensor r = Tensor::make_result(out_shape, std::move(out), {x});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    r.set_backward([o, px, s, out_shape, factor, planes] {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            double* gsrc = g.data() + p * s.plane();
            const double* gdst = o->grad.data() + p * out_shape.plane();
            for (int y = 0; y < out_shape.h; ++y)
                for (int xx = 0; xx < out_shape.w; ++xx)
                    gsrc[(y / factor) * s.w + xx / factor] += gdst[static_cast<std::size_t>(y) * out_shape.w + xx];
        }
    });
    return r;
}

Tensor avg_pool(const Tensor& x, int kernel) {
    const Shape& s = x.shape();
    if (s.h % kernel != 0 || s.w % kernel != 0) {
        throw ValidationError("avg_pool: " + s.str() + " not divisible by " + std::to_string(kernel));
    }
    const Shape out_shape{s.n, s.c, s.h / kernel, s.w / kernel};
    std::vector<double> out(out_shape.numel(), 0.0);
    const double inv = 1.0 / (kernel * kernel);
    auto xv = x.data();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * s.plane();
        double* dst = out.data() + p * out_shape.plane();
        for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx)
                dst[(y / kernel) * out_shape.w + xx / kernel] += src[static_cast<std::size_t>(y) * s.w + xx] * inv;
    }
    Tensor r = Tensor::make_result(out_shape, std::move(out), {x});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    r.set_backward([o, px, s, out_shape, kernel, inv, planes] {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            double* gsrc = g.data() + p * s.plane();
            const double* gdst = o->grad.data() + p * out_shape.plane();
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx)
                    gsrc[static_cast<std::size_t>(y) * s.w + xx] += gdst[(y / kernel) * out_shape.w + xx / kernel] * inv;
        }
    });
    return r;
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw ValidationError("concat_channels: no inputs");
    Shape out_shape = parts[0].shape();
    out_shape.c = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (s.n != out_shape.n || s.h != out_shape.h || s.w != out_shape.w) {
            throw ValidationError("concat_channels: spatial mismatch " + parts[0].shape().str() + " vs " + s.str());
        }
        out_shape.c += s.c;
    }
    const std::size_t plane = out_shape.plane();
    std::vector<double> out(out_shape.numel());
    for (int n = 0; n < out_shape.n; ++n) {
        std::size_t offset = static_cast<std::size_t>(n) * out_shape.c * plane;
        for (const Tensor& t : parts) {
            const std::size_t len = static_cast<std::size_t>(t.shape().c) * plane;
            auto src = t.data().subspan(static_cast<std::size_t>(n) * len, len);
            std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += len;
        }
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    Tensor r = Tensor::make_result(out_shape, std::move(out), parents);
    detail::Node* o = r.node();
    std::vector<detail::Node*> inputs;
    for (const Tensor& t : parts) inputs.push_back(t.node());
    r.set_backward([o, inputs, out_shape, plane] {
        for (int n = 0; n < out_shape.n; ++n) {
            std::size_t offset = static_cast<std::size_t>(n) * out_shape.c * plane;
            for (detail::Node* in : inputs) {
                const std::size_t len = static_cast<std::size_t>(in->shape.c) * plane;
                if (in->requires_grad) {
                    double* g = in->grad_buffer().data() + static_cast<std::size_t>(n) * len;
                    for (std::size_t i = 0; i < len; ++i) g[i] += o->grad[offset + i];
                }
                offset += len;
            }
        }
    });
    return r;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    if (ks != v.shape() || ks.n != qs.n || ks.c != qs.c) {
        throw ValidationError("attention: incompatible q " + qs.str() + ", k " + ks.str() + ", v " + v.shape().str());
    }
    const int c = qs.c;
    const auto pq = static_cast<Eigen::Index>(qs.plane());
    const auto pk = static_cast<Eigen::Index>(ks.plane());
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    std::vector<double> out(qs.numel());
    std::vector<double> weights(static_cast<std::size_t>(qs.n) * pq * pk);
    for (int n = 0; n < qs.n; ++n) {
        ConstMatrixMap qm(q.data().data() + static_cast<std::size_t>(n) * c * pq, c, pq);
        ConstMatrixMap km(k.data().data() + static_cast<std::size_t>(n) * c * pk, c, pk);
        ConstMatrixMap vm(v.data().data() + static_cast<std::size_t>(n) * c * pk, c, pk);
        MatrixMap a(weights.data() + static_cast<std::size_t>(n) * pq * pk, pq, pk);
        a.noalias() = s * (qm.transpose() * km);
        for (Eigen::Index i = 0; i < pq; ++i) {
            const double mx = a.row(i).maxCoeff();
            a.row(i) = (a.row(i).array() - mx).exp();
            a.row(i) /= a.row(i).sum();
        }
        MatrixMap om(out.data() + static_cast<std::size_t>(n) * c * pq, c, pq);
        om.noalias() = vm * a.transpose();
    }
    Tensor r = Tensor::make_result(qs, std::move(out), {q, k, v});
    detail::Node* o = r.node();
    detail::Node* nq = q.node();
    detail::Node* nk = k.node();
    detail::Node* nv = v.node();
    r.set_backward([o, nq, nk, nv, weights = std::move(weights), n_batch = qs.n, c, pq, pk, s] {
        RowMatrix da(pq, pk);
        for (int n = 0; n < n_batch; ++n) {
            const std::size_t qoff = static_cast<std::size_t>(n) * c * pq;
            const std::size_t koff = static_cast<std::size_t>(n) * c * pk;
            ConstMatrixMap a(weights.data() + static_cast<std::size_t>(n) * pq * pk, pq, pk);
            ConstMatrixMap gout(o->grad.data() + qoff, c, pq);
            ConstMatrixMap vm(nv->value.data() + koff, c, pk);
            if (nv->requires_grad) {
                MatrixMap gv(nv->grad_buffer().data() + koff, c, pk);
                gv.noalias() += gout * a;
            }
            da.noalias() = gout.transpose() * vm;
            for (Eigen::Index i = 0; i < pq; ++i) {
                const double dot = a.row(i).dot(da.row(i));
                da.row(i) = a.row(i).array() * (da.row(i).array() - dot);
            }
            if (nq->requires_grad) {
                ConstMatrixMap km(nk->value.data() + koff, c, pk);
                MatrixMap gq(nq->grad_buffer().data() + qoff, c, pq);
                gq.noalias() += s * (km * da.transpose());
            }
            if (nk->requires_grad) {
                ConstMatrixMap qm(nq->value.data() + qoff, c, pq);
                MatrixMap gk(nk->grad_buffer().data() + koff, c, pk);
                gk.noalias() += s * (qm * da);
            }
        }
    });
    return r;
}

Tensor sum(const Tensor& x) {
    auto v = x.data();
    double total = 0.0;
    for (double e : v) total += e;
    Tensor r = Tensor::make_result({1, 1, 1, 1}, {total}, {x});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    r.set_backward([o, px] {
        auto& g = px->grad_buffer();
        for (double& e : g) e += o->grad[0];
    });
    return r;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor bce(const Tensor& prob, std::span<const double> target, double eps) {
    if (target.size() != prob.numel()) {
        throw ValidationError("bce: shape mismatch, " + std::to_string(prob.numel()) + " predictions vs " +
                              std::to_string(target.size()) + " targets");
    }
    auto p = prob.data();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double y = target[i];
        if (y != 0.0 && y != 1.0) throw ValidationError("bce: target values must be 0 or 1");
        const double q = std::clamp(p[i], eps, 1.0 - eps);
        total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
    }
    const double inv = 1.0 / static_cast<double>(p.size());
    Tensor r = Tensor::make_result({1, 1, 1, 1}, {total * inv}, {prob});
    detail::Node* o = r.node();
    detail::Node* pp = prob.node();
    std::vector<double> t(target.begin(), target.end());
    r.set_backward([o, pp, t = std::move(t), eps, inv] {
        auto& g = pp->grad_buffer();
        const double go = o->grad[0] * inv;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double q = pp->value[i];
            if (q < eps || q > 1.0 - eps) continue;
            g[i] += go * (t[i] > 0.5 ? -1.0 / q : 1.0 / (1.0 - q));
        }
    });
    return r;
}

Tensor l1(const Tensor& x, std::span<const double> target) {
    if (target.size() != x.numel()) throw ValidationError("l1: shape mismatch");
    auto v = x.data();
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) total += std::abs(v[i] - target[i]);
    const double inv = 1.0 / static_cast<double>(v.size());
    Tensor r = Tensor::make_result({1, 1, 1, 1}, {total * inv}, {x});
    detail::Node* o = r.node();
    detail::Node* px = x.node();
    std::vector<double> t(target.begin(), target.end());
    r.set_backward([o, px, t = std::move(t), inv] {
        auto& g = px->grad_buffer();
        const double go = o->grad[0] * inv;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = px->value[i] - t[i];
            g[i] += go * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
    });
    return r;
}

}  // namespace fosp::ops
