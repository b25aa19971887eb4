#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "oct/common.hpp"
#include "oct/kernels.hpp"
#include "oct/rng.hpp"

namespace oct::ag {

// Define-by-run autograd over 4D [N, C, H, W] tensors. Templated on scalar:
// training uses float, the finite-difference gradient checks instantiate the
// same ops at double precision.

struct Shape4 {
    int n = 1, c = 1, h = 1, w = 1;
    size_t numel() const { return size_t(n) * c * h * w; }
    bool operator==(const Shape4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <typename T>
struct Tensor4 {
    Shape4 shape;
    std::vector<T> v;

    Tensor4() = default;
    explicit Tensor4(Shape4 s, T fill = T(0)) : shape(s), v(s.numel(), fill) {}

    size_t numel() const { return v.size(); }
    T& operator[](size_t i) { return v[i]; }
    const T& operator[](size_t i) const { return v[i]; }

    T& at(int n, int c, int h, int w) {
        return v[((size_t(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    T at(int n, int c, int h, int w) const {
        return v[((size_t(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
};

template <typename T>
struct Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor4<T>(value.shape);
    }
    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

template <typename T>
Var<T> make_var(Tensor4<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> constant(Tensor4<T> value) {
    return make_var(std::move(value), false);
}

template <typename T>
Var<T> scalar(T v) {
    Tensor4<T> t(Shape4{1, 1, 1, 1});
    t[0] = v;
    return constant(std::move(t));
}

namespace detail {

template <typename T>
Var<T> unary(const Var<T>& x, Tensor4<T> value, std::function<void(Node<T>&, Node<T>&)> back) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = x->requires_grad;
    if (n->requires_grad) {
        n->parents = {x};
        n->backward_fn = [back](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            back(self, p);
        };
    }
    return n;
}

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, Tensor4<T> value,
              std::function<void(Node<T>&, Node<T>&, Node<T>&)> back) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = a->requires_grad || b->requires_grad;
    if (n->requires_grad) {
        n->parents = {a, b};
        n->backward_fn = [back](Node<T>& self) {
            Node<T>& pa = *self.parents[0];
            Node<T>& pb = *self.parents[1];
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            back(self, pa, pb);
        };
    }
    return n;
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    OCT_REQUIRE(a->value.shape == b->value.shape, "add: shape mismatch");
    Tensor4<T> out(a->value.shape);
    const int64_t n = static_cast<int64_t>(out.numel());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return detail::binary<T>(a, b, std::move(out), [n](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        if (pa.requires_grad)
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) pa.grad[i] += s.grad[i];
        if (pb.requires_grad)
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) pb.grad[i] += s.grad[i];
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    OCT_REQUIRE(a->value.shape == b->value.shape, "sub: shape mismatch");
    Tensor4<T> out(a->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return detail::binary<T>(a, b, std::move(out), [](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        if (pa.requires_grad)
            for (size_t i = 0; i < s.grad.numel(); ++i) pa.grad[i] += s.grad[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < s.grad.numel(); ++i) pb.grad[i] -= s.grad[i];
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    OCT_REQUIRE(a->value.shape == b->value.shape, "mul: shape mismatch");
    Tensor4<T> out(a->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return detail::binary<T>(a, b, std::move(out), [](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        if (pa.requires_grad)
            for (size_t i = 0; i < s.grad.numel(); ++i) pa.grad[i] += s.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < s.grad.numel(); ++i) pb.grad[i] += s.grad[i] * pa.value[i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T k) {
    Tensor4<T> out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * k;
    return detail::unary<T>(x, std::move(out), [k](Node<T>& s, Node<T>& p) {
        for (size_t i = 0; i < s.grad.numel(); ++i) p.grad[i] += s.grad[i] * k;
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T k) {
    Tensor4<T> out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] + k;
    return detail::unary<T>(x, std::move(out), [](Node<T>& s, Node<T>& p) {
        for (size_t i = 0; i < s.grad.numel(); ++i) p.grad[i] += s.grad[i];
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor4<T> out(x->value.shape);
    const int64_t n = static_cast<int64_t>(out.numel());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    return detail::unary<T>(x, std::move(out), [n](Node<T>& s, Node<T>& p) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i)
            if (p.value[i] > T(0)) p.grad[i] += s.grad[i];
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    Tensor4<T> out(x->value.shape);
    const int64_t n = static_cast<int64_t>(out.numel());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        out[i] = x->value[i] > T(0) ? x->value[i] : slope * x->value[i];
    return detail::unary<T>(x, std::move(out), [slope, n](Node<T>& s, Node<T>& p) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i)
            p.grad[i] += s.grad[i] * (p.value[i] > T(0) ? T(1) : slope);
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor4<T> out(x->value.shape);
    const int64_t n = static_cast<int64_t>(out.numel());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T v = x->value[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    return detail::unary<T>(x, std::move(out), [n](Node<T>& s, Node<T>& p) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            const T y = s.value[i];
            p.grad[i] += s.grad[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
    Tensor4<T> out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) {
        const T v = x->value[i];
        out[i] = v > T(20) ? v : std::log1p(std::exp(v));
    }
    return detail::unary<T>(x, std::move(out), [](Node<T>& s, Node<T>& p) {
        for (size_t i = 0; i < s.grad.numel(); ++i) {
            const T v = p.value[i];
            const T sig = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                    : std::exp(v) / (T(1) + std::exp(v));
            p.grad[i] += s.grad[i] * sig;
        }
    });
}

template <typename T>
Var<T> abs_(const Var<T>& x) {
    Tensor4<T> out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(x->value[i]);
    return detail::unary<T>(x, std::move(out), [](Node<T>& s, Node<T>& p) {
        for (size_t i = 0; i < s.grad.numel(); ++i) {
            const T v = p.value[i];
            p.grad[i] += s.grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
        }
    });
}

// ---- structure ops ----

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const Shape4 sa = a->value.shape, sb = b->value.shape;
    OCT_REQUIRE(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat: spatial shape mismatch");
    Tensor4<T> out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
    const size_t plane = size_t(sa.h) * sa.w;
    for (int n = 0; n < sa.n; ++n) {
        std::memcpy(&out.v[size_t(n) * (sa.c + sb.c) * plane], &a->value.v[size_t(n) * sa.c * plane],
                    sa.c * plane * sizeof(T));
        std::memcpy(&out.v[(size_t(n) * (sa.c + sb.c) + sa.c) * plane],
                    &b->value.v[size_t(n) * sb.c * plane], sb.c * plane * sizeof(T));
    }
    return detail::binary<T>(a, b, std::move(out), [sa, sb, plane](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        for (int n = 0; n < sa.n; ++n) {
            if (pa.requires_grad)
                for (size_t i = 0; i < sa.c * plane; ++i)
                    pa.grad.v[size_t(n) * sa.c * plane + i] +=
                        s.grad.v[size_t(n) * (sa.c + sb.c) * plane + i];
            if (pb.requires_grad)
                for (size_t i = 0; i < sb.c * plane; ++i)
                    pb.grad.v[size_t(n) * sb.c * plane + i] +=
                        s.grad.v[(size_t(n) * (sa.c + sb.c) + sa.c) * plane + i];
        }
    });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    OCT_REQUIRE(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2x2 needs even spatial dims");
    Shape4 so{s.n, s.c, s.h / 2, s.w / 2};
    Tensor4<T> out(so);
    auto argmax = std::make_shared<std::vector<uint32_t>>(so.numel());
    size_t o = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int r = 0; r < so.h; ++r)
                for (int cc = 0; cc < so.w; ++cc, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    uint32_t bi = 0;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc) {
                            const size_t idx =
                                ((size_t(n) * s.c + c) * s.h + 2 * r + dr) * s.w + 2 * cc + dc;
                            if (x->value.v[idx] > best) {
                                best = x->value.v[idx];
                                bi = static_cast<uint32_t>(idx);
                            }
                        }
                    out.v[o] = best;
                    (*argmax)[o] = bi;
                }
    return detail::unary<T>(x, std::move(out), [argmax](Node<T>& sn, Node<T>& p) {
        for (size_t i = 0; i < sn.grad.numel(); ++i) p.grad.v[(*argmax)[i]] += sn.grad.v[i];
    });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    Shape4 so{s.n, s.c, s.h * 2, s.w * 2};
    Tensor4<T> out(so);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int r = 0; r < so.h; ++r)
                for (int cc = 0; cc < so.w; ++cc)
                    out.at(n, c, r, cc) = x->value.at(n, c, r / 2, cc / 2);
    return detail::unary<T>(x, std::move(out), [s](Node<T>& sn, Node<T>& p) {
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int r = 0; r < 2 * s.h; ++r)
                    for (int cc = 0; cc < 2 * s.w; ++cc)
                        p.grad.at(n, c, r / 2, cc / 2) += sn.grad.at(n, c, r, cc);
    });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    Tensor4<T> out(s);
    const size_t plane = size_t(s.h) * s.w;
    const int64_t npix = int64_t(s.n) * int64_t(plane);
#pragma omp parallel for schedule(static)
    for (int64_t np = 0; np < npix; ++np) {
        const int n = static_cast<int>(np / int64_t(plane));
        const size_t p = static_cast<size_t>(np % int64_t(plane));
        {
            T mx = -std::numeric_limits<T>::infinity();
            for (int c = 0; c < s.c; ++c)
                mx = std::max(mx, x->value.v[(size_t(n) * s.c + c) * plane + p]);
            T sum = T(0);
            for (int c = 0; c < s.c; ++c) {
                const T e = std::exp(x->value.v[(size_t(n) * s.c + c) * plane + p] - mx);
                out.v[(size_t(n) * s.c + c) * plane + p] = e;
                sum += e;
            }
            for (int c = 0; c < s.c; ++c) out.v[(size_t(n) * s.c + c) * plane + p] /= sum;
        }
    }
    return detail::unary<T>(x, std::move(out), [s, plane, npix](Node<T>& sn, Node<T>& p) {
#pragma omp parallel for schedule(static)
        for (int64_t np = 0; np < npix; ++np) {
            const int n = static_cast<int>(np / int64_t(plane));
            const size_t px = static_cast<size_t>(np % int64_t(plane));
            T dot = T(0);
            for (int c = 0; c < s.c; ++c) {
                const size_t i = (size_t(n) * s.c + c) * plane + px;
                dot += sn.grad.v[i] * sn.value.v[i];
            }
            for (int c = 0; c < s.c; ++c) {
                const size_t i = (size_t(n) * s.c + c) * plane + px;
                p.grad.v[i] += sn.value.v[i] * (sn.grad.v[i] - dot);
            }
        }
    });
}

// mean over H: [N,C,H,W] -> [N,C,1,W]
template <typename T>
Var<T> mean_over_height(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    Tensor4<T> out(Shape4{s.n, s.c, 1, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int w = 0; w < s.w; ++w) {
                T acc = T(0);
                for (int h = 0; h < s.h; ++h) acc += x->value.at(n, c, h, w);
                out.at(n, c, 0, w) = acc / T(s.h);
            }
    return detail::unary<T>(x, std::move(out), [s](Node<T>& sn, Node<T>& p) {
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int w = 0; w < s.w; ++w) {
                    const T g = sn.grad.at(n, c, 0, w) / T(s.h);
                    for (int h = 0; h < s.h; ++h) p.grad.at(n, c, h, w) += g;
                }
    });
}

// mean over C,H,W per sample: [N,C,H,W] -> [N,1,1,1]
template <typename T>
Var<T> mean_per_sample(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    const size_t per = size_t(s.c) * s.h * s.w;
    Tensor4<T> out(Shape4{s.n, 1, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        T acc = T(0);
        for (size_t i = 0; i < per; ++i) acc += x->value.v[size_t(n) * per + i];
        out.v[n] = acc / T(per);
    }
    return detail::unary<T>(x, std::move(out), [s, per](Node<T>& sn, Node<T>& p) {
        for (int n = 0; n < s.n; ++n) {
            const T g = sn.grad.v[n] / T(per);
            for (size_t i = 0; i < per; ++i) p.grad.v[size_t(n) * per + i] += g;
        }
    });
}

// mean over everything -> [1,1,1,1]
template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const size_t n = x->value.numel();
    Tensor4<T> out(Shape4{1, 1, 1, 1});
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x->value[i];
    out[0] = acc / T(n);
    return detail::unary<T>(x, std::move(out), [n](Node<T>& sn, Node<T>& p) {
        const T g = sn.grad[0] / T(n);
        for (size_t i = 0; i < n; ++i) p.grad[i] += g;
    });
}

// ---- conv / norm ----

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int sh, int sw, int ph, int pw) {
    const Shape4 xs = x->value.shape, ws = w->value.shape;
    OCT_REQUIRE(xs.c == ws.c, "conv2d: channel mismatch");
    kernels::Conv2dShape cs{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, sh, sw, ph, pw};
    Tensor4<T> out(Shape4{xs.n, ws.n, cs.out_h(), cs.out_w()});
    kernels::conv2d_forward(x->value.v.data(), w->value.v.data(),
                            b ? b->value.v.data() : nullptr, out.v.data(), cs,
                            kernels::default_backend());

    auto node = std::make_shared<Node<T>>();
    node->value = std::move(out);
    node->requires_grad = x->requires_grad || w->requires_grad || (b && b->requires_grad);
    if (node->requires_grad) {
        node->parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
        node->backward_fn = [cs](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pw = *self.parents[1];
            Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
            if (px.requires_grad) {
                px.ensure_grad();
                Tensor4<T> gx(px.value.shape);
                kernels::conv2d_backward_input(self.grad.v.data(), pw.value.v.data(), gx.v.data(),
                                               cs, kernels::default_backend());
                for (size_t i = 0; i < gx.numel(); ++i) px.grad[i] += gx[i];
            }
            if (pw.requires_grad || (pb && pb->requires_grad)) {
                Tensor4<T> gw(pw.value.shape);
                std::vector<T> gb(pb ? cs.cout : 0);
                kernels::conv2d_backward_params(self.grad.v.data(), px.value.v.data(), gw.v.data(),
                                                pb ? gb.data() : nullptr, cs,
                                                kernels::default_backend());
                if (pw.requires_grad) {
                    pw.ensure_grad();
                    for (size_t i = 0; i < gw.numel(); ++i) pw.grad[i] += gw[i];
                }
                if (pb && pb->requires_grad) {
                    pb->ensure_grad();
                    for (int i = 0; i < cs.cout; ++i) pb->grad[i] += gb[i];
                }
            }
        };
    }
    return node;
}

// Per-(sample, channel) normalization with affine parameters gamma/beta of
// shape [1, C, 1, 1].
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const Shape4 s = x->value.shape;
    OCT_REQUIRE(gamma->value.shape.c == s.c && beta->value.shape.c == s.c,
                "instance_norm: affine parameter channel mismatch");
    const size_t plane = size_t(s.h) * s.w;
    Tensor4<T> out(s);
    auto xhat = std::make_shared<Tensor4<T>>(s);
    auto inv_std = std::make_shared<std::vector<T>>(size_t(s.n) * s.c);
    const int64_t nc = int64_t(s.n) * s.c;
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < nc; ++j) {
        const int n = static_cast<int>(j / s.c);
        const int c = static_cast<int>(j % s.c);
        {
            const T* px = &x->value.v[(size_t(n) * s.c + c) * plane];
            T mean = T(0);
            for (size_t i = 0; i < plane; ++i) mean += px[i];
            mean /= T(plane);
            T var = T(0);
            for (size_t i = 0; i < plane; ++i) var += (px[i] - mean) * (px[i] - mean);
            var /= T(plane);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[size_t(n) * s.c + c] = is;
            const T g = gamma->value.v[c], bt = beta->value.v[c];
            T* ph = &xhat->v[(size_t(n) * s.c + c) * plane];
            T* po = &out.v[(size_t(n) * s.c + c) * plane];
            for (size_t i = 0; i < plane; ++i) {
                ph[i] = (px[i] - mean) * is;
                po[i] = ph[i] * g + bt;
            }
        }
    }

    auto node = std::make_shared<Node<T>>();
    node->value = std::move(out);
    node->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    if (node->requires_grad) {
        node->parents = {x, gamma, beta};
        node->backward_fn = [s, plane, xhat, inv_std](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pg = *self.parents[1];
            Node<T>& pb = *self.parents[2];
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
#pragma omp parallel for schedule(static)
            for (int c = 0; c < s.c; ++c)
                for (int n = 0; n < s.n; ++n) {
                    const T* gy = &self.grad.v[(size_t(n) * s.c + c) * plane];
                    const T* xh = &(*xhat).v[(size_t(n) * s.c + c) * plane];
                    if (pg.requires_grad || pb.requires_grad) {
                        T dg = T(0), db = T(0);
                        for (size_t i = 0; i < plane; ++i) {
                            dg += gy[i] * xh[i];
                            db += gy[i];
                        }
                        if (pg.requires_grad) pg.grad.v[c] += dg;
                        if (pb.requires_grad) pb.grad.v[c] += db;
                    }
                    if (px.requires_grad) {
                        const T g = pg.value.v[c];
                        const T is = (*inv_std)[size_t(n) * s.c + c];
                        T mean_gy = T(0), mean_gy_xh = T(0);
                        for (size_t i = 0; i < plane; ++i) {
                            mean_gy += gy[i];
                            mean_gy_xh += gy[i] * xh[i];
                        }
                        mean_gy /= T(plane);
                        mean_gy_xh /= T(plane);
                        T* gx = &px.grad.v[(size_t(n) * s.c + c) * plane];
                        for (size_t i = 0; i < plane; ++i)
                            gx[i] += g * is * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
                    }
                }
        };
    }
    return node;
}

// Gram matrix per sample: [N,C,H,W] -> [N,C,C,1], normalized by C*H*W.
template <typename T>
Var<T> gram(const Var<T>& x) {
    const Shape4 s = x->value.shape;
    const size_t plane = size_t(s.h) * s.w;
    const T norm = T(1) / (T(s.c) * T(plane));
    Tensor4<T> out(Shape4{s.n, s.c, s.c, 1});
    for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.c; ++i)
            for (int j = 0; j < s.c; ++j) {
                const T* a = &x->value.v[(size_t(n) * s.c + i) * plane];
                const T* b = &x->value.v[(size_t(n) * s.c + j) * plane];
                T acc = T(0);
                for (size_t p = 0; p < plane; ++p) acc += a[p] * b[p];
                out.at(n, i, j, 0) = acc * norm;
            }
    return detail::unary<T>(x, std::move(out), [s, plane, norm](Node<T>& sn, Node<T>& p) {
        for (int n = 0; n < s.n; ++n)
            for (int i = 0; i < s.c; ++i)
                for (int j = 0; j < s.c; ++j) {
                    const T g = sn.grad.at(n, i, j, 0) * norm;
                    if (g == T(0)) continue;
                    T* gi = &p.grad.v[(size_t(n) * s.c + i) * plane];
                    T* gj = &p.grad.v[(size_t(n) * s.c + j) * plane];
                    const T* vi = &p.value.v[(size_t(n) * s.c + i) * plane];
                    const T* vj = &p.value.v[(size_t(n) * s.c + j) * plane];
                    for (size_t px = 0; px < plane; ++px) {
                        gi[px] += g * vj[px];
                        gj[px] += g * vi[px];
                    }
                }
    });
}

// ---- fused losses (scalar outputs) ----

// mean |a - b|
template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
    OCT_REQUIRE(a->value.shape == b->value.shape, "l1_mean: shape mismatch");
    const size_t n = a->value.numel();
    Tensor4<T> out(Shape4{1, 1, 1, 1});
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += std::abs(a->value[i] - b->value[i]);
    out[0] = acc / T(n);
    return detail::binary<T>(a, b, std::move(out), [n](Node<T>& s, Node<T>& pa, Node<T>& pb) {
        const T g = s.grad[0] / T(n);
        for (size_t i = 0; i < n; ++i) {
            const T d = pa.value[i] - pb.value[i];
            const T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (pa.requires_grad) pa.grad[i] += g * sg;
            if (pb.requires_grad) pb.grad[i] -= g * sg;
        }
    });
}

// Binary cross entropy on probabilities, mean over all elements.
template <typename T>
Var<T> bce_mean(const Var<T>& pred, const Var<T>& target, T eps = T(1e-7)) {
    OCT_REQUIRE(pred->value.shape == target->value.shape, "bce_mean: shape mismatch");
    const size_t n = pred->value.numel();
    Tensor4<T> out(Shape4{1, 1, 1, 1});
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T p = pred->value[i], t = target->value[i];
        OCT_REQUIRE(p >= T(0) && p <= T(1), "bce_mean: probability outside [0,1]");
        acc -= t * std::log(std::max(p, eps)) + (T(1) - t) * std::log(std::max(T(1) - p, eps));
    }
    out[0] = acc / T(n);
    return detail::binary<T>(pred, target, std::move(out),
                             [n, eps](Node<T>& s, Node<T>& pa, Node<T>& pb) {
                                 const T g = s.grad[0] / T(n);
                                 for (size_t i = 0; i < n; ++i) {
                                     const T p = pa.value[i], t = pb.value[i];
                                     T d = T(0);
                                     if (p > eps) d -= t / p;
                                     if (T(1) - p > eps) d += (T(1) - t) / (T(1) - p);
                                     if (pa.requires_grad) pa.grad[i] += g * d;
                                 }
                             });
}

// Categorical cross entropy on channel probabilities vs one-hot target,
// mean over N*H*W pixels (summed over the class channel).
template <typename T>
Var<T> ce_mean(const Var<T>& probs, const Var<T>& onehot, T eps = T(1e-7)) {
    const Shape4 s = probs->value.shape;
    OCT_REQUIRE(s == onehot->value.shape, "ce_mean: shape mismatch");
    const size_t plane = size_t(s.h) * s.w;
    const size_t pixels = size_t(s.n) * plane;
    Tensor4<T> out(Shape4{1, 1, 1, 1});
    T acc = T(0);
    for (size_t i = 0; i < probs->value.numel(); ++i) {
        const T p = probs->value[i];
        OCT_REQUIRE(p >= T(0) && p <= T(1) + T(1e-6), "ce_mean: probability outside [0,1]");
        const T t = onehot->value[i];
        if (t != T(0)) acc -= t * std::log(std::max(p, eps));
    }
    out[0] = acc / T(pixels);
    return detail::binary<T>(probs, onehot, std::move(out),
                             [pixels, eps](Node<T>& s2, Node<T>& pa, Node<T>& pb) {
                                 const T g = s2.grad[0] / T(pixels);
                                 for (size_t i = 0; i < pa.value.numel(); ++i) {
                                     const T p = pa.value[i], t = pb.value[i];
                                     if (t != T(0) && p > eps && pa.requires_grad)
                                         pa.grad[i] -= g * t / p;
                                 }
                             });
}

// BCE on logits against a constant label (0 or 1), numerically stable.
template <typename T>
Var<T> bce_logits_mean(const Var<T>& logits, T label) {
    const size_t n = logits->value.numel();
    Tensor4<T> out(Shape4{1, 1, 1, 1});
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T x = logits->value[i];
        acc += std::max(x, T(0)) - x * label + std::log1p(std::exp(-std::abs(x)));
    }
    out[0] = acc / T(n);
    return detail::unary<T>(logits, std::move(out), [n, label](Node<T>& s, Node<T>& p) {
        const T g = s.grad[0] / T(n);
        for (size_t i = 0; i < n; ++i) {
            const T x = p.value[i];
            const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                    : std::exp(x) / (T(1) + std::exp(x));
            p.grad[i] += g * (sig - label);
        }
    });
}

// ---- backward driver ----

template <typename T>
void backward(const Var<T>& root) {
    OCT_REQUIRE(root->value.numel() == 1, "backward: root must be scalar");
    // reverse topological order via iterative DFS
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->requires_grad) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace oct::ag
