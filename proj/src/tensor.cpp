#include "dppt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vecmath.hpp"

namespace dppt {

using detail::GradTable;
using detail::Node;
using detail::TensorImpl;

namespace detail {

static thread_local bool g_grad_enabled = true;

bool grad_enabled() { return g_grad_enabled; }

std::vector<double>& grad_buf(GradTable& table, const TensorImpl* t) {
    auto it = table.find(t);
    if (it == table.end())
        it = table.emplace(t, std::vector<double>(t->data.size(), 0.0)).first;
    return it->second;
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---- Tensor -------------------------------------------------------------

static std::shared_ptr<TensorImpl> new_impl(std::vector<int64_t> shape,
                                            std::vector<double> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    auto n = numel_of(shape);
    Tensor t;
    t.impl_ = new_impl(std::move(shape), std::vector<double>(n, 0.0));
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    auto n = numel_of(shape);
    Tensor t;
    t.impl_ = new_impl(std::move(shape), std::vector<double>(n, value));
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError(strf("from_data: shape %s does not cover %zu values",
                              shape_str(shape).c_str(), data.size()));
    Tensor t;
    t.impl_ = new_impl(std::move(shape), std::move(data));
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const std::vector<int64_t>& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::dim(int i) const { return impl_->shape.at(i); }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }
double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError(strf("item() on tensor %s", shape_str(shape()).c_str()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (idx.size() != impl_->shape.size())
        throw IndexError(strf("at(): %zu indices for %s", idx.size(), shape_str(shape()).c_str()));
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= impl_->shape[i])
            throw IndexError(strf("at(): index %lld out of range for dim %d of %s",
                                  static_cast<long long>(v), i, shape_str(shape()).c_str()));
        off = off * impl_->shape[i] + v;
        ++i;
    }
    return impl_->data[off];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (impl_->node)
        throw ContractError("set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = v;
    return *this;
}

bool Tensor::is_leaf() const { return !impl_->node; }

const std::vector<double>* Tensor::grad() const {
    return impl_->grad ? &*impl_->grad : nullptr;
}

void Tensor::zero_grad() { impl_->grad.reset(); }

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != impl_->data.size())
        throw ShapeError("gradient size mismatch");
    if (!impl_->grad) impl_->grad.emplace(impl_->data.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) (*impl_->grad)[i] += g[i];
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = new_impl(impl_->shape, impl_->data);
    return t;
}

Tensor Tensor::clone() const { return detach(); }

// Builds an op result; attaches the backward node only when gradients are
// both enabled and needed.
Tensor make_result(std::vector<int64_t> shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(const std::vector<double>&, GradTable&)> backprop) {
    Tensor out;
    out.impl_ = new_impl(std::move(shape), std::move(data));
    bool track = detail::grad_enabled();
    if (track) {
        track = false;
        for (const auto& p : parents)
            if (p.requires_grad()) {
                track = true;
                break;
            }
    }
    if (track) {
        auto node = std::make_shared<Node>();
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.impl());
        node->backprop = std::move(backprop);
        out.impl_->node = std::move(node);
        out.impl_->requires_grad = true;
    }
    return out;
}

static void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(strf("%s: undefined tensor", op));
}

// ---- matmul -------------------------------------------------------------

// C = A(m x k) * B(k x n), row-major streaming accumulation. The j-inner
// loop vectorizes; each output row is a fixed-order sum so results do not
// depend on m (keeps batched and per-sample paths bit-identical).
static void mm(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        std::fill(c, c + n, 0.0);
        const double* a = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            const double* b = B + kk * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// dA += dC(m x n) * B^T(n x k). B is transposed into scratch so the
// inner loop streams contiguously and vectorizes; accumulation stays in
// fixed ascending-j order, so results are deterministic.
static void mm_acc_abt(const double* dC, const double* B, double* dA, int64_t m, int64_t k,
                       int64_t n) {
    thread_local std::vector<double> bt;
    bt.resize(static_cast<size_t>(n) * k);
    for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t j = 0; j < n; ++j) bt[j * k + kk] = B[kk * n + j];
    for (int64_t i = 0; i < m; ++i) {
        const double* dc = dC + i * n;
        double* da = dA + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double dv = dc[j];
            const double* b = bt.data() + j * k;
            for (int64_t kk = 0; kk < k; ++kk) da[kk] += dv * b[kk];
        }
    }
}

// dB += A^T(k x m) * dC(m x n): rank-1 updates, contiguous in j.
static void mm_acc_atb(const double* A, const double* dC, double* dB, int64_t m, int64_t k,
                       int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* dc = dC + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            double* db = dB + kk * n;
            for (int64_t j = 0; j < n; ++j) db[j] += av * dc[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError(strf("matmul: incompatible shapes %s and %s",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    mm(a.data(), b.data(), out.data(), m, k, n);

    auto ai = a.impl().get();
    auto bi = b.impl().get();
    return make_result(
        {m, n}, std::move(out), {a, b},
        [ai, bi, m, k, n](const std::vector<double>& g, GradTable& table) {
            if (ai->requires_grad)
                mm_acc_abt(g.data(), bi->data.data(), detail::grad_buf(table, ai).data(), m, k, n);
            if (bi->requires_grad)
                mm_acc_atb(ai->data.data(), g.data(), detail::grad_buf(table, bi).data(), m, k, n);
        });
}

Tensor transpose(const Tensor& a) {
    check_defined(a, "transpose");
    if (a.ndim() != 2)
        throw ShapeError(strf("transpose: need 2-d, got %s", shape_str(a.shape()).c_str()));
    const int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    const double* src = a.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    auto ai = a.impl().get();
    return make_result({n, m}, std::move(out), {a},
                       [ai, m, n](const std::vector<double>& g, GradTable& table) {
                           if (!ai->requires_grad) return;
                           auto& da = detail::grad_buf(table, ai);
                           for (int64_t j = 0; j < n; ++j)
                               for (int64_t i = 0; i < m; ++i) da[i * n + j] += g[j * m + i];
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    const bool same = a.shape() == b.shape();
    const bool bias_row = a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0);
    if (!same && !bias_row)
        throw ShapeError(strf("add: incompatible shapes %s and %s",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    if (same) {
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[i];
    } else {
        const int64_t m = a.dim(0), n = a.dim(1);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[i * n + j] = pa[i * n + j] + pb[j];
    }
    auto ai = a.impl().get();
    auto bi = b.impl().get();
    auto shape = a.shape();
    return make_result(shape, std::move(out), {a, b},
                       [ai, bi, same](const std::vector<double>& g, GradTable& table) {
                           if (ai->requires_grad) {
                               auto& da = detail::grad_buf(table, ai);
                               for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                           }
                           if (bi->requires_grad) {
                               auto& db = detail::grad_buf(table, bi);
                               if (same) {
                                   for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                               } else {
                                   const int64_t n = static_cast<int64_t>(db.size());
                                   const int64_t m = static_cast<int64_t>(g.size()) / n;
                                   for (int64_t i = 0; i < m; ++i)
                                       for (int64_t j = 0; j < n; ++j) db[j] += g[i * n + j];
                               }
                           }
                       });
}

Tensor scale(const Tensor& a, double c) {
    check_defined(a, "scale");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * c;
    auto ai = a.impl().get();
    return make_result(a.shape(), std::move(out), {a},
                       [ai, c](const std::vector<double>& g, GradTable& table) {
                           if (!ai->requires_grad) return;
                           auto& da = detail::grad_buf(table, ai);
                           for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
                       });
}

// ---- softmax ------------------------------------------------------------

// Lane decomposition for a reduction along `axis`: outer * len * inner.
struct Lanes {
    int64_t outer, len, inner;
};

static Lanes lanes_of(const std::vector<int64_t>& shape, int axis) {
    Lanes l{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) l.outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

Tensor softmax(const Tensor& x, int axis) {
    check_defined(x, "softmax");
    if (axis < 0 || axis >= x.ndim())
        throw ShapeError(strf("softmax: axis %d invalid for %s", axis,
                              shape_str(x.shape()).c_str()));
    const Lanes L = lanes_of(x.shape(), axis);
    std::vector<double> out(x.numel());
    const double* px = x.data();
    if (L.inner == 1) {
        // contiguous lanes: batch the exponentials
        for (int64_t o = 0; o < L.outer; ++o) {
            const int64_t base = o * L.len;
            double mx = px[base];
            for (int64_t t = 1; t < L.len; ++t) mx = std::max(mx, px[base + t]);
            for (int64_t t = 0; t < L.len; ++t) out[base + t] = px[base + t] - mx;
            detail::exp_array(out.data() + base, out.data() + base, L.len);
            double denom = 0.0;
            for (int64_t t = 0; t < L.len; ++t) denom += out[base + t];
            for (int64_t t = 0; t < L.len; ++t) out[base + t] /= denom;
        }
    } else {
        for (int64_t o = 0; o < L.outer; ++o) {
            for (int64_t in = 0; in < L.inner; ++in) {
                const int64_t base = o * L.len * L.inner + in;
                double mx = px[base];
                for (int64_t t = 1; t < L.len; ++t)
                    mx = std::max(mx, px[base + t * L.inner]);
                double denom = 0.0;
                for (int64_t t = 0; t < L.len; ++t) {
                    double e = std::exp(px[base + t * L.inner] - mx);
                    out[base + t * L.inner] = e;
                    denom += e;
                }
                for (int64_t t = 0; t < L.len; ++t) out[base + t * L.inner] /= denom;
            }
        }
    }
    auto xi = x.impl().get();
    auto y = std::make_shared<std::vector<double>>(out);  // backward needs outputs
    return make_result(x.shape(), std::move(out), {x},
                       [xi, y, L](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           const auto& yy = *y;
                           for (int64_t o = 0; o < L.outer; ++o)
                               for (int64_t in = 0; in < L.inner; ++in) {
                                   const int64_t base = o * L.len * L.inner + in;
                                   double dot = 0.0;
                                   for (int64_t t = 0; t < L.len; ++t) {
                                       const int64_t p = base + t * L.inner;
                                       dot += g[p] * yy[p];
                                   }
                                   for (int64_t t = 0; t < L.len; ++t) {
                                       const int64_t p = base + t * L.inner;
                                       dx[p] += yy[p] * (g[p] - dot);
                                   }
                               }
                       });
}

// ---- layer norm -----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_defined(x, "layer_norm");
    if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
    const int64_t D = x.shape().back();
    if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != D || beta.dim(0) != D)
        throw ShapeError(strf("layer_norm: gamma %s / beta %s do not match last dim %lld",
                              shape_str(gamma.shape()).c_str(), shape_str(beta.shape()).c_str(),
                              static_cast<long long>(D)));
    const int64_t rows = x.numel() / D;
    std::vector<double> out(x.numel());
    auto norm = std::make_shared<std::vector<double>>(x.numel());  // pre-affine rows
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * D;
        double mean = 0.0;
        for (int64_t j = 0; j < D; ++j) mean += row[j];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(D);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (int64_t j = 0; j < D; ++j) {
            const double y = (row[j] - mean) * inv;
            (*norm)[r * D + j] = y;
            out[r * D + j] = pg[j] * y + pb[j];
        }
    }
    auto xi = x.impl().get();
    auto gi = gamma.impl().get();
    auto bi = beta.impl().get();
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xi, gi, bi, norm, inv_std, D, rows](const std::vector<double>& g, GradTable& table) {
            const auto& y = *norm;
            if (gi->requires_grad) {
                auto& dg = detail::grad_buf(table, gi);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < D; ++j) dg[j] += g[r * D + j] * y[r * D + j];
            }
            if (bi->requires_grad) {
                auto& db = detail::grad_buf(table, bi);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < D; ++j) db[j] += g[r * D + j];
            }
            if (xi->requires_grad) {
                auto& dx = detail::grad_buf(table, xi);
                const double* pg2 = gi->data.data();
                for (int64_t r = 0; r < rows; ++r) {
                    double mean_dy = 0.0, mean_dyy = 0.0;
                    for (int64_t j = 0; j < D; ++j) {
                        const double dy = g[r * D + j] * pg2[j];
                        mean_dy += dy;
                        mean_dyy += dy * y[r * D + j];
                    }
                    mean_dy /= static_cast<double>(D);
                    mean_dyy /= static_cast<double>(D);
                    const double inv = (*inv_std)[r];
                    for (int64_t j = 0; j < D; ++j) {
                        const double dy = g[r * D + j] * pg2[j];
                        dx[r * D + j] += inv * (dy - mean_dy - y[r * D + j] * mean_dyy);
                    }
                }
            }
        });
}

// ---- pointwise ------------------------------------------------------------

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    const int64_t n = x.numel();
    std::vector<double> out(n);
    const double* px = x.data();
    // cdf = Phi(x), kept for the backward pass
    auto cdf = std::make_shared<std::vector<double>>(n);
    for (int64_t i = 0; i < n; ++i) (*cdf)[i] = px[i] * M_SQRT1_2;
    detail::erf_array(cdf->data(), cdf->data(), n);
    for (int64_t i = 0; i < n; ++i) {
        (*cdf)[i] = 0.5 * (1.0 + (*cdf)[i]);
        out[i] = px[i] * (*cdf)[i];
    }
    auto xi = x.impl().get();
    return make_result(x.shape(), std::move(out), {x},
                       [xi, cdf](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           const double* px2 = xi->data.data();
                           constexpr double inv_sqrt_2pi = 0.3989422804014326779;
                           std::vector<double> pdf(g.size());
                           for (size_t i = 0; i < g.size(); ++i)
                               pdf[i] = -0.5 * px2[i] * px2[i];
                           detail::exp_array(pdf.data(), pdf.data(), pdf.size());
                           for (size_t i = 0; i < g.size(); ++i)
                               dx[i] += g[i] * ((*cdf)[i] +
                                                px2[i] * inv_sqrt_2pi * pdf[i]);
                       });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_defined(a, "mse");
    check_defined(b, "mse");
    if (a.shape() != b.shape())
        throw ShapeError(strf("mse: shapes differ %s vs %s", shape_str(a.shape()).c_str(),
                              shape_str(b.shape()).c_str()));
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    acc /= static_cast<double>(n);
    auto ai = a.impl().get();
    auto bi = b.impl().get();
    return make_result({}, {acc}, {a, b},
                       [ai, bi, n](const std::vector<double>& g, GradTable& table) {
                           const double s = 2.0 * g[0] / static_cast<double>(n);
                           const double* pa2 = ai->data.data();
                           const double* pb2 = bi->data.data();
                           if (ai->requires_grad) {
                               auto& da = detail::grad_buf(table, ai);
                               for (int64_t i = 0; i < n; ++i) da[i] += s * (pa2[i] - pb2[i]);
                           }
                           if (bi->requires_grad) {
                               auto& db = detail::grad_buf(table, bi);
                               for (int64_t i = 0; i < n; ++i) db[i] -= s * (pa2[i] - pb2[i]);
                           }
                       });
}

Tensor sum(const Tensor& x) {
    check_defined(x, "sum");
    const double* px = x.data();
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
    auto xi = x.impl().get();
    return make_result({}, {acc}, {x}, [xi](const std::vector<double>& g, GradTable& table) {
        if (!xi->requires_grad) return;
        auto& dx = detail::grad_buf(table, xi);
        for (auto& v : dx) v += g[0];
    });
}

// ---- shape ops --------------------------------------------------------------

// Row size when treating the first axis as rows.
static int64_t row_width(const Tensor& t) {
    if (t.ndim() < 1) throw ShapeError("row op on rank-0 tensor");
    return t.numel() / t.dim(0);
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices) {
    check_defined(x, "gather_rows");
    const int64_t rows = x.dim(0);
    const int64_t w = row_width(x);
    for (int64_t idx : indices)
        if (idx < 0 || idx >= rows)
            throw IndexError(strf("gather_rows: index %lld out of range [0,%lld)",
                                  static_cast<long long>(idx), static_cast<long long>(rows)));
    std::vector<double> out(indices.size() * static_cast<size_t>(w));
    const double* px = x.data();
    for (size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + i * w, px + indices[i] * w, sizeof(double) * w);
    std::vector<int64_t> shape = x.shape();
    shape[0] = static_cast<int64_t>(indices.size());
    auto xi = x.impl().get();
    auto idxs = std::make_shared<std::vector<int64_t>>(indices);
    return make_result(std::move(shape), std::move(out), {x},
                       [xi, idxs, w](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           for (size_t i = 0; i < idxs->size(); ++i) {
                               double* dst = dx.data() + (*idxs)[i] * w;
                               const double* src = g.data() + i * w;
                               for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                           }
                       });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat_rows");
    check_defined(b, "concat_rows");
    if (a.ndim() != b.ndim() || a.ndim() < 1)
        throw ShapeError("concat_rows: rank mismatch");
    for (int i = 1; i < a.ndim(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError(strf("concat_rows: trailing dims differ %s vs %s",
                                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    std::vector<double> out(a.numel() + b.numel());
    std::memcpy(out.data(), a.data(), sizeof(double) * a.numel());
    std::memcpy(out.data() + a.numel(), b.data(), sizeof(double) * b.numel());
    std::vector<int64_t> shape = a.shape();
    shape[0] += b.dim(0);
    auto ai = a.impl().get();
    auto bi = b.impl().get();
    const int64_t na = a.numel();
    return make_result(std::move(shape), std::move(out), {a, b},
                       [ai, bi, na](const std::vector<double>& g, GradTable& table) {
                           if (ai->requires_grad) {
                               auto& da = detail::grad_buf(table, ai);
                               for (int64_t i = 0; i < na; ++i) da[i] += g[i];
                           }
                           if (bi->requires_grad) {
                               auto& db = detail::grad_buf(table, bi);
                               for (size_t i = na; i < g.size(); ++i) db[i - na] += g[i];
                           }
                       });
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
    check_defined(x, "slice_rows");
    if (r0 < 0 || r1 > x.dim(0) || r0 > r1)
        throw IndexError(strf("slice_rows: [%lld,%lld) invalid for %s",
                              static_cast<long long>(r0), static_cast<long long>(r1),
                              shape_str(x.shape()).c_str()));
    const int64_t w = row_width(x);
    std::vector<double> out((r1 - r0) * w);
    std::memcpy(out.data(), x.data() + r0 * w, sizeof(double) * out.size());
    std::vector<int64_t> shape = x.shape();
    shape[0] = r1 - r0;
    auto xi = x.impl().get();
    return make_result(std::move(shape), std::move(out), {x},
                       [xi, r0, w](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           double* dst = dx.data() + r0 * w;
                           for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       });
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
    check_defined(x, "slice_cols");
    if (x.ndim() != 2)
        throw ShapeError(strf("slice_cols: need 2-d, got %s", shape_str(x.shape()).c_str()));
    const int64_t m = x.dim(0), n = x.dim(1);
    if (c0 < 0 || c1 > n || c0 > c1)
        throw IndexError(strf("slice_cols: [%lld,%lld) invalid for %s",
                              static_cast<long long>(c0), static_cast<long long>(c1),
                              shape_str(x.shape()).c_str()));
    const int64_t w = c1 - c0;
    std::vector<double> out(m * w);
    const double* px = x.data();
    for (int64_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * w, px + i * n + c0, sizeof(double) * w);
    auto xi = x.impl().get();
    return make_result({m, w}, std::move(out), {x},
                       [xi, c0, w, m, n](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           for (int64_t i = 0; i < m; ++i) {
                               double* dst = dx.data() + i * n + c0;
                               const double* src = g.data() + i * w;
                               for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                           }
                       });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty part list");
    const int64_t m = parts[0].dim(0);
    int64_t n = 0;
    for (const auto& p : parts) {
        check_defined(p, "concat_cols");
        if (p.ndim() != 2 || p.dim(0) != m)
            throw ShapeError("concat_cols: parts must be 2-d with equal row counts");
        n += p.dim(1);
    }
    std::vector<double> out(m * n);
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t w = p.dim(1);
        const double* src = p.data();
        for (int64_t i = 0; i < m; ++i)
            std::memcpy(out.data() + i * n + off, src + i * w, sizeof(double) * w);
        off += w;
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    std::vector<const TensorImpl*> impls;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        impls.push_back(p.impl().get());
        widths.push_back(p.dim(1));
    }
    return make_result({m, n}, std::move(out), std::move(parents),
                       [impls, widths, m, n](const std::vector<double>& g, GradTable& table) {
                           int64_t off2 = 0;
                           for (size_t pi = 0; pi < impls.size(); ++pi) {
                               const int64_t w = widths[pi];
                               if (impls[pi]->requires_grad) {
                                   auto& dp = detail::grad_buf(table, impls[pi]);
                                   for (int64_t i = 0; i < m; ++i) {
                                       const double* src = g.data() + i * n + off2;
                                       double* dst = dp.data() + i * w;
                                       for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                                   }
                               }
                               off2 += w;
                           }
                       });
}

Tensor reshape(const Tensor& x, std::vector<int64_t> shape) {
    check_defined(x, "reshape");
    if (numel_of(shape) != x.numel())
        throw ShapeError(strf("reshape: %s has %lld values, target %s needs %lld",
                              shape_str(x.shape()).c_str(), static_cast<long long>(x.numel()),
                              shape_str(shape).c_str(),
                              static_cast<long long>(numel_of(shape))));
    std::vector<double> out(x.data(), x.data() + x.numel());
    auto xi = x.impl().get();
    return make_result(std::move(shape), std::move(out), {x},
                       [xi](const std::vector<double>& g, GradTable& table) {
                           if (!xi->requires_grad) return;
                           auto& dx = detail::grad_buf(table, xi);
                           for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                       });
}

// ---- backward engine --------------------------------------------------------

namespace detail {

GradTable run_backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError(strf("backward: loss must be scalar, got %s",
                                 loss.defined() ? shape_str(loss.shape()).c_str() : "undefined"));
    // Iterative DFS post-order over requires-grad subgraph; parent order
    // is construction order, so the sweep is deterministic.
    std::vector<const TensorImpl*> topo;
    std::unordered_map<const TensorImpl*, int> state;  // 0 new, 1 open, 2 done
    std::vector<const TensorImpl*> stack{loss.impl().get()};
    while (!stack.empty()) {
        const TensorImpl* t = stack.back();
        int& st = state[t];
        if (st == 0) {
            st = 1;
            if (t->node)
                for (auto it = t->node->parents.rbegin(); it != t->node->parents.rend(); ++it)
                    if ((*it)->requires_grad && state[it->get()] == 0)
                        stack.push_back(it->get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                topo.push_back(t);
            }
        }
    }
    GradTable table;
    table[loss.impl().get()] = {1.0};
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const TensorImpl* t = *it;
        if (!t->node) continue;
        auto found = table.find(t);
        if (found == table.end()) continue;  // not on a path that received gradient
        t->node->backprop(found->second, table);
    }
    return table;
}

}  // namespace detail

void backward(const Tensor& loss) {
    GradTable table = detail::run_backward(loss);
    for (auto& [impl, g] : table) {
        auto* t = const_cast<TensorImpl*>(impl);
        if (!t->grad) t->grad.emplace(t->data.size(), 0.0);
        for (size_t i = 0; i < g.size(); ++i) (*t->grad)[i] += g[i];
    }
}

}  // namespace dppt
