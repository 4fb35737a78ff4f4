#include "vat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>

#ifdef VAT_HAVE_DLOPEN
#include <dlfcn.h>
#endif

namespace vat {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

bool taped(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (t->needs_grad()) return true;
    return false;
}

// cblas_dgemm signature and enum values.
using DgemmFn = void (*)(int order, int transa, int transb, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb, double beta,
                         double* c, int ldc);
constexpr int kRowMajor = 101, kNoTrans = 111, kTrans = 112;

// BLAS is loaded lazily so the kernel-selection environment can be fixed
// first: OpenBLAS picks its core type when the library loads, and the
// auto-detected choice on some machines leaves most of the throughput on
// the table. Values already present in the environment are respected.
DgemmFn load_blas_dgemm() {
#ifdef VAT_HAVE_DLOPEN
#if defined(__x86_64__)
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
        __builtin_cpu_supports("avx512bw") && __builtin_cpu_supports("avx512vl"))
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
#endif
    setenv("OPENBLAS_NUM_THREADS", "1", 0);
    for (const char* name : {"libopenblas.so.0", "libopenblas.so", "libcblas.so.3"}) {
        if (void* handle = dlopen(name, RTLD_NOW | RTLD_LOCAL)) {
            if (auto fn = reinterpret_cast<DgemmFn>(dlsym(handle, "cblas_dgemm"))) return fn;
            dlclose(handle);
        }
    }
#endif
    return nullptr;
}

DgemmFn blas_dgemm() {
    static DgemmFn fn = load_blas_dgemm();
    return fn;
}

// C[m,n] (+)= A[m,k] * B[k,n], with optional transposes on A/B.
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const double* a, const double* b,
          double* c, double beta) {
    if (DgemmFn fn = blas_dgemm()) {
        fn(kRowMajor, ta ? kTrans : kNoTrans, tb ? kTrans : kNoTrans, static_cast<int>(m),
           static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(ta ? m : k), b,
           static_cast<int>(tb ? k : n), beta, c, static_cast<int>(n));
        return;
    }
    if (beta == 0.0) std::fill(c, c + m * n, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t l = 0; l < k; ++l) {
            const double av = ta ? a[l * m + i] : a[i * k + l];
            const double* brow = tb ? nullptr : b + l * n;
            double* crow = c + i * n;
            if (tb) {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + l];
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

void require_2d(const Tensor& t, const char* name) {
    if (t.ndim() != 2)
        throw DimensionError(std::string(name) + " must be 2-D, got shape " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    gemm(false, false, m, n, k, a.data(), b.data(), out.data(), 0.0);
    out.check_finite("matmul");
    if (taped(tape, {&a, &b})) {
        out.mark_needs_grad();
        Tensor ca = a, cb = b, co = out;
        tape->record([ca, cb, co, m, n, k]() mutable {
            if (!co.has_grad()) return;
            const double* gc = co.grad().data();
            if (ca.needs_grad()) gemm(false, true, m, k, n, gc, cb.data(), ca.grad().data(), 1.0);
            if (cb.needs_grad()) gemm(true, false, k, n, m, ca.data(), gc, cb.grad().data(), 1.0);
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& x, Tape* tape) {
    require_2d(x, "transpose");
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const double* src = x.data();
    double* dst = out.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, m, n]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data();
            for (int64_t j = 0; j < n; ++j)
                for (int64_t i = 0; i < m; ++i) gx[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, Tape* tape, const char* name,
                          Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
    if (taped(tape, {&a, &b})) {
        out.mark_needs_grad();
        Tensor ca = a, cb = b, co = out;
        tape->record([ca, cb, co, n, bwd]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            double* ga = ca.needs_grad() ? ca.grad().data() : nullptr;
            double* gb = cb.needs_grad() ? cb.grad().data() : nullptr;
            for (int64_t i = 0; i < n; ++i) bwd(i, g[i], ca.data()[i], cb.data()[i], ga, gb);
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    return elementwise_binary(
        a, b, tape, "add", [](double x, double y) { return x + y; },
        [](int64_t i, double g, double, double, double* ga, double* gb) {
            if (ga) ga[i] += g;
            if (gb) gb[i] += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    return elementwise_binary(
        a, b, tape, "sub", [](double x, double y) { return x - y; },
        [](int64_t i, double g, double, double, double* ga, double* gb) {
            if (ga) ga[i] += g;
            if (gb) gb[i] -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    return elementwise_binary(
        a, b, tape, "mul", [](double x, double y) { return x * y; },
        [](int64_t i, double g, double x, double y, double* ga, double* gb) {
            if (ga) ga[i] += g * y;
            if (gb) gb[i] += g * x;
        });
}

Tensor scale(const Tensor& x, double c, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, n, c]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * c;
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double c, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + c;
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, n]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

namespace {

int64_t row_width(const Tensor& x, const Tensor& row, const char* op) {
    require_2d(x, op);
    const int64_t d = x.dim(1);
    if (row.numel() != d)
        throw DimensionError(std::string(op) + ": row length " + std::to_string(row.numel()) +
                             " does not match width of " + shape_str(x.shape()));
    return d;
}

}  // namespace

Tensor add_row(const Tensor& x, const Tensor& row, Tape* tape) {
    const int64_t d = row_width(x, row, "add_row");
    const int64_t n = x.dim(0);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] + row.data()[j];
    if (taped(tape, {&x, &row})) {
        out.mark_needs_grad();
        Tensor cx = x, cr = row, co = out;
        tape->record([cx, cr, co, n, d]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            if (cx.needs_grad()) {
                double* gx = cx.grad().data();
                for (int64_t i = 0; i < n * d; ++i) gx[i] += g[i];
            }
            if (cr.needs_grad()) {
                double* gr = cr.grad().data();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
            }
        });
    }
    return out;
}

Tensor mul_row(const Tensor& x, const Tensor& row, Tape* tape) {
    const int64_t d = row_width(x, row, "mul_row");
    const int64_t n = x.dim(0);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] * row.data()[j];
    if (taped(tape, {&x, &row})) {
        out.mark_needs_grad();
        Tensor cx = x, cr = row, co = out;
        tape->record([cx, cr, co, n, d]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            if (cx.needs_grad()) {
                double* gx = cx.grad().data();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * cr.data()[j];
            }
            if (cr.needs_grad()) {
                double* gr = cr.grad().data();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gr[j] += g[i * d + j] * cx.data()[i * d + j];
            }
        });
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& x, Tape* tape) {
    if (x.ndim() < 1) throw DimensionError("softmax requires at least 1-D input");
    const int64_t d = x.dim(static_cast<size_t>(x.ndim() - 1));
    if (d < 1) throw DimensionError("softmax last axis must be non-empty");
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x.data() + r * d;
        double* oi = out.data() + r * d;
        double mx = xi[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < d; ++j) oi[j] *= inv;
    }
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, rows, d]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            const double* s = co.data();
            double* gx = cx.grad().data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* sr = s + r * d;
                double dot = 0.0;
                for (int64_t j = 0; j < d; ++j) dot += gr[j] * sr[j];
                double* gxr = gx + r * d;
                for (int64_t j = 0; j < d; ++j) gxr[j] += sr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  Tape* tape) {
    if (x.ndim() < 1) throw DimensionError("layer_norm requires at least 1-D input");
    const int64_t d = x.dim(static_cast<size_t>(x.ndim() - 1));
    if (gain.numel() != d || bias.numel() != d)
        throw DimensionError("layer_norm: gain/bias length must match last axis of " +
                             shape_str(x.shape()));
    if (eps <= 0.0) throw ContractError("layer_norm eps must be positive");
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> mean(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x.data() + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[static_cast<size_t>(r)] = mu;
        inv_std[static_cast<size_t>(r)] = is;
        double* oi = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) oi[j] = (xi[j] - mu) * is * gain.data()[j] + bias.data()[j];
    }
    if (taped(tape, {&x, &gain, &bias})) {
        out.mark_needs_grad();
        Tensor cx = x, cg = gain, cb = bias, co = out;
        tape->record([cx, cg, cb, co, rows, d, mean = std::move(mean),
                      inv_std = std::move(inv_std)]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.needs_grad() ? cx.grad().data() : nullptr;
            double* gg = cg.needs_grad() ? cg.grad().data() : nullptr;
            double* gb = cb.needs_grad() ? cb.grad().data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const double* xi = cx.data() + r * d;
                const double* gr = g + r * d;
                const double mu = mean[static_cast<size_t>(r)];
                const double is = inv_std[static_cast<size_t>(r)];
                if (gb)
                    for (int64_t j = 0; j < d; ++j) gb[j] += gr[j];
                if (gg)
                    for (int64_t j = 0; j < d; ++j) gg[j] += gr[j] * (xi[j] - mu) * is;
                if (gx) {
                    // dL/dx = is * (gy*gain - mean(gy*gain) - y*mean(gy*gain*y))
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double gy = gr[j] * cg.data()[j];
                        const double y = (xi[j] - mu) * is;
                        m1 += gy;
                        m2 += gy * y;
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    double* gxr = gx + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        const double gy = gr[j] * cg.data()[j];
                        const double y = (xi[j] - mu) * is;
                        gxr[j] += is * (gy - m1 - y * m2);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    const bool rec = taped(tape, {&x});
    std::vector<double> cdf;
    if (rec) cdf.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        out.data()[i] = v * phi;
        if (rec) cdf[static_cast<size_t>(i)] = phi;
    }
    if (rec) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, n, cdf = std::move(cdf)]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data();
            for (int64_t i = 0; i < n; ++i) {
                const double v = cx.data()[i];
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (cdf[static_cast<size_t>(i)] + v * pdf);
            }
        });
    }
    return out;
}

Tensor slice_flat(const Tensor& x, int64_t start, int64_t len, Shape out_shape, Tape* tape) {
    if (start < 0 || len < 0 || start + len > x.numel())
        throw IndexError("slice out of range for tensor " + shape_str(x.shape()));
    if (shape_numel(out_shape) != len)
        throw DimensionError("slice output shape " + shape_str(out_shape) +
                             " does not hold " + std::to_string(len) + " values");
    Tensor out = Tensor::zeros(std::move(out_shape));
    std::memcpy(out.data(), x.data() + start, static_cast<size_t>(len) * sizeof(double));
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, start, len]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data() + start;
            for (int64_t i = 0; i < len; ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1, Tape* tape) {
    require_2d(x, "slice_rows");
    if (r0 < 0 || r1 < r0 || r1 > x.dim(0))
        throw IndexError("row slice [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of range for " + shape_str(x.shape()));
    const int64_t d = x.dim(1);
    return slice_flat(x, r0 * d, (r1 - r0) * d, {r1 - r0, d}, tape);
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape) {
    require_2d(x, "slice_cols");
    const int64_t n = x.dim(0), d = x.dim(1);
    if (c0 < 0 || c1 < c0 || c1 > d)
        throw IndexError("col slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of range for " + shape_str(x.shape()));
    const int64_t w = c1 - c0;
    Tensor out = Tensor::zeros({n, w});
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(out.data() + i * w, x.data() + i * d + c0, static_cast<size_t>(w) * sizeof(double));
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co, n, d, c0, w]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double* g = co.grad().data();
            double* gx = cx.grad().data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < w; ++j) gx[i * d + c0 + j] += g[i * w + j];
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape) {
    if (parts.empty()) throw ContractError("concat_rows on empty list");
    const int64_t d = parts.front().dim(1);
    int64_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows part");
        if (p.dim(1) != d)
            throw DimensionError("concat_rows: width mismatch " + shape_str(p.shape()));
        total += p.dim(0);
    }
    Shape out_shape{total, d};
    return stack_flat(parts, std::move(out_shape), tape);
}

Tensor stack_flat(const std::vector<Tensor>& parts, Shape out_shape, Tape* tape) {
    int64_t total = 0;
    for (const Tensor& p : parts) total += p.numel();
    if (shape_numel(out_shape) != total)
        throw DimensionError("stack output shape " + shape_str(out_shape) + " does not hold " +
                             std::to_string(total) + " values");
    Tensor out = Tensor::zeros(std::move(out_shape));
    int64_t off = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        std::memcpy(out.data() + off, p.data(), static_cast<size_t>(p.numel()) * sizeof(double));
        off += p.numel();
        any_grad = any_grad || p.needs_grad();
    }
    if (tape && any_grad) {
        out.mark_needs_grad();
        std::vector<Tensor> cp = parts;
        Tensor co = out;
        tape->record([cp, co]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            int64_t off = 0;
            for (Tensor& p : cp) {
                if (p.needs_grad()) {
                    double* gp = p.grad().data();
                    for (int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
                }
                off += p.numel();
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
    if (parts.empty()) throw ContractError("concat_cols on empty list");
    const int64_t n = parts.front().dim(0);
    int64_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols part");
        if (p.dim(0) != n)
            throw DimensionError("concat_cols: height mismatch " + shape_str(p.shape()));
        total += p.dim(1);
    }
    Tensor out = Tensor::zeros({n, total});
    int64_t coff = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        const int64_t w = p.dim(1);
        for (int64_t i = 0; i < n; ++i)
            std::memcpy(out.data() + i * total + coff, p.data() + i * w,
                        static_cast<size_t>(w) * sizeof(double));
        coff += w;
        any_grad = any_grad || p.needs_grad();
    }
    if (tape && any_grad) {
        out.mark_needs_grad();
        std::vector<Tensor> cp = parts;
        Tensor co = out;
        tape->record([cp, co, n, total]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            int64_t coff = 0;
            for (Tensor& p : cp) {
                const int64_t w = p.dim(1);
                if (p.needs_grad()) {
                    double* gp = p.grad().data();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + coff + j];
                }
                coff += w;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape out_shape, Tape* tape) {
    if (shape_numel(out_shape) != x.numel())
        throw DimensionError("reshape to " + shape_str(out_shape) + " from " +
                             shape_str(x.shape()));
    return slice_flat(x, 0, x.numel(), std::move(out_shape), tape);
}

Tensor select_row(const Tensor& table, int64_t index, Tape* tape) {
    require_2d(table, "select_row");
    if (index < 0 || index >= table.dim(0))
        throw IndexError("row index " + std::to_string(index) + " out of range for table " +
                         shape_str(table.shape()));
    const int64_t d = table.dim(1);
    return slice_flat(table, index * d, d, {1, d}, tape);
}

Tensor grid_pos_embed(const Tensor& row_emb, const Tensor& col_emb, Tape* tape) {
    require_2d(row_emb, "grid row table");
    require_2d(col_emb, "grid col table");
    const int64_t hp = row_emb.dim(0), wp = col_emb.dim(0), d = row_emb.dim(1);
    if (col_emb.dim(1) != d)
        throw DimensionError("grid_pos_embed: dim mismatch " + shape_str(row_emb.shape()) +
                             " vs " + shape_str(col_emb.shape()));
    Tensor out = Tensor::zeros({hp * wp, d});
    for (int64_t r = 0; r < hp; ++r)
        for (int64_t c = 0; c < wp; ++c) {
            double* o = out.data() + (r * wp + c) * d;
            const double* re = row_emb.data() + r * d;
            const double* ce = col_emb.data() + c * d;
            for (int64_t j = 0; j < d; ++j) o[j] = re[j] + ce[j];
        }
    if (taped(tape, {&row_emb, &col_emb})) {
        out.mark_needs_grad();
        Tensor cr = row_emb, cc = col_emb, co = out;
        tape->record([cr, cc, co, hp, wp, d]() mutable {
            if (!co.has_grad()) return;
            const double* g = co.grad().data();
            double* gr = cr.needs_grad() ? cr.grad().data() : nullptr;
            double* gc = cc.needs_grad() ? cc.grad().data() : nullptr;
            for (int64_t r = 0; r < hp; ++r)
                for (int64_t c = 0; c < wp; ++c) {
                    const double* grow = g + (r * wp + c) * d;
                    if (gr)
                        for (int64_t j = 0; j < d; ++j) gr[r * d + j] += grow[j];
                    if (gc)
                        for (int64_t j = 0; j < d; ++j) gc[c * d + j] += grow[j];
                }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    Tensor out = Tensor::scalar(s);
    if (taped(tape, {&x})) {
        out.mark_needs_grad();
        Tensor cx = x, co = out;
        tape->record([cx, co]() mutable {
            if (!co.has_grad() || !cx.needs_grad()) return;
            const double g = co.grad()[0];
            double* gx = cx.grad().data();
            for (int64_t i = 0; i < cx.numel(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_abs_error(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mean_abs_error");
    const int64_t n = a.numel();
    if (n == 0) throw ContractError("mean_abs_error on empty tensors");
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(a.data()[i] - b.data()[i]);
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (taped(tape, {&a, &b})) {
        out.mark_needs_grad();
        Tensor ca = a, cb = b, co = out;
        tape->record([ca, cb, co, n]() mutable {
            if (!co.has_grad()) return;
            const double g = co.grad()[0] / static_cast<double>(n);
            double* ga = ca.needs_grad() ? ca.grad().data() : nullptr;
            double* gb = cb.needs_grad() ? cb.grad().data() : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const double d = ca.data()[i] - cb.data()[i];
                const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (ga) ga[i] += g * sg;
                if (gb) gb[i] -= g * sg;
            }
        });
    }
    return out;
}

Tensor mean_sq_error(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mean_sq_error");
    const int64_t n = a.numel();
    if (n == 0) throw ContractError("mean_sq_error on empty tensors");
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (taped(tape, {&a, &b})) {
        out.mark_needs_grad();
        Tensor ca = a, cb = b, co = out;
        tape->record([ca, cb, co, n]() mutable {
            if (!co.has_grad()) return;
            const double g = 2.0 * co.grad()[0] / static_cast<double>(n);
            double* ga = ca.needs_grad() ? ca.grad().data() : nullptr;
            double* gb = cb.needs_grad() ? cb.grad().data() : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const double d = ca.data()[i] - cb.data()[i];
                if (ga) ga[i] += g * d;
                if (gb) gb[i] -= g * d;
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
    return add_row(matmul(x, w, tape), b, tape);
}

std::pair<Tensor, Tensor> scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                               Tape* tape) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
        throw DimensionError("attention expects [heads, tokens, head_dim] stacks, got " +
                             shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                             shape_str(v.shape()));
    const int64_t h = q.dim(0), nq = q.dim(1), dh = q.dim(2);
    const int64_t nk = k.dim(1);
    if (k.dim(0) != h || v.dim(0) != h)
        throw DimensionError("attention head-count mismatch: " + shape_str(q.shape()) + " vs " +
                             shape_str(k.shape()) + " vs " + shape_str(v.shape()));
    if (k.dim(2) != dh || v.dim(2) != dh || v.dim(1) != nk)
        throw DimensionError("attention key/value shape mismatch: " + shape_str(k.shape()) +
                             " vs " + shape_str(v.shape()) + " (query " + shape_str(q.shape()) + ")");
    if (nq < 1 || nk < 1 || dh < 1) throw DimensionError("attention requires non-empty q/k/v");
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> score_parts, out_parts;
    score_parts.reserve(static_cast<size_t>(h));
    out_parts.reserve(static_cast<size_t>(h));
    for (int64_t i = 0; i < h; ++i) {
        Tensor qh = slice_flat(q, i * nq * dh, nq * dh, {nq, dh}, tape);
        Tensor kh = slice_flat(k, i * nk * dh, nk * dh, {nk, dh}, tape);
        Tensor vh = slice_flat(v, i * nk * dh, nk * dh, {nk, dh}, tape);
        Tensor logits = scale(matmul(qh, transpose2d(kh, tape), tape), inv_sqrt_dh, tape);
        Tensor scores_h = softmax_lastdim(logits, tape);
        score_parts.push_back(scores_h);
        out_parts.push_back(matmul(scores_h, vh, tape));
    }
    Tensor scores = stack_flat(score_parts, {h, nq, nk}, tape);
    Tensor out = stack_flat(out_parts, {h, nq, dh}, tape);
    return {out, scores};
}

}  // namespace vat
