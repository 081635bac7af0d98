#include "pdp/core/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdp {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

}  // namespace pdp

namespace pdp::kernels {

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const real* a, const real* b, real* c, bool accumulate) {
    cblas_dgemm(CblasRowMajor,
                trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans,
                m, n, k, 1.0,
                a, trans_a ? m : k,
                b, trans_b ? k : n,
                accumulate ? 1.0 : 0.0,
                c, n);
}

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
    if (x.ndim() != 4) throw InputError("conv2d: input must be rank 4, got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw InputError("conv2d: weight must be rank 4, got " + shape_str(w.shape()));
    const int cin = x.dim(1), cout = w.dim(0);
    if (s.groups < 1 || cin % s.groups != 0 || cout % s.groups != 0)
        throw ConfigError("conv2d: channels (" + std::to_string(cin) + "," + std::to_string(cout) +
                          ") not divisible by groups " + std::to_string(s.groups));
    if (w.dim(1) != cin / s.groups)
        throw ConfigError("conv2d: weight expects " + std::to_string(w.dim(1) * s.groups) +
                          " input channels, input has " + std::to_string(cin));
    if (w.dim(2) != s.kernel || w.dim(3) != s.kernel)
        throw ConfigError("conv2d: weight kernel " + shape_str(w.shape()) + " vs spec k=" + std::to_string(s.kernel));
    if (b && b->numel() != cout) throw ConfigError("conv2d: bias size mismatch");
}

std::vector<int> conv_out_shape(const Tensor& x, const Tensor& w, const ConvSpec& s) {
    const int ho = (x.dim(2) + 2 * s.pad - s.kernel) / s.stride + 1;
    const int wo = (x.dim(3) + 2 * s.pad - s.kernel) / s.stride + 1;
    if (ho <= 0 || wo <= 0) throw InputError("conv2d: input " + shape_str(x.shape()) + " too small for kernel");
    return {x.dim(0), w.dim(0), ho, wo};
}

// ---------------------------------------------------------------------------
// conv2d, serial reference: plain 7-loop direct convolution
// ---------------------------------------------------------------------------

Tensor conv2d_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
    check_conv_args(x, w, b, s);
    Tensor y(conv_out_shape(x, w, s));
    const int n_img = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = y.dim(1), ho = y.dim(2), wo = y.dim(3);
    const int cing = cin / s.groups, coutg = cout / s.groups;
    const int k = s.kernel;
    for (int n = 0; n < n_img; ++n)
        for (int co = 0; co < cout; ++co) {
            const int g = co / coutg;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    real acc = b ? (*b)[co] : 0.0;
                    for (int ci = 0; ci < cing; ++ci)
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += x.at4(n, g * cing + ci, iy, ix) * w.at4(co, ci, ky, kx);
                            }
                        }
                    y.at4(n, co, oy, ox) = acc;
                }
        }
    return y;
}

void conv2d_backward_serial(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                            Tensor& gx, Tensor& gw, Tensor* gb) {
    check_conv_args(x, w, nullptr, s);
    gx = Tensor(x.shape());
    gw = Tensor(w.shape());
    if (gb) *gb = Tensor({w.dim(0)});
    const int n_img = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
    const int cing = cin / s.groups, coutg = cout / s.groups;
    const int k = s.kernel;
    for (int n = 0; n < n_img; ++n)
        for (int co = 0; co < cout; ++co) {
            const int g = co / coutg;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const real gout = gy.at4(n, co, oy, ox);
                    if (gb) (*gb)[co] += gout;
                    for (int ci = 0; ci < cing; ++ci)
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= wd) continue;
                                gx.at4(n, g * cing + ci, iy, ix) += gout * w.at4(co, ci, ky, kx);
                                gw.at4(co, ci, ky, kx) += gout * x.at4(n, g * cing + ci, iy, ix);
                            }
                        }
                }
        }
}

// ---------------------------------------------------------------------------
// conv2d, parallel path: im2col + BLAS gemm, images in parallel
// ---------------------------------------------------------------------------

namespace {

// col[(ci*k+ky)*k+kx][oy*wo+ox] for one image and one channel group.
void im2col(const Tensor& x, int n, int c0, int cing, const ConvSpec& s,
            int ho, int wo, real* col) {
    const int h = x.dim(2), wd = x.dim(3), k = s.kernel;
    const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
    for (int ci = 0; ci < cing; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                real* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky;
                    real* dst = row + static_cast<std::int64_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst, 0, sizeof(real) * wo);
                        continue;
                    }
                    const real* src =
                        x.data() + ((static_cast<std::int64_t>(n) * x.dim(1) + c0 + ci) * h + iy) * wd;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx;
                        dst[ox] = (ix < 0 || ix >= wd) ? 0.0 : src[ix];
                    }
                }
            }
}

// Scatter-accumulate of a column matrix back into the input gradient.
void col2im_add(Tensor& gx, int n, int c0, int cing, const ConvSpec& s,
                int ho, int wo, const real* col) {
    const int h = gx.dim(2), wd = gx.dim(3), k = s.kernel;
    const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
    for (int ci = 0; ci < cing; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const real* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx;
                        if (ix < 0 || ix >= wd) continue;
                        gx.at4(n, c0 + ci, iy, ix) += row[static_cast<std::int64_t>(oy) * wo + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d_forward_parallel(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
    check_conv_args(x, w, b, s);
    Tensor y(conv_out_shape(x, w, s));
    const int n_img = x.dim(0), cin = x.dim(1);
    const int cout = y.dim(1), ho = y.dim(2), wo = y.dim(3);
    const int cing = cin / s.groups, coutg = cout / s.groups;
    const int kdim = cing * s.kernel * s.kernel;
    const std::int64_t p = static_cast<std::int64_t>(ho) * wo;

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_img; ++n) {
        std::vector<real> col(static_cast<size_t>(kdim) * p);
        for (int g = 0; g < s.groups; ++g) {
            im2col(x, n, g * cing, cing, s, ho, wo, col.data());
            const real* wg = w.data() + static_cast<std::int64_t>(g) * coutg * kdim;
            real* yg = y.data() + (static_cast<std::int64_t>(n) * cout + g * coutg) * p;
            gemm(false, false, coutg, static_cast<int>(p), kdim, wg, col.data(), yg, false);
        }
        if (b)
            for (int co = 0; co < cout; ++co) {
                real* row = y.data() + (static_cast<std::int64_t>(n) * cout + co) * p;
                const real bias = (*b)[co];
                for (std::int64_t i = 0; i < p; ++i) row[i] += bias;
            }
    }
    return y;
}

void conv2d_backward_parallel(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                              Tensor& gx, Tensor& gw, Tensor* gb) {
    check_conv_args(x, w, nullptr, s);
    gx = Tensor(x.shape());
    gw = Tensor(w.shape());
    if (gb) *gb = Tensor({w.dim(0)});
    const int n_img = x.dim(0), cin = x.dim(1);
    const int cout = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
    const int cing = cin / s.groups, coutg = cout / s.groups;
    const int kdim = cing * s.kernel * s.kernel;
    const std::int64_t p = static_cast<std::int64_t>(ho) * wo;

    // Weight gradients accumulate across images, so the image loop stays
    // sequential; the gemms carry the arithmetic.
    std::vector<real> col(static_cast<size_t>(kdim) * p);
    std::vector<real> gcol(static_cast<size_t>(kdim) * p);
    for (int n = 0; n < n_img; ++n) {
        for (int g = 0; g < s.groups; ++g) {
            im2col(x, n, g * cing, cing, s, ho, wo, col.data());
            const real* gyg = gy.data() + (static_cast<std::int64_t>(n) * cout + g * coutg) * p;
            real* gwg = gw.data() + static_cast<std::int64_t>(g) * coutg * kdim;
            // gw += gy * col^T
            gemm(false, true, coutg, kdim, static_cast<int>(p), gyg, col.data(), gwg, true);
            // gcol = w^T * gy
            const real* wg = w.data() + static_cast<std::int64_t>(g) * coutg * kdim;
            gemm(true, false, kdim, static_cast<int>(p), coutg, wg, gyg, gcol.data(), false);
            col2im_add(gx, n, g * cing, cing, s, ho, wo, gcol.data());
        }
        if (gb)
            for (int co = 0; co < cout; ++co) {
                const real* row = gy.data() + (static_cast<std::int64_t>(n) * cout + co) * p;
                real acc = 0.0;
                for (std::int64_t i = 0; i < p; ++i) acc += row[i];
                (*gb)[co] += acc;
            }
    }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
    return backend() == Backend::Serial ? conv2d_forward_serial(x, w, b, s)
                                        : conv2d_forward_parallel(x, w, b, s);
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor* gb) {
    if (backend() == Backend::Serial)
        conv2d_backward_serial(x, w, s, gy, gx, gw, gb);
    else
        conv2d_backward_parallel(x, w, s, gy, gx, gw, gb);
}

// ---------------------------------------------------------------------------
// transposed conv, 2x2 kernel, stride 2
// ---------------------------------------------------------------------------

static void check_deconv_args(const Tensor& x, const Tensor& w, const Tensor* b) {
    if (x.ndim() != 4 || w.ndim() != 4) throw InputError("conv_transpose2x: rank-4 tensors expected");
    if (w.dim(0) != x.dim(1)) throw ConfigError("conv_transpose2x: weight cin mismatch");
    if (w.dim(2) != 2 || w.dim(3) != 2) throw ConfigError("conv_transpose2x: kernel must be 2x2");
    if (b && b->numel() != w.dim(1)) throw ConfigError("conv_transpose2x: bias size mismatch");
}

Tensor conv_transpose2x_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b) {
    check_deconv_args(x, w, b);
    const int n_img = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(1);
    Tensor y({n_img, cout, 2 * h, 2 * wd});
    for (int n = 0; n < n_img; ++n)
        for (int co = 0; co < cout; ++co)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            real sum = b ? (*b)[co] : 0.0;
                            for (int ci = 0; ci < cin; ++ci)
                                sum += x.at4(n, ci, iy, ix) * w.at4(ci, co, ky, kx);
                            y.at4(n, co, 2 * iy + ky, 2 * ix + kx) = sum;
                        }
    return y;
}

Tensor conv_transpose2x_forward_parallel(const Tensor& x, const Tensor& w, const Tensor* b) {
    check_deconv_args(x, w, b);
    const int n_img = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(1);
    Tensor y({n_img, cout, 2 * h, 2 * wd});
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < n_img; ++n)
        for (int co = 0; co < cout; ++co)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            real sum = b ? (*b)[co] : 0.0;
                            for (int ci = 0; ci < cin; ++ci)
                                sum += x.at4(n, ci, iy, ix) * w.at4(ci, co, ky, kx);
                            y.at4(n, co, 2 * iy + ky, 2 * ix + kx) = sum;
                        }
    return y;
}

static void deconv_backward_impl(const Tensor& x, const Tensor& w, const Tensor& gy,
                                 Tensor& gx, Tensor& gw, Tensor* gb, bool parallel) {
    check_deconv_args(x, w, nullptr);
    gx = Tensor(x.shape());
    gw = Tensor(w.shape());
    if (gb) *gb = Tensor({w.dim(1)});
    const int n_img = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(1);

#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int n = 0; n < n_img; ++n)
        for (int ci = 0; ci < cin; ++ci)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix) {
                    real acc = 0.0;
                    for (int co = 0; co < cout; ++co)
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx)
                                acc += gy.at4(n, co, 2 * iy + ky, 2 * ix + kx) * w.at4(ci, co, ky, kx);
                    gx.at4(n, ci, iy, ix) = acc;
                }

#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx) {
                    real acc = 0.0;
                    for (int n = 0; n < n_img; ++n)
                        for (int iy = 0; iy < h; ++iy)
                            for (int ix = 0; ix < wd; ++ix)
                                acc += x.at4(n, ci, iy, ix) * gy.at4(n, co, 2 * iy + ky, 2 * ix + kx);
                    gw.at4(ci, co, ky, kx) = acc;
                }

    if (gb)
        for (int co = 0; co < cout; ++co) {
            real acc = 0.0;
            for (int n = 0; n < n_img; ++n)
                for (int oy = 0; oy < 2 * h; ++oy)
                    for (int ox = 0; ox < 2 * wd; ++ox)
                        acc += gy.at4(n, co, oy, ox);
            (*gb)[co] = acc;
        }
}

void conv_transpose2x_backward_serial(const Tensor& x, const Tensor& w, const Tensor& gy,
                                      Tensor& gx, Tensor& gw, Tensor* gb) {
    deconv_backward_impl(x, w, gy, gx, gw, gb, false);
}

void conv_transpose2x_backward_parallel(const Tensor& x, const Tensor& w, const Tensor& gy,
                                        Tensor& gx, Tensor& gw, Tensor* gb) {
    deconv_backward_impl(x, w, gy, gx, gw, gb, true);
}

Tensor conv_transpose2x_forward(const Tensor& x, const Tensor& w, const Tensor* b) {
    return backend() == Backend::Serial ? conv_transpose2x_forward_serial(x, w, b)
                                        : conv_transpose2x_forward_parallel(x, w, b);
}

void conv_transpose2x_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                               Tensor& gx, Tensor& gw, Tensor* gb) {
    if (backend() == Backend::Serial)
        conv_transpose2x_backward_serial(x, w, gy, gx, gw, gb);
    else
        conv_transpose2x_backward_parallel(x, w, gy, gx, gw, gb);
}

// ---------------------------------------------------------------------------
// max pooling, stride 1, same padding (window clipped at borders)
// ---------------------------------------------------------------------------

static void check_pool_args(const Tensor& x, int k) {
    if (x.ndim() != 4) throw InputError("max_pool_same: rank-4 input expected");
    if (k < 1 || k % 2 == 0) throw ConfigError("max_pool_same: kernel must be odd and >= 1, got " + std::to_string(k));
}

static Tensor pool_forward_impl(const Tensor& x, int k, std::vector<std::int64_t>& argmax, bool parallel) {
    check_pool_args(x, k);
    const int n_img = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int r = k / 2;
    Tensor y(x.shape());
    argmax.assign(static_cast<size_t>(y.numel()), 0);
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int n = 0; n < n_img; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wd; ++ox) {
                    real best = -std::numeric_limits<real>::infinity();
                    std::int64_t best_idx = 0;
                    for (int iy = std::max(0, oy - r); iy <= std::min(h - 1, oy + r); ++iy)
                        for (int ix = std::max(0, ox - r); ix <= std::min(wd - 1, ox + r); ++ix) {
                            const real v = x.at4(n, ch, iy, ix);
                            if (v > best) {
                                best = v;
                                best_idx = ((static_cast<std::int64_t>(n) * c + ch) * h + iy) * wd + ix;
                            }
                        }
                    y.at4(n, ch, oy, ox) = best;
                    argmax[static_cast<size_t>(((static_cast<std::int64_t>(n) * c + ch) * h + oy) * wd + ox)] = best_idx;
                }
    return y;
}

Tensor max_pool_same_forward_serial(const Tensor& x, int k, std::vector<std::int64_t>& argmax) {
    return pool_forward_impl(x, k, argmax, false);
}
Tensor max_pool_same_forward_parallel(const Tensor& x, int k, std::vector<std::int64_t>& argmax) {
    return pool_forward_impl(x, k, argmax, true);
}
Tensor max_pool_same_forward(const Tensor& x, int k, std::vector<std::int64_t>& argmax) {
    return backend() == Backend::Serial ? max_pool_same_forward_serial(x, k, argmax)
                                        : max_pool_same_forward_parallel(x, k, argmax);
}

Tensor max_pool_same_backward_serial(const Tensor& x, int k, const std::vector<std::int64_t>& argmax,
                                     const Tensor& gy) {
    check_pool_args(x, k);
    Tensor gx(x.shape());
    for (std::int64_t o = 0; o < gy.numel(); ++o) gx[argmax[static_cast<size_t>(o)]] += gy[o];
    return gx;
}

Tensor max_pool_same_backward_parallel(const Tensor& x, int k, const std::vector<std::int64_t>& argmax,
                                       const Tensor& gy) {
    check_pool_args(x, k);
    const int n_img = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int r = k / 2;
    Tensor gx(x.shape());
    // Gather form: each input element sums the outputs that selected it, so
    // overlapping windows never race.
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < n_img; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix) {
                    const std::int64_t self = ((static_cast<std::int64_t>(n) * c + ch) * h + iy) * wd + ix;
                    real acc = 0.0;
                    for (int oy = std::max(0, iy - r); oy <= std::min(h - 1, iy + r); ++oy)
                        for (int ox = std::max(0, ix - r); ox <= std::min(wd - 1, ix + r); ++ox) {
                            const std::int64_t o = ((static_cast<std::int64_t>(n) * c + ch) * h + oy) * wd + ox;
                            if (argmax[static_cast<size_t>(o)] == self) acc += gy[o];
                        }
                    gx[self] = acc;
                }
    return gx;
}

Tensor max_pool_same_backward(const Tensor& x, int k, const std::vector<std::int64_t>& argmax, const Tensor& gy) {
    return backend() == Backend::Serial ? max_pool_same_backward_serial(x, k, argmax, gy)
                                        : max_pool_same_backward_parallel(x, k, argmax, gy);
}

// ---------------------------------------------------------------------------
// nearest x2 upsampling
// ---------------------------------------------------------------------------

static Tensor upsample_forward_impl(const Tensor& x, bool parallel) {
    if (x.ndim() != 4) throw InputError("upsample2: rank-4 input expected");
    const int n_img = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    Tensor y({n_img, c, 2 * h, 2 * wd});
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int n = 0; n < n_img; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix) {
                    const real v = x.at4(n, ch, iy, ix);
                    y.at4(n, ch, 2 * iy, 2 * ix) = v;
                    y.at4(n, ch, 2 * iy, 2 * ix + 1) = v;
                    y.at4(n, ch, 2 * iy + 1, 2 * ix) = v;
                    y.at4(n, ch, 2 * iy + 1, 2 * ix + 1) = v;
                }
    return y;
}

static Tensor upsample_backward_impl(const Tensor& gy, bool parallel) {
    if (gy.ndim() != 4) throw InputError("upsample2 backward: rank-4 input expected");
    if (gy.dim(2) % 2 || gy.dim(3) % 2) throw InputError("upsample2 backward: odd spatial dims");
    const int n_img = gy.dim(0), c = gy.dim(1), h = gy.dim(2) / 2, wd = gy.dim(3) / 2;
    Tensor gx({n_img, c, h, wd});
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int n = 0; n < n_img; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix)
                    gx.at4(n, ch, iy, ix) = gy.at4(n, ch, 2 * iy, 2 * ix) + gy.at4(n, ch, 2 * iy, 2 * ix + 1) +
                                            gy.at4(n, ch, 2 * iy + 1, 2 * ix) + gy.at4(n, ch, 2 * iy + 1, 2 * ix + 1);
    return gx;
}

Tensor upsample2_forward_serial(const Tensor& x) { return upsample_forward_impl(x, false); }
Tensor upsample2_forward_parallel(const Tensor& x) { return upsample_forward_impl(x, true); }
Tensor upsample2_forward(const Tensor& x) {
    return backend() == Backend::Serial ? upsample2_forward_serial(x) : upsample2_forward_parallel(x);
}

Tensor upsample2_backward_serial(const Tensor& gy) { return upsample_backward_impl(gy, false); }
Tensor upsample2_backward_parallel(const Tensor& gy) { return upsample_backward_impl(gy, true); }
Tensor upsample2_backward(const Tensor& gy) {
    return backend() == Backend::Serial ? upsample2_backward_serial(gy) : upsample2_backward_parallel(gy);
}

}  // namespace pdp::kernels
