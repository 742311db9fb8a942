#pragma once

// Raw computational kernels behind the autodiff ops. All kernels use a fixed
// per-element accumulation order, so results are bitwise reproducible for any
// thread count. Parallel loops only ever split writes that target disjoint
// memory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stereocorr/tensor.hpp"

namespace stereocorr::kern {

template <typename F>
inline void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
#else
    for (std::int64_t i = 0; i < n; ++i) body(i);
#endif
}

inline int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

// ---------------------------------------------------------------------------
// conv2d: weights (outC, inC, kh, kw), odd kernel, zero padding (ph, pw).
// out(b,oc,i,j) = bias(oc) + sum_{ic,ki,kj} w(oc,ic,ki,kj) * in(b,ic,i*s+ki-ph,j*s+kj-pw)
// ---------------------------------------------------------------------------

inline Shape4 conv2d_out_shape(const Shape4& in, const Shape4& w, int stride, int ph, int pw) {
    if (in.c != w.c)
        throw ShapeError("conv2d: input channels axis mismatch: input has " +
                         std::to_string(in.c) + ", weights expect " + std::to_string(w.c));
    if (w.h % 2 == 0 || w.w % 2 == 0)
        throw ShapeError("conv2d: kernel axes must be odd, got " + std::to_string(w.h) + "x" +
                         std::to_string(w.w));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int oh = (in.h + 2 * ph - w.h) / stride + 1;
    const int ow = (in.w + 2 * pw - w.w) / stride + 1;
    if (oh < 1) throw ShapeError("conv2d: rows axis too small: " + std::to_string(in.h) +
                                 " with kernel " + std::to_string(w.h));
    if (ow < 1) throw ShapeError("conv2d: cols axis too small: " + std::to_string(in.w) +
                                 " with kernel " + std::to_string(w.w));
    return Shape4{in.n, w.n, oh, ow};
}

template <typename T>
std::vector<T>& tls_scratch(int slot) {
    static thread_local std::vector<T> bufs[2];
    return bufs[size_t(slot)];
}

// Row-block height keeping the per-block working set cache-resident.
inline int conv_block_rows(int channels, int padded_width, int rows,
                           std::int64_t budget = 384 * 1024) {
    const std::int64_t per_row = std::int64_t(channels) * padded_width * sizeof(float);
    const int bh = int(std::max<std::int64_t>(8, budget / std::max<std::int64_t>(1, per_row)));
    return std::min(rows, bh);
}

// Fast path for stride-1 "same" convolutions (every conv in the networks):
// inputs are copied once into zero-padded planes, so each kernel tap becomes
// one long contiguous axpy. Out-of-range taps turn into exact zero-adds,
// which keeps results bitwise identical to the generic loop. Output rows are
// processed in blocks small enough that all input channels of a block stay in
// cache while every output channel sweeps over it.
template <typename T>
void same_conv_forward(const Tensor4T<T>& in, const Tensor4T<T>& w, const std::vector<T>& bias,
                       Tensor4T<T>& out) {
    const int B = in.shape.n, inC = in.shape.c, outC = w.shape.n;
    const int H = in.shape.h, W = in.shape.w, kh = w.shape.h, kw = w.shape.w;
    const int ph = kh / 2, pw = kw / 2;
    const int Hp = H + kh - 1, Wp = W + kw - 1;
    const std::int64_t np = std::int64_t(Hp) * Wp;

    std::vector<T> inpad(size_t(std::int64_t(B) * inC * np), T(0));
    parallel_for(std::int64_t(B) * inC, [&](std::int64_t bic) {
        const T* src = in.values.data() + bic * H * W;
        T* dst = inpad.data() + bic * np;
        for (int i = 0; i < H; ++i)
            std::copy(src + std::int64_t(i) * W, src + std::int64_t(i) * W + W,
                      dst + std::int64_t(i + ph) * Wp + pw);
    });

    const int bh = conv_block_rows(inC, Wp, H);
    const int nblocks = (H + bh - 1) / bh;
    constexpr int kGroup = 4; // output channels sharing one input sweep
    parallel_for(std::int64_t(B) * nblocks, [&](std::int64_t bb) {
        const int b = int(bb / nblocks), blk = int(bb % nblocks);
        const int r0 = blk * bh, r1 = std::min(H, r0 + bh);
        const std::int64_t nblk = std::int64_t(r1 - r0) * Wp;
        auto& obuf = tls_scratch<T>(0);
        obuf.resize(size_t(kGroup * nblk));
        for (int oc0 = 0; oc0 < outC; oc0 += kGroup) {
            const int gn = std::min(kGroup, outC - oc0);
            for (int g = 0; g < gn; ++g)
                std::fill(obuf.data() + g * nblk, obuf.data() + (g + 1) * nblk,
                          bias.empty() ? T(0) : bias[size_t(oc0 + g)]);
            for (int ic = 0; ic < inC; ++ic) {
                const T* ip = inpad.data() + (std::int64_t(b) * inC + ic) * np;
                for (int g = 0; g < gn; ++g) {
                    const T* wrow = w.data() + (std::int64_t(oc0 + g) * inC + ic) * kh * kw;
                    T* dstbuf = obuf.data() + g * nblk;
                    for (int ki = 0; ki < kh; ++ki) {
                        // output row i (at out_pad row i+ph) reads in_pad row i+ki
                        const T* src_base = ip + (std::int64_t(r0) + ki) * Wp;
                        for (int kj = 0; kj < kw; ++kj) {
                            const T wv = wrow[ki * kw + kj];
                            const std::int64_t shift = kj - pw;
                            const std::int64_t xlo = std::max<std::int64_t>(0, -shift);
                            const std::int64_t xhi = std::min<std::int64_t>(nblk, nblk - shift);
                            T* dst = dstbuf + xlo;
                            const T* src = src_base + xlo + shift;
                            const std::int64_t n = xhi - xlo;
                            for (std::int64_t x = 0; x < n; ++x) dst[x] += wv * src[x];
                        }
                    }
                }
            }
            for (int g = 0; g < gn; ++g) {
                T* oplane = out.plane(b, oc0 + g);
                for (int i = r0; i < r1; ++i)
                    std::copy(obuf.data() + g * nblk + std::int64_t(i - r0) * Wp + pw,
                              obuf.data() + g * nblk + std::int64_t(i - r0) * Wp + pw + W,
                              oplane + std::int64_t(i) * W);
            }
        }
    });
}

template <typename T>
void same_conv_backward_input(const Tensor4T<T>& w, const Tensor4T<T>& dout_holder, const T* dout,
                              Tensor4T<T>& in, T* din) {
    const int B = in.shape.n, inC = in.shape.c, outC = dout_holder.shape.c;
    const int H = in.shape.h, W = in.shape.w, kh = w.shape.h, kw = w.shape.w;
    const int ph = kh / 2, pw = kw / 2;
    const int Hp = H + kh - 1, Wp = W + kw - 1;
    const std::int64_t np = std::int64_t(Hp) * Wp;

    std::vector<T> gpad(size_t(std::int64_t(B) * outC * np), T(0));
    parallel_for(std::int64_t(B) * outC, [&](std::int64_t bc) {
        const T* src = dout + bc * H * W;
        T* dst = gpad.data() + bc * np;
        for (int i = 0; i < H; ++i)
            std::copy(src + std::int64_t(i) * W, src + std::int64_t(i) * W + W,
                      dst + std::int64_t(i + ph) * Wp + pw);
    });

    const int bh = conv_block_rows(outC, Wp, H);
    const int nblocks = (H + bh - 1) / bh;
    constexpr int kGroup = 4;
    parallel_for(std::int64_t(B) * nblocks, [&](std::int64_t bb) {
        const int b = int(bb / nblocks), blk = int(bb % nblocks);
        const int r0 = blk * bh, r1 = std::min(H, r0 + bh);
        const std::int64_t nblk = std::int64_t(r1 - r0) * Wp;
        auto& dbuf = tls_scratch<T>(1);
        dbuf.resize(size_t(kGroup * nblk));
        for (int ic0 = 0; ic0 < inC; ic0 += kGroup) {
            const int gn = std::min(kGroup, inC - ic0);
            std::fill(dbuf.data(), dbuf.data() + gn * nblk, T(0));
            for (int oc = 0; oc < outC; ++oc) {
                const T* gp = gpad.data() + (std::int64_t(b) * outC + oc) * np;
                for (int g = 0; g < gn; ++g) {
                    const T* wrow = w.data() + (std::int64_t(oc) * inC + ic0 + g) * kh * kw;
                    T* dstbuf = dbuf.data() + g * nblk;
                    for (int ki = 0; ki < kh; ++ki) {
                        // din row y (block offset) reads the adjoint tap row
                        // (y + kh-1 - ki) of the padded upstream gradient
                        const T* src_base = gp + (std::int64_t(r0) + (kh - 1 - ki)) * Wp;
                        for (int kj = 0; kj < kw; ++kj) {
                            const T wv = wrow[ki * kw + kj];
                            const std::int64_t shift = (kw - 1 - kj) - pw;
                            const std::int64_t xlo = std::max<std::int64_t>(0, -shift);
                            const std::int64_t xhi = std::min<std::int64_t>(nblk, nblk - shift);
                            T* dst = dstbuf + xlo;
                            const T* src = src_base + xlo + shift;
                            const std::int64_t n = xhi - xlo;
                            for (std::int64_t x = 0; x < n; ++x) dst[x] += wv * src[x];
                        }
                    }
                }
            }
            for (int g = 0; g < gn; ++g) {
                T* dplane = din + (std::int64_t(b) * inC + ic0 + g) * std::int64_t(H) * W;
                for (int i = r0; i < r1; ++i) {
                    const T* src = dbuf.data() + g * nblk + std::int64_t(i - r0) * Wp + pw;
                    T* dst = dplane + std::int64_t(i) * W;
                    for (int j = 0; j < W; ++j) dst[j] += src[j];
                }
            }
        }
    });
}

template <typename T>
void conv2d_forward(const Tensor4T<T>& in, const Tensor4T<T>& w, const std::vector<T>& bias,
                    int stride, int ph, int pw, Tensor4T<T>& out) {
    if (stride == 1 && w.shape.h == 2 * ph + 1 && w.shape.w == 2 * pw + 1) {
        same_conv_forward(in, w, bias, out);
        return;
    }
    const Shape4 os = out.shape;
    const int inC = in.shape.c, kh = w.shape.h, kw = w.shape.w;
    const int H = in.shape.h, W = in.shape.w, OH = os.h, OW = os.w;
    parallel_for(std::int64_t(os.n) * os.c, [&](std::int64_t bc) {
        const int b = int(bc / os.c), oc = int(bc % os.c);
        T* oplane = out.plane(b, oc);
        std::fill(oplane, oplane + std::int64_t(OH) * OW, bias.empty() ? T(0) : bias[size_t(oc)]);
        for (int ic = 0; ic < inC; ++ic) {
            const T* iplane = in.plane(b, ic);
            const T* wrow = w.data() + (std::int64_t(oc) * inC + ic) * kh * kw;
            for (int ki = 0; ki < kh; ++ki) {
                for (int i = 0; i < OH; ++i) {
                    const int y = i * stride + ki - ph;
                    if (y < 0 || y >= H) continue;
                    const T* irow = iplane + std::int64_t(y) * W;
                    T* orow = oplane + std::int64_t(i) * OW;
                    for (int kj = 0; kj < kw; ++kj) {
                        const T wv = wrow[ki * kw + kj];
                        if (stride == 1) {
                            const int jlo = std::max(0, pw - kj);
                            const int jhi = std::min(OW, W + pw - kj);
                            const T* src = irow + (jlo + kj - pw);
                            T* dst = orow + jlo;
                            for (int j = 0; j < jhi - jlo; ++j) dst[j] += wv * src[j];
                        } else {
                            for (int j = 0; j < OW; ++j) {
                                const int x = j * stride + kj - pw;
                                if (x >= 0 && x < W) orow[j] += wv * irow[x];
                            }
                        }
                    }
                }
            }
        }
    });
}

// din += dconv/dinput applied to dout
template <typename T>
void conv2d_backward_input(const Tensor4T<T>& w, const Tensor4T<T>& dout_holder, const T* dout,
                           int stride, int ph, int pw, Tensor4T<T>& in, T* din) {
    if (stride == 1 && w.shape.h == 2 * ph + 1 && w.shape.w == 2 * pw + 1) {
        same_conv_backward_input(w, dout_holder, dout, in, din);
        return;
    }
    const Shape4 os = dout_holder.shape;
    const int inC = in.shape.c, outC = os.c, kh = w.shape.h, kw = w.shape.w;
    const int H = in.shape.h, W = in.shape.w, OH = os.h, OW = os.w;
    const std::int64_t iplane_sz = std::int64_t(H) * W, oplane_sz = std::int64_t(OH) * OW;
    parallel_for(std::int64_t(in.shape.n) * inC, [&](std::int64_t bic) {
        const int b = int(bic / inC), ic = int(bic % inC);
        T* dplane = din + (std::int64_t(b) * inC + ic) * iplane_sz;
        for (int oc = 0; oc < outC; ++oc) {
            const T* goplane = dout + (std::int64_t(b) * outC + oc) * oplane_sz;
            const T* wrow = w.data() + (std::int64_t(oc) * inC + ic) * kh * kw;
            for (int ki = 0; ki < kh; ++ki) {
                for (int y = 0; y < H; ++y) {
                    if (stride == 1) {
                        const int i = y + ph - ki;
                        if (i < 0 || i >= OH) continue;
                        const T* grow = goplane + std::int64_t(i) * OW;
                        T* drow = dplane + std::int64_t(y) * W;
                        for (int kj = 0; kj < kw; ++kj) {
                            const T wv = wrow[ki * kw + kj];
                            const int xlo = std::max(0, kj - pw);
                            const int xhi = std::min(W, OW + kj - pw);
                            const T* src = grow + (xlo + pw - kj);
                            T* dst = drow + xlo;
                            for (int x = 0; x < xhi - xlo; ++x) dst[x] += wv * src[x];
                        }
                    } else {
                        const int num = y + ph - ki;
                        if (num % stride != 0) continue;
                        const int i = num / stride;
                        if (i < 0 || i >= OH) continue;
                        const T* grow = goplane + std::int64_t(i) * OW;
                        T* drow = dplane + std::int64_t(y) * W;
                        for (int kj = 0; kj < kw; ++kj) {
                            const T wv = wrow[ki * kw + kj];
                            for (int j = 0; j < OW; ++j) {
                                const int x = j * stride + kj - pw;
                                if (x >= 0 && x < W) drow[x] += wv * grow[j];
                            }
                        }
                    }
                }
            }
        }
    });
}

// dw += dconv/dweights, db += dconv/dbias. Builds one im2col row per output
// position and spreads it over the output-channel rows of dw; each thread owns
// a contiguous slice of output channels, so accumulation stays race-free and
// ordered.
template <typename T>
void conv2d_backward_weights(const Tensor4T<T>& in, const Tensor4T<T>& dout_holder, const T* dout,
                             int stride, int ph, int pw, const Shape4& wshape, T* dw, T* db) {
    const Shape4 os = dout_holder.shape;
    const int inC = in.shape.c, outC = os.c, kh = wshape.h, kw = wshape.w;
    const int H = in.shape.h, W = in.shape.w, OH = os.h, OW = os.w;
    const int K = inC * kh * kw;
    const std::int64_t oplane_sz = std::int64_t(OH) * OW;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
#ifdef _OPENMP
        const int nth = omp_get_num_threads(), tid = omp_get_thread_num();
#else
        const int nth = 1, tid = 0;
#endif
        const int oc_lo = int(std::int64_t(outC) * tid / nth);
        const int oc_hi = int(std::int64_t(outC) * (tid + 1) / nth);
        if (oc_lo < oc_hi) {
            // row blocks keep the input slice feeding the im2col rows cached
            const int bh = conv_block_rows(inC, W, OH);
            std::vector<T> col(size_t(K), T(0));
            for (int b = 0; b < in.shape.n; ++b) {
                for (int i0 = 0; i0 < OH; i0 += bh) {
                    const int i1 = std::min(OH, i0 + bh);
                    for (int i = i0; i < i1; ++i) {
                        for (int j = 0; j < OW; ++j) {
                            T* c = col.data();
                            for (int ic = 0; ic < inC; ++ic) {
                                const T* iplane = in.plane(b, ic);
                                for (int ki = 0; ki < kh; ++ki) {
                                    const int y = i * stride + ki - ph;
                                    if (y < 0 || y >= H) {
                                        for (int kj = 0; kj < kw; ++kj) *c++ = T(0);
                                        continue;
                                    }
                                    const T* irow = iplane + std::int64_t(y) * W;
                                    for (int kj = 0; kj < kw; ++kj) {
                                        const int x = j * stride + kj - pw;
                                        *c++ = (x >= 0 && x < W) ? irow[x] : T(0);
                                    }
                                }
                            }
                            for (int oc = oc_lo; oc < oc_hi; ++oc) {
                                const T g = dout[(std::int64_t(b) * outC + oc) * oplane_sz +
                                                 std::int64_t(i) * OW + j];
                                if (g == T(0)) continue;
                                T* wrow = dw + std::int64_t(oc) * K;
                                const T* cc = col.data();
                                for (int t = 0; t < K; ++t) wrow[t] += g * cc[t];
                                if (db) db[oc] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 window, stride 2. Backward routes the upstream gradient to the
// first-encountered maximum of each window.
// ---------------------------------------------------------------------------

template <typename T>
void maxpool2_forward(const Tensor4T<T>& in, Tensor4T<T>& out, std::vector<std::uint8_t>& argmax) {
    if (in.shape.h % 2 != 0)
        throw ShapeError("maxpool2: rows axis must be even, got " + std::to_string(in.shape.h));
    if (in.shape.w % 2 != 0)
        throw ShapeError("maxpool2: cols axis must be even, got " + std::to_string(in.shape.w));
    const int OH = in.shape.h / 2, OW = in.shape.w / 2, W = in.shape.w;
    argmax.resize(size_t(out.numel()));
    parallel_for(std::int64_t(in.shape.n) * in.shape.c, [&](std::int64_t bc) {
        const int b = int(bc / in.shape.c), c = int(bc % in.shape.c);
        const T* ip = in.plane(b, c);
        T* op = out.plane(b, c);
        std::uint8_t* ap = argmax.data() + bc * OH * OW;
        for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
                const T* win = ip + std::int64_t(2 * i) * W + 2 * j;
                T best = win[0];
                std::uint8_t arg = 0;
                if (win[1] > best) { best = win[1]; arg = 1; }
                if (win[W] > best) { best = win[W]; arg = 2; }
                if (win[W + 1] > best) { best = win[W + 1]; arg = 3; }
                op[std::int64_t(i) * OW + j] = best;
                ap[std::int64_t(i) * OW + j] = arg;
            }
        }
    });
}

template <typename T>
void maxpool2_backward(const Tensor4T<T>& out_holder, const T* dout,
                       const std::vector<std::uint8_t>& argmax, Tensor4T<T>& in, T* din) {
    const int OH = out_holder.shape.h, OW = out_holder.shape.w, W = in.shape.w;
    parallel_for(std::int64_t(in.shape.n) * in.shape.c, [&](std::int64_t bc) {
        T* dp = din + bc * std::int64_t(in.shape.h) * W;
        const T* gp = dout + bc * std::int64_t(OH) * OW;
        const std::uint8_t* ap = argmax.data() + bc * OH * OW;
        for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
                const std::uint8_t a = ap[std::int64_t(i) * OW + j];
                const int y = 2 * i + (a >> 1), x = 2 * j + (a & 1);
                dp[std::int64_t(y) * W + x] += gp[std::int64_t(i) * OW + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// deconv2: 3x3 kernel, stride 2, output exactly doubles the spatial size.
// Forward is the adjoint of conv2d(kernel 3, stride 2, pad 1) with shared
// weights; weights are laid out (inC, outC, 3, 3).
// An output pixel r receives input i taps with 2*i + ki - 1 == r.
// ---------------------------------------------------------------------------

inline Shape4 deconv2_out_shape(const Shape4& in, const Shape4& w) {
    if (w.h != 3 || w.w != 3)
        throw ConfigError("deconv2: kernel must be 3x3, got " + std::to_string(w.h) + "x" +
                          std::to_string(w.w));
    if (in.c != w.n)
        throw ShapeError("deconv2: input channels axis mismatch: input has " +
                         std::to_string(in.c) + ", weights expect " + std::to_string(w.n));
    return Shape4{in.n, w.c, in.h * 2, in.w * 2};
}

// The stride-2 grid splits the output into four parity quadrants; each
// quadrant is a plain unit-stride combination of 1, 2 or 4 kernel taps over
// the (bottom/right zero-padded) input, so every tap is one contiguous axpy.
// Output parity (a, b) at quadrant cell (i', j') collects taps with
// 2i + ki - 1 = 2i' + a: a=0 -> (ki=1, i=i'); a=1 -> (ki=0, i=i'+1) and
// (ki=2, i=i'); columns work the same way.
template <typename T>
void deconv2_forward(const Tensor4T<T>& in, const Tensor4T<T>& w, const std::vector<T>& bias,
                     Tensor4T<T>& out) {
    const int inC = in.shape.c, outC = out.shape.c;
    const int H = in.shape.h, W = in.shape.w, OW = out.shape.w;
    const int P1 = W + 1; // input pitch with one trailing zero column
    const std::int64_t np = std::int64_t(H + 1) * P1;
    const std::int64_t nq = std::int64_t(H) * P1;

    // +2 slack: taps over the junk pitch column may read one element past a
    // plane; those values land in the junk column and are never extracted
    std::vector<T> inpad(size_t(std::int64_t(in.shape.n) * inC * np + 2), T(0));
    parallel_for(std::int64_t(in.shape.n) * inC, [&](std::int64_t bic) {
        const T* src = in.values.data() + bic * H * W;
        T* dst = inpad.data() + bic * np;
        for (int i = 0; i < H; ++i)
            std::copy(src + std::int64_t(i) * W, src + std::int64_t(i) * W + W,
                      dst + std::int64_t(i) * P1);
    });

    // tap sets per quadrant: (ki, kj, input row offset, input col offset)
    struct Tap {
        int ki, kj, di, dj;
    };
    static constexpr Tap kTaps[4][4] = {
        {{1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}},
        {{1, 0, 0, 1}, {1, 2, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}},
        {{0, 1, 1, 0}, {2, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}},
        {{0, 0, 1, 1}, {0, 2, 1, 0}, {2, 0, 0, 1}, {2, 2, 0, 0}},
    };
    static constexpr int kTapCount[4] = {1, 2, 2, 4};

    parallel_for(std::int64_t(in.shape.n) * outC, [&](std::int64_t bc) {
        const int b = int(bc / outC), oc = int(bc % outC);
        auto& quads = tls_scratch<T>(0);
        quads.assign(size_t(4 * nq), bias.empty() ? T(0) : bias[size_t(oc)]);
        for (int ic = 0; ic < inC; ++ic) {
            const T* ip = inpad.data() + (std::int64_t(b) * inC + ic) * np;
            const T* wrow = w.data() + (std::int64_t(ic) * outC + oc) * 9;
            for (int q = 0; q < 4; ++q) {
                T* Q = quads.data() + std::int64_t(q) * nq;
                for (int t = 0; t < kTapCount[q]; ++t) {
                    const Tap tap = kTaps[q][t];
                    const T wv = wrow[tap.ki * 3 + tap.kj];
                    const T* src = ip + std::int64_t(tap.di) * P1 + tap.dj;
                    for (std::int64_t x = 0; x < nq; ++x) Q[x] += wv * src[x];
                }
            }
        }
        T* oplane = out.plane(b, oc);
        for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
                const T* Q = quads.data() + std::int64_t(a * 2 + bb) * nq;
                for (int i = 0; i < H; ++i) {
                    T* orow = oplane + std::int64_t(2 * i + a) * OW + bb;
                    const T* qrow = Q + std::int64_t(i) * P1;
                    for (int j = 0; j < W; ++j) orow[2 * j] = qrow[j];
                }
            }
    });
}

// din += adjoint: a stride-2, pad-1 convolution of dout with the same weights.
// dout is first split into its four parity quadrants (with one leading zero
// row/column so the ki=0 / kj=0 taps read exact zeros at the border); every
// tap then becomes one contiguous axpy. Tap (ki, kj) reads quadrant
// ((ki+1)%2, (kj+1)%2) at row offset ki==0 ? i-1+1 : ..., folded into the
// leading pad.
template <typename T>
void deconv2_backward_input(const Tensor4T<T>& w, const Tensor4T<T>& out_holder, const T* dout,
                            Tensor4T<T>& in, T* din) {
    const int inC = in.shape.c, outC = out_holder.shape.c;
    const int H = in.shape.h, W = in.shape.w, OW = out_holder.shape.w;
    const int B = in.shape.n;
    const int P1 = W + 1; // leading zero column
    const std::int64_t nq = std::int64_t(H + 1) * P1; // leading zero row
    const std::int64_t plane = std::int64_t(H) * P1;

    // quadrant views of dout: G[q][(i+1)*P1 + (j+1)] = dout(2i+q/2, 2j+q%2)
    std::vector<T> gq(size_t(std::int64_t(B) * outC * 4 * nq + 2), T(0));
    parallel_for(std::int64_t(B) * outC, [&](std::int64_t bc) {
        const T* gplane = dout + bc * std::int64_t(2 * H) * OW;
        for (int q = 0; q < 4; ++q) {
            T* G = gq.data() + (bc * 4 + q) * nq;
            const int a = q / 2, bb = q % 2;
            for (int i = 0; i < H; ++i) {
                const T* grow = gplane + std::int64_t(2 * i + a) * OW + bb;
                T* dst = G + std::int64_t(i + 1) * P1 + 1;
                for (int j = 0; j < W; ++j) dst[j] = grow[2 * j];
            }
        }
    });

    // tap (ki, kj): din(i, j) += w * G_{(ki+1)%2, (kj+1)%2}[i + di][j + dj]
    // in padded coordinates, where di/dj fold the -1 shifts of ki==0 / kj==0
    // into the leading pad: ki=0 -> row i, ki=1 -> row i+1 of G0., ki=2 ->
    // row i+1 of G1. (same for columns).
    parallel_for(std::int64_t(B) * inC, [&](std::int64_t bic) {
        const int b = int(bic / inC), ic = int(bic % inC);
        auto& dbuf = tls_scratch<T>(1);
        dbuf.assign(size_t(plane), T(0));
        for (int oc = 0; oc < outC; ++oc) {
            const T* wrow = w.data() + (std::int64_t(ic) * outC + oc) * 9;
            const T* G = gq.data() + ((std::int64_t(b) * outC + oc) * 4) * nq;
            for (int ki = 0; ki < 3; ++ki) {
                const int qa = (ki + 1) % 2;
                const int di = (ki == 0) ? 0 : 1;
                for (int kj = 0; kj < 3; ++kj) {
                    const int qb = (kj + 1) % 2;
                    const int dj = (kj == 0) ? 0 : 1;
                    const T wv = wrow[ki * 3 + kj];
                    const T* src = G + std::int64_t(qa * 2 + qb) * nq +
                                   std::int64_t(di) * P1 + dj;
                    T* dst = dbuf.data();
                    for (std::int64_t x = 0; x < plane; ++x) dst[x] += wv * src[x];
                }
            }
        }
        T* dplane = din + (std::int64_t(b) * inC + ic) * std::int64_t(H) * W;
        for (int i = 0; i < H; ++i) {
            const T* src = dbuf.data() + std::int64_t(i) * P1;
            T* dst = dplane + std::int64_t(i) * W;
            for (int j = 0; j < W; ++j) dst[j] += src[j];
        }
    });
}

template <typename T>
void deconv2_backward_weights(const Tensor4T<T>& in, const Tensor4T<T>& out_holder, const T* dout,
                              const Shape4& wshape, T* dw, T* db) {
    const int inC = in.shape.c, outC = out_holder.shape.c;
    const int H = in.shape.h, W = in.shape.w, OH = out_holder.shape.h, OW = out_holder.shape.w;
    const int K = outC * 9;
    const std::int64_t oplane_sz = std::int64_t(OH) * OW;
    (void)wshape;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
#ifdef _OPENMP
        const int nth = omp_get_num_threads(), tid = omp_get_thread_num();
#else
        const int nth = 1, tid = 0;
#endif
        const int ic_lo = int(std::int64_t(inC) * tid / nth);
        const int ic_hi = int(std::int64_t(inC) * (tid + 1) / nth);
        if (ic_lo < ic_hi) {
            std::vector<T> patch(size_t(K), T(0));
            for (int b = 0; b < in.shape.n; ++b) {
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        T* p = patch.data();
                        for (int oc = 0; oc < outC; ++oc) {
                            const T* gplane = dout + (std::int64_t(b) * outC + oc) * oplane_sz;
                            for (int ki = 0; ki < 3; ++ki) {
                                const int r = 2 * i + ki - 1;
                                if (r < 0 || r >= OH) {
                                    *p++ = T(0); *p++ = T(0); *p++ = T(0);
                                    continue;
                                }
                                const T* grow = gplane + std::int64_t(r) * OW;
                                for (int kj = 0; kj < 3; ++kj) {
                                    const int cc = 2 * j + kj - 1;
                                    *p++ = (cc >= 0 && cc < OW) ? grow[cc] : T(0);
                                }
                            }
                        }
                        for (int ic = ic_lo; ic < ic_hi; ++ic) {
                            const T v = in.at(b, ic, i, j);
                            if (v == T(0)) continue;
                            T* wrow = dw + std::int64_t(ic) * K;
                            const T* pp = patch.data();
                            for (int t = 0; t < K; ++t) wrow[t] += v * pp[t];
                        }
                    }
                }
            }
        }
    }
    if (db) {
        for (int oc = 0; oc < outC; ++oc) {
            T acc = T(0);
            for (int b = 0; b < in.shape.n; ++b) {
                const T* gplane = dout + (std::int64_t(b) * outC + oc) * oplane_sz;
                for (std::int64_t t = 0; t < oplane_sz; ++t) acc += gplane[t];
            }
            db[oc] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// batch normalization, per channel over (batch, rows, cols)
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormSaved {
    std::vector<T> mean;
    std::vector<T> invstd;
};

// Vectorizable fixed-order reductions in double precision (8 independent
// lanes, folded at the end).
template <typename T>
double lane_sum(const T* p, std::int64_t n) {
    double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t t = 0;
    for (; t + 8 <= n; t += 8)
        for (int l = 0; l < 8; ++l) lanes[l] += double(p[t + l]);
    double tail = 0;
    for (; t < n; ++t) tail += double(p[t]);
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
           ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

template <typename T>
double lane_sum_sq_dev(const T* p, std::int64_t n, double mu) {
    double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t t = 0;
    for (; t + 8 <= n; t += 8)
        for (int l = 0; l < 8; ++l) {
            const double d = double(p[t + l]) - mu;
            lanes[l] += d * d;
        }
    double tail = 0;
    for (; t < n; ++t) {
        const double d = double(p[t]) - mu;
        tail += d * d;
    }
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
           ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// sum of a[t] and sum of a[t] * ((b[t] - mu) * scale) in one pass
template <typename T>
void lane_sum_pair(const T* a, const T* b, std::int64_t n, double mu, double scale, double& s1,
                   double& s2) {
    double l1[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    double l2[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t t = 0;
    for (; t + 8 <= n; t += 8)
        for (int l = 0; l < 8; ++l) {
            const double g = double(a[t + l]);
            l1[l] += g;
            l2[l] += g * ((double(b[t + l]) - mu) * scale);
        }
    double t1 = 0, t2 = 0;
    for (; t < n; ++t) {
        const double g = double(a[t]);
        t1 += g;
        t2 += g * ((double(b[t]) - mu) * scale);
    }
    s1 = ((l1[0] + l1[1]) + (l1[2] + l1[3])) + ((l1[4] + l1[5]) + (l1[6] + l1[7])) + t1;
    s2 = ((l2[0] + l2[1]) + (l2[2] + l2[3])) + ((l2[4] + l2[5]) + (l2[6] + l2[7])) + t2;
}

template <typename T>
void batchnorm_forward_train(const Tensor4T<T>& in, const std::vector<T>& gamma,
                             const std::vector<T>& beta, T eps, Tensor4T<T>& out,
                             BatchNormSaved<T>& saved) {
    const int C = in.shape.c;
    const std::int64_t plane_sz = std::int64_t(in.shape.h) * in.shape.w;
    const std::int64_t N = std::int64_t(in.shape.n) * plane_sz;
    saved.mean.resize(size_t(C));
    saved.invstd.resize(size_t(C));
    parallel_for(C, [&](std::int64_t c) {
        double sum = 0;
        for (int b = 0; b < in.shape.n; ++b) sum += lane_sum(in.plane(b, int(c)), plane_sz);
        const double mu = sum / double(N);
        double ssq = 0;
        for (int b = 0; b < in.shape.n; ++b)
            ssq += lane_sum_sq_dev(in.plane(b, int(c)), plane_sz, mu);
        const double var = ssq / double(N);
        const T invstd = T(1.0 / std::sqrt(var + double(eps)));
        saved.mean[size_t(c)] = T(mu);
        saved.invstd[size_t(c)] = invstd;
        const T g = gamma[size_t(c)], be = beta[size_t(c)], m = T(mu);
        for (int b = 0; b < in.shape.n; ++b) {
            const T* ip = in.plane(b, int(c));
            T* op = out.plane(b, int(c));
            for (std::int64_t t = 0; t < plane_sz; ++t) op[t] = g * (ip[t] - m) * invstd + be;
        }
    });
}

template <typename T>
void batchnorm_update_running(const BatchNormSaved<T>& saved, T eps, T momentum,
                              std::vector<T>& running_mean, std::vector<T>& running_var) {
    for (size_t c = 0; c < saved.mean.size(); ++c) {
        const T var = T(1) / (saved.invstd[c] * saved.invstd[c]) - eps;
        running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * saved.mean[c];
        running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
    }
}

template <typename T>
void batchnorm_forward_infer(const Tensor4T<T>& in, const std::vector<T>& gamma,
                             const std::vector<T>& beta, const std::vector<T>& running_mean,
                             const std::vector<T>& running_var, T eps, Tensor4T<T>& out) {
    const int C = in.shape.c;
    const std::int64_t plane_sz = std::int64_t(in.shape.h) * in.shape.w;
    parallel_for(C, [&](std::int64_t c) {
        const T invstd = T(1.0 / std::sqrt(double(running_var[size_t(c)]) + double(eps)));
        const T g = gamma[size_t(c)], be = beta[size_t(c)], m = running_mean[size_t(c)];
        for (int b = 0; b < in.shape.n; ++b) {
            const T* ip = in.plane(b, int(c));
            T* op = out.plane(b, int(c));
            for (std::int64_t t = 0; t < plane_sz; ++t) op[t] = g * (ip[t] - m) * invstd + be;
        }
    });
}

template <typename T>
void batchnorm_backward_train(const Tensor4T<T>& in, const std::vector<T>& gamma,
                              const BatchNormSaved<T>& saved, const T* dout, T* din, T* dgamma,
                              T* dbeta) {
    const int C = in.shape.c;
    const std::int64_t plane_sz = std::int64_t(in.shape.h) * in.shape.w;
    const std::int64_t N = std::int64_t(in.shape.n) * plane_sz;
    parallel_for(C, [&](std::int64_t c) {
        const T m = saved.mean[size_t(c)], invstd = saved.invstd[size_t(c)];
        double s1 = 0, s2 = 0; // sum dy, sum dy*xhat
        for (int b = 0; b < in.shape.n; ++b) {
            double p1 = 0, p2 = 0;
            lane_sum_pair(dout + (std::int64_t(b) * C + c) * plane_sz, in.plane(b, int(c)),
                          plane_sz, double(m), double(invstd), p1, p2);
            s1 += p1;
            s2 += p2;
        }
        dgamma[c] += T(s2);
        dbeta[c] += T(s1);
        const T g = gamma[size_t(c)];
        const T c1 = T(s1 / double(N)), c2 = T(s2 / double(N));
        for (int b = 0; b < in.shape.n; ++b) {
            const T* ip = in.plane(b, int(c));
            const T* gp = dout + (std::int64_t(b) * C + c) * plane_sz;
            T* dp = din + (std::int64_t(b) * C + c) * plane_sz;
            for (std::int64_t t = 0; t < plane_sz; ++t) {
                const T xhat = (ip[t] - m) * invstd;
                dp[t] += g * invstd * (gp[t] - c1 - xhat * c2);
            }
        }
    });
}

template <typename T>
void batchnorm_backward_infer(const Tensor4T<T>& in, const std::vector<T>& gamma,
                              const std::vector<T>& running_mean, const std::vector<T>& running_var,
                              T eps, const T* dout, T* din, T* dgamma, T* dbeta) {
    const int C = in.shape.c;
    const std::int64_t plane_sz = std::int64_t(in.shape.h) * in.shape.w;
    parallel_for(C, [&](std::int64_t c) {
        const T invstd = T(1.0 / std::sqrt(double(running_var[size_t(c)]) + double(eps)));
        const T m = running_mean[size_t(c)], g = gamma[size_t(c)];
        double s1 = 0, s2 = 0;
        for (int b = 0; b < in.shape.n; ++b) {
            const T* ip = in.plane(b, int(c));
            const T* gp = dout + (std::int64_t(b) * C + c) * plane_sz;
            T* dp = din + (std::int64_t(b) * C + c) * plane_sz;
            for (std::int64_t t = 0; t < plane_sz; ++t) {
                s1 += double(gp[t]);
                s2 += double(gp[t]) * double((ip[t] - m) * invstd);
                dp[t] += gp[t] * g * invstd;
            }
        }
        dgamma[c] += T(s2);
        dbeta[c] += T(s1);
    });
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
void relu_forward(const Tensor4T<T>& in, Tensor4T<T>& out) {
    const std::int64_t n = in.numel();
    const T* ip = in.data();
    T* op = out.data();
    parallel_for(n, [&](std::int64_t t) { op[t] = ip[t] > T(0) ? ip[t] : T(0); });
}

template <typename T>
void relu_backward(const Tensor4T<T>& out, const T* dout, T* din) {
    const std::int64_t n = out.numel();
    const T* op = out.data();
    parallel_for(n, [&](std::int64_t t) {
        if (op[t] > T(0)) din[t] += dout[t];
    });
}

// ---------------------------------------------------------------------------
// layout change: (n, c, h, w) -> (n, h, w, c), used to hand branch outputs to
// the correlation stage with contiguous per-pixel descriptors
// ---------------------------------------------------------------------------

template <typename T>
void nchw_to_nhwc(const Tensor4T<T>& in, Tensor4T<T>& out) {
    const int C = in.shape.c, H = in.shape.h, W = in.shape.w;
    parallel_for(std::int64_t(in.shape.n) * H, [&](std::int64_t bh) {
        const int b = int(bh / H), i = int(bh % H);
        for (int c = 0; c < C; ++c) {
            const T* irow = in.plane(b, c) + std::int64_t(i) * W;
            T* op = out.data() + ((std::int64_t(b) * H + i) * W) * C + c;
            for (int j = 0; j < W; ++j) op[std::int64_t(j) * C] = irow[j];
        }
    });
}

template <typename T>
void nchw_to_nhwc_backward(const Tensor4T<T>& in, const T* dout, T* din) {
    const int C = in.shape.c, H = in.shape.h, W = in.shape.w;
    parallel_for(std::int64_t(in.shape.n) * H, [&](std::int64_t bh) {
        const int b = int(bh / H), i = int(bh % H);
        for (int c = 0; c < C; ++c) {
            T* drow = din + ((std::int64_t(b) * C + c) * H + i) * W;
            const T* gp = dout + ((std::int64_t(b) * H + i) * W) * C + c;
            for (int j = 0; j < W; ++j) drow[j] += gp[std::int64_t(j) * C];
        }
    });
}

// ---------------------------------------------------------------------------
// softmax cross-entropy over one score row with an optional validity mask
// ---------------------------------------------------------------------------

// loss = -log softmax(logits restricted to valid entries)[target].
// If grad != nullptr, writes p - onehot(target) on valid entries, 0 elsewhere.
template <typename T>
double softmax_xent_row(const T* logits, int n, int target, const std::uint8_t* valid, T* grad) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < n; ++d)
        if ((!valid || valid[d]) && double(logits[d]) > maxv) maxv = double(logits[d]);
    double sum = 0;
    for (int d = 0; d < n; ++d)
        if (!valid || valid[d]) sum += std::exp(double(logits[d]) - maxv);
    const double loss = maxv + std::log(sum) - double(logits[target]);
    if (grad) {
        for (int d = 0; d < n; ++d) {
            if (!valid || valid[d]) {
                const double p = std::exp(double(logits[d]) - maxv) / sum;
                grad[d] = T(p) - (d == target ? T(1) : T(0));
            } else {
                grad[d] = T(0);
            }
        }
    }
    return loss;
}

} // namespace stereocorr::kern
