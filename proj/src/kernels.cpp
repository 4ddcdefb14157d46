#include "stabnet/kernels.hpp"

#include <cstring>
#include <string>
#include <vector>

namespace stabnet::kernels {

namespace {

// Fixed-stripe dot product: four interleaved partial sums combined in a
// fixed order. Deterministic, and fast without -ffast-math because the
// stripes break the serial dependency on one accumulator.
float striped_dot(const float* a, const float* b, int n) {
    float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3));
}

}  // namespace

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int p, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * p;
        if (!accumulate) {
            for (int j = 0; j < p; ++j) crow[j] = 0.0f;
        }
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const float ail = arow[l];
            const float* brow = b + static_cast<std::size_t>(l) * p;
            for (int j = 0; j < p; ++j) crow[j] += ail * brow[j];
        }
    }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int p, int k, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * p;
        float* crow = c + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const float dot = striped_dot(arow, b + static_cast<std::size_t>(j) * p, p);
            crow[j] = accumulate ? crow[j] + dot : dot;
        }
    }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int p, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int l = 0; l < k; ++l) {
        float* crow = c + static_cast<std::size_t>(l) * p;
        if (!accumulate) {
            for (int j = 0; j < p; ++j) crow[j] = 0.0f;
        }
        for (int i = 0; i < m; ++i) {
            const float ail = a[static_cast<std::size_t>(i) * k + l];
            const float* brow = b + static_cast<std::size_t>(i) * p;
            for (int j = 0; j < p; ++j) crow[j] += ail * brow[j];
        }
    }
}

Conv2dDims conv2d_dims(int batch, int cin, int h, int w, int cout, int kh, int kw, int stride,
                       int pad) {
    if (stride < 1) throw ParameterError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw ParameterError("conv2d: pad must be >= 0, got " + std::to_string(pad));
    if (h + 2 * pad < kh || w + 2 * pad < kw) {
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                             std::to_string(w + 2 * pad));
    }
    Conv2dDims d;
    d.batch = batch;
    d.cin = cin;
    d.h = h;
    d.w = w;
    d.cout = cout;
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    d.oh = (h + 2 * pad - kh) / stride + 1;
    d.ow = (w + 2 * pad - kw) / stride + 1;
    return d;
}

void im2col(const float* x, float* cols, const Conv2dDims& d) {
    const int pos = d.positions();
    for (int ci = 0; ci < d.cin; ++ci) {
        const float* plane = x + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                float* crow = cols + static_cast<std::size_t>((ci * d.kh + ky) * d.kw + kx) * pos;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    float* out = crow + static_cast<std::size_t>(oy) * d.ow;
                    if (iy < 0 || iy >= d.h) {
                        for (int ox = 0; ox < d.ow; ++ox) out[ox] = 0.0f;
                        continue;
                    }
                    const float* irow = plane + static_cast<std::size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        out[ox] = (ix >= 0 && ix < d.w) ? irow[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

namespace {

void col2im_accumulate(const float* dcols, float* dx, const Conv2dDims& d) {
    const int pos = d.positions();
    for (int ci = 0; ci < d.cin; ++ci) {
        float* plane = dx + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const float* crow =
                    dcols + static_cast<std::size_t>((ci * d.kh + ky) * d.kw + kx) * pos;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    float* irow = plane + static_cast<std::size_t>(iy) * d.w;
                    const float* in = crow + static_cast<std::size_t>(oy) * d.ow;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.w) irow[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d, float* cols) {
    const int patch = d.patch();
    const int pos = d.positions();
    const std::size_t cols_stride = static_cast<std::size_t>(patch) * pos;

#pragma omp parallel
    {
        std::vector<float> scratch;
        if (cols == nullptr) scratch.assign(cols_stride, 0.0f);
#pragma omp for schedule(static)
        for (int b = 0; b < d.batch; ++b) {
            float* cb = cols ? cols + static_cast<std::size_t>(b) * cols_stride : scratch.data();
            im2col(x + static_cast<std::size_t>(b) * d.cin * d.h * d.w, cb, d);
            // y_b[co, pos] = W[co, patch] * cols[patch, pos], serial per sample
            float* yb = y + static_cast<std::size_t>(b) * d.cout * pos;
            for (int co = 0; co < d.cout; ++co) {
                float* yrow = yb + static_cast<std::size_t>(co) * pos;
                for (int j = 0; j < pos; ++j) yrow[j] = 0.0f;
                const float* wrow = w + static_cast<std::size_t>(co) * patch;
                for (int k = 0; k < patch; ++k) {
                    const float wv = wrow[k];
                    const float* crow = cb + static_cast<std::size_t>(k) * pos;
                    for (int j = 0; j < pos; ++j) yrow[j] += wv * crow[j];
                }
            }
        }
    }
}

void conv2d_backward_input(const float* w, const float* dy, float* dx, const Conv2dDims& d) {
    const int patch = d.patch();
    const int pos = d.positions();

#pragma omp parallel
    {
        std::vector<float> dcols(static_cast<std::size_t>(patch) * pos);
#pragma omp for schedule(static)
        for (int b = 0; b < d.batch; ++b) {
            const float* dyb = dy + static_cast<std::size_t>(b) * d.cout * pos;
            // dcols[k, pos] = W^T[k, co] * dy_b[co, pos]
            for (int k = 0; k < patch; ++k) {
                float* crow = dcols.data() + static_cast<std::size_t>(k) * pos;
                for (int j = 0; j < pos; ++j) crow[j] = 0.0f;
                for (int co = 0; co < d.cout; ++co) {
                    const float wv = w[static_cast<std::size_t>(co) * patch + k];
                    const float* dyrow = dyb + static_cast<std::size_t>(co) * pos;
                    for (int j = 0; j < pos; ++j) crow[j] += wv * dyrow[j];
                }
            }
            col2im_accumulate(dcols.data(), dx + static_cast<std::size_t>(b) * d.cin * d.h * d.w,
                              d);
        }
    }
}

void conv2d_backward_kernel(const float* cols, const float* dy, float* dw, const Conv2dDims& d) {
    const int patch = d.patch();
    const int pos = d.positions();
    const std::size_t cols_stride = static_cast<std::size_t>(patch) * pos;
    const std::size_t dy_stride = static_cast<std::size_t>(d.cout) * pos;

    // One (co, k) element per task, accumulated over all samples and
    // positions by a single thread: thread-count independent.
#pragma omp parallel for schedule(static)
    for (int ck = 0; ck < d.cout * patch; ++ck) {
        const int co = ck / patch;
        const int k = ck % patch;
        double acc = 0.0;
        for (int b = 0; b < d.batch; ++b) {
            const float* dyrow = dy + b * dy_stride + static_cast<std::size_t>(co) * pos;
            const float* crow = cols + b * cols_stride + static_cast<std::size_t>(k) * pos;
            acc += striped_dot(dyrow, crow, pos);
        }
        dw[ck] += static_cast<float>(acc);
    }
}

namespace ref {

void matmul(const float* a, const float* b, float* c, int m, int k, int p) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) {
                acc += static_cast<double>(a[static_cast<std::size_t>(i) * k + l]) *
                       static_cast<double>(b[static_cast<std::size_t>(l) * p + j]);
            }
            c[static_cast<std::size_t>(i) * p + j] = static_cast<float>(acc);
        }
    }
}

void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d) {
    for (int b = 0; b < d.batch; ++b) {
        for (int co = 0; co < d.cout; ++co) {
            for (int oy = 0; oy < d.oh; ++oy) {
                for (int ox = 0; ox < d.ow; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < d.cin; ++ci) {
                        for (int ky = 0; ky < d.kh; ++ky) {
                            const int iy = oy * d.stride - d.pad + ky;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < d.kw; ++kx) {
                                const int ix = ox * d.stride - d.pad + kx;
                                if (ix < 0 || ix >= d.w) continue;
                                const float xv =
                                    x[((static_cast<std::size_t>(b) * d.cin + ci) * d.h + iy) *
                                          d.w +
                                      ix];
                                const float wv =
                                    w[((static_cast<std::size_t>(co) * d.cin + ci) * d.kh + ky) *
                                          d.kw +
                                      kx];
                                acc += static_cast<double>(xv) * static_cast<double>(wv);
                            }
                        }
                    }
                    y[((static_cast<std::size_t>(b) * d.cout + co) * d.oh + oy) * d.ow + ox] =
                        static_cast<float>(acc);
                }
            }
        }
    }
}

}  // namespace ref

}  // namespace stabnet::kernels
