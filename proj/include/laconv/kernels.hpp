#pragma once

#include <cstdint>

#include "laconv/common.hpp"

// OpenMP-parallel compute kernels. Every parallel loop assigns each output
// element to exactly one iteration and accumulates sequentially inside it,
// so results are bit-identical for any thread count. Serial counterparts
// used as test oracles live in reference.hpp.
namespace laconv::kern {

constexpr std::int64_t kParallelMacThreshold = 1 << 15;

inline bool go_parallel(std::int64_t macs) {
    return macs >= kParallelMacThreshold && !in_parallel_region();
}

// c[m x n] = a[m x p] * b[p x n], optionally accumulating into c.
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int p, int n, bool accumulate) {
    const std::int64_t macs = static_cast<std::int64_t>(m) * p * n;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::int64_t>(i) * p;
        for (int k = 0; k < p; ++k) {
            const T aik = arow[k];
            const T* brow = b + static_cast<std::int64_t>(k) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c[m x n] (+)= a[m x p] * b[n x p]^T  (dot products over contiguous rows)
template <typename T>
void matmul_bt(const T* a, const T* b, T* c, int m, int p, int n, bool accumulate) {
    const std::int64_t macs = static_cast<std::int64_t>(m) * p * n;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::int64_t>(i) * p;
        T* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<std::int64_t>(j) * p;
            T acc = T(0);
            for (int k = 0; k < p; ++k) acc += arow[k] * brow[k];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// c[p x n] (+)= a[m x p]^T * b[m x n]
template <typename T>
void matmul_at(const T* a, const T* b, T* c, int m, int p, int n, bool accumulate) {
    const std::int64_t macs = static_cast<std::int64_t>(m) * p * n;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int k = 0; k < p; ++k) {
        T* crow = c + static_cast<std::int64_t>(k) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        for (int i = 0; i < m; ++i) {
            const T aik = a[static_cast<std::int64_t>(i) * p + k];
            const T* brow = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// Spatially varying grouped depth-wise convolution, stride 1, zero padding,
// same-size output. Layouts (row-major):
//   x, y : (h*w) x d          w : (h*w) x (k*k*g)
// Channels split into g contiguous groups of d/g; kernel entry for tap
// (di, dj) of group l sits at (di*k + dj)*g + l. Taps are re-centered by
// k/2 so content does not shift.
template <typename T>
void dyconv_forward(const T* x, const T* w, T* y, int h, int wd, int d, int k, int g) {
    const int dg = d / g;
    const int c0 = k / 2;
    const int kkg = k * k * g;
    const std::int64_t macs = static_cast<std::int64_t>(h) * wd * d * k * k;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            const std::int64_t pos = static_cast<std::int64_t>(i) * wd + j;
            const T* wpos = w + pos * kkg;
            T* ypos = y + pos * d;
            for (int c = 0; c < d; ++c) ypos[c] = T(0);
            for (int di = 0; di < k; ++di) {
                const int si = i + di - c0;
                if (si < 0 || si >= h) continue;
                for (int dj = 0; dj < k; ++dj) {
                    const int sj = j + dj - c0;
                    if (sj < 0 || sj >= wd) continue;
                    const T* xsrc = x + (static_cast<std::int64_t>(si) * wd + sj) * d;
                    const T* wtap = wpos + (di * k + dj) * g;
                    for (int l = 0; l < g; ++l) {
                        const T wv = wtap[l];
                        const int base = l * dg;
                        for (int c = 0; c < dg; ++c) ypos[base + c] += xsrc[base + c] * wv;
                    }
                }
            }
        }
    }
}

// dL/dw gathered per output position (each (pos, tap, group) owned by one
// iteration).
template <typename T>
void dyconv_backward_w(const T* x, const T* dy, T* dw, int h, int wd, int d, int k, int g,
                       bool accumulate) {
    const int dg = d / g;
    const int c0 = k / 2;
    const int kkg = k * k * g;
    const std::int64_t macs = static_cast<std::int64_t>(h) * wd * d * k * k;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            const std::int64_t pos = static_cast<std::int64_t>(i) * wd + j;
            const T* dypos = dy + pos * d;
            T* dwpos = dw + pos * kkg;
            for (int di = 0; di < k; ++di) {
                const int si = i + di - c0;
                for (int dj = 0; dj < k; ++dj) {
                    const int sj = j + dj - c0;
                    T* dwtap = dwpos + (di * k + dj) * g;
                    const bool inside = si >= 0 && si < h && sj >= 0 && sj < wd;
                    const T* xsrc =
                        inside ? x + (static_cast<std::int64_t>(si) * wd + sj) * d : nullptr;
                    for (int l = 0; l < g; ++l) {
                        T acc = T(0);
                        if (inside) {
                            const int base = l * dg;
                            for (int c = 0; c < dg; ++c) acc += dypos[base + c] * xsrc[base + c];
                        }
                        dwtap[l] = accumulate ? dwtap[l] + acc : acc;
                    }
                }
            }
        }
    }
}

// dL/dx gathered per input position: x(p,q,c) feeds output (p-di+c0, q-dj+c0)
// through tap (di,dj).
template <typename T>
void dyconv_backward_x(const T* w, const T* dy, T* dx, int h, int wd, int d, int k, int g,
                       bool accumulate) {
    const int dg = d / g;
    const int c0 = k / 2;
    const int kkg = k * k * g;
    const std::int64_t macs = static_cast<std::int64_t>(h) * wd * d * k * k;
#pragma omp parallel for schedule(static) if (go_parallel(macs))
    for (int p = 0; p < h; ++p) {
        for (int q = 0; q < wd; ++q) {
            T* dxpos = dx + (static_cast<std::int64_t>(p) * wd + q) * d;
            if (!accumulate)
                for (int c = 0; c < d; ++c) dxpos[c] = T(0);
            for (int di = 0; di < k; ++di) {
                const int oi = p - di + c0;
                if (oi < 0 || oi >= h) continue;
                for (int dj = 0; dj < k; ++dj) {
                    const int oj = q - dj + c0;
                    if (oj < 0 || oj >= wd) continue;
                    const std::int64_t opos = static_cast<std::int64_t>(oi) * wd + oj;
                    const T* wtap = w + opos * kkg + (di * k + dj) * g;
                    const T* dysrc = dy + opos * d;
                    for (int l = 0; l < g; ++l) {
                        const T wv = wtap[l];
                        const int base = l * dg;
                        for (int c = 0; c < dg; ++c) dxpos[base + c] += dysrc[base + c] * wv;
                    }
                }
            }
        }
    }
}

}  // namespace laconv::kern
