#pragma once

#include <cstdint>

// Serial reference kernels. Deliberately plain loop nests, no OpenMP, no
// layout tricks: these are the oracles the unit/acceptance tests compare the
// parallel kernels against, and the baseline side of the benchmark. Keep
// them independent of kernels.hpp.
namespace laconv::ref {

template <typename T>
void naive_matmul(const T* a, const T* b, T* c, int m, int p, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int k = 0; k < p; ++k)
                acc += a[std::int64_t(i) * p + k] * b[std::int64_t(k) * n + j];
            c[std::int64_t(i) * n + j] = acc;
        }
}

// Seven explicit loops over output row, output col, group, channel-in-group,
// tap row, tap col, and the padded fetch. Zero padding, taps centered at k/2,
// kernel layout (di, dj, group) row-major, channels in g contiguous groups.
template <typename T>
void naive_dyconv(const T* x, const T* w, T* y, int h, int wd, int d, int k, int g) {
    const int dg = d / g;
    const int c0 = k / 2;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j)
            for (int l = 0; l < g; ++l)
                for (int c = 0; c < dg; ++c) {
                    T acc = T(0);
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            const int si = i + di - c0;
                            const int sj = j + dj - c0;
                            T xv = T(0);
                            if (si >= 0 && si < h && sj >= 0 && sj < wd)
                                xv = x[(std::int64_t(si) * wd + sj) * d + l * dg + c];
                            acc += xv * w[(std::int64_t(i) * wd + j) * (k * k * g) +
                                          (di * k + dj) * g + l];
                        }
                    y[(std::int64_t(i) * wd + j) * d + l * dg + c] = acc;
                }
}

// Same loop nest but counting every multiply-accumulate it performs,
// including taps that fell on zero padding. This is the instrumented
// counter the cost model's FLOP convention is checked against.
template <typename T>
std::uint64_t counted_dyconv(const T* x, const T* w, T* y, int h, int wd, int d, int k, int g) {
    const int dg = d / g;
    const int c0 = k / 2;
    std::uint64_t macs = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j)
            for (int l = 0; l < g; ++l)
                for (int c = 0; c < dg; ++c) {
                    T acc = T(0);
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            const int si = i + di - c0;
                            const int sj = j + dj - c0;
                            T xv = T(0);
                            if (si >= 0 && si < h && sj >= 0 && sj < wd)
                                xv = x[(std::int64_t(si) * wd + sj) * d + l * dg + c];
                            acc += xv * w[(std::int64_t(i) * wd + j) * (k * k * g) +
                                          (di * k + dj) * g + l];
                            ++macs;
                        }
                    y[(std::int64_t(i) * wd + j) * d + l * dg + c] = acc;
                }
    return macs;
}

template <typename T>
std::uint64_t counted_matmul(const T* a, const T* b, T* c, int m, int p, int n) {
    std::uint64_t macs = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int k = 0; k < p; ++k) {
                acc += a[std::int64_t(i) * p + k] * b[std::int64_t(k) * n + j];
                ++macs;
            }
            c[std::int64_t(i) * n + j] = acc;
        }
    return macs;
}

}  // namespace laconv::ref
