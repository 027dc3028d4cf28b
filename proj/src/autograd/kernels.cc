#include "bdlab/autograd/kernels.h"

#include <omp.h>

#include <algorithm>
#include <cstring>

namespace bdlab::kernels {

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

namespace reference {

template <typename T>
void matmul(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* b,
                    T* y) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out_ch; ++o) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          T acc = b ? b[o] : T{0};
          for (int c = 0; c < s.in_ch; ++c) {
            for (int u = 0; u < s.kernel_h; ++u) {
              for (int v = 0; v < s.kernel_w; ++v) {
                const int r = i + u - s.pad, q = j + v - s.pad;
                if (r < 0 || r >= s.height || q < 0 || q >= s.width) continue;
                acc += w[((o * s.in_ch + c) * s.kernel_h + u) * s.kernel_w + v] *
                       x[((n * s.in_ch + c) * s.height + r) * s.width + q];
              }
            }
          }
          y[((n * s.out_ch + o) * oh + i) * ow + j] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvShape& s, const T* x, const T* w, const T* dy,
                     T* dx, T* dw, T* db) {
  const int oh = s.out_h(), ow = s.out_w();
  if (dx) std::fill(dx, dx + s.batch * s.in_size(), T{0});
  if (dw) std::fill(dw, dw + s.weight_size(), T{0});
  if (db) std::fill(db, db + s.out_ch, T{0});
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out_ch; ++o) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const T g = dy[((n * s.out_ch + o) * oh + i) * ow + j];
          if (db) db[o] += g;
          for (int c = 0; c < s.in_ch; ++c) {
            for (int u = 0; u < s.kernel_h; ++u) {
              for (int v = 0; v < s.kernel_w; ++v) {
                const int r = i + u - s.pad, q = j + v - s.pad;
                if (r < 0 || r >= s.height || q < 0 || q >= s.width) continue;
                const int wi = ((o * s.in_ch + c) * s.kernel_h + u) * s.kernel_w + v;
                const int xi = ((n * s.in_ch + c) * s.height + r) * s.width + q;
                if (dw) dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const PoolShape& s, const T* x, T* y, int* argmax) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int p = 0; p < s.planes; ++p) {
    const T* in = x + static_cast<std::size_t>(p) * s.height * s.width;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        int best = (i * s.k) * s.width + j * s.k;
        for (int u = 0; u < s.k; ++u) {
          for (int v = 0; v < s.k; ++v) {
            const int idx = (i * s.k + u) * s.width + (j * s.k + v);
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
        y[o] = in[best];
        if (argmax) argmax[o] = best;
      }
    }
  }
}

}  // namespace reference

namespace parallel {
namespace {

template <typename T>
void im2col(const ConvShape& s, const T* x, T* col) {
  const int oh = s.out_h(), ow = s.out_w();
  std::size_t row = 0;
  for (int c = 0; c < s.in_ch; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * s.height * s.width;
    for (int u = 0; u < s.kernel_h; ++u) {
      for (int v = 0; v < s.kernel_w; ++v, ++row) {
        T* dst = col + row * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int r = i + u - s.pad;
          T* d = dst + i * ow;
          if (r < 0 || r >= s.height) {
            std::fill(d, d + ow, T{0});
            continue;
          }
          const T* src = plane + r * s.width;
          for (int j = 0; j < ow; ++j) {
            const int q = j + v - s.pad;
            d[j] = (q < 0 || q >= s.width) ? T{0} : src[q];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvShape& s, const T* col, T* x) {
  const int oh = s.out_h(), ow = s.out_w();
  std::fill(x, x + s.in_size(), T{0});
  std::size_t row = 0;
  for (int c = 0; c < s.in_ch; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * s.height * s.width;
    for (int u = 0; u < s.kernel_h; ++u) {
      for (int v = 0; v < s.kernel_w; ++v, ++row) {
        const T* srcrow = col + row * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int r = i + u - s.pad;
          if (r < 0 || r >= s.height) continue;
          T* dst = plane + r * s.width;
          const T* src = srcrow + i * ow;
          for (int j = 0; j < ow; ++j) {
            const int q = j + v - s.pad;
            if (q >= 0 && q < s.width) dst[q] += src[j];
          }
        }
      }
    }
  }
}

template <typename T>
inline void axpy(int n, T a, const T* x, T* y) {
#pragma omp simd
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(int n, const T* x, const T* y) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (int i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Serial C = A B with the axpy (i-k-j) loop order.
template <typename T>
void gemm_serial(int m, int k, int n, const T* a, const T* b, T* c) {
  std::fill(c, c + static_cast<std::size_t>(m) * n, T{0});
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      if (av != T{0}) axpy(n, av, b + static_cast<std::size_t>(p) * n, ci);
    }
  }
}

}  // namespace

template <typename T>
void matmul(int m, int k, int n, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m > 1)
  for (int i = 0; i < m; ++i) {
    gemm_serial(1, k, n, a + static_cast<std::size_t>(i) * k, b,
                c + static_cast<std::size_t>(i) * n);
  }
}

template <typename T>
void matmul_grad_a(int m, int k, int n, const T* dc, const T* b, T* da) {
#pragma omp parallel for schedule(static) if (m > 1)
  for (int i = 0; i < m; ++i) {
    const T* g = dc + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      da[static_cast<std::size_t>(i) * k + p] =
          dot(n, g, b + static_cast<std::size_t>(p) * n);
    }
  }
}

template <typename T>
void matmul_grad_b(int m, int k, int n, const T* a, const T* dc, T* db) {
#pragma omp parallel for schedule(static) if (k > 1)
  for (int p = 0; p < k; ++p) {
    T* row = db + static_cast<std::size_t>(p) * n;
    std::fill(row, row + n, T{0});
    for (int i = 0; i < m; ++i) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      if (av != T{0}) axpy(n, av, dc + static_cast<std::size_t>(i) * n, row);
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* b,
                    T* y, T* col) {
  const std::size_t col_size = s.col_rows() * s.col_cols();
  const int P = static_cast<int>(s.col_cols());
  const int CK = static_cast<int>(s.col_rows());
#pragma omp parallel for schedule(static) if (s.batch > 1)
  for (int n = 0; n < s.batch; ++n) {
    T* c = col + n * col_size;
    im2col(s, x + n * s.in_size(), c);
    T* out = y + n * s.out_size();
    gemm_serial(s.out_ch, CK, P, w, c, out);
    if (b) {
      for (int o = 0; o < s.out_ch; ++o) {
        T* row = out + static_cast<std::size_t>(o) * P;
        const T bo = b[o];
#pragma omp simd
        for (int p = 0; p < P; ++p) row[p] += bo;
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvShape& s, const T* col, const T* w, const T* dy,
                     T* dx, T* dw, T* db) {
  const std::size_t col_size = s.col_rows() * s.col_cols();
  const int P = static_cast<int>(s.col_cols());
  const int CK = static_cast<int>(s.col_rows());
  if (dw || db) {
#pragma omp parallel for schedule(static) if (s.out_ch > 1)
    for (int o = 0; o < s.out_ch; ++o) {
      T* dwo = dw ? dw + static_cast<std::size_t>(o) * CK : nullptr;
      if (dwo) std::fill(dwo, dwo + CK, T{0});
      T bias = 0;
      for (int n = 0; n < s.batch; ++n) {
        const T* g = dy + n * s.out_size() + static_cast<std::size_t>(o) * P;
        if (db) {
          for (int p = 0; p < P; ++p) bias += g[p];
        }
        if (dwo) {
          const T* c = col + n * col_size;
          for (int r = 0; r < CK; ++r) {
            dwo[r] += dot(P, g, c + static_cast<std::size_t>(r) * P);
          }
        }
      }
      if (db) db[o] = bias;
    }
  }
  if (dx) {
#pragma omp parallel
    {
      std::vector<T> dcol(col_size);
#pragma omp for schedule(static)
      for (int n = 0; n < s.batch; ++n) {
        std::fill(dcol.begin(), dcol.end(), T{0});
        const T* g = dy + n * s.out_size();
        for (int o = 0; o < s.out_ch; ++o) {
          const T* wo = w + static_cast<std::size_t>(o) * CK;
          const T* go = g + static_cast<std::size_t>(o) * P;
          for (int r = 0; r < CK; ++r) {
            if (wo[r] != T{0}) {
              axpy(P, wo[r], go, dcol.data() + static_cast<std::size_t>(r) * P);
            }
          }
        }
        col2im(s, dcol.data(), dx + n * s.in_size());
      }
    }
  }
}

template <typename T>
void maxpool_forward(const PoolShape& s, const T* x, T* y, int* argmax) {
  const int oh = s.out_h(), ow = s.out_w();
#pragma omp parallel for schedule(static) if (s.planes > 1)
  for (int p = 0; p < s.planes; ++p) {
    const T* in = x + static_cast<std::size_t>(p) * s.height * s.width;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        int best = (i * s.k) * s.width + j * s.k;
        T bv = in[best];
        for (int u = 0; u < s.k; ++u) {
          const int base = (i * s.k + u) * s.width + j * s.k;
          for (int v = 0; v < s.k; ++v) {
            if (in[base + v] > bv) {
              bv = in[base + v];
              best = base + v;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
        y[o] = bv;
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const PoolShape& s, const int* argmax, const T* dy,
                      T* dx) {
  const std::size_t in_plane = static_cast<std::size_t>(s.height) * s.width;
  const std::size_t out_plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
#pragma omp parallel for schedule(static) if (s.planes > 1)
  for (int p = 0; p < s.planes; ++p) {
    T* d = dx + p * in_plane;
    std::fill(d, d + in_plane, T{0});
    for (std::size_t o = 0; o < out_plane; ++o) {
      d[argmax[p * out_plane + o]] += dy[p * out_plane + o];
    }
  }
}

}  // namespace parallel

#define BDLAB_INSTANTIATE(T)                                                   \
  template void reference::matmul<T>(int, int, int, const T*, const T*, T*);   \
  template void reference::conv2d_forward<T>(const ConvShape&, const T*,       \
                                             const T*, const T*, T*);          \
  template void reference::conv2d_backward<T>(                                 \
      const ConvShape&, const T*, const T*, const T*, T*, T*, T*);             \
  template void reference::maxpool_forward<T>(const PoolShape&, const T*, T*,  \
                                              int*);                           \
  template void parallel::matmul<T>(int, int, int, const T*, const T*, T*);    \
  template void parallel::matmul_grad_a<T>(int, int, int, const T*, const T*,  \
                                           T*);                                \
  template void parallel::matmul_grad_b<T>(int, int, int, const T*, const T*,  \
                                           T*);                                \
  template void parallel::conv2d_forward<T>(const ConvShape&, const T*,        \
                                            const T*, const T*, T*, T*);       \
  template void parallel::conv2d_backward<T>(                                  \
      const ConvShape&, const T*, const T*, const T*, T*, T*, T*);             \
  template void parallel::maxpool_forward<T>(const PoolShape&, const T*, T*,   \
                                             int*);                            \
  template void parallel::maxpool_backward<T>(const PoolShape&, const int*,    \
                                              const T*, T*);

BDLAB_INSTANTIATE(float)
BDLAB_INSTANTIATE(double)

#undef BDLAB_INSTANTIATE

}  // namespace bdlab::kernels
