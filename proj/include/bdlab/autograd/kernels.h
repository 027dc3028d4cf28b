#ifndef BDLAB_AUTOGRAD_KERNELS_H_
#define BDLAB_AUTOGRAD_KERNELS_H_

// Dense compute kernels behind the autograd primitives.
//
// `reference` holds straightforward serial loops; `parallel` holds the
// OpenMP im2col/axpy formulations used by the engine. The two are checked
// against each other in tests and timed against each other in bench/.
//
// All parallel kernels split work so that every output element is written by
// exactly one thread with a fixed summation order, so results do not depend
// on the thread count.

#include <cstddef>
#include <vector>

namespace bdlab::kernels {

struct ConvShape {
  int batch = 1;
  int in_ch = 1;
  int height = 1;
  int width = 1;
  int out_ch = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int pad = 1;

  int out_h() const { return height + 2 * pad - kernel_h + 1; }
  int out_w() const { return width + 2 * pad - kernel_w + 1; }
  std::size_t col_rows() const {
    return static_cast<std::size_t>(in_ch) * kernel_h * kernel_w;
  }
  std::size_t col_cols() const {
    return static_cast<std::size_t>(out_h()) * out_w();
  }
  std::size_t in_size() const {
    return static_cast<std::size_t>(in_ch) * height * width;
  }
  std::size_t out_size() const {
    return static_cast<std::size_t>(out_ch) * out_h() * out_w();
  }
  std::size_t weight_size() const { return out_ch * col_rows(); }
};

struct PoolShape {
  int planes = 1;  // batch * channels
  int height = 2;
  int width = 2;
  int k = 2;
  int out_h() const { return height / k; }
  int out_w() const { return width / k; }
};

namespace reference {

// C(m x n) = A(m x k) B(k x n)
template <typename T>
void matmul(int m, int k, int n, const T* a, const T* b, T* c);

// y = conv(x, w) + b; stride 1, zero padding.
template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* b,
                    T* y);

// Overwrites dx, dw, db. Any of them may be null to skip.
template <typename T>
void conv2d_backward(const ConvShape& s, const T* x, const T* w, const T* dy,
                     T* dx, T* dw, T* db);

template <typename T>
void maxpool_forward(const PoolShape& s, const T* x, T* y, int* argmax);

}  // namespace reference

namespace parallel {

template <typename T>
void matmul(int m, int k, int n, const T* a, const T* b, T* c);
// dA = dC B^T  (m x k)
template <typename T>
void matmul_grad_a(int m, int k, int n, const T* dc, const T* b, T* da);
// dB = A^T dC  (k x n)
template <typename T>
void matmul_grad_b(int m, int k, int n, const T* a, const T* dc, T* db);

// col must hold batch * col_rows * col_cols values; it is filled and may be
// passed back to conv2d_backward.
template <typename T>
void conv2d_forward(const ConvShape& s, const T* x, const T* w, const T* b,
                    T* y, T* col);

template <typename T>
void conv2d_backward(const ConvShape& s, const T* col, const T* w, const T* dy,
                     T* dx, T* dw, T* db);

// argmax holds the flat input index (within the plane) of each output; ties
// go to the first maximal element in row-major scan order.
template <typename T>
void maxpool_forward(const PoolShape& s, const T* x, T* y, int* argmax);
template <typename T>
void maxpool_backward(const PoolShape& s, const int* argmax, const T* dy,
                      T* dx);

}  // namespace parallel

int max_threads();
void set_threads(int n);

}  // namespace bdlab::kernels

#endif  // BDLAB_AUTOGRAD_KERNELS_H_
