#pragma once

#include <cstdint>
#include <vector>

namespace muscle {

/// Compressed sparse row matrix, square, used for affinity graphs.
struct CsrMatrix {
  int n = 0;
  std::vector<int> row_ptr;  // size n+1
  std::vector<int> col;
  std::vector<double> val;

  long long nnz() const { return static_cast<long long>(col.size()); }
};

/// Hot loops shared by the graph evaluator, the k-NN builder and the
/// diffusion solver. Each kernel parallelizes over independent output
/// elements only, so results are bitwise identical to the serial
/// reference for any thread count. kernels::serial holds the reference
/// implementations used by the tests and the benchmark.
namespace kernels {

// c[n,m] = a[n,k] * b[k,m]
void matmul(const double* a, const double* b, double* c, int n, int k, int m);

// Row-wise softmax of x[n,c] into y (max-shifted).
void softmax_rows(const double* x, double* y, int n, int c);

// x[n,h,w,ci], kern[kh,kw,ci,co], valid padding, given stride.
// out[n,oh,ow,co] with oh = (h-kh)/stride + 1, ow likewise.
void conv2d_forward(const double* x, const double* kern, double* out,
                    int n, int h, int w, int ci, int kh, int kw, int co, int stride);
void conv2d_input_grad(const double* dout, const double* kern, double* dx,
                       int n, int h, int w, int ci, int kh, int kw, int co, int stride);
void conv2d_kernel_grad(const double* dout, const double* x, double* dkern,
                        int n, int h, int w, int ci, int kh, int kw, int co, int stride);

// y = A * x for CSR A.
void spmv(const CsrMatrix& a, const double* x, double* y);

// For each row of emb[n,e], the k largest inner products against all other
// rows (self excluded), ties broken by lower index. idx/score are [n,k].
void knn_neighbors(const double* emb, int n, int e, int k, int* idx, double* score);

namespace serial {
void matmul(const double* a, const double* b, double* c, int n, int k, int m);
void softmax_rows(const double* x, double* y, int n, int c);
void conv2d_forward(const double* x, const double* kern, double* out,
                    int n, int h, int w, int ci, int kh, int kw, int co, int stride);
void conv2d_input_grad(const double* dout, const double* kern, double* dx,
                       int n, int h, int w, int ci, int kh, int kw, int co, int stride);
void conv2d_kernel_grad(const double* dout, const double* x, double* dkern,
                        int n, int h, int w, int ci, int kh, int kw, int co, int stride);
void spmv(const CsrMatrix& a, const double* x, double* y);
void knn_neighbors(const double* emb, int n, int e, int k, int* idx, double* score);
}  // namespace serial

}  // namespace kernels
}  // namespace muscle
