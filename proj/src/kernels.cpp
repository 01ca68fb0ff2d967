#include "muscle/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace muscle {
namespace kernels {

void matmul(const double* a, const double* b, double* c, int n, int k, int m) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(n) * m);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(const double* x, double* y, int n, int c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* xr = x + static_cast<size_t>(i) * c;
    double* yr = y + static_cast<size_t>(i) * c;
    double mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < c; ++j) yr[j] *= inv;
  }
}

void conv2d_forward(const double* x, const double* kern, double* out,
                    int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < n; ++b) {
    const double* xb = x + static_cast<size_t>(b) * h * w * ci;
    double* ob = out + static_cast<size_t>(b) * oh * ow * co;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int f = 0; f < co; ++f) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
              for (int ch = 0; ch < ci; ++ch)
                acc += xb[((oy * stride + ky) * w + (ox * stride + kx)) * ci + ch] *
                       kern[((ky * kw + kx) * ci + ch) * co + f];
          ob[(oy * ow + ox) * co + f] = acc;
        }
  }
}

void conv2d_input_grad(const double* dout, const double* kern, double* dx,
                       int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < n; ++b) {
    const double* db = dout + static_cast<size_t>(b) * oh * ow * co;
    double* gxb = dx + static_cast<size_t>(b) * h * w * ci;
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix)
        for (int ch = 0; ch < ci; ++ch) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int sy = iy - ky;
            if (sy < 0 || sy % stride != 0) continue;
            const int oy = sy / stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int sx = ix - kx;
              if (sx < 0 || sx % stride != 0) continue;
              const int ox = sx / stride;
              if (ox >= ow) continue;
              for (int f = 0; f < co; ++f)
                acc += db[(oy * ow + ox) * co + f] * kern[((ky * kw + kx) * ci + ch) * co + f];
            }
          }
          gxb[(iy * w + ix) * ci + ch] = acc;
        }
  }
}

void conv2d_kernel_grad(const double* dout, const double* x, double* dkern,
                        int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
  const int kelems = kh * kw * ci * co;
#pragma omp parallel for schedule(static)
  for (int ke = 0; ke < kelems; ++ke) {
    const int f = ke % co;
    const int ch = (ke / co) % ci;
    const int kx = (ke / (co * ci)) % kw;
    const int ky = ke / (co * ci * kw);
    double acc = 0.0;
    for (int b = 0; b < n; ++b) {
      const double* xb = x + static_cast<size_t>(b) * h * w * ci;
      const double* db = dout + static_cast<size_t>(b) * oh * ow * co;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          acc += xb[((oy * stride + ky) * w + (ox * stride + kx)) * ci + ch] *
                 db[(oy * ow + ox) * co + f];
    }
    dkern[ke] = acc;
  }
}

void spmv(const CsrMatrix& a, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.n; ++i) {
    double acc = 0.0;
    for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p)
      acc += a.val[static_cast<size_t>(p)] * x[a.col[static_cast<size_t>(p)]];
    y[i] = acc;
  }
}

namespace {
inline void select_neighbors(const double* emb, int n, int e, int k, int i,
                             int* idx_row, double* score_row) {
  const double* ei = emb + static_cast<size_t>(i) * e;
  std::vector<std::pair<double, int>> scored;
  scored.reserve(static_cast<size_t>(n) - 1);
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    const double* ej = emb + static_cast<size_t>(j) * e;
    double dot = 0.0;
    for (int d = 0; d < e; ++d) dot += ei[d] * ej[d];
    scored.emplace_back(dot, j);
  }
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  for (int q = 0; q < k; ++q) {
    idx_row[q] = scored[static_cast<size_t>(q)].second;
    score_row[q] = scored[static_cast<size_t>(q)].first;
  }
}
}  // namespace

void knn_neighbors(const double* emb, int n, int e, int k, int* idx, double* score) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    select_neighbors(emb, n, e, k, i, idx + static_cast<size_t>(i) * k,
                     score + static_cast<size_t>(i) * k);
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * m + j];
      c[static_cast<size_t>(i) * m + j] = acc;
    }
}

void softmax_rows(const double* x, double* y, int n, int c) {
  for (int i = 0; i < n; ++i) {
    const double* xr = x + static_cast<size_t>(i) * c;
    double* yr = y + static_cast<size_t>(i) * c;
    double mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < c; ++j) yr[j] *= inv;
  }
}

void conv2d_forward(const double* x, const double* kern, double* out,
                    int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int f = 0; f < co; ++f) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
              for (int ch = 0; ch < ci; ++ch)
                acc += x[((static_cast<size_t>(b) * h + oy * stride + ky) * w +
                          (ox * stride + kx)) * ci + ch] *
                       kern[((ky * kw + kx) * ci + ch) * co + f];
          out[((static_cast<size_t>(b) * oh + oy) * ow + ox) * co + f] = acc;
        }
}

void conv2d_input_grad(const double* dout, const double* kern, double* dx,
                       int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
  for (int b = 0; b < n; ++b)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix)
        for (int ch = 0; ch < ci; ++ch) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int sy = iy - ky;
            if (sy < 0 || sy % stride != 0) continue;
            const int oy = sy / stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int sx = ix - kx;
              if (sx < 0 || sx % stride != 0) continue;
              const int ox = sx / stride;
              if (ox >= ow) continue;
              for (int f = 0; f < co; ++f)
                acc += dout[((static_cast<size_t>(b) * oh + oy) * ow + ox) * co + f] *
                       kern[((ky * kw + kx) * ci + ch) * co + f];
            }
          }
          dx[((static_cast<size_t>(b) * h + iy) * w + ix) * ci + ch] = acc;
        }
}

void conv2d_kernel_grad(const double* dout, const double* x, double* dkern,
                        int n, int h, int w, int ci, int kh, int kw, int co, int stride) {
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx)
      for (int ch = 0; ch < ci; ++ch)
        for (int f = 0; f < co; ++f) {
          double acc = 0.0;
          for (int b = 0; b < n; ++b)
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox)
                acc += x[((static_cast<size_t>(b) * h + oy * stride + ky) * w +
                          (ox * stride + kx)) * ci + ch] *
                       dout[((static_cast<size_t>(b) * oh + oy) * ow + ox) * co + f];
          dkern[((ky * kw + kx) * ci + ch) * co + f] = acc;
        }
}

void spmv(const CsrMatrix& a, const double* x, double* y) {
  for (int i = 0; i < a.n; ++i) {
    double acc = 0.0;
    for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p)
      acc += a.val[static_cast<size_t>(p)] * x[a.col[static_cast<size_t>(p)]];
    y[i] = acc;
  }
}

void knn_neighbors(const double* emb, int n, int e, int k, int* idx, double* score) {
  for (int i = 0; i < n; ++i)
    select_neighbors(emb, n, e, k, i, idx + static_cast<size_t>(i) * k,
                     score + static_cast<size_t>(i) * k);
}

}  // namespace serial
}  // namespace kernels
}  // namespace muscle
