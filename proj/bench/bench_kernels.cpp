#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "muscle/kernels.hpp"
#include "muscle/rng.hpp"

using namespace muscle;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s < best) best = s;
  }
  return best;
}

std::vector<double> random_vec(size_t n, uint64_t seed) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (double& x : v) x = rng.normal();
  return v;
}

void row(const char* name, double serial_s, double parallel_s) {
  std::printf("%-24s %10.3f ms %10.3f ms %8.2fx\n", name, serial_s * 1e3, parallel_s * 1e3,
              serial_s / parallel_s);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not enabled; comparing identical serial paths\n");
#endif
  std::printf("%-24s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  const int reps = 5;
  {
    const int n = 256, k = 256, m = 256;
    const auto a = random_vec(static_cast<size_t>(n) * k, 1);
    const auto b = random_vec(static_cast<size_t>(k) * m, 2);
    std::vector<double> c(static_cast<size_t>(n) * m);
    const double ts = time_best_of(
        reps, [&] { kernels::serial::matmul(a.data(), b.data(), c.data(), n, k, m); });
    const double tp =
        time_best_of(reps, [&] { kernels::matmul(a.data(), b.data(), c.data(), n, k, m); });
    row("matmul 256^3", ts, tp);
  }
  {
    const int n = 4096, c = 128;
    const auto x = random_vec(static_cast<size_t>(n) * c, 3);
    std::vector<double> y(static_cast<size_t>(n) * c);
    const double ts = time_best_of(
        reps, [&] { kernels::serial::softmax_rows(x.data(), y.data(), n, c); });
    const double tp =
        time_best_of(reps, [&] { kernels::softmax_rows(x.data(), y.data(), n, c); });
    row("softmax 4096x128", ts, tp);
  }
  {
    const int n = 32, h = 28, w = 28, ci = 8, kh = 3, kw = 3, co = 16;
    const int oh = h - kh + 1, ow = w - kw + 1;
    const auto x = random_vec(static_cast<size_t>(n) * h * w * ci, 4);
    const auto kern = random_vec(static_cast<size_t>(kh) * kw * ci * co, 5);
    std::vector<double> out(static_cast<size_t>(n) * oh * ow * co);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::conv2d_forward(x.data(), kern.data(), out.data(), n, h, w, ci, kh, kw,
                                      co, 1);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::conv2d_forward(x.data(), kern.data(), out.data(), n, h, w, ci, kh, kw, co, 1);
    });
    row("conv2d 32x28x28x8", ts, tp);
  }
  {
    const int n = 20000, deg = 16;
    CsrMatrix a;
    a.n = n;
    a.row_ptr.resize(static_cast<size_t>(n) + 1);
    Rng rng(6);
    for (int i = 0; i < n; ++i) {
      a.row_ptr[static_cast<size_t>(i) + 1] = a.row_ptr[i] + deg;
      for (int d = 0; d < deg; ++d) {
        a.col.push_back(rng.below(n));
        a.val.push_back(rng.normal());
      }
    }
    const auto x = random_vec(static_cast<size_t>(n), 7);
    std::vector<double> y(static_cast<size_t>(n));
    const double ts =
        time_best_of(reps, [&] { kernels::serial::spmv(a, x.data(), y.data()); });
    const double tp = time_best_of(reps, [&] { kernels::spmv(a, x.data(), y.data()); });
    row("spmv 20k x16", ts, tp);
  }
  {
    const int n = 1500, e = 32, k = 10;
    const auto emb = random_vec(static_cast<size_t>(n) * e, 8);
    std::vector<int> idx(static_cast<size_t>(n) * k);
    std::vector<double> score(static_cast<size_t>(n) * k);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::knn_neighbors(emb.data(), n, e, k, idx.data(), score.data());
    });
    const double tp = time_best_of(
        reps, [&] { kernels::knn_neighbors(emb.data(), n, e, k, idx.data(), score.data()); });
    row("knn 1500x32 k=10", ts, tp);
  }
  return 0;
}
