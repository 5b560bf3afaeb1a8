#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "fairgrpo/kernels/kernels.hpp"

using namespace fairgrpo::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("scalar kernels compute textbook results") {
  const KernelTable& k = scalar::table();
  const double a[] = {1, 2, 3};
  const double b[] = {4, 5, 6};
  CHECK(k.dot(a, b, 3) == 32.0);
  double y[] = {1, 1, 1};
  k.axpy(2.0, a, y, 3);
  CHECK(y[2] == 7.0);

  // [[1,2],[3,4]] x [[5,6],[7,8]]
  const double m1[] = {1, 2, 3, 4};
  const double m2[] = {5, 6, 7, 8};
  const double m2t[] = {5, 7, 6, 8};
  double c[4];
  k.gemm_nn(m1, m2, c, 2, 2, 2, false);
  CHECK(c[0] == 19.0);
  CHECK(c[3] == 50.0);
  k.gemm_nt(m1, m2t, c, 2, 2, 2, false);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  const double m1t[] = {1, 3, 2, 4};
  k.gemm_tn(m1t, m2, c, 2, 2, 2, false);
  CHECK(c[0] == 19.0);
  k.gemm_tn(m1t, m2, c, 2, 2, 2, true);
  CHECK(c[0] == 38.0);
}

TEST_CASE("simd kernels match the scalar reference") {
  if (!isa_supported(Isa::avx2)) {
    MESSAGE("AVX2 not available on this CPU; only the scalar path is exercised");
    return;
  }
#if defined(FAIRGRPO_HAVE_AVX2)
  const KernelTable& ref = scalar::table();
  const KernelTable& simd = avx2::table();
  std::mt19937_64 rng(42);

  SUBCASE("dot and axpy over every tail length") {
    for (std::size_t n = 0; n <= 37; ++n) {
      const auto a = random_vector(n, rng);
      const auto b = random_vector(n, rng);
      const double r = ref.dot(a.data(), b.data(), n);
      const double s = simd.dot(a.data(), b.data(), n);
      CHECK(std::abs(r - s) <= 1e-12 * std::max(1.0, std::abs(r)));
      auto y1 = random_vector(n, rng);
      auto y2 = y1;
      ref.axpy(0.37, a.data(), y1.data(), n);
      simd.axpy(0.37, a.data(), y2.data(), n);
      CHECK(max_rel_diff(y1, y2) <= 1e-14);
    }
  }

  SUBCASE("gemm variants over ragged shapes") {
    for (std::size_t m : {1, 3, 8}) {
      for (std::size_t n : {1, 4, 7, 13}) {
        for (std::size_t k : {1, 5, 16, 19}) {
          const auto a = random_vector(m * k, rng);
          const auto bnt = random_vector(n * k, rng);
          const auto bnn = random_vector(k * n, rng);
          const auto atn = random_vector(k * m, rng);
          for (bool acc : {false, true}) {
            auto seed = random_vector(m * n, rng);
            auto c1 = seed, c2 = seed;
            ref.gemm_nt(a.data(), bnt.data(), c1.data(), m, n, k, acc);
            simd.gemm_nt(a.data(), bnt.data(), c2.data(), m, n, k, acc);
            CHECK(max_rel_diff(c1, c2) <= 1e-12);
            c1 = seed;
            c2 = seed;
            ref.gemm_nn(a.data(), bnn.data(), c1.data(), m, n, k, acc);
            simd.gemm_nn(a.data(), bnn.data(), c2.data(), m, n, k, acc);
            CHECK(max_rel_diff(c1, c2) <= 1e-12);
            c1 = seed;
            c2 = seed;
            ref.gemm_tn(atn.data(), bnn.data(), c1.data(), m, n, k, acc);
            simd.gemm_tn(atn.data(), bnn.data(), c2.data(), m, n, k, acc);
            CHECK(max_rel_diff(c1, c2) <= 1e-12);
          }
        }
      }
    }
  }
#endif
}

TEST_CASE("runtime dispatch can be overridden and restored") {
  const Isa before = active_isa();
  {
    ScopedIsa scoped(Isa::scalar);
    CHECK(active_isa() == Isa::scalar);
    const std::vector<double> a{1, 2, 3}, b{1, 1, 1};
    CHECK(dot(a, b) == 6.0);
  }
  CHECK(active_isa() == before);
  CHECK(isa_name(Isa::avx2) == "avx2");
}
