#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "fairgrpo/kernels/kernels.hpp"

namespace fairgrpo::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(FAIRGRPO_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__)) && \
    (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{&kernel_table(detected_isa())};
  return table;
}

std::atomic<Isa>& active_isa_slot() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

Isa detected_isa() {
  if (const char* forced = std::getenv("FAIRGRPO_ISA")) {
    const std::string name{forced};
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

const KernelTable& kernel_table(Isa isa) {
#if defined(FAIRGRPO_HAVE_AVX2)
  if (isa == Isa::avx2) {
    if (!isa_supported(Isa::avx2)) {
      throw std::invalid_argument("avx2 kernels requested on a CPU without AVX2/FMA");
    }
    return avx2::table();
  }
#else
  if (isa == Isa::avx2) throw std::invalid_argument("built without AVX2 kernels");
#endif
  return scalar::table();
}

Isa active_isa() { return active_isa_slot().load(); }

void set_active_isa(Isa isa) {
  const KernelTable& table = kernel_table(isa);
  active_table().store(&table);
  active_isa_slot().store(isa);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  return active_table().load()->dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  active_table().load()->axpy(alpha, x.data(), y.data(), x.size());
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
  active_table().load()->gemm_nt(a, b, c, m, n, k, accumulate);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
  active_table().load()->gemm_nn(a, b, c, m, n, k, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate) {
  active_table().load()->gemm_tn(a, b, c, m, n, k, accumulate);
}

}  // namespace fairgrpo::kernels
