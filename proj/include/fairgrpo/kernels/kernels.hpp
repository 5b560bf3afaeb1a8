#pragma once

// Dense double-precision inner loops used by the tensor ops and the
// inference path. Every kernel has a portable scalar reference and an
// AVX2/FMA variant; the variant is chosen once at startup from CPUID and can
// be overridden with FAIRGRPO_ISA=scalar|avx2 or set_active_isa().

#include <cstddef>
#include <span>
#include <string_view>

namespace fairgrpo::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// True when the CPU (and this build) can run the given variant.
bool isa_supported(Isa isa);

// Best variant for the running CPU, honouring FAIRGRPO_ISA.
Isa detected_isa();

Isa active_isa();

// Throws std::invalid_argument when the variant is not supported here.
void set_active_isa(Isa isa);

// Raw kernel signatures. Matrices are dense row-major.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // c[m,n] (+)= a[m,k] * b[n,k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
  // c[m,n] (+)= a[m,k] * b[k,n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
  // c[m,n] (+)= a[k,m]^T * b[k,n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
};

const KernelTable& kernel_table(Isa isa);

namespace scalar {
const KernelTable& table();
}

#if defined(FAIRGRPO_HAVE_AVX2)
namespace avx2 {
const KernelTable& table();
}
#endif

// Dispatching front ends over the active table.
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate = false);
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate = false);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k, bool accumulate = false);

// RAII override of the active variant, restoring the previous one on exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace fairgrpo::kernels
