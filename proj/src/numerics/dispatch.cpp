#include <atomic>
#include <cstdlib>
#include <string>

#include "ctl/kernels.hpp"

namespace ctl::kernels {

namespace {

bool host_has_avx2() {
#if defined(CTL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{table(detect())};
  return ptr;
}

}  // namespace

const KernelTable* table(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return &detail::kScalarTable;
    case Backend::Avx2:
#if defined(CTL_HAVE_AVX2)
      if (host_has_avx2()) return &detail::kAvx2Table;
#endif
      return nullptr;
    case Backend::Neon:
#if defined(CTL_HAVE_NEON)
      return &detail::kNeonTable;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

bool supported(Backend backend) { return table(backend) != nullptr; }

Backend detect() {
  if (const char* env = std::getenv("CTL_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return Backend::Scalar;
    if (want == "avx2" && supported(Backend::Avx2)) return Backend::Avx2;
    if (want == "neon" && supported(Backend::Neon)) return Backend::Neon;
  }
  if (supported(Backend::Avx2)) return Backend::Avx2;
  if (supported(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Backend backend) {
  if (const KernelTable* t = table(backend)) current().store(t, std::memory_order_release);
}

std::string_view name(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace ctl::kernels
