#include <atomic>
#include <cstdlib>
#include <string>

#include "gnnopf/error.hpp"
#include "gnnopf/kernels.hpp"

namespace gnnopf::kernels {

#if defined(GNNOPF_HAVE_AVX2_TU)
const Table* avx2_table_impl();
const Table* avx2_table() { return avx2_table_impl(); }
#else
const Table* avx2_table() { return nullptr; }
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
  case Isa::scalar:
    return true;
  case Isa::avx2:
#if defined(GNNOPF_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
  }
  return false;
}

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw UsageError("unknown kernel set '" + std::string(name) + "' (expected scalar or avx2)");
}

namespace {

const Table* table_for(Isa isa) {
  if (isa == Isa::scalar) return &scalar_table();
  if (!cpu_supports(isa)) return nullptr;
  return avx2_table();
}

const Table* detect() {
  if (const char* env = std::getenv("GNNOPF_KERNELS"); env && *env) {
    const Isa wanted = parse_isa(env);
    if (const Table* t = table_for(wanted)) return t;
    throw UsageError(std::string("GNNOPF_KERNELS=") + env + " is not supported on this CPU");
  }
  if (const Table* t = table_for(Isa::avx2)) return t;
  return &scalar_table();
}

std::atomic<const Table*> g_active{nullptr};

} // namespace

const Table& active() {
  const Table* t = g_active.load(std::memory_order_acquire);
  if (!t) {
    t = detect();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Isa isa) {
  const Table* t = table_for(isa);
  if (!t) throw UsageError(std::string("kernel set ") + isa_name(isa) + " is not available on this CPU");
  g_active.store(t, std::memory_order_release);
}

} // namespace gnnopf::kernels
