#include "vmseg/flopcount.hpp"

#include <atomic>

namespace vmseg::flopcount {

namespace {
std::atomic<bool> g_enabled{false};
std::atomic<uint64_t> g_total{0};
}  // namespace

void reset() { g_total.store(0, std::memory_order_relaxed); }
void enable(bool on) { g_enabled.store(on, std::memory_order_relaxed); }
bool enabled() { return g_enabled.load(std::memory_order_relaxed); }
uint64_t total() { return g_total.load(std::memory_order_relaxed); }

void add(uint64_t ops) {
  if (enabled()) g_total.fetch_add(ops, std::memory_order_relaxed);
}

}  // namespace vmseg::flopcount
