#include "vmseg/common.hpp"

#include <atomic>
#include <sstream>

namespace vmseg {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace debug {

namespace {
std::atomic<bool> g_check_finite{false};
}

void set_check_finite(bool on) { g_check_finite.store(on, std::memory_order_relaxed); }
bool check_finite() { return g_check_finite.load(std::memory_order_relaxed); }

}  // namespace debug

namespace threads {

namespace {
std::atomic<int> g_max_threads{1};
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }
int max_threads() { return g_max_threads.load(std::memory_order_relaxed); }

}  // namespace threads

}  // namespace vmseg
