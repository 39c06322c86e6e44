#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmseg/errors.hpp"

namespace vmseg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

namespace debug {

// When on, every op forward (and backward) checks its result for NaN/Inf and
// throws NumericError naming the offending node. Off by default: the checks
// cost a full pass over each output.
void set_check_finite(bool on);
bool check_finite();

}  // namespace debug

namespace threads {

// Caps worker parallelism for ops that parallelize internally. Results are
// bit-identical for every thread count: parallel loops only ever write
// disjoint output ranges and each element is reduced sequentially.
void set_max_threads(int n);
int max_threads();

}  // namespace threads

}  // namespace vmseg
