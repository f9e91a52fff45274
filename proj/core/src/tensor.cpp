#include "neurohybrid/tensor.hpp"

namespace neurohybrid {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (const int64_t e : s) {
    if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace neurohybrid
