// SPDX-License-Identifier: Apache-2.0
#include "affnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace affnet {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
void Tape<T>::check_finite() const {
  for (const Node& n : nodes_) {
    for (const T x : n.output.values()) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw NumericError("non-finite value in output of op '" + n.name + "'");
      }
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace affnet
