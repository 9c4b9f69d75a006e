#include "adverseg/tensor.hpp"

namespace adverseg {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: rank 0");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("invalid shape " + shape_str(shape) + ": zero dimension");
  }
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace adverseg
