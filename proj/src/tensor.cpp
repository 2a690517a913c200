#include "xaiport/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "xaiport/error.hpp"

namespace xaiport {

namespace {

std::size_t checked_element_count(const std::vector<uint32_t>& dims) {
  if (dims.empty()) throw Error(errc::invalid_argument, "tensor rank must be >= 1");
  std::size_t n = 1;
  for (uint32_t d : dims) {
    if (d == 0) throw Error(errc::invalid_argument, "tensor extents must be positive");
    n *= d;
  }
  return n;
}

std::string dims_to_string(const std::vector<uint32_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

}  // namespace

Tensor::Tensor(std::vector<uint32_t> dims)
    : dims_(std::move(dims)), data_(checked_element_count(dims_), 0.0f) {}

Tensor::Tensor(std::vector<uint32_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (checked_element_count(dims_) != data_.size()) {
    throw Error(errc::shape_mismatch, "data length " + std::to_string(data_.size()) +
                                          " does not match dims " + dims_to_string(dims_));
  }
}

Tensor Tensor::full(std::vector<uint32_t> dims, float value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::string Tensor::dims_string() const { return dims_to_string(dims_); }

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b) {
  const bool binary = op.tag == EwOp::Tag::add || op.tag == EwOp::Tag::sub || op.tag == EwOp::Tag::mul;
  if (binary) {
    if (b == nullptr) throw Error(errc::invalid_argument, "binary elementwise op needs two operands");
    if (!a.same_dims(*b)) {
      throw Error(errc::shape_mismatch,
                  "elementwise dims mismatch: " + a.dims_string() + " vs " + b->dims_string());
    }
  }

  std::vector<float> out(a.size());
  const auto av = a.data();
  switch (op.tag) {
    case EwOp::Tag::add: {
      const auto bv = b->data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    }
    case EwOp::Tag::sub: {
      const auto bv = b->data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    }
    case EwOp::Tag::mul: {
      const auto bv = b->data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    }
    case EwOp::Tag::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
      break;
    case EwOp::Tag::scale:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * op.c;
      break;
  }
  return Tensor(a.dims(), std::move(out));
}

Tensor reduce(ReduceOp op, const Tensor& a, std::span<const uint32_t> axes) {
  const auto& dims = a.dims();
  std::vector<bool> reduced(dims.size(), false);
  if (axes.empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (uint32_t ax : axes) {
      if (ax >= dims.size()) {
        throw Error(errc::invalid_axis, "axis " + std::to_string(ax) + " out of range for dims " +
                                            a.dims_string());
      }
      reduced[ax] = true;
    }
  }

  std::vector<uint32_t> out_dims;
  for (std::size_t d = 0; d < dims.size(); ++d)
    if (!reduced[d]) out_dims.push_back(dims[d]);
  if (out_dims.empty()) out_dims.push_back(1);

  std::size_t out_count = 1;
  for (uint32_t d : out_dims) out_count *= d;

  std::size_t per_bucket = a.size() / out_count;

  std::vector<double> acc(out_count, 0.0);
  std::vector<float> maxv(out_count, -std::numeric_limits<float>::infinity());

  // Row-major walk; out index built from the non-reduced coordinates.
  std::vector<uint32_t> idx(dims.size(), 0);
  const auto av = a.data();
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t out_flat = 0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
      if (!reduced[d]) out_flat = out_flat * dims[d] + idx[d];
    }
    if (op == ReduceOp::max) {
      maxv[out_flat] = std::max(maxv[out_flat], av[flat]);
    } else {
      acc[out_flat] += double(av[flat]);
    }
    for (std::size_t d = dims.size(); d-- > 0;) {
      if (++idx[d] < dims[d]) break;
      idx[d] = 0;
    }
  }

  std::vector<float> out(out_count);
  for (std::size_t i = 0; i < out_count; ++i) {
    switch (op) {
      case ReduceOp::sum: out[i] = float(acc[i]); break;
      case ReduceOp::mean: out[i] = float(acc[i] / double(per_bucket)); break;
      case ReduceOp::max: out[i] = maxv[i]; break;
    }
  }
  return Tensor(std::move(out_dims), std::move(out));
}

}  // namespace xaiport
