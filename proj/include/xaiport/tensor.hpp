#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xaiport {

// Dense row-major float32 tensor. Immutable by convention once built (the
// numeric ops below return fresh tensors); safe to share across threads.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<uint32_t> dims);  // zero-filled
  Tensor(std::vector<uint32_t> dims, std::vector<float> data);

  static Tensor full(std::vector<uint32_t> dims, float value);

  const std::vector<uint32_t>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float operator[](std::size_t flat) const { return data_[flat]; }
  float& operator[](std::size_t flat) { return data_[flat]; }

  // Flat offset of a (i, j) / (c, i, j) style index; bounds are the caller's
  // responsibility on this hot path.
  std::size_t offset2(uint32_t i, uint32_t j) const { return std::size_t(i) * dims_[1] + j; }
  std::size_t offset3(uint32_t c, uint32_t i, uint32_t j) const {
    return (std::size_t(c) * dims_[1] + i) * dims_[2] + j;
  }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
  std::string dims_string() const;

private:
  std::vector<uint32_t> dims_;
  std::vector<float> data_;
};

struct EwOp {
  enum class Tag { add, sub, mul, relu, scale } tag;
  float c = 0.0f;  // only for scale

  static EwOp add() { return {Tag::add}; }
  static EwOp sub() { return {Tag::sub}; }
  static EwOp mul() { return {Tag::mul}; }
  static EwOp relu() { return {Tag::relu}; }
  static EwOp scale(float c) { return {Tag::scale, c}; }
};

// Tagged entry point; binary tags require `b` with matching dims.
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add(), a, &b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub(), a, &b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul(), a, &b); }
inline Tensor relu(const Tensor& a) { return elementwise(EwOp::relu(), a); }
inline Tensor scale(const Tensor& a, float c) { return elementwise(EwOp::scale(c), a); }

enum class ReduceOp { sum, mean, max };

// Reduce over `axes` (empty = all axes; full reduction yields dims [1]).
// sum/mean accumulate in double and round once, so the result does not
// depend on any internal chunking.
Tensor reduce(ReduceOp op, const Tensor& a, std::span<const uint32_t> axes = {});

}  // namespace xaiport
