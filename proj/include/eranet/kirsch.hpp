#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "eranet/tensor_core.hpp"

namespace eranet {

/// Fixed edge-operator family used by the reparameterization module's
/// directional branches.
enum class EdgeOperator { none, roberts, prewitt, sobel, laplacian, kirsch };

inline std::string_view to_string(EdgeOperator op) {
  switch (op) {
    case EdgeOperator::none: return "none";
    case EdgeOperator::roberts: return "roberts";
    case EdgeOperator::prewitt: return "prewitt";
    case EdgeOperator::sobel: return "sobel";
    case EdgeOperator::laplacian: return "laplacian";
    case EdgeOperator::kirsch: return "kirsch";
  }
  return "?";
}

inline EdgeOperator edge_operator_from(std::string_view s) {
  for (auto op : {EdgeOperator::none, EdgeOperator::roberts, EdgeOperator::prewitt, EdgeOperator::sobel,
                  EdgeOperator::laplacian, EdgeOperator::kirsch})
    if (to_string(op) == s) return op;
  throw ValueError("unknown edge operator '" + std::string(s) + "'");
}

/// Row-major 3x3 integer kernel.
using Kernel3 = std::array<int, 9>;

struct EdgeBank {
  EdgeOperator op = EdgeOperator::none;
  std::vector<Kernel3> kernels;
  std::vector<std::string> labels;

  std::size_t size() const { return kernels.size(); }
};

/// The eight compass kernels, K1..K8 = NW, N, NE, E, SE, S, SW, W.
inline EdgeBank kirsch_bank() {
  return {EdgeOperator::kirsch,
          {
              Kernel3{+5, +5, -3, +5, 0, -3, -3, -3, -3},  // NW
              Kernel3{+5, +5, +5, -3, 0, -3, -3, -3, -3},  // N
              Kernel3{-3, +5, +5, -3, 0, +5, -3, -3, -3},  // NE
              Kernel3{-3, -3, +5, -3, 0, +5, -3, -3, +5},  // E
              Kernel3{-3, -3, -3, -3, 0, +5, -3, +5, +5},  // SE
              Kernel3{-3, -3, -3, -3, 0, -3, +5, +5, +5},  // S
              Kernel3{-3, -3, -3, +5, 0, -3, +5, +5, -3},  // SW
              Kernel3{+5, -3, -3, +5, 0, -3, +5, -3, -3},  // W
          },
          {"NW", "N", "NE", "E", "SE", "S", "SW", "W"}};
}

/// Alternative banks for the operator ablation. Roberts' 2x2 kernels sit in
/// the top-left corner of a 3x3 frame so every branch is 3x3.
inline EdgeBank edge_bank(EdgeOperator op) {
  switch (op) {
    case EdgeOperator::none: return {op, {}, {}};
    case EdgeOperator::kirsch: return kirsch_bank();
    case EdgeOperator::roberts:
      return {op, {Kernel3{1, 0, 0, 0, -1, 0, 0, 0, 0}, Kernel3{0, 1, 0, -1, 0, 0, 0, 0, 0}}, {"diag", "anti-diag"}};
    case EdgeOperator::prewitt:
      return {op, {Kernel3{-1, 0, 1, -1, 0, 1, -1, 0, 1}, Kernel3{-1, -1, -1, 0, 0, 0, 1, 1, 1}}, {"x", "y"}};
    case EdgeOperator::sobel:
      return {op, {Kernel3{-1, 0, 1, -2, 0, 2, -1, 0, 1}, Kernel3{-1, -2, -1, 0, 0, 0, 1, 2, 1}}, {"x", "y"}};
    case EdgeOperator::laplacian: return {op, {Kernel3{0, 1, 0, 1, -4, 1, 0, 1, 0}}, {"laplacian"}};
  }
  return {};
}

/// Bank as a real-valued (count, 1, 3, 3) tensor.
template <typename T>
Tensor4<T> bank_tensor(const EdgeBank& bank) {
  Tensor4<T> t({bank.size(), 1, 3, 3});
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (std::size_t j = 0; j < 9; ++j) t[i * 9 + j] = static_cast<T>(bank.kernels[i][j]);
  return t;
}

/// Kernel i of a (count, 1, 3, 3) bank tensor, as (1, 1, 3, 3).
template <typename T>
Tensor4<T> bank_kernel(const Tensor4<T>& bank, std::size_t i) {
  require(i < bank.n() && bank.c() == 1 && bank.h() == 3 && bank.w() == 3, "bank_kernel: bad index or shape");
  return Tensor4<T>({1, 1, 3, 3}, std::vector<T>(bank.data() + i * 9, bank.data() + (i + 1) * 9));
}

/// Classifies a stored bank tensor back to its operator family.
template <typename T>
EdgeOperator identify_bank(const Tensor4<T>& bank) {
  for (auto op : {EdgeOperator::none, EdgeOperator::roberts, EdgeOperator::prewitt, EdgeOperator::sobel,
                  EdgeOperator::laplacian, EdgeOperator::kirsch}) {
    const EdgeBank b = edge_bank(op);
    if (b.size() != bank.n()) continue;
    if (bank_tensor<T>(b) == bank) return op;
  }
  throw ValueError("edge kernel tensor does not match any known operator bank");
}

/// Depthwise response of every channel to one Kirsch direction (1..8), zero padding.
template <typename T>
Tensor4<T> kirsch_respond(const Tensor4<T>& x, const EdgeBank& bank, int direction) {
  if (direction < 1 || direction > static_cast<int>(bank.size()))
    throw ValueError("kirsch_respond: direction " + std::to_string(direction) + " outside 1.." +
                     std::to_string(bank.size()));
  require(x.size() > 0, "kirsch_respond: empty input");
  DepthwiseKernel<T> k;
  k.weight = Tensor4<T>({x.c(), 1, 3, 3});
  for (std::size_t c = 0; c < x.c(); ++c)
    for (std::size_t j = 0; j < 9; ++j) k.weight[c * 9 + j] = static_cast<T>(bank.kernels[direction - 1][j]);
  k.has_bias = false;
  return depthwise_conv2d(x, k);
}

}  // namespace eranet
