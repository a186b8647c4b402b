#include "a2rnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace a2r {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

int check_axis(int axis, int rank, const char* op) {
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return axis;
}

void finish_unary(const Tensor& a, Tensor& out, std::vector<Scalar> factor) {
  Tape* tape = Tape::active();
  if (!tape || !tracked(a)) return;
  int na = node_for(a, *tape);
  if (na < 0) return;
  std::size_t n = out.size();
  int node = tape->record_op(n, [na, n, f = std::move(factor)](Tape::BackwardContext& ctx) {
    const Scalar* dy = ctx.out_adjoint();
    Scalar* da = ctx.adjoint_of(na);
    for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * f[i];
  });
  out.bind_node(tape->id(), node);
  out.set_requires_grad(true);
}

void finish_passthrough(const Tensor& a, Tensor& out, Scalar factor) {
  Tape* tape = Tape::active();
  if (!tape || !tracked(a)) return;
  int na = node_for(a, *tape);
  if (na < 0) return;
  std::size_t n = out.size();
  int node = tape->record_op(n, [na, n, factor](Tape::BackwardContext& ctx) {
    const Scalar* dy = ctx.out_adjoint();
    Scalar* da = ctx.adjoint_of(na);
    for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * factor;
  });
  out.bind_node(tape->id(), node);
  out.set_requires_grad(true);
}

// Calls fn(input_flat_index, output_flat_index) for every element of
// in_shape, where the output index collapses the masked axes to extent 1.
template <class F>
void for_each_collapsed(const Shape& in_shape, const std::vector<bool>& reduced, F&& fn) {
  int rank = static_cast<int>(in_shape.size());
  Shape out_shape(in_shape.begin(), in_shape.end());
  for (int d = 0; d < rank; ++d) {
    if (reduced[static_cast<std::size_t>(d)]) out_shape[static_cast<std::size_t>(d)] = 1;
  }
  auto out_strides = row_major_strides(out_shape);
  std::vector<std::size_t> stride_of_axis(static_cast<std::size_t>(rank), 0);
  for (int d = 0; d < rank; ++d) {
    stride_of_axis[static_cast<std::size_t>(d)] =
        reduced[static_cast<std::size_t>(d)] ? 0 : out_strides[static_cast<std::size_t>(d)];
  }
  std::vector<int> digits(static_cast<std::size_t>(rank), 0);
  std::size_t n = numel(in_shape);
  std::size_t out_idx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, out_idx);
    for (int d = rank - 1; d >= 0; --d) {
      auto ud = static_cast<std::size_t>(d);
      if (++digits[ud] < in_shape[ud]) {
        out_idx += stride_of_axis[ud];
        break;
      }
      out_idx -= stride_of_axis[ud] * static_cast<std::size_t>(in_shape[ud] - 1);
      digits[ud] = 0;
    }
  }
}

std::vector<bool> axis_mask(const Shape& shape, const std::vector<int>& axes, const char* op) {
  if (axes.empty()) throw DomainError(std::string(op) + ": empty reduction axis set");
  std::vector<bool> mask(shape.size(), false);
  for (int axis : axes) {
    check_axis(axis, static_cast<int>(shape.size()), op);
    mask[static_cast<std::size_t>(axis)] = true;
  }
  return mask;
}

Shape collapsed_shape(const Shape& in, const std::vector<bool>& mask, bool keepdims) {
  Shape out;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (mask[d]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[d]);
    }
  }
  if (out.empty()) out.push_back(1);
  return out;
}

std::vector<int> all_axes(const Tensor& a) {
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  for (int d = 0; d < a.rank(); ++d) axes[static_cast<std::size_t>(d)] = d;
  return axes;
}

Tensor reduce_impl(const Tensor& a, const std::vector<int>& axes, bool keepdims, bool take_mean,
                   const char* op) {
  auto mask = axis_mask(a.shape(), axes, op);
  Shape out_shape = collapsed_shape(a.shape(), mask, keepdims);
  std::size_t count = 1;
  for (std::size_t d = 0; d < mask.size(); ++d) {
    if (mask[d]) count *= static_cast<std::size_t>(a.shape()[d]);
  }
  std::vector<Scalar> vals(numel(out_shape), 0.0);
  const Scalar* in = a.values().data();
  for_each_collapsed(a.shape(), mask, [&](std::size_t i, std::size_t o) { vals[o] += in[i]; });
  Scalar inv = take_mean && count > 0 ? 1.0 / static_cast<Scalar>(count) : 1.0;
  if (take_mean) {
    for (Scalar& v : vals) v *= inv;
  }
  macs::add(a.size());
  Tensor out = Tensor::from_values(out_shape, std::move(vals));

  Tape* tape = Tape::active();
  if (tape && tracked(a)) {
    int na = node_for(a, *tape);
    if (na >= 0) {
      Scalar factor = take_mean ? inv : 1.0;
      int node = tape->record_op(
          out.size(), [na, shape = a.shape(), mask, factor](Tape::BackwardContext& ctx) {
            const Scalar* dy = ctx.out_adjoint();
            Scalar* da = ctx.adjoint_of(na);
            for_each_collapsed(shape, mask, [&](std::size_t i, std::size_t o) {
              da[i] += dy[o] * factor;
            });
          });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  const Scalar* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] + pb[i];
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  Tape* tape = Tape::active();
  if (tape && (tracked(a) || tracked(b))) {
    int na = node_for(a, *tape);
    int nb = node_for(b, *tape);
    int node = tape->record_op(n, [na, nb, n](Tape::BackwardContext& ctx) {
      const Scalar* dy = ctx.out_adjoint();
      if (na >= 0) {
        Scalar* da = ctx.adjoint_of(na);
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (nb >= 0) {
        Scalar* db = ctx.adjoint_of(nb);
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  const Scalar* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] - pb[i];
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  Tape* tape = Tape::active();
  if (tape && (tracked(a) || tracked(b))) {
    int na = node_for(a, *tape);
    int nb = node_for(b, *tape);
    int node = tape->record_op(n, [na, nb, n](Tape::BackwardContext& ctx) {
      const Scalar* dy = ctx.out_adjoint();
      if (na >= 0) {
        Scalar* da = ctx.adjoint_of(na);
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (nb >= 0) {
        Scalar* db = ctx.adjoint_of(nb);
        for (std::size_t i = 0; i < n; ++i) db[i] -= dy[i];
      }
    });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  const Scalar* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] * pb[i];
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  Tape* tape = Tape::active();
  if (tape && (tracked(a) || tracked(b))) {
    int na = node_for(a, *tape);
    int nb = node_for(b, *tape);
    int node = tape->record_op(
        n, [na, nb, n, av = a.values_ptr(), bv = b.values_ptr()](Tape::BackwardContext& ctx) {
          const Scalar* dy = ctx.out_adjoint();
          if (na >= 0) {
            Scalar* da = ctx.adjoint_of(na);
            const Scalar* pb2 = bv->data();
            for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * pb2[i];
          }
          if (nb >= 0) {
            Scalar* db = ctx.adjoint_of(nb);
            const Scalar* pa2 = av->data();
            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * pa2[i];
          }
        });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  const Scalar* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] / pb[i];
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  Tape* tape = Tape::active();
  if (tape && (tracked(a) || tracked(b))) {
    int na = node_for(a, *tape);
    int nb = node_for(b, *tape);
    int node = tape->record_op(
        n, [na, nb, n, av = a.values_ptr(), bv = b.values_ptr()](Tape::BackwardContext& ctx) {
          const Scalar* dy = ctx.out_adjoint();
          const Scalar* pa2 = av->data();
          const Scalar* pb2 = bv->data();
          if (na >= 0) {
            Scalar* da = ctx.adjoint_of(na);
            for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] / pb2[i];
          }
          if (nb >= 0) {
            Scalar* db = ctx.adjoint_of(nb);
            for (std::size_t i = 0; i < n; ++i) {
              db[i] -= dy[i] * pa2[i] / (pb2[i] * pb2[i]);
            }
          }
        });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

Tensor add(const Tensor& a, Scalar b) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] + b;
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_passthrough(a, out, 1.0);
  return out;
}

Tensor scale(const Tensor& a, Scalar factor) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) vals[i] = pa[i] * factor;
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_passthrough(a, out, factor);
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor abs(const Tensor& a) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  std::vector<Scalar> factor(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = std::fabs(pa[i]);
    factor[i] = pa[i] > 0.0 ? 1.0 : (pa[i] < 0.0 ? -1.0 : 0.0);
  }
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_unary(a, out, std::move(factor));
  return out;
}

Tensor sign(const Tensor& a) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = pa[i] > 0.0 ? 1.0 : (pa[i] < 0.0 ? -1.0 : 0.0);
  }
  macs::add(n);
  // Gradient-blocking: no node is recorded.
  return Tensor::from_values(a.shape(), std::move(vals));
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  std::vector<Scalar> factor(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    bool negative = pa[i] < 0.0;
    vals[i] = negative ? slope * pa[i] : pa[i];
    factor[i] = negative ? slope : 1.0;
  }
  macs::add(n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_unary(a, out, std::move(factor));
  return out;
}

Tensor sigmoid(const Tensor& a) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  std::vector<Scalar> factor(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    Scalar x = pa[i];
    Scalar s;
    if (x >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-x));
    } else {
      Scalar e = std::exp(x);
      s = e / (1.0 + e);
    }
    vals[i] = s;
    factor[i] = s * (1.0 - s);
  }
  macs::add(4 * n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_unary(a, out, std::move(factor));
  return out;
}

Tensor pow(const Tensor& a, Scalar exponent) {
  std::size_t n = a.size();
  std::vector<Scalar> vals(n);
  std::vector<Scalar> factor(n);
  const Scalar* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = std::pow(pa[i], exponent);
    factor[i] = exponent == 0.0 ? 0.0 : exponent * std::pow(pa[i], exponent - 1.0);
  }
  macs::add(2 * n);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  finish_unary(a, out, std::move(factor));
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " has " +
                         std::to_string(a.size()) + " elements, target " + shape_str(shape) +
                         " has " + std::to_string(numel(shape)));
  }
  std::vector<Scalar> vals(a.values().begin(), a.values().end());
  Tensor out = Tensor::from_values(std::move(shape), std::move(vals));
  finish_passthrough(a, out, 1.0);
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: expects rank 2, got " + shape_str(a.shape()));
  }
  int m = a.dim(0), n = a.dim(1);
  std::vector<Scalar> vals(a.size());
  ConstMatMap in(a.values().data(), m, n);
  MatMap outmap(vals.data(), n, m);
  outmap = in.transpose();
  Tensor out = Tensor::from_values({n, m}, std::move(vals));
  Tape* tape = Tape::active();
  if (tape && tracked(a)) {
    int na = node_for(a, *tape);
    if (na >= 0) {
      int node = tape->record_op(out.size(), [na, m, n](Tape::BackwardContext& ctx) {
        ConstMatMap dy(ctx.out_adjoint(), n, m);
        MatMap da(ctx.adjoint_of(na), m, n);
        da += dy.transpose();
      });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (a.rank() != static_cast<int>(target.size())) {
    throw DimensionError("broadcast_to: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(target));
  }
  std::vector<bool> expanded(target.size(), false);
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (a.shape()[d] == target[d]) continue;
    if (a.shape()[d] == 1) {
      expanded[d] = true;
    } else {
      throw DimensionError("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " +
                           shape_str(target));
    }
  }
  std::vector<Scalar> vals(numel(target));
  const Scalar* in = a.values().data();
  // Walk the target shape; collapsing the expanded axes yields the source index.
  for_each_collapsed(target, expanded, [&](std::size_t i, std::size_t o) { vals[i] = in[o]; });
  macs::add(vals.size());
  Tensor out = Tensor::from_values(target, std::move(vals));
  Tape* tape = Tape::active();
  if (tape && tracked(a)) {
    int na = node_for(a, *tape);
    if (na >= 0) {
      int node = tape->record_op(out.size(),
                                 [na, target, expanded](Tape::BackwardContext& ctx) {
                                   const Scalar* dy = ctx.out_adjoint();
                                   Scalar* da = ctx.adjoint_of(na);
                                   for_each_collapsed(target, expanded,
                                                      [&](std::size_t i, std::size_t o) {
                                                        da[o] += dy[i];
                                                      });
                                 });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  int rank = parts[0].rank();
  check_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) {
      throw DimensionError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] !=
                           out_shape[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()) + " outside axis " +
                             std::to_string(axis));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);
  std::size_t inner = 1;
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);

  std::vector<Scalar> vals(numel(out_shape));
  std::size_t out_row = static_cast<std::size_t>(total) * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> part_offsets;
  for (const Tensor& p : parts) {
    part_offsets.push_back(offset);
    std::size_t block = static_cast<std::size_t>(p.dim(axis)) * inner;
    const Scalar* src = p.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(vals.data() + o * out_row + offset, src + o * block, block * sizeof(Scalar));
    }
    offset += block;
  }
  Tensor out = Tensor::from_values(out_shape, std::move(vals));

  Tape* tape = Tape::active();
  bool any = false;
  for (const Tensor& p : parts) any = any || tracked(p);
  if (tape && any) {
    std::vector<int> nodes;
    std::vector<std::size_t> blocks;
    for (const Tensor& p : parts) {
      nodes.push_back(node_for(p, *tape));
      blocks.push_back(static_cast<std::size_t>(p.dim(axis)) * inner);
    }
    int node = tape->record_op(
        out.size(),
        [nodes, blocks, part_offsets, outer, out_row](Tape::BackwardContext& ctx) {
          const Scalar* dy = ctx.out_adjoint();
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k] < 0) continue;
            Scalar* dp = ctx.adjoint_of(nodes[k]);
            for (std::size_t o = 0; o < outer; ++o) {
              const Scalar* src = dy + o * out_row + part_offsets[k];
              Scalar* dst = dp + o * blocks[k];
              for (std::size_t i = 0; i < blocks[k]; ++i) dst[i] += src[i];
            }
          }
        });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

Tensor crop(const Tensor& a, const std::vector<int>& offsets, const std::vector<int>& extents) {
  int rank = a.rank();
  if (static_cast<int>(offsets.size()) != rank || static_cast<int>(extents.size()) != rank) {
    throw DimensionError("crop: offsets/extents must match rank " + std::to_string(rank));
  }
  for (int d = 0; d < rank; ++d) {
    auto ud = static_cast<std::size_t>(d);
    if (offsets[ud] < 0 || extents[ud] < 0 ||
        offsets[ud] + extents[ud] > a.shape()[ud]) {
      throw DimensionError("crop: window offset " + shape_str(offsets) + " extent " +
                           shape_str(extents) + " out of bounds for " + shape_str(a.shape()));
    }
  }
  Shape out_shape(extents.begin(), extents.end());
  auto in_strides = row_major_strides(a.shape());
  auto out_strides = row_major_strides(out_shape);
  std::size_t n = numel(out_shape);
  std::vector<Scalar> vals(n);
  const Scalar* src = a.values().data();

  std::size_t base = 0;
  for (int d = 0; d < rank; ++d) {
    base += static_cast<std::size_t>(offsets[static_cast<std::size_t>(d)]) *
            in_strides[static_cast<std::size_t>(d)];
  }
  // Contiguous copy over the innermost axis.
  std::size_t inner = rank > 0 ? static_cast<std::size_t>(out_shape.back()) : 1;
  std::size_t rows = inner > 0 ? n / inner : 0;
  std::vector<int> idx(static_cast<std::size_t>(rank > 0 ? rank - 1 : 0), 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t src_off = base;
    for (std::size_t d = 0; d + 1 < static_cast<std::size_t>(rank); ++d) {
      src_off += static_cast<std::size_t>(idx[d]) * in_strides[d];
    }
    std::memcpy(vals.data() + r * inner, src + src_off, inner * sizeof(Scalar));
    for (int d = rank - 2; d >= 0; --d) {
      auto ud = static_cast<std::size_t>(d);
      if (++idx[ud] < out_shape[ud]) break;
      idx[ud] = 0;
    }
  }
  Tensor out = Tensor::from_values(out_shape, std::move(vals));

  Tape* tape = Tape::active();
  if (tape && tracked(a)) {
    int na = node_for(a, *tape);
    if (na >= 0) {
      int node = tape->record_op(
          out.size(), [na, out_shape, offsets, in_strides, rank](Tape::BackwardContext& ctx) {
            const Scalar* dy = ctx.out_adjoint();
            Scalar* da = ctx.adjoint_of(na);
            std::size_t base2 = 0;
            for (int d = 0; d < rank; ++d) {
              base2 += static_cast<std::size_t>(offsets[static_cast<std::size_t>(d)]) *
                       in_strides[static_cast<std::size_t>(d)];
            }
            std::size_t inner2 =
                rank > 0 ? static_cast<std::size_t>(out_shape.back()) : 1;
            std::size_t n2 = numel(out_shape);
            std::size_t rows2 = inner2 > 0 ? n2 / inner2 : 0;
            std::vector<int> idx2(static_cast<std::size_t>(rank > 0 ? rank - 1 : 0), 0);
            for (std::size_t r = 0; r < rows2; ++r) {
              std::size_t dst_off = base2;
              for (std::size_t d = 0; d + 1 < static_cast<std::size_t>(rank); ++d) {
                dst_off += static_cast<std::size_t>(idx2[d]) * in_strides[d];
              }
              const Scalar* srow = dy + r * inner2;
              Scalar* drow = da + dst_off;
              for (std::size_t i = 0; i < inner2; ++i) drow[i] += srow[i];
              for (int d = rank - 2; d >= 0; --d) {
                auto ud = static_cast<std::size_t>(d);
                if (++idx2[ud] < out_shape[ud]) break;
                idx2[ud] = 0;
              }
            }
          });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes, bool keepdims) {
  return reduce_impl(a, axes, keepdims, false, "reduce_sum");
}

Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes, bool keepdims) {
  return reduce_impl(a, axes, keepdims, true, "reduce_mean");
}

Tensor reduce_var(const Tensor& a, const std::vector<int>& axes, bool keepdims) {
  Tensor mu = reduce_mean(a, axes, true);
  Tensor centered = sub(a, broadcast_to(mu, a.shape()));
  Tensor squared = mul(centered, centered);
  return reduce_mean(squared, axes, keepdims);
}

Tensor sum(const Tensor& a) { return reduce_sum(a, all_axes(a), false); }
Tensor mean(const Tensor& a) { return reduce_mean(a, all_axes(a), false); }
Tensor var(const Tensor& a) { return reduce_var(a, all_axes(a), false); }

Tensor softmax(const Tensor& a, int axis) {
  check_axis(axis, a.rank(), "softmax");
  int rank = a.rank();
  std::size_t k = static_cast<std::size_t>(a.dim(axis));
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a.dim(d));

  std::vector<Scalar> vals(a.size());
  const Scalar* in = a.values().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      std::size_t base = o * k * inner + c;
      Scalar mx = in[base];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, in[base + j * inner]);
      Scalar total = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        Scalar e = std::exp(in[base + j * inner] - mx);
        vals[base + j * inner] = e;
        total += e;
      }
      Scalar invt = 1.0 / total;
      for (std::size_t j = 0; j < k; ++j) vals[base + j * inner] *= invt;
    }
  }
  macs::add(3 * a.size());
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));

  Tape* tape = Tape::active();
  if (tape && tracked(a)) {
    int na = node_for(a, *tape);
    if (na >= 0) {
      int node = tape->record_op(
          out.size(),
          [na, outer, inner, k, yv = out.values_ptr()](Tape::BackwardContext& ctx) {
            const Scalar* dy = ctx.out_adjoint();
            const Scalar* y = yv->data();
            Scalar* da = ctx.adjoint_of(na);
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t c = 0; c < inner; ++c) {
                std::size_t base = o * k * inner + c;
                Scalar dot = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                  dot += dy[base + j * inner] * y[base + j * inner];
                }
                for (std::size_t j = 0; j < k; ++j) {
                  std::size_t idx = base + j * inner;
                  da[idx] += y[idx] * (dy[idx] - dot);
                }
              }
            }
          });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<Scalar> vals(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
  ConstMatMap am(a.values().data(), m, k);
  ConstMatMap bm(b.values().data(), k, n);
  MatMap cm(vals.data(), m, n);
  cm.noalias() = am * bm;
  macs::add(static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(k) *
            static_cast<std::uint64_t>(n));
  Tensor out = Tensor::from_values({m, n}, std::move(vals));

  Tape* tape = Tape::active();
  if (tape && (tracked(a) || tracked(b))) {
    int na = node_for(a, *tape);
    int nb = node_for(b, *tape);
    int node = tape->record_op(
        out.size(),
        [na, nb, m, k, n, av = a.values_ptr(), bv = b.values_ptr()](Tape::BackwardContext& ctx) {
          ConstMatMap dy(ctx.out_adjoint(), m, n);
          if (na >= 0) {
            ConstMatMap bm2(bv->data(), k, n);
            MatMap da(ctx.adjoint_of(na), m, k);
            da.noalias() += dy * bm2.transpose();
          }
          if (nb >= 0) {
            ConstMatMap am2(av->data(), m, k);
            MatMap db(ctx.adjoint_of(nb), k, n);
            db.noalias() += am2.transpose() * dy;
          }
        });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

namespace {

struct ConvDims {
  int batch, c_in, h, w;
  int c_out, kh, kw;
  int stride, pad;
  int oh, ow;
  std::size_t patch() const {
    return static_cast<std::size_t>(c_in) * static_cast<std::size_t>(kh) *
           static_cast<std::size_t>(kw);
  }
  std::size_t spatial_out() const {
    return static_cast<std::size_t>(oh) * static_cast<std::size_t>(ow);
  }
};

// Unfolds one sample into [c_in*kh*kw, oh*ow], zero padding out-of-range taps.
void im2col(const ConvDims& d, const Scalar* x, Scalar* cols) {
  std::size_t spatial = d.spatial_out();
  for (int c = 0; c < d.c_in; ++c) {
    const Scalar* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        Scalar* row =
            cols + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * spatial;
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride + ky - d.pad;
          Scalar* dst = row + static_cast<std::size_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0);
            continue;
          }
          const Scalar* src_row = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride + kx - d.pad;
            dst[ox] = (ix >= 0 && ix < d.w) ? src_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds column gradients back into one sample's input gradient.
void col2im_add(const ConvDims& d, const Scalar* cols, Scalar* dx) {
  for (int c = 0; c < d.c_in; ++c) {
    Scalar* xc = dx + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const Scalar* row =
            cols + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * d.spatial_out();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          const Scalar* src = row + static_cast<std::size_t>(oy) * d.ow;
          Scalar* dst_row = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) dst_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expects rank-4 input and kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  ConvDims d;
  d.batch = x.dim(0);
  d.c_in = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.c_out = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (kernel.dim(1) != d.c_in) {
    throw DimensionError("conv2d: channel mismatch between input " + shape_str(x.shape()) +
                         " and kernel " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (pad < 0) throw DimensionError("conv2d: pad must be >= 0");
  if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " exceeds padded input " + shape_str(x.shape()));
  }
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh < 1 || d.ow < 1) {
    throw DimensionError("conv2d: output extent < 1 for input " + shape_str(x.shape()));
  }

  std::size_t patch = d.patch();
  std::size_t spatial = d.spatial_out();
  std::size_t sample_cols = patch * spatial;
  auto cols = std::make_shared<std::vector<Scalar>>(
      static_cast<std::size_t>(d.batch) * sample_cols);
  std::size_t out_sample = static_cast<std::size_t>(d.c_out) * spatial;
  std::vector<Scalar> vals(static_cast<std::size_t>(d.batch) * out_sample);
  std::size_t in_sample =
      static_cast<std::size_t>(d.c_in) * static_cast<std::size_t>(d.h) *
      static_cast<std::size_t>(d.w);

  ConstMatMap kmat(kernel.values().data(), d.c_out, static_cast<int>(patch));
  for (int b = 0; b < d.batch; ++b) {
    Scalar* bc = cols->data() + static_cast<std::size_t>(b) * sample_cols;
    im2col(d, x.values().data() + static_cast<std::size_t>(b) * in_sample, bc);
    ConstMatMap cmap(bc, static_cast<int>(patch), static_cast<int>(spatial));
    MatMap omap(vals.data() + static_cast<std::size_t>(b) * out_sample, d.c_out,
                static_cast<int>(spatial));
    omap.noalias() = kmat * cmap;
  }
  macs::add(static_cast<std::uint64_t>(d.batch) * d.c_out * spatial * patch);
  Tensor out = Tensor::from_values({d.batch, d.c_out, d.oh, d.ow}, std::move(vals));

  Tape* tape = Tape::active();
  if (tape && (tracked(x) || tracked(kernel))) {
    int nx = node_for(x, *tape);
    int nk = node_for(kernel, *tape);
    int node = tape->record_op(
        out.size(),
        [nx, nk, d, cols, patch, spatial, sample_cols, out_sample, in_sample,
         kv = kernel.values_ptr()](Tape::BackwardContext& ctx) {
          if (nk >= 0) {
            MatMap dk(ctx.adjoint_of(nk), d.c_out, static_cast<int>(patch));
            for (int b = 0; b < d.batch; ++b) {
              ConstMatMap dout(ctx.out_adjoint() + static_cast<std::size_t>(b) * out_sample,
                               d.c_out, static_cast<int>(spatial));
              ConstMatMap cmap(cols->data() + static_cast<std::size_t>(b) * sample_cols,
                               static_cast<int>(patch), static_cast<int>(spatial));
              dk.noalias() += dout * cmap.transpose();
            }
          }
          if (nx >= 0) {
            Scalar* dx = ctx.adjoint_of(nx);
            ConstMatMap kmat2(kv->data(), d.c_out, static_cast<int>(patch));
            std::vector<Scalar> dcols(sample_cols);
            for (int b = 0; b < d.batch; ++b) {
              ConstMatMap dout(ctx.out_adjoint() + static_cast<std::size_t>(b) * out_sample,
                               d.c_out, static_cast<int>(spatial));
              MatMap dcmap(dcols.data(), static_cast<int>(patch),
                           static_cast<int>(spatial));
              dcmap.noalias() = kmat2.transpose() * dout;
              col2im_add(d, dcols.data(), dx + static_cast<std::size_t>(b) * in_sample);
            }
          }
        });
    out.bind_node(tape->id(), node);
    out.set_requires_grad(true);
  }
  return out;
}

namespace {

// Shared element mapping for the sub-pixel rearrangements. For shuffle the
// bijection sends input (b, oc*r^2 + dy*r + dx, y, x) to output
// (b, oc, y*r + dy, x*r + dx).
template <class F>
void for_each_shuffle_pair(int batch, int c_out, int h_in, int w_in, int r, F&& fn) {
  int r2 = r * r;
  std::size_t in_plane = static_cast<std::size_t>(h_in) * w_in;
  std::size_t out_plane = in_plane * static_cast<std::size_t>(r2);
  for (int b = 0; b < batch; ++b) {
    for (int oc = 0; oc < c_out; ++oc) {
      std::size_t out_base =
          (static_cast<std::size_t>(b) * c_out + oc) * out_plane;
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          int ic = oc * r2 + dy * r + dx;
          std::size_t in_base =
              (static_cast<std::size_t>(b) * c_out * r2 + ic) * in_plane;
          for (int y = 0; y < h_in; ++y) {
            std::size_t in_row = in_base + static_cast<std::size_t>(y) * w_in;
            std::size_t out_row =
                out_base + (static_cast<std::size_t>(y) * r + dy) *
                               (static_cast<std::size_t>(w_in) * r) + dx;
            for (int x = 0; x < w_in; ++x) {
              fn(in_row + x, out_row + static_cast<std::size_t>(x) * r);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (x.rank() != 4) {
    throw DimensionError("pixel_shuffle: expects rank 4, got " + shape_str(x.shape()));
  }
  if (r < 1) throw DimensionError("pixel_shuffle: r must be >= 1");
  int c = x.dim(1);
  if (c % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(c) +
                         " not divisible by r^2 = " + std::to_string(r * r));
  }
  int batch = x.dim(0), c_out = c / (r * r), h = x.dim(2), w = x.dim(3);
  std::vector<Scalar> vals(x.size());
  const Scalar* in = x.values().data();
  for_each_shuffle_pair(batch, c_out, h, w, r,
                        [&](std::size_t i, std::size_t o) { vals[o] = in[i]; });
  Tensor out = Tensor::from_values({batch, c_out, h * r, w * r}, std::move(vals));
  Tape* tape = Tape::active();
  if (tape && tracked(x)) {
    int nx = node_for(x, *tape);
    if (nx >= 0) {
      int node = tape->record_op(out.size(),
                                 [nx, batch, c_out, h, w, r](Tape::BackwardContext& ctx) {
                                   const Scalar* dy = ctx.out_adjoint();
                                   Scalar* dx = ctx.adjoint_of(nx);
                                   for_each_shuffle_pair(
                                       batch, c_out, h, w, r,
                                       [&](std::size_t i, std::size_t o) { dx[i] += dy[o]; });
                                 });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  if (x.rank() != 4) {
    throw DimensionError("pixel_unshuffle: expects rank 4, got " + shape_str(x.shape()));
  }
  if (r < 1) throw DimensionError("pixel_unshuffle: r must be >= 1");
  int h = x.dim(2), w = x.dim(3);
  if (h % r != 0 || w % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial extents " + std::to_string(h) + "x" +
                         std::to_string(w) + " not divisible by r = " + std::to_string(r));
  }
  int batch = x.dim(0), c = x.dim(1), h_out = h / r, w_out = w / r;
  std::vector<Scalar> vals(x.size());
  const Scalar* in = x.values().data();
  // The shuffle mapping with roles swapped: here the input is the shuffled side.
  for_each_shuffle_pair(batch, c, h_out, w_out, r,
                        [&](std::size_t o, std::size_t i) { vals[o] = in[i]; });
  Tensor out = Tensor::from_values({batch, c * r * r, h_out, w_out}, std::move(vals));
  Tape* tape = Tape::active();
  if (tape && tracked(x)) {
    int nx = node_for(x, *tape);
    if (nx >= 0) {
      int node = tape->record_op(out.size(),
                                 [nx, batch, c, h_out, w_out, r](Tape::BackwardContext& ctx) {
                                   const Scalar* dy = ctx.out_adjoint();
                                   Scalar* dx = ctx.adjoint_of(nx);
                                   for_each_shuffle_pair(
                                       batch, c, h_out, w_out, r,
                                       [&](std::size_t o, std::size_t i) { dx[i] += dy[o]; });
                                 });
      out.bind_node(tape->id(), node);
      out.set_requires_grad(true);
    }
  }
  return out;
}

}  // namespace a2r
