// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major f64 tensors with reverse-mode differentiation.
//
// Every operation that has at least one input requiring a gradient records a
// node holding its parents and a backward closure. The recorded graph is owned
// by the tensors that reference it, so each forward pass builds its own tape and
// independent forward passes never share mutable state (parameters aside, whose
// gradient buffers accumulate during backward()).
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace csmoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor
{
public:
    /// Empty (rank-1, zero elements) tensor.
    Tensor();

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);
    /// Leaf tensor that accumulates a gradient during backward().
    static Tensor parameter(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept;
    std::size_t rank() const noexcept { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const noexcept;
    bool empty() const noexcept { return numel() == 0; }

    std::span<const double> data() const noexcept;
    /// Mutable view of the values. Only meaningful for leaves (parameters, inputs);
    /// mutating an interior node does not propagate anywhere.
    std::span<double> mutable_data() noexcept;
    std::vector<double> to_vector() const;

    double item() const;
    double operator()(std::size_t i) const;
    double operator()(std::size_t i, std::size_t j) const;

    bool requires_grad() const noexcept;
    bool has_grad() const noexcept;
    /// Gradient buffer (zeros when nothing has been accumulated yet).
    std::vector<double> grad() const;
    void zero_grad() noexcept;

    /// Back-propagates from this scalar through the recorded graph.
    void backward() const;

    /// Value copy with no graph history and no gradient.
    Tensor detach() const;
    /// Copy that is itself a fresh parameter leaf.
    Tensor clone_parameter() const;

    bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

    // Internal: used by operation implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Per-thread operation counters. Floating-point work is counted with the
/// convention used by the compute profiler: 2 per multiply-accumulate in matrix
/// products, 5 per element for softmax and layer normalization, nothing for
/// elementwise arithmetic.
struct OpCounters
{
    std::uint64_t flops = 0;
    std::uint64_t expert_calls = 0;
};

OpCounters& op_counters() noexcept;

/// Snapshot of the counters taken at construction; delta() reports what happened since.
class CounterScope
{
public:
    CounterScope() : start_(op_counters()) {}
    OpCounters delta() const noexcept
    {
        const OpCounters& now = op_counters();
        return {now.flops - start_.flops, now.expert_calls - start_.expert_calls};
    }

private:
    OpCounters start_;
};

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [k×m]ᵀ·[k×n]
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a[m×n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sums a rank-2 tensor along `axis`, returning a rank-1 tensor.
Tensor sum_axis(const Tensor& a, std::size_t axis);

// ---- normalization --------------------------------------------------------

/// exp((x - max)/temperature) normalized along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, double temperature = 1.0);
/// Normalizes over the last dimension, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
/// Scales every row of a rank-2 tensor to unit ℓ2 norm. Zero rows raise ParameterError.
Tensor l2_normalize_rows(const Tensor& x);

// ---- indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Rank-2 result with `total_rows` rows: row rows[i] holds src row i, every
/// other row holds `fill` (a rank-1 tensor of width src.dim(1)).
Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> rows, std::size_t total_rows, const Tensor& fill);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rank-1 [n] viewed as rank-2 [1×n] (and any tensor reshaped to a compatible shape).
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace csmoe
