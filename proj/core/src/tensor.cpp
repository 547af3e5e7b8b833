// SPDX-License-Identifier: Apache-2.0
#include "csmoe/tensor.hpp"

#include "csmoe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace csmoe {

namespace detail {

struct Node
{
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad()
    {
        if (grad.size() != data.size())
            grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_numel(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "×" : "") << shape[i];
    os << ']';
    return os.str();
}

OpCounters& op_counters() noexcept
{
    thread_local OpCounters counters;
    return counters;
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad)
{
    if (shape_numel(shape) != data.size())
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

/// Builds an op result; the backward closure is kept only when some parent needs a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents, std::function<void(Node&)> fn)
{
    auto n = make_leaf(std::move(shape), std::move(data), false);
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return Tensor(std::move(n));
}

// C[m×n] += A[m×k]·B[k×n]
void mm_nn(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n, double* c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0)
                continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
void mm_nt(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n, double* c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double* arow = a + i * k;
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
}

// C[m×n] += A[k×m]ᵀ·B[k×n]
void mm_tn(const double* a, std::size_t k, std::size_t m, const double* b, std::size_t n, double* c)
{
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[p * m + i];
            if (av == 0.0)
                continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
}

void require_rank2(const Tensor& t, const char* what)
{
    if (t.rank() != 2)
        throw DimensionError(std::string(what) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D df)
{
    const auto& in = a.node()->data;
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), {a.node()}, [df](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad)
            return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(make_leaf({0}, {}, false)) {}

Tensor Tensor::zeros(Shape shape)
{
    const std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double value)
{
    const std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from(Shape shape, std::vector<double> data)
{
    return Tensor(make_leaf(std::move(shape), std::move(data), false));
}

Tensor Tensor::scalar(double value)
{
    return Tensor(make_leaf({1}, {value}, false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data)
{
    return Tensor(make_leaf(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const noexcept { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const
{
    if (i >= rank())
        throw DimensionError("dimension " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[i];
}

std::size_t Tensor::numel() const noexcept { return node_->data.size(); }

std::span<const double> Tensor::data() const noexcept { return node_->data; }

std::span<double> Tensor::mutable_data() noexcept { return node_->data; }

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const
{
    if (numel() != 1)
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::operator()(std::size_t i) const { return node_->data.at(i); }

double Tensor::operator()(std::size_t i, std::size_t j) const
{
    return node_->data.at(i * node_->shape.back() + j);
}

bool Tensor::requires_grad() const noexcept { return node_->requires_grad; }

bool Tensor::has_grad() const noexcept { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const
{
    if (node_->grad.size() == node_->data.size())
        return node_->grad;
    return std::vector<double>(node_->data.size(), 0.0);
}

void Tensor::zero_grad() noexcept { node_->grad.clear(); }

void Tensor::backward() const
{
    if (numel() != 1)
        throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
    if (!requires_grad())
        return;

    // Iterative post-order DFS: every node is emitted once, after its parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (n->backward_fn)
            n->grad.assign(n->data.size(), 0.0);
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn)
            (*it)->backward_fn(**it);
}

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->data, false)); }

Tensor Tensor::clone_parameter() const { return Tensor(make_leaf(shape(), node_->data, true)); }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    mm_nn(a.data().data(), m, k, b.data().data(), n, out.data());
    op_counters().flops += 2 * m * k * n;
    return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            mm_nt(self.grad.data(), m, n, pb.data.data(), k, pa.ensure_grad().data());
        if (pb.requires_grad)
            mm_tn(pa.data.data(), m, k, self.grad.data(), n, pb.ensure_grad().data());
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " · " + shape_str(b.shape()) + "ᵀ");
    std::vector<double> out(m * n, 0.0);
    mm_nt(a.data().data(), m, k, b.data().data(), n, out.data());
    op_counters().flops += 2 * m * k * n;
    return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            mm_nn(self.grad.data(), m, n, pb.data.data(), k, pa.ensure_grad().data());
        if (pb.requires_grad)
            mm_tn(self.grad.data(), m, n, pa.data.data(), k, pb.ensure_grad().data());
    });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b)
{
    require_rank2(a, "matmul_tn");
    require_rank2(b, "matmul_tn");
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul_tn: inner dimensions differ, " + shape_str(a.shape()) + "ᵀ · " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    mm_tn(a.data().data(), k, m, b.data().data(), n, out.data());
    op_counters().flops += 2 * m * k * n;
    return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            mm_nt(pb.data.data(), k, n, self.grad.data(), m, pa.ensure_grad().data());
        if (pb.requires_grad)
            mm_nn(pa.data.data(), k, m, self.grad.data(), n, pb.ensure_grad().data());
    });
}

Tensor transpose(const Tensor& a)
{
    require_rank2(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto in = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[j * m + i] = in[i * n + j];
    return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.grad[j * m + i];
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += self.grad[i];
            }
    });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor add_row(const Tensor& a, const Tensor& bias)
{
    require_rank2(a, "add_row");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (bias.numel() != n)
        throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(a.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] += bias.data()[j];
    return make_result(a.shape(), std::move(out), {a.node(), bias.node()}, [m, n](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    g[j] += self.grad[i * n + j];
        }
    });
}

Tensor scale(const Tensor& a, double s)
{
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s)
{
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a)
{
    return scale(a, -1.0);
}

Tensor square(const Tensor& a)
{
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a)
{
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a)
{
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a)
{
    double s = 0.0;
    for (double v : a.data())
        s += v;
    return make_result({1}, {s}, {a.node()}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& v : g)
            v += self.grad[0];
    });
}

Tensor mean(const Tensor& a)
{
    if (a.numel() == 0)
        throw DimensionError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis)
{
    require_rank2(a, "sum_axis");
    if (axis > 1)
        throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(axis == 0 ? n : m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[axis == 0 ? j : i] += a.data()[i * n + j];
    const std::size_t len = out.size();
    return make_result({len}, std::move(out), {a.node()}, [m, n, axis](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.grad[axis == 0 ? j : i];
    });
}

// ---- normalization --------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis, double temperature)
{
    if (!(temperature > 0.0))
        throw ParameterError("softmax: temperature must be positive, got " + std::to_string(temperature));
    if (axis >= x.rank())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const auto& sh = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= sh[i];
    for (std::size_t i = axis + 1; i < sh.size(); ++i)
        inner *= sh[i];
    const std::size_t len = sh[axis];
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < inner; ++c) {
            const std::size_t base = o * len * inner + c;
            double mx = -INFINITY;
            for (std::size_t i = 0; i < len; ++i)
                mx = std::max(mx, in[base + i * inner]);
            double z = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const double e = std::exp((in[base + i * inner] - mx) / temperature);
                out[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < len; ++i)
                out[base + i * inner] /= z;
        }
    op_counters().flops += 5 * in.size();
    return make_result(sh, std::move(out), {x.node()}, [outer, inner, len, temperature](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < inner; ++c) {
                const std::size_t base = o * len * inner + c;
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i)
                    dot += self.grad[base + i * inner] * self.data[base + i * inner];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t k = base + i * inner;
                    g[k] += self.data[k] * (self.grad[k] - dot) / temperature;
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps)
{
    if (!(eps > 0.0))
        throw ParameterError("layer_norm: eps must be positive, got " + std::to_string(eps));
    if (x.rank() == 0 || x.shape().back() == 0)
        throw DimensionError("layer_norm: empty last dimension in " + shape_str(x.shape()));
    const std::size_t n = x.shape().back();
    if (gain.numel() != n || bias.numel() != n)
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                             " do not match last dimension of " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    const auto in = x.data();
    std::vector<double> out(in.size()), xhat(in.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mu) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gain.data()[j] + bias.data()[j];
        }
    }
    op_counters().flops += 5 * in.size();
    return make_result(
        x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
        [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (pg.requires_grad) {
                auto& g = pg.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j)
                        g[j] += self.grad[r * n + j] * xhat[r * n + j];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j)
                        g[j] += self.grad[r * n + j];
            }
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                const double nn = static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = self.grad[r * n + j] * pg.data[j];
                        s1 += dxh;
                        s2 += dxh * xhat[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = self.grad[r * n + j] * pg.data[j];
                        g[r * n + j] += inv_std[r] / nn * (nn * dxh - s1 - xhat[r * n + j] * s2);
                    }
                }
            }
        });
}

Tensor l2_normalize_rows(const Tensor& x)
{
    require_rank2(x, "l2_normalize_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n), norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            s += x.data()[i * n + j] * x.data()[i * n + j];
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0)
            throw ParameterError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = x.data()[i * n + j] / norms[i];
    }
    return make_result(x.shape(), std::move(out), {x.node()}, [m, n, norms = std::move(norms)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += self.grad[i * n + j] * self.data[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += (self.grad[i * n + j] - self.data[i * n + j] * dot) / norms[i];
        }
    });
}

// ---- indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows)
{
    require_rank2(a, "gather_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(rows.size() * n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= m)
            throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " + shape_str(a.shape()));
        std::copy_n(a.data().begin() + rows[r] * n, n, out.begin() + r * n);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result({rows.size(), n}, std::move(out), {a.node()}, [n, idx = std::move(idx)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < n; ++j)
                g[idx[r] * n + j] += self.grad[r * n + j];
    });
}

Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> rows, std::size_t total_rows, const Tensor& fill)
{
    require_rank2(src, "scatter_rows");
    const std::size_t n = src.dim(1);
    if (src.dim(0) != rows.size())
        throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " target rows for source " + shape_str(src.shape()));
    if (fill.numel() != n)
        throw DimensionError("scatter_rows: fill " + shape_str(fill.shape()) + " does not match source " + shape_str(src.shape()));
    std::vector<std::ptrdiff_t> source_of(total_rows, -1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= total_rows || source_of[rows[r]] != -1)
            throw DimensionError("scatter_rows: row index " + std::to_string(rows[r]) + " out of range or repeated");
        source_of[rows[r]] = static_cast<std::ptrdiff_t>(r);
    }
    std::vector<double> out(total_rows * n);
    for (std::size_t i = 0; i < total_rows; ++i) {
        if (source_of[i] >= 0)
            std::copy_n(src.data().begin() + source_of[i] * static_cast<std::ptrdiff_t>(n), n, out.begin() + i * n);
        else
            std::copy_n(fill.data().begin(), n, out.begin() + i * n);
    }
    return make_result({total_rows, n}, std::move(out), {src.node(), fill.node()},
                       [n, source_of = std::move(source_of)](Node& self) {
                           Node& ps = *self.parents[0];
                           Node& pf = *self.parents[1];
                           for (std::size_t i = 0; i < source_of.size(); ++i) {
                               const double* gi = self.grad.data() + i * n;
                               if (source_of[i] >= 0) {
                                   if (ps.requires_grad) {
                                       double* gs = ps.ensure_grad().data() + source_of[i] * static_cast<std::ptrdiff_t>(n);
                                       for (std::size_t j = 0; j < n; ++j)
                                           gs[j] += gi[j];
                                   }
                               } else if (pf.requires_grad) {
                                   auto& gf = pf.ensure_grad();
                                   for (std::size_t j = 0; j < n; ++j)
                                       gf[j] += gi[j];
                               }
                           }
                       });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count)
{
    require_rank2(a, "slice_rows");
    if (start + count > a.dim(0))
        throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") out of range for " + shape_str(a.shape()));
    const std::size_t n = a.dim(1);
    std::vector<double> out(a.data().begin() + start * n, a.data().begin() + (start + count) * n);
    return make_result({count, n}, std::move(out), {a.node()}, [start, n](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[start * n + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count)
{
    require_rank2(a, "slice_cols");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (start + count > n)
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") out of range for " + shape_str(a.shape()));
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(a.data().begin() + i * n + start, count, out.begin() + i * count);
    return make_result({m, count}, std::move(out), {a.node()}, [m, n, start, count](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j)
                g[i * n + start + j] += self.grad[i * count + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw DimensionError("concat_rows: no inputs");
    const std::size_t n = parts[0].rank() == 2 ? parts[0].dim(1) : parts[0].numel();
    std::size_t m = 0;
    std::vector<NodePtr> parents;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        const std::size_t pn = p.rank() == 2 ? p.dim(1) : p.numel();
        if (pn != n || p.rank() > 2)
            throw DimensionError("concat_rows: width mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        offsets.push_back(m * n);
        m += p.numel() / std::max<std::size_t>(n, 1);
        parents.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const auto& p : parts)
        out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result({m, n}, std::move(out), std::move(parents), [offsets = std::move(offsets)](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad)
                continue;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw DimensionError("concat_cols: no inputs");
    for (const auto& p : parts)
        require_rank2(p, "concat_cols");
    const std::size_t m = parts[0].dim(0);
    std::size_t n = 0;
    std::vector<NodePtr> parents;
    std::vector<std::size_t> col_offsets;
    for (const auto& p : parts) {
        if (p.dim(0) != m)
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        col_offsets.push_back(n);
        n += p.dim(1);
        parents.push_back(p.node());
    }
    std::vector<double> out(m * n);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = parts[k].dim(1);
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(parts[k].data().begin() + i * w, w, out.begin() + i * n + col_offsets[k]);
    }
    return make_result({m, n}, std::move(out), std::move(parents), [m, n, col_offsets = std::move(col_offsets)](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad)
                continue;
            const std::size_t w = p.shape[1];
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    g[i * w + j] += self.grad[i * n + col_offsets[k] + j];
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape)
{
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return make_result(std::move(shape), a.to_vector(), {a.node()}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i];
    });
}

}  // namespace csmoe
