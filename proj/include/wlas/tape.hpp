#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <deque>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "wlas/ndarray.hpp"

namespace wlas {

// Reverse-mode differentiation over an explicit trace of primitive
// operations. A Tape is built eagerly: applying an op appends a node and
// computes its value immediately, so building the graph is the first forward
// pass. forward() re-executes the recorded trace against fresh inputs;
// backward() runs the reverse sweep and accumulates gradients for every
// differentiable input and parameter.
//
// Single-owner: a tape must not be shared across threads.

enum class OpKind {
    Input,
    Param,
    Constant,
    MatMul,
    Add,
    AddRowVec,
    Mul,
    Scale,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    Concat,
    Slice,
    Row,
    StackRows,
    Reshape,
    Sum,
    CrossEntropy,
    Conv2d,
    MaxPool2d,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Constant: return "const";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::AddRowVec: return "add_rowvec";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Relu: return "relu";
        case OpKind::Softmax: return "softmax";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Row: return "row";
        case OpKind::StackRows: return "stack_rows";
        case OpKind::Reshape: return "reshape";
        case OpKind::Sum: return "sum";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::MaxPool2d: return "maxpool2d";
    }
    return "?";
}

template <typename Real>
class Tape {
  public:
    using Array = NDArray<Real>;

    struct Node {
        OpKind op;
        std::vector<int> args;
        Array value;                     // owned output (empty for Param views)
        const Array* external = nullptr; // Param nodes view persistent storage
        Array grad;
        bool needs_grad = false;
        // op attributes
        int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
        Real scalar = Real(0);
        Array aux;                 // cached activations (softmax output, im2col)
        std::vector<int> iaux;     // cached indices (maxpool argmax)
        std::string name;
    };

    int input(const std::string& name, Array value) {
        check(!input_index_.count(name), "Tape: duplicate input name '" + name + "'");
        int id = add_leaf(OpKind::Input, std::move(value), true, name);
        input_index_[name] = id;
        input_order_.push_back(name);
        return id;
    }

    // Parameters are bound by name at most once per tape; repeated binds of
    // the same name return the existing node so gradient fan-in accumulates
    // on a single leaf.
    int param(const std::string& name, const Array& storage) {
        auto it = param_index_.find(name);
        if (it != param_index_.end()) return it->second;
        Node n;
        n.op = OpKind::Param;
        n.external = &storage;
        n.needs_grad = true;
        n.name = name;
        nodes_.push_back(std::move(n));
        int id = static_cast<int>(nodes_.size()) - 1;
        param_index_[name] = id;
        param_order_.push_back(name);
        values_ok_ = true;
        return id;
    }

    int constant(Array value) { return add_leaf(OpKind::Constant, std::move(value), false, ""); }

    const Array& value(int id) const {
        const Node& n = node(id);
        return n.external ? *n.external : n.value;
    }

    const Array& grad(int id) const {
        const Node& n = node(id);
        check(n.grad.size() > 0, "Tape::grad: no gradient at node " + node_label(id) +
                                     " (backward not run or node not on the differentiated path)");
        return n.grad;
    }

    // ---- primitive ops -------------------------------------------------

    int matmul(int a, int b) { return add_node(OpKind::MatMul, {a, b}); }
    int add(int a, int b) { return add_node(OpKind::Add, {a, b}); }
    int add_rowvec(int m, int v) { return add_node(OpKind::AddRowVec, {m, v}); }
    int mul(int a, int b) { return add_node(OpKind::Mul, {a, b}); }

    int scale(int a, Real s) {
        Node n = make_node(OpKind::Scale, {a});
        n.scalar = s;
        return push_exec(std::move(n));
    }

    int tanh(int a) { return add_node(OpKind::Tanh, {a}); }
    int sigmoid(int a) { return add_node(OpKind::Sigmoid, {a}); }
    int relu(int a) { return add_node(OpKind::Relu, {a}); }
    int softmax(int a) { return add_node(OpKind::Softmax, {a}); }

    int concat(const std::vector<int>& parts) {
        check(!parts.empty(), "concat: needs at least one operand");
        return add_node(OpKind::Concat, parts);
    }

    int slice(int a, int begin, int len) {
        Node n = make_node(OpKind::Slice, {a});
        n.i0 = begin;
        n.i1 = len;
        return push_exec(std::move(n));
    }

    int row(int a, int r) {
        Node n = make_node(OpKind::Row, {a});
        n.i0 = r;
        return push_exec(std::move(n));
    }

    int stack_rows(const std::vector<int>& rows) {
        check(!rows.empty(), "stack_rows: needs at least one row");
        return add_node(OpKind::StackRows, rows);
    }

    int reshape(int a, std::vector<int> shape) {
        Node n = make_node(OpKind::Reshape, {a});
        n.aux = Array(shape, Real(0));
        return push_exec(std::move(n));
    }

    int sum(int a) { return add_node(OpKind::Sum, {a}); }

    // Smoothed cross-entropy against a one-hot target over the last axis of a
    // logits vector: loss = logsumexp(z) - sum_v q_v z_v with
    // q = (1-smoothing) * onehot(target) + smoothing / V.
    int cross_entropy(int logits, int target, Real smoothing) {
        Node n = make_node(OpKind::CrossEntropy, {logits});
        n.i0 = target;
        n.scalar = smoothing;
        return push_exec(std::move(n));
    }

    int conv2d(int x, int w, int b, int stride, int pad) {
        Node n = make_node(OpKind::Conv2d, {x, w, b});
        n.i0 = stride;
        n.i1 = pad;
        return push_exec(std::move(n));
    }

    int maxpool2d(int x, int k, int stride) {
        Node n = make_node(OpKind::MaxPool2d, {x});
        n.i0 = k;
        n.i1 = stride;
        return push_exec(std::move(n));
    }

    // ---- record-level operations ---------------------------------------

    void mark_output(const std::string& name, int id) {
        node(id);
        output_index_[name] = id;
        output_order_.push_back(name);
    }

    int output_id(const std::string& name) const {
        auto it = output_index_.find(name);
        check(it != output_index_.end(), "Tape: unknown output '" + name + "'");
        return it->second;
    }

    // Replays the recorded trace against the given inputs. The node sequence
    // is fixed, so identical inputs reproduce the original values
    // bit-identically.
    std::map<std::string, Array> forward(const std::map<std::string, Array>& inputs) {
        check(!nodes_.empty(), "Tape::forward: empty record");
        for (const auto& [name, arr] : inputs) {
            auto it = input_index_.find(name);
            check(it != input_index_.end(), "Tape::forward: record has no input named '" + name + "'");
            Node& n = nodes_[static_cast<std::size_t>(it->second)];
            check(arr.shape() == n.value.shape(),
                  "Tape::forward: input '" + name + "' expects shape " + n.value.shape_str() +
                      ", got " + arr.shape_str());
        }
        for (const std::string& name : input_order_)
            check(inputs.count(name), "Tape::forward: missing input '" + name + "'");
        for (const auto& [name, arr] : inputs)
            nodes_[static_cast<std::size_t>(input_index_.at(name))].value = arr;
        for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.op != OpKind::Input && n.op != OpKind::Param && n.op != OpKind::Constant)
                exec(n, id);
        }
        values_ok_ = true;
        std::map<std::string, Array> out;
        for (const auto& [name, id] : output_index_) out[name] = value(id);
        return out;
    }

    // Reverse sweep from `output`. The seed defaults to all-ones (a scalar
    // output gets seed 1).
    void backward(int output, const Array* seed = nullptr) {
        check(!nodes_.empty() && values_ok_, "Tape::backward: called before forward");
        Node& out = node_mut(output);
        for (Node& n : nodes_) {
            if (n.grad.size() > 0) n.grad.fill(Real(0));
        }
        const Array& out_val = value(output);
        if (seed != nullptr) {
            check(seed->shape() == out_val.shape(), "Tape::backward: seed shape " + seed->shape_str() +
                                                        " does not match output " + out_val.shape_str());
            ensure_grad(out) = *seed;
        } else {
            Array ones(out_val.shape(), Real(1));
            ensure_grad(out) = std::move(ones);
        }
        for (int id = output; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.size() == 0) continue;
            if (!node_needs_grad(n)) continue;
            backprop(n, id);
        }
    }

    std::vector<std::pair<std::string, const Array*>> param_grads() const {
        std::vector<std::pair<std::string, const Array*>> out;
        for (const std::string& name : param_order_) {
            const Node& n = node(param_index_.at(name));
            if (n.grad.size() > 0) out.emplace_back(name, &n.grad);
        }
        return out;
    }

    const Array& input_grad(const std::string& name) const {
        auto it = input_index_.find(name);
        check(it != input_index_.end(), "Tape: unknown input '" + name + "'");
        return grad(it->second);
    }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<Mat>;
    using CMatMap = Eigen::Map<const Mat>;
    using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
    using VecMap = Eigen::Map<Vec>;
    using CVecMap = Eigen::Map<const Vec>;

    const Node& node(int id) const {
        check(id >= 0 && id < static_cast<int>(nodes_.size()),
              "Tape: invalid node id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }
    Node& node_mut(int id) { return const_cast<Node&>(node(id)); }

    std::string node_label(int id) const {
        const Node& n = node(id);
        std::string s = std::string(op_name(n.op)) + "#" + std::to_string(id);
        if (!n.name.empty()) s += "('" + n.name + "')";
        return s;
    }

    int add_leaf(OpKind op, Array value, bool needs_grad, const std::string& name) {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.name = name;
        nodes_.push_back(std::move(n));
        values_ok_ = true;
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node make_node(OpKind op, std::vector<int> args) {
        Node n;
        n.op = op;
        for (int a : args) node(a);
        n.args = std::move(args);
        for (int a : n.args)
            if (node_needs_grad(node(a))) n.needs_grad = true;
        return n;
    }

    int add_node(OpKind op, std::vector<int> args) { return push_exec(make_node(op, std::move(args))); }

    int push_exec(Node n) {
        nodes_.push_back(std::move(n));
        int id = static_cast<int>(nodes_.size()) - 1;
        exec(nodes_.back(), id);
        values_ok_ = true;
        return id;
    }

    static bool node_needs_grad(const Node& n) { return n.needs_grad; }

    Array& ensure_grad(Node& n) {
        if (n.grad.size() == 0) n.grad = Array(value_of(n).shape(), Real(0));
        return n.grad;
    }

    const Array& value_of(const Node& n) const { return n.external ? *n.external : n.value; }

    [[noreturn]] void shape_error(int id, const std::string& detail) const {
        fail("Tape: shape mismatch at node " + node_label(id) + ": " + detail);
    }

    void exec(Node& n, int id) {
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Param:
            case OpKind::Constant:
                return;
            case OpKind::MatMul: exec_matmul(n, id); break;
            case OpKind::Add: exec_add(n, id); break;
            case OpKind::AddRowVec: exec_add_rowvec(n, id); break;
            case OpKind::Mul: exec_mul(n, id); break;
            case OpKind::Scale: exec_scale(n); break;
            case OpKind::Tanh: exec_unary(n, [](Real x) { return std::tanh(x); }); break;
            case OpKind::Sigmoid: exec_unary(n, [](Real x) { return sigmoid_scalar(x); }); break;
            case OpKind::Relu: exec_unary(n, [](Real x) { return x > Real(0) ? x : Real(0); }); break;
            case OpKind::Softmax: exec_softmax(n, id); break;
            case OpKind::Concat: exec_concat(n, id); break;
            case OpKind::Slice: exec_slice(n, id); break;
            case OpKind::Row: exec_row(n, id); break;
            case OpKind::StackRows: exec_stack_rows(n, id); break;
            case OpKind::Reshape: exec_reshape(n, id); break;
            case OpKind::Sum: exec_sum(n); break;
            case OpKind::CrossEntropy: exec_cross_entropy(n, id); break;
            case OpKind::Conv2d: exec_conv2d(n, id); break;
            case OpKind::MaxPool2d: exec_maxpool2d(n, id); break;
        }
#ifdef WLAS_CHECK_FINITE
        if (!value_of(n).all_finite()) fail("Tape: non-finite values at node " + node_label(id));
#endif
    }

    static Real sigmoid_scalar(Real x) {
        if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
    }

    template <typename F>
    void exec_unary(Node& n, F&& f) {
        const Array& a = value(n.args[0]);
        Array out(a.shape());
        for (std::int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
        n.value = std::move(out);
    }

    void exec_scale(Node& n) {
        const Array& a = value(n.args[0]);
        Array out(a.shape());
        for (std::int64_t i = 0; i < a.size(); ++i) out[i] = n.scalar * a[i];
        n.value = std::move(out);
    }

    void exec_add(Node& n, int id) {
        const Array& a = value(n.args[0]);
        const Array& b = value(n.args[1]);
        if (!a.same_shape(b)) shape_error(id, "add of " + a.shape_str() + " and " + b.shape_str());
        Array out(a.shape());
        for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
        n.value = std::move(out);
    }

    void exec_add_rowvec(Node& n, int id) {
        const Array& m = value(n.args[0]);
        const Array& v = value(n.args[1]);
        if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0))
            shape_error(id, "add_rowvec of " + m.shape_str() + " and " + v.shape_str());
        Array out(m.shape());
        const int rows = m.dim(0), cols = m.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                out[static_cast<std::int64_t>(r) * cols + c] = m[static_cast<std::int64_t>(r) * cols + c] + v[c];
        n.value = std::move(out);
    }

    void exec_mul(Node& n, int id) {
        const Array& a = value(n.args[0]);
        const Array& b = value(n.args[1]);
        if (!a.same_shape(b)) shape_error(id, "mul of " + a.shape_str() + " and " + b.shape_str());
        Array out(a.shape());
        for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
        n.value = std::move(out);
    }

    void exec_matmul(Node& n, int id) {
        const Array& a = value(n.args[0]);
        const Array& b = value(n.args[1]);
        if (a.rank() == 2 && b.rank() == 2) {
            if (a.dim(1) != b.dim(0))
                shape_error(id, "matmul of " + a.shape_str() + " and " + b.shape_str());
            Array out({a.dim(0), b.dim(1)});
            MatMap(out.data(), a.dim(0), b.dim(1)).noalias() =
                CMatMap(a.data(), a.dim(0), a.dim(1)) * CMatMap(b.data(), b.dim(0), b.dim(1));
            n.value = std::move(out);
        } else if (a.rank() == 2 && b.rank() == 1) {
            if (a.dim(1) != b.dim(0))
                shape_error(id, "matmul of " + a.shape_str() + " and " + b.shape_str());
            Array out({a.dim(0)});
            VecMap(out.data(), a.dim(0)).noalias() =
                CMatMap(a.data(), a.dim(0), a.dim(1)) * CVecMap(b.data(), b.dim(0));
            n.value = std::move(out);
        } else if (a.rank() == 1 && b.rank() == 2) {
            if (a.dim(0) != b.dim(0))
                shape_error(id, "matmul of " + a.shape_str() + " and " + b.shape_str());
            Array out({b.dim(1)});
            VecMap(out.data(), b.dim(1)).noalias() =
                CMatMap(b.data(), b.dim(0), b.dim(1)).transpose() * CVecMap(a.data(), a.dim(0));
            n.value = std::move(out);
        } else {
            shape_error(id, "matmul requires rank-2x2, 2x1 or 1x2 operands, got " + a.shape_str() +
                                " and " + b.shape_str());
        }
    }

    void exec_softmax(Node& n, int id) {
        const Array& a = value(n.args[0]);
        if (a.rank() != 1) shape_error(id, "softmax expects a rank-1 array, got " + a.shape_str());
        n.value = softmax_vec(a);
    }

    static Array softmax_vec(const Array& a) {
        Real m = a[0];
        for (std::int64_t i = 1; i < a.size(); ++i) m = std::max(m, a[i]);
        Array out(a.shape());
        Real total = Real(0);
        for (std::int64_t i = 0; i < a.size(); ++i) {
            out[i] = std::exp(a[i] - m);
            total += out[i];
        }
        for (std::int64_t i = 0; i < a.size(); ++i) out[i] /= total;
        return out;
    }

    void exec_concat(Node& n, int id) {
        std::int64_t total = 0;
        for (int a : n.args) {
            if (value(a).rank() != 1) shape_error(id, "concat expects rank-1 operands");
            total += value(a).size();
        }
        Array out({static_cast<int>(total)});
        std::int64_t off = 0;
        for (int a : n.args) {
            const Array& p = value(a);
            std::copy(p.data(), p.data() + p.size(), out.data() + off);
            off += p.size();
        }
        n.value = std::move(out);
    }

    void exec_slice(Node& n, int id) {
        const Array& a = value(n.args[0]);
        if (a.rank() != 1) shape_error(id, "slice expects a rank-1 array, got " + a.shape_str());
        if (n.i0 < 0 || n.i1 <= 0 || n.i0 + n.i1 > a.dim(0))
            shape_error(id, "slice [" + std::to_string(n.i0) + "," + std::to_string(n.i0 + n.i1) +
                                ") out of range for " + a.shape_str());
        Array out({n.i1});
        std::copy(a.data() + n.i0, a.data() + n.i0 + n.i1, out.data());
        n.value = std::move(out);
    }

    void exec_row(Node& n, int id) {
        const Array& a = value(n.args[0]);
        if (a.rank() != 2) shape_error(id, "row expects a rank-2 array, got " + a.shape_str());
        if (n.i0 < 0 || n.i0 >= a.dim(0))
            shape_error(id, "row " + std::to_string(n.i0) + " out of range for " + a.shape_str());
        Array out({a.dim(1)});
        std::copy(a.data() + static_cast<std::int64_t>(n.i0) * a.dim(1),
                  a.data() + static_cast<std::int64_t>(n.i0 + 1) * a.dim(1), out.data());
        n.value = std::move(out);
    }

    void exec_stack_rows(Node& n, int id) {
        const Array& first = value(n.args[0]);
        if (first.rank() != 1) shape_error(id, "stack_rows expects rank-1 operands");
        const int cols = first.dim(0);
        for (int a : n.args)
            if (value(a).rank() != 1 || value(a).dim(0) != cols)
                shape_error(id, "stack_rows operands must share length " + std::to_string(cols));
        Array out({static_cast<int>(n.args.size()), cols});
        for (std::size_t r = 0; r < n.args.size(); ++r) {
            const Array& p = value(n.args[r]);
            std::copy(p.data(), p.data() + cols, out.data() + static_cast<std::int64_t>(r) * cols);
        }
        n.value = std::move(out);
    }

    void exec_reshape(Node& n, int id) {
        const Array& a = value(n.args[0]);
        if (a.size() != n.aux.size())
            shape_error(id, "reshape from " + a.shape_str() + " to " + n.aux.shape_str());
        Array out = n.aux;  // carries the target shape
        std::copy(a.data(), a.data() + a.size(), out.data());
        n.value = std::move(out);
    }

    void exec_sum(Node& n) {
        const Array& a = value(n.args[0]);
        Real total = Real(0);
        for (std::int64_t i = 0; i < a.size(); ++i) total += a[i];
        n.value = Array::scalar(total);
    }

    void exec_cross_entropy(Node& n, int id) {
        const Array& z = value(n.args[0]);
        if (z.rank() != 1) shape_error(id, "cross_entropy expects rank-1 logits, got " + z.shape_str());
        const int v = z.dim(0);
        if (n.i0 < 0 || n.i0 >= v)
            shape_error(id, "cross_entropy target " + std::to_string(n.i0) + " out of range for " +
                                z.shape_str());
        Real m = z[0];
        for (int i = 1; i < v; ++i) m = std::max(m, z[i]);
        Real norm = Real(0), zsum = Real(0);
        for (int i = 0; i < v; ++i) {
            norm += std::exp(z[i] - m);
            zsum += z[i];
        }
        const Real lse = m + std::log(norm);
        const Real eps = n.scalar;
        const Real target_term = (Real(1) - eps) * z[n.i0] + eps / Real(v) * zsum;
        n.value = Array::scalar(lse - target_term);
        n.aux = softmax_vec(z);
    }

    // x: (C,H,W)  w: (OC, C*KH*KW) flattened filters  b: (OC)
    void exec_conv2d(Node& n, int id) {
        const Array& x = value(n.args[0]);
        const Array& w = value(n.args[1]);
        const Array& b = value(n.args[2]);
        if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
            shape_error(id, "conv2d expects x(C,H,W) w(OC,C,KH,KW) b(OC)");
        const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
        const int oc = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
        if (kc != c || b.dim(0) != oc)
            shape_error(id, "conv2d channel mismatch: x " + x.shape_str() + ", w " + w.shape_str());
        const int stride = n.i0, pad = n.i1;
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (wd + 2 * pad - kw) / stride + 1;
        if (oh <= 0 || ow <= 0 || h + 2 * pad < kh || wd + 2 * pad < kw)
            shape_error(id, "conv2d kernel larger than padded input");
        const int ckk = c * kh * kw;

        Array cols({ckk, oh * ow}, Real(0));
        for (int ch = 0; ch < c; ++ch)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const int crow = (ch * kh + ky) * kw + kx;
                    Real* dst = cols.data() + static_cast<std::int64_t>(crow) * (oh * ow);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const Real* src = x.data() + (static_cast<std::int64_t>(ch) * h + iy) * wd;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= wd) continue;
                            dst[oy * ow + ox] = src[ix];
                        }
                    }
                }

        Array out({oc, oh, ow});
        MatMap(out.data(), oc, oh * ow).noalias() =
            CMatMap(w.data(), oc, ckk) * CMatMap(cols.data(), ckk, oh * ow);
        for (int f = 0; f < oc; ++f) {
            Real* p = out.data() + static_cast<std::int64_t>(f) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) p[i] += b[f];
        }
        n.value = std::move(out);
        n.aux = std::move(cols);
        n.i2 = oh;
        n.i3 = ow;
    }

    void exec_maxpool2d(Node& n, int id) {
        const Array& x = value(n.args[0]);
        if (x.rank() != 3) shape_error(id, "maxpool2d expects x(C,H,W), got " + x.shape_str());
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        const int k = n.i0, stride = n.i1;
        const int oh = (h - k) / stride + 1;
        const int ow = (w - k) / stride + 1;
        if (k > h || k > w || oh <= 0 || ow <= 0)
            shape_error(id, "maxpool2d window larger than input " + x.shape_str());
        Array out({c, oh, ow});
        n.iaux.assign(static_cast<std::size_t>(c) * oh * ow, 0);
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    Real best = -std::numeric_limits<Real>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride + ky, ix = ox * stride + kx;
                            const std::int64_t idx = (static_cast<std::int64_t>(ch) * h + iy) * w + ix;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = static_cast<int>(idx);
                            }
                        }
                    const std::int64_t o = (static_cast<std::int64_t>(ch) * oh + oy) * ow + ox;
                    out[o] = best;
                    n.iaux[static_cast<std::size_t>(o)] = best_idx;
                }
        n.value = std::move(out);
    }

    // ---- backward rules -------------------------------------------------

    void accum(int arg, const Array& contribution) {
        Node& a = node_mut(arg);
        if (!node_needs_grad(a)) return;
        ensure_grad(a).add_in_place(contribution);
    }

    Array& grad_buf(int arg) { return ensure_grad(node_mut(arg)); }

    bool arg_needs_grad(int arg) const { return node_needs_grad(node(arg)); }

    void backprop(Node& n, int id) {
        const Array& g = n.grad;
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Param:
            case OpKind::Constant:
                return;
            case OpKind::MatMul: back_matmul(n, g); return;
            case OpKind::Add:
                if (arg_needs_grad(n.args[0])) accum(n.args[0], g);
                if (arg_needs_grad(n.args[1])) accum(n.args[1], g);
                return;
            case OpKind::AddRowVec: back_add_rowvec(n, g); return;
            case OpKind::Mul: back_mul(n, g); return;
            case OpKind::Scale:
                if (arg_needs_grad(n.args[0])) {
                    Array& da = grad_buf(n.args[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) da[i] += n.scalar * g[i];
                }
                return;
            case OpKind::Tanh: back_tanh(n, g); return;
            case OpKind::Sigmoid: back_sigmoid(n, g); return;
            case OpKind::Relu: back_relu(n, g); return;
            case OpKind::Softmax: back_softmax(n, g); return;
            case OpKind::Concat: back_concat(n, g); return;
            case OpKind::Slice:
                if (arg_needs_grad(n.args[0])) {
                    Array& da = grad_buf(n.args[0]);
                    for (int i = 0; i < n.i1; ++i) da[n.i0 + i] += g[i];
                }
                return;
            case OpKind::Row:
                if (arg_needs_grad(n.args[0])) {
                    Array& da = grad_buf(n.args[0]);
                    const int cols = value(n.args[0]).dim(1);
                    for (int i = 0; i < cols; ++i)
                        da[static_cast<std::int64_t>(n.i0) * cols + i] += g[i];
                }
                return;
            case OpKind::StackRows: back_stack_rows(n, g); return;
            case OpKind::Reshape:
                if (arg_needs_grad(n.args[0])) {
                    Array& da = grad_buf(n.args[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i];
                }
                return;
            case OpKind::Sum:
                if (arg_needs_grad(n.args[0])) {
                    Array& da = grad_buf(n.args[0]);
                    for (std::int64_t i = 0; i < da.size(); ++i) da[i] += g[0];
                }
                return;
            case OpKind::CrossEntropy: back_cross_entropy(n, g); return;
            case OpKind::Conv2d: back_conv2d(n, g); return;
            case OpKind::MaxPool2d: back_maxpool2d(n, g); return;
        }
        (void)id;
    }

    void back_matmul(Node& n, const Array& g) {
        const Array& a = value(n.args[0]);
        const Array& b = value(n.args[1]);
        if (a.rank() == 2 && b.rank() == 2) {
            if (arg_needs_grad(n.args[0])) {
                Array& da = grad_buf(n.args[0]);
                MatMap(da.data(), a.dim(0), a.dim(1)).noalias() +=
                    CMatMap(g.data(), a.dim(0), b.dim(1)) *
                    CMatMap(b.data(), b.dim(0), b.dim(1)).transpose();
            }
            if (arg_needs_grad(n.args[1])) {
                Array& db = grad_buf(n.args[1]);
                MatMap(db.data(), b.dim(0), b.dim(1)).noalias() +=
                    CMatMap(a.data(), a.dim(0), a.dim(1)).transpose() *
                    CMatMap(g.data(), a.dim(0), b.dim(1));
            }
        } else if (a.rank() == 2 && b.rank() == 1) {
            if (arg_needs_grad(n.args[0])) {
                Array& da = grad_buf(n.args[0]);
                MatMap(da.data(), a.dim(0), a.dim(1)).noalias() +=
                    CVecMap(g.data(), a.dim(0)) * CVecMap(b.data(), b.dim(0)).transpose();
            }
            if (arg_needs_grad(n.args[1])) {
                Array& db = grad_buf(n.args[1]);
                VecMap(db.data(), b.dim(0)).noalias() +=
                    CMatMap(a.data(), a.dim(0), a.dim(1)).transpose() * CVecMap(g.data(), a.dim(0));
            }
        } else {  // (k) x (k,n)
            if (arg_needs_grad(n.args[0])) {
                Array& da = grad_buf(n.args[0]);
                VecMap(da.data(), a.dim(0)).noalias() +=
                    CMatMap(b.data(), b.dim(0), b.dim(1)) * CVecMap(g.data(), b.dim(1));
            }
            if (arg_needs_grad(n.args[1])) {
                Array& db = grad_buf(n.args[1]);
                MatMap(db.data(), b.dim(0), b.dim(1)).noalias() +=
                    CVecMap(a.data(), a.dim(0)) * CVecMap(g.data(), b.dim(1)).transpose();
            }
        }
    }

    void back_add_rowvec(Node& n, const Array& g) {
        if (arg_needs_grad(n.args[0])) accum(n.args[0], g);
        if (arg_needs_grad(n.args[1])) {
            Array& dv = grad_buf(n.args[1]);
            const int rows = value(n.args[0]).dim(0), cols = value(n.args[0]).dim(1);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) dv[c] += g[static_cast<std::int64_t>(r) * cols + c];
        }
    }

    void back_mul(Node& n, const Array& g) {
        const Array& a = value(n.args[0]);
        const Array& b = value(n.args[1]);
        if (arg_needs_grad(n.args[0])) {
            Array& da = grad_buf(n.args[0]);
            for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
        }
        if (arg_needs_grad(n.args[1])) {
            Array& db = grad_buf(n.args[1]);
            for (std::int64_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
        }
    }

    void back_tanh(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& da = grad_buf(n.args[0]);
        const Array& y = n.value;
        for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * (Real(1) - y[i] * y[i]);
    }

    void back_sigmoid(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& da = grad_buf(n.args[0]);
        const Array& y = n.value;
        for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i] * (Real(1) - y[i]);
    }

    void back_relu(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& da = grad_buf(n.args[0]);
        const Array& x = value(n.args[0]);
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (x[i] > Real(0)) da[i] += g[i];
    }

    void back_softmax(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& da = grad_buf(n.args[0]);
        const Array& y = n.value;
        Real dot = Real(0);
        for (std::int64_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        for (std::int64_t i = 0; i < g.size(); ++i) da[i] += y[i] * (g[i] - dot);
    }

    void back_concat(Node& n, const Array& g) {
        std::int64_t off = 0;
        for (int a : n.args) {
            const std::int64_t len = value(a).size();
            if (arg_needs_grad(a)) {
                Array& da = grad_buf(a);
                for (std::int64_t i = 0; i < len; ++i) da[i] += g[off + i];
            }
            off += len;
        }
    }

    void back_stack_rows(Node& n, const Array& g) {
        const int cols = value(n.args[0]).dim(0);
        for (std::size_t r = 0; r < n.args.size(); ++r) {
            if (!arg_needs_grad(n.args[r])) continue;
            Array& da = grad_buf(n.args[r]);
            const Real* src = g.data() + static_cast<std::int64_t>(r) * cols;
            for (int i = 0; i < cols; ++i) da[i] += src[i];
        }
    }

    void back_cross_entropy(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& dz = grad_buf(n.args[0]);
        const Array& p = n.aux;
        const int v = static_cast<int>(p.size());
        const Real eps = n.scalar;
        const Real uniform = eps / Real(v);
        for (int i = 0; i < v; ++i) {
            Real q = uniform + (i == n.i0 ? (Real(1) - eps) : Real(0));
            dz[i] += g[0] * (p[i] - q);
        }
    }

    void back_conv2d(Node& n, const Array& g) {
        const Array& x = value(n.args[0]);
        const Array& w = value(n.args[1]);
        const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
        const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int oh = n.i2, ow = n.i3;
        const int stride = n.i0, pad = n.i1;
        const int ckk = c * kh * kw;
        const Array& cols = n.aux;

        if (arg_needs_grad(n.args[1])) {
            Array& dw = grad_buf(n.args[1]);
            MatMap(dw.data(), oc, ckk).noalias() +=
                CMatMap(g.data(), oc, oh * ow) * CMatMap(cols.data(), ckk, oh * ow).transpose();
        }
        if (arg_needs_grad(n.args[2])) {
            Array& db = grad_buf(n.args[2]);
            for (int f = 0; f < oc; ++f) {
                const Real* p = g.data() + static_cast<std::int64_t>(f) * oh * ow;
                Real s = Real(0);
                for (int i = 0; i < oh * ow; ++i) s += p[i];
                db[f] += s;
            }
        }
        if (arg_needs_grad(n.args[0])) {
            Array dcols({ckk, oh * ow});
            MatMap(dcols.data(), ckk, oh * ow).noalias() =
                CMatMap(w.data(), oc, ckk).transpose() * CMatMap(g.data(), oc, oh * ow);
            Array& dx = grad_buf(n.args[0]);
            for (int ch = 0; ch < c; ++ch)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int crow = (ch * kh + ky) * kw + kx;
                        const Real* src = dcols.data() + static_cast<std::int64_t>(crow) * (oh * ow);
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            Real* dst = dx.data() + (static_cast<std::int64_t>(ch) * h + iy) * wd;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                dst[ix] += src[oy * ow + ox];
                            }
                        }
                    }
        }
    }

    void back_maxpool2d(Node& n, const Array& g) {
        if (!arg_needs_grad(n.args[0])) return;
        Array& dx = grad_buf(n.args[0]);
        for (std::size_t i = 0; i < n.iaux.size(); ++i)
            dx[n.iaux[i]] += g[static_cast<std::int64_t>(i)];
    }

    std::deque<Node> nodes_;
    std::unordered_map<std::string, int> input_index_;
    std::unordered_map<std::string, int> param_index_;
    std::unordered_map<std::string, int> output_index_;
    std::vector<std::string> input_order_;
    std::vector<std::string> param_order_;
    std::vector<std::string> output_order_;
    bool values_ok_ = false;
};

// Central-difference gradient estimate, the verification oracle for
// backward(). Kept independent of the tape: it only evaluates f.
template <typename Real, typename F>
NDArray<Real> finite_difference_gradient(F&& f, const NDArray<Real>& point, Real epsilon) {
    NDArray<Real> grad(point.shape(), Real(0));
    NDArray<Real> x = point;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const Real saved = x[i];
        x[i] = saved + epsilon;
        const Real fp = f(x);
        x[i] = saved - epsilon;
        const Real fm = f(x);
        x[i] = saved;
        check(std::isfinite(static_cast<double>(fp)) && std::isfinite(static_cast<double>(fm)),
              "finite_difference_gradient: function value is not finite");
        grad[i] = (fp - fm) / (Real(2) * epsilon);
    }
    return grad;
}

// Gradient comparison with the convention rel_err = |a-b| / max(1, |a|, |b|).
template <typename Real>
Real max_relative_error(const NDArray<Real>& a, const NDArray<Real>& b) {
    check(a.same_shape(b), "max_relative_error: shape mismatch");
    Real worst = Real(0);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const Real denom = std::max(Real(1), std::max(std::abs(a[i]), std::abs(b[i])));
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace wlas
