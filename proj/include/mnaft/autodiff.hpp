#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/tensor.hpp"

// Reverse-mode automatic differentiation over an explicit op graph.
//
// A Graph is built once (per sample shape), then evaluated against named
// bindings. forward() produces a Tape holding every intermediate value;
// backward() walks the tape in reverse and returns gradients for every
// trainable binding, accumulating in 64-bit before casting to 32-bit.
// Registered taps expose (activation, gradient) pairs for chosen nodes.

namespace mnaft {

enum class OpKind {
    Matmul,
    Add,
    Mul,
    Scale,
    Concat,
    Slice,
    Mean,
    LayerNorm,
    Gelu,
    EmbeddingGather,
    SoftmaxRows,
    SoftmaxXent,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Matmul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "elementwise-mul";
        case OpKind::Scale: return "scale";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Mean: return "mean";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Gelu: return "gelu";
        case OpKind::EmbeddingGather: return "embedding-gather";
        case OpKind::SoftmaxRows: return "softmax-rows";
        case OpKind::SoftmaxXent: return "softmax-cross-entropy";
    }
    return "?";
}

using NodeId = int;

struct OpAttrs {
    bool trans_a = false;
    bool trans_b = false;
    float scalar = 0.0f; // Scale factor, LayerNorm epsilon
    int axis = 0;        // Concat axis (0 = rows, 1 = cols)
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0; // Slice bounds, half-open
    std::vector<int> ids; // EmbeddingGather indices / SoftmaxXent labels
};

struct GraphNode {
    enum class Kind { Input, Constant, Op };
    Kind kind = Kind::Op;
    std::string name; // Input only
    Tensor value;     // Constant only
    OpKind op = OpKind::Add;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
};

class Graph {
  public:
    NodeId input(const std::string& name) {
        auto it = inputs_by_name_.find(name);
        if (it != inputs_by_name_.end()) return it->second;
        GraphNode n;
        n.kind = GraphNode::Kind::Input;
        n.name = name;
        NodeId id = push(std::move(n));
        inputs_by_name_.emplace(name, id);
        return id;
    }

    NodeId constant(Tensor v) {
        GraphNode n;
        n.kind = GraphNode::Kind::Constant;
        n.value = std::move(v);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
        OpAttrs at;
        at.trans_a = trans_a;
        at.trans_b = trans_b;
        return op(OpKind::Matmul, {a, b}, at);
    }
    NodeId add(NodeId a, NodeId b) { return op(OpKind::Add, {a, b}, {}); }
    NodeId mul(NodeId a, NodeId b) { return op(OpKind::Mul, {a, b}, {}); }
    NodeId scale(NodeId a, float c) {
        OpAttrs at;
        at.scalar = c;
        return op(OpKind::Scale, {a}, at);
    }
    NodeId concat(std::vector<NodeId> parts, int axis) {
        OpAttrs at;
        at.axis = axis;
        return op(OpKind::Concat, std::move(parts), at);
    }
    NodeId slice(NodeId a, int r0, int r1, int c0, int c1) {
        OpAttrs at;
        at.r0 = r0;
        at.r1 = r1;
        at.c0 = c0;
        at.c1 = c1;
        return op(OpKind::Slice, {a}, at);
    }
    NodeId mean(NodeId a) { return op(OpKind::Mean, {a}, {}); }
    NodeId layernorm(NodeId x, NodeId gamma, NodeId beta, float eps = 1e-5f) {
        OpAttrs at;
        at.scalar = eps;
        return op(OpKind::LayerNorm, {x, gamma, beta}, at);
    }
    NodeId gelu(NodeId x) { return op(OpKind::Gelu, {x}, {}); }
    NodeId embedding(NodeId table, std::vector<int> ids) {
        OpAttrs at;
        at.ids = std::move(ids);
        return op(OpKind::EmbeddingGather, {table}, at);
    }
    NodeId softmax_rows(NodeId x) { return op(OpKind::SoftmaxRows, {x}, {}); }
    NodeId softmax_xent(NodeId logits, std::vector<int> labels) {
        OpAttrs at;
        at.ids = std::move(labels);
        return op(OpKind::SoftmaxXent, {logits}, at);
    }

    // Marks a node for (activation, gradient) capture; returns a tap handle.
    int tap(NodeId node) {
        check_id(node);
        taps_.push_back(node);
        return static_cast<int>(taps_.size()) - 1;
    }

    const std::vector<GraphNode>& nodes() const { return nodes_; }
    const std::vector<NodeId>& taps() const { return taps_; }
    const std::map<std::string, NodeId>& inputs_by_name() const { return inputs_by_name_; }
    bool empty() const { return nodes_.empty(); }

  private:
    NodeId push(GraphNode n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId op(OpKind kind, std::vector<NodeId> in, OpAttrs attrs) {
        for (NodeId id : in) check_id(id);
        GraphNode n;
        n.kind = GraphNode::Kind::Op;
        n.op = kind;
        n.inputs = std::move(in);
        n.attrs = std::move(attrs);
        return push(std::move(n));
    }

    void check_id(NodeId id) const {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
            throw std::invalid_argument("unknown node id " + std::to_string(id));
    }

    std::vector<GraphNode> nodes_;
    std::vector<NodeId> taps_;
    std::map<std::string, NodeId> inputs_by_name_;
};

using Bindings = std::map<std::string, const Tensor*>;

namespace detail {

// C(m,n) += op(A)·op(B); A stored (m,k) or (k,m) when trans_a, B stored
// (k,n) or (n,k) when trans_b. Accumulator type follows TC.
template <typename TC, typename TA, typename TB>
void mm_acc(TC* c, const TA* a, const TB* b, int m, int k, int n, bool trans_a, bool trans_b) {
    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            TC* crow = c + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                TC av = static_cast<TC>(a[static_cast<size_t>(i) * k + p]);
                const TB* brow = b + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * static_cast<TC>(brow[j]);
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const TA* arow = a + static_cast<size_t>(i) * k;
            for (int j = 0; j < n; ++j) {
                const TB* brow = b + static_cast<size_t>(j) * k;
                TC acc = 0;
                for (int p = 0; p < k; ++p) acc += static_cast<TC>(arow[p]) * static_cast<TC>(brow[p]);
                c[static_cast<size_t>(i) * n + j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const TA* arow = a + static_cast<size_t>(p) * m;
            const TB* brow = b + static_cast<size_t>(p) * n;
            for (int i = 0; i < m; ++i) {
                TC av = static_cast<TC>(arow[i]);
                TC* crow = c + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * static_cast<TC>(brow[j]);
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                TC acc = 0;
                for (int p = 0; p < k; ++p)
                    acc += static_cast<TC>(a[static_cast<size_t>(p) * m + i]) *
                           static_cast<TC>(b[static_cast<size_t>(j) * k + p]);
                c[static_cast<size_t>(i) * n + j] += acc;
            }
        }
    }
}

template <typename T>
T gelu_tanh(T x) {
    const T k = static_cast<T>(0.7978845608028653558798921198687637); // sqrt(2/pi)
    const T a = static_cast<T>(0.044715);
    T u = k * (x + a * x * x * x);
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(u));
}

template <typename T>
T gelu_tanh_grad(T x) {
    const T k = static_cast<T>(0.7978845608028653558798921198687637);
    const T a = static_cast<T>(0.044715);
    T u = k * (x + a * x * x * x);
    T t = std::tanh(u);
    return static_cast<T>(0.5) * (static_cast<T>(1) + t) +
           static_cast<T>(0.5) * x * (static_cast<T>(1) - t * t) * k *
               (static_cast<T>(1) + static_cast<T>(3) * a * x * x);
}

inline std::vector<int> infer_shape(const GraphNode& n, const std::vector<const std::vector<int>*>& in) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    auto rank = [&](size_t i) { return static_cast<int>(in[i]->size()); };
    auto dim = [&](size_t i, int d) { return (*in[i])[d]; };

    switch (n.op) {
        case OpKind::Matmul: {
            if (rank(0) != 2 || rank(1) != 2) fail("matmul requires rank-2 operands");
            int m = n.attrs.trans_a ? dim(0, 1) : dim(0, 0);
            int ka = n.attrs.trans_a ? dim(0, 0) : dim(0, 1);
            int kb = n.attrs.trans_b ? dim(1, 1) : dim(1, 0);
            int nn = n.attrs.trans_b ? dim(1, 0) : dim(1, 1);
            if (ka != kb)
                fail("matmul inner dims mismatch " + shape_str(*in[0]) + " x " + shape_str(*in[1]));
            return {m, nn};
        }
        case OpKind::Add:
        case OpKind::Mul: {
            if (*in[0] == *in[1]) return *in[0];
            if (rank(0) == 2 && rank(1) == 1 && dim(0, 1) == dim(1, 0)) return *in[0];
            fail(std::string(op_name(n.op)) + " shape mismatch " + shape_str(*in[0]) + " vs " +
                 shape_str(*in[1]));
            return {};
        }
        case OpKind::Scale:
        case OpKind::Gelu:
            return *in[0];
        case OpKind::Concat: {
            if (in.empty()) fail("concat needs at least one input");
            int axis = n.attrs.axis;
            if (axis != 0 && axis != 1) fail("concat axis must be 0 or 1");
            int rows = dim(0, 0), cols = dim(0, 1);
            if (rank(0) != 2) fail("concat requires rank-2 inputs");
            for (size_t i = 1; i < in.size(); ++i) {
                if (rank(i) != 2) fail("concat requires rank-2 inputs");
                if (axis == 0) {
                    if (dim(i, 1) != cols) fail("concat column mismatch");
                    rows += dim(i, 0);
                } else {
                    if (dim(i, 0) != rows) fail("concat row mismatch");
                    cols += dim(i, 1);
                }
            }
            return {rows, cols};
        }
        case OpKind::Slice: {
            if (rank(0) != 2) fail("slice requires rank-2 input");
            const auto& a = n.attrs;
            if (a.r0 < 0 || a.r0 >= a.r1 || a.r1 > dim(0, 0) || a.c0 < 0 || a.c0 >= a.c1 ||
                a.c1 > dim(0, 1))
                fail("slice bounds out of range for " + shape_str(*in[0]));
            return {a.r1 - a.r0, a.c1 - a.c0};
        }
        case OpKind::Mean:
            return {1};
        case OpKind::LayerNorm: {
            if (rank(0) != 2) fail("layernorm requires rank-2 input");
            if (rank(1) != 1 || rank(2) != 1 || dim(1, 0) != dim(0, 1) || dim(2, 0) != dim(0, 1))
                fail("layernorm gain/bias must be rank-1 of width " + std::to_string(dim(0, 1)));
            return *in[0];
        }
        case OpKind::EmbeddingGather: {
            if (rank(0) != 2) fail("embedding-gather requires rank-2 table");
            if (n.attrs.ids.empty()) fail("embedding-gather needs at least one id");
            for (int id : n.attrs.ids)
                if (id < 0 || id >= dim(0, 0)) fail("unknown token id " + std::to_string(id));
            return {static_cast<int>(n.attrs.ids.size()), dim(0, 1)};
        }
        case OpKind::SoftmaxRows: {
            if (rank(0) != 2) fail("softmax-rows requires rank-2 input");
            return *in[0];
        }
        case OpKind::SoftmaxXent: {
            if (rank(0) != 2) fail("softmax-cross-entropy requires rank-2 logits");
            if (static_cast<int>(n.attrs.ids.size()) != dim(0, 0))
                fail("softmax-cross-entropy needs one label per row");
            for (int id : n.attrs.ids)
                if (id < 0 || id >= dim(0, 1)) fail("label id out of range " + std::to_string(id));
            return {1};
        }
    }
    fail("unhandled op");
    return {};
}

// Forward evaluation of one op. Templated so the same rules serve the f32
// production path and the f64 oracle path used by finite-difference checks.
template <typename T>
void eval_op(const GraphNode& n, const std::vector<const T*>& in,
             const std::vector<const std::vector<int>*>& in_shapes, T* out,
             const std::vector<int>& out_shape) {
    auto numel = [](const std::vector<int>& s) {
        int64_t t = 1;
        for (int d : s) t *= d;
        return t;
    };
    switch (n.op) {
        case OpKind::Matmul: {
            int m = out_shape[0], nn = out_shape[1];
            int k = n.attrs.trans_a ? (*in_shapes[0])[0] : (*in_shapes[0])[1];
            std::fill(out, out + static_cast<size_t>(m) * nn, T(0));
            mm_acc(out, in[0], in[1], m, k, nn, n.attrs.trans_a, n.attrs.trans_b);
            break;
        }
        case OpKind::Add: {
            int64_t total = numel(out_shape);
            if (*in_shapes[0] == *in_shapes[1]) {
                for (int64_t i = 0; i < total; ++i) out[i] = in[0][i] + in[1][i];
            } else {
                int rows = out_shape[0], cols = out_shape[1];
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c)
                        out[static_cast<size_t>(r) * cols + c] =
                            in[0][static_cast<size_t>(r) * cols + c] + in[1][c];
            }
            break;
        }
        case OpKind::Mul: {
            int64_t total = numel(out_shape);
            if (*in_shapes[0] == *in_shapes[1]) {
                for (int64_t i = 0; i < total; ++i) out[i] = in[0][i] * in[1][i];
            } else {
                int rows = out_shape[0], cols = out_shape[1];
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c)
                        out[static_cast<size_t>(r) * cols + c] =
                            in[0][static_cast<size_t>(r) * cols + c] * in[1][c];
            }
            break;
        }
        case OpKind::Scale: {
            int64_t total = numel(out_shape);
            T f = static_cast<T>(n.attrs.scalar);
            for (int64_t i = 0; i < total; ++i) out[i] = in[0][i] * f;
            break;
        }
        case OpKind::Concat: {
            int cols = out_shape[1];
            if (n.attrs.axis == 0) {
                T* dst = out;
                for (size_t i = 0; i < in.size(); ++i) {
                    int64_t sz = numel(*in_shapes[i]);
                    std::copy(in[i], in[i] + sz, dst);
                    dst += sz;
                }
            } else {
                int rows = out_shape[0];
                int off = 0;
                for (size_t i = 0; i < in.size(); ++i) {
                    int w = (*in_shapes[i])[1];
                    for (int r = 0; r < rows; ++r)
                        std::copy(in[i] + static_cast<size_t>(r) * w,
                                  in[i] + static_cast<size_t>(r) * w + w,
                                  out + static_cast<size_t>(r) * cols + off);
                    off += w;
                }
            }
            break;
        }
        case OpKind::Slice: {
            const auto& a = n.attrs;
            int src_cols = (*in_shapes[0])[1];
            int w = a.c1 - a.c0;
            for (int r = a.r0; r < a.r1; ++r)
                std::copy(in[0] + static_cast<size_t>(r) * src_cols + a.c0,
                          in[0] + static_cast<size_t>(r) * src_cols + a.c1,
                          out + static_cast<size_t>(r - a.r0) * w);
            break;
        }
        case OpKind::Mean: {
            int64_t total = numel(*in_shapes[0]);
            double acc = 0.0;
            for (int64_t i = 0; i < total; ++i) acc += static_cast<double>(in[0][i]);
            out[0] = static_cast<T>(acc / static_cast<double>(total));
            break;
        }
        case OpKind::LayerNorm: {
            int rows = out_shape[0], cols = out_shape[1];
            double eps = static_cast<double>(n.attrs.scalar);
            for (int r = 0; r < rows; ++r) {
                const T* x = in[0] + static_cast<size_t>(r) * cols;
                double mu = 0.0;
                for (int c = 0; c < cols; ++c) mu += static_cast<double>(x[c]);
                mu /= cols;
                double var = 0.0;
                for (int c = 0; c < cols; ++c) {
                    double d = static_cast<double>(x[c]) - mu;
                    var += d * d;
                }
                var /= cols;
                double s = 1.0 / std::sqrt(var + eps);
                T* y = out + static_cast<size_t>(r) * cols;
                for (int c = 0; c < cols; ++c)
                    y[c] = static_cast<T>((static_cast<double>(x[c]) - mu) * s) * in[1][c] + in[2][c];
            }
            break;
        }
        case OpKind::Gelu: {
            int64_t total = numel(out_shape);
            for (int64_t i = 0; i < total; ++i) out[i] = gelu_tanh(in[0][i]);
            break;
        }
        case OpKind::EmbeddingGather: {
            int d = out_shape[1];
            for (size_t r = 0; r < n.attrs.ids.size(); ++r)
                std::copy(in[0] + static_cast<size_t>(n.attrs.ids[r]) * d,
                          in[0] + static_cast<size_t>(n.attrs.ids[r]) * d + d,
                          out + r * d);
            break;
        }
        case OpKind::SoftmaxRows: {
            int rows = out_shape[0], cols = out_shape[1];
            for (int r = 0; r < rows; ++r) {
                const T* x = in[0] + static_cast<size_t>(r) * cols;
                T* y = out + static_cast<size_t>(r) * cols;
                T mx = x[0];
                for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
                double denom = 0.0;
                for (int c = 0; c < cols; ++c) {
                    double e = std::exp(static_cast<double>(x[c] - mx));
                    y[c] = static_cast<T>(e);
                    denom += e;
                }
                double inv = 1.0 / denom;
                for (int c = 0; c < cols; ++c) y[c] = static_cast<T>(static_cast<double>(y[c]) * inv);
            }
            break;
        }
        case OpKind::SoftmaxXent: {
            int rows = (*in_shapes[0])[0], cols = (*in_shapes[0])[1];
            double total = 0.0;
            for (int r = 0; r < rows; ++r) {
                const T* x = in[0] + static_cast<size_t>(r) * cols;
                double mx = static_cast<double>(x[0]);
                for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(x[c]));
                double denom = 0.0;
                for (int c = 0; c < cols; ++c) denom += std::exp(static_cast<double>(x[c]) - mx);
                total += mx + std::log(denom) - static_cast<double>(x[n.attrs.ids[r]]);
            }
            out[0] = static_cast<T>(total / rows);
            break;
        }
    }
}

} // namespace detail

class Tape {
  public:
    Tape(const Graph* g, Bindings bindings) : graph_(g), bindings_(std::move(bindings)) {}

    const Graph& graph() const { return *graph_; }
    const Bindings& bindings() const { return bindings_; }

    const std::vector<int>& shape(NodeId id) const { return shapes_[id]; }

    const float* data(NodeId id) const {
        const GraphNode& n = graph_->nodes()[id];
        switch (n.kind) {
            case GraphNode::Kind::Input: return bound(n.name).data.data();
            case GraphNode::Kind::Constant: return n.value.data.data();
            case GraphNode::Kind::Op: return values_[id].data();
        }
        return nullptr;
    }

    Tensor value(NodeId id) const {
        const float* p = data(id);
        const auto& s = shapes_[id];
        return Tensor(s, std::vector<float>(p, p + Tensor::size_of(s)));
    }

    NodeId output_node() const { return static_cast<NodeId>(graph_->nodes().size()) - 1; }
    Tensor output() const { return value(output_node()); }

    const Tensor& tap_activation(int handle) const {
        check_tap(handle);
        return tap_values_[handle];
    }

    const Tensor& tap_gradient(int handle) const {
        check_tap(handle);
        if (!backward_done_)
            throw std::logic_error("tap gradient not yet populated; run backward first");
        return tap_grads_[handle];
    }

    bool backward_done() const { return backward_done_; }

    friend Tape forward(const Graph&, const Bindings&);
    friend std::map<std::string, Tensor> backward(Tape&, std::optional<NodeId>);

  private:
    const Tensor& bound(const std::string& name) const {
        auto it = bindings_.find(name);
        if (it == bindings_.end()) throw std::invalid_argument("unbound input '" + name + "'");
        return *it->second;
    }

    void check_tap(int handle) const {
        if (handle < 0 || handle >= static_cast<int>(tap_values_.size()))
            throw std::invalid_argument("unknown tap handle");
    }

    const Graph* graph_;
    Bindings bindings_;
    std::vector<std::vector<float>> values_; // per op node
    std::vector<std::vector<int>> shapes_;   // per node, resolved
    std::vector<Tensor> tap_values_;
    std::vector<Tensor> tap_grads_;
    bool backward_done_ = false;
};

inline Tape forward(const Graph& graph, const Bindings& bindings) {
    if (graph.empty()) throw std::invalid_argument("empty graph");
    const auto& nodes = graph.nodes();
    Tape tape(&graph, bindings);
    tape.shapes_.resize(nodes.size());
    tape.values_.resize(nodes.size());

    for (size_t i = 0; i < nodes.size(); ++i) {
        const GraphNode& n = nodes[i];
        try {
            if (n.kind == GraphNode::Kind::Input) {
                tape.shapes_[i] = tape.bound(n.name).shape;
            } else if (n.kind == GraphNode::Kind::Constant) {
                tape.shapes_[i] = n.value.shape;
            } else {
                std::vector<const float*> in;
                std::vector<const std::vector<int>*> in_shapes;
                for (NodeId id : n.inputs) {
                    in.push_back(tape.data(id));
                    in_shapes.push_back(&tape.shapes_[id]);
                }
                tape.shapes_[i] = detail::infer_shape(n, in_shapes);
                tape.values_[i].resize(static_cast<size_t>(Tensor::size_of(tape.shapes_[i])));
                detail::eval_op<float>(n, in, in_shapes, tape.values_[i].data(), tape.shapes_[i]);
                for (float v : tape.values_[i])
                    if (!std::isfinite(v)) throw std::runtime_error("non-finite value");
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("op " + std::to_string(i) + " (" +
                                        (n.kind == GraphNode::Kind::Op ? op_name(n.op) : "binding") +
                                        "): " + e.what());
        }
    }

    for (NodeId t : graph.taps()) tape.tap_values_.push_back(tape.value(t));
    tape.tap_grads_.resize(graph.taps().size());
    return tape;
}

// Scalar forward evaluation with float64 values throughout. This is the
// high-precision path used by finite-difference oracles; it shares the op
// rules with the f32 path via the templated kernels above.
inline double forward_scalar_f64(const Graph& graph, const Bindings& bindings) {
    if (graph.empty()) throw std::invalid_argument("empty graph");
    const auto& nodes = graph.nodes();
    std::vector<std::vector<double>> values(nodes.size());
    std::vector<std::vector<int>> shapes(nodes.size());

    auto data_of = [&](NodeId id) -> const double* { return values[id].data(); };

    for (size_t i = 0; i < nodes.size(); ++i) {
        const GraphNode& n = nodes[i];
        if (n.kind == GraphNode::Kind::Input) {
            auto it = bindings.find(n.name);
            if (it == bindings.end()) throw std::invalid_argument("unbound input '" + n.name + "'");
            shapes[i] = it->second->shape;
            values[i].assign(it->second->data.begin(), it->second->data.end());
        } else if (n.kind == GraphNode::Kind::Constant) {
            shapes[i] = n.value.shape;
            values[i].assign(n.value.data.begin(), n.value.data.end());
        } else {
            std::vector<const double*> in;
            std::vector<const std::vector<int>*> in_shapes;
            for (NodeId id : n.inputs) {
                in.push_back(data_of(id));
                in_shapes.push_back(&shapes[id]);
            }
            shapes[i] = detail::infer_shape(n, in_shapes);
            values[i].resize(static_cast<size_t>(Tensor::size_of(shapes[i])));
            detail::eval_op<double>(n, in, in_shapes, values[i].data(), shapes[i]);
            for (double v : values[i])
                if (!std::isfinite(v))
                    throw std::runtime_error("non-finite value at op " + std::to_string(i));
        }
    }
    if (shapes.back() != std::vector<int>{1})
        throw std::invalid_argument("forward_scalar_f64 requires a scalar output");
    return values.back()[0];
}

// Reverse pass. Adjoints are stored in one flat float64 buffer and cast to
// float32 only when emitted. Returns a gradient tensor for every trainable
// binding; parameters with no path to the loss get exact zeros.
inline std::map<std::string, Tensor> backward(Tape& tape, std::optional<NodeId> loss_node = {}) {
    if (tape.backward_done_) throw std::logic_error("tape already consumed");
    const Graph& graph = *tape.graph_;
    const auto& nodes = graph.nodes();
    NodeId loss = loss_node.value_or(tape.output_node());
    if (loss < 0 || loss >= static_cast<NodeId>(nodes.size()))
        throw std::invalid_argument("unknown loss node");
    if (tape.shapes_[loss] != std::vector<int>{1})
        throw std::invalid_argument("loss node must be scalar, got " + shape_str(tape.shapes_[loss]));

    std::vector<size_t> offset(nodes.size() + 1, 0);
    for (size_t i = 0; i < nodes.size(); ++i)
        offset[i + 1] = offset[i] + static_cast<size_t>(Tensor::size_of(tape.shapes_[i]));
    std::vector<double> adj(offset.back(), 0.0);
    auto adj_of = [&](NodeId id) { return adj.data() + offset[id]; };

    adj_of(loss)[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        const GraphNode& n = nodes[id];
        if (n.kind != GraphNode::Kind::Op) continue;
        const double* d_out = adj_of(id);
        const auto& out_shape = tape.shapes_[id];

        auto in_data = [&](size_t i) { return tape.data(n.inputs[i]); };
        auto in_shape = [&](size_t i) -> const std::vector<int>& { return tape.shapes_[n.inputs[i]]; };
        auto in_adj = [&](size_t i) { return adj_of(n.inputs[i]); };

        switch (n.op) {
            case OpKind::Matmul: {
                int m = out_shape[0], nn = out_shape[1];
                int k = n.attrs.trans_a ? in_shape(0)[0] : in_shape(0)[1];
                bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
                if (!ta && !tb) {
                    detail::mm_acc(in_adj(0), d_out, in_data(1), m, nn, k, false, true);
                    detail::mm_acc(in_adj(1), in_data(0), d_out, k, m, nn, true, false);
                } else if (!ta && tb) {
                    detail::mm_acc(in_adj(0), d_out, in_data(1), m, nn, k, false, false);
                    detail::mm_acc(in_adj(1), d_out, in_data(0), nn, m, k, true, false);
                } else if (ta && !tb) {
                    detail::mm_acc(in_adj(0), in_data(1), d_out, k, nn, m, false, true);
                    detail::mm_acc(in_adj(1), in_data(0), d_out, k, m, nn, false, false);
                } else {
                    detail::mm_acc(in_adj(0), in_data(1), d_out, k, nn, m, true, true);
                    detail::mm_acc(in_adj(1), d_out, in_data(0), nn, m, k, true, true);
                }
                break;
            }
            case OpKind::Add: {
                int64_t total = Tensor::size_of(out_shape);
                double* da = in_adj(0);
                for (int64_t i = 0; i < total; ++i) da[i] += d_out[i];
                if (in_shape(0) == in_shape(1)) {
                    double* db = in_adj(1);
                    for (int64_t i = 0; i < total; ++i) db[i] += d_out[i];
                } else {
                    int rows = out_shape[0], cols = out_shape[1];
                    double* db = in_adj(1);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) db[c] += d_out[static_cast<size_t>(r) * cols + c];
                }
                break;
            }
            case OpKind::Mul: {
                const float* a = in_data(0);
                const float* b = in_data(1);
                if (in_shape(0) == in_shape(1)) {
                    int64_t total = Tensor::size_of(out_shape);
                    double* da = in_adj(0);
                    double* db = in_adj(1);
                    for (int64_t i = 0; i < total; ++i) {
                        da[i] += d_out[i] * static_cast<double>(b[i]);
                        db[i] += d_out[i] * static_cast<double>(a[i]);
                    }
                } else {
                    int rows = out_shape[0], cols = out_shape[1];
                    double* da = in_adj(0);
                    double* db = in_adj(1);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) {
                            size_t i = static_cast<size_t>(r) * cols + c;
                            da[i] += d_out[i] * static_cast<double>(b[c]);
                            db[c] += d_out[i] * static_cast<double>(a[i]);
                        }
                }
                break;
            }
            case OpKind::Scale: {
                int64_t total = Tensor::size_of(out_shape);
                double f = static_cast<double>(n.attrs.scalar);
                double* da = in_adj(0);
                for (int64_t i = 0; i < total; ++i) da[i] += d_out[i] * f;
                break;
            }
            case OpKind::Concat: {
                if (n.attrs.axis == 0) {
                    const double* src = d_out;
                    for (size_t i = 0; i < n.inputs.size(); ++i) {
                        int64_t sz = Tensor::size_of(in_shape(i));
                        double* da = in_adj(i);
                        for (int64_t j = 0; j < sz; ++j) da[j] += src[j];
                        src += sz;
                    }
                } else {
                    int rows = out_shape[0], cols = out_shape[1];
                    int off = 0;
                    for (size_t i = 0; i < n.inputs.size(); ++i) {
                        int w = in_shape(i)[1];
                        double* da = in_adj(i);
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < w; ++c)
                                da[static_cast<size_t>(r) * w + c] +=
                                    d_out[static_cast<size_t>(r) * cols + off + c];
                        off += w;
                    }
                }
                break;
            }
            case OpKind::Slice: {
                const auto& a = n.attrs;
                int src_cols = in_shape(0)[1];
                int w = a.c1 - a.c0;
                double* da = in_adj(0);
                for (int r = a.r0; r < a.r1; ++r)
                    for (int c = 0; c < w; ++c)
                        da[static_cast<size_t>(r) * src_cols + a.c0 + c] +=
                            d_out[static_cast<size_t>(r - a.r0) * w + c];
                break;
            }
            case OpKind::Mean: {
                int64_t total = Tensor::size_of(in_shape(0));
                double g = d_out[0] / static_cast<double>(total);
                double* da = in_adj(0);
                for (int64_t i = 0; i < total; ++i) da[i] += g;
                break;
            }
            case OpKind::LayerNorm: {
                int rows = out_shape[0], cols = out_shape[1];
                double eps = static_cast<double>(n.attrs.scalar);
                const float* x = in_data(0);
                const float* gamma = in_data(1);
                double* dx = in_adj(0);
                double* dgamma = in_adj(1);
                double* dbeta = in_adj(2);
                for (int r = 0; r < rows; ++r) {
                    const float* xr = x + static_cast<size_t>(r) * cols;
                    const double* dyr = d_out + static_cast<size_t>(r) * cols;
                    double mu = 0.0;
                    for (int c = 0; c < cols; ++c) mu += static_cast<double>(xr[c]);
                    mu /= cols;
                    double var = 0.0;
                    for (int c = 0; c < cols; ++c) {
                        double d = static_cast<double>(xr[c]) - mu;
                        var += d * d;
                    }
                    var /= cols;
                    double s = 1.0 / std::sqrt(var + eps);
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (int c = 0; c < cols; ++c) {
                        double xhat = (static_cast<double>(xr[c]) - mu) * s;
                        double g = dyr[c] * static_cast<double>(gamma[c]);
                        mean_g += g;
                        mean_gx += g * xhat;
                        dgamma[c] += dyr[c] * xhat;
                        dbeta[c] += dyr[c];
                    }
                    mean_g /= cols;
                    mean_gx /= cols;
                    for (int c = 0; c < cols; ++c) {
                        double xhat = (static_cast<double>(xr[c]) - mu) * s;
                        double g = dyr[c] * static_cast<double>(gamma[c]);
                        dx[static_cast<size_t>(r) * cols + c] += s * (g - mean_g - xhat * mean_gx);
                    }
                }
                break;
            }
            case OpKind::Gelu: {
                int64_t total = Tensor::size_of(out_shape);
                const float* x = in_data(0);
                double* da = in_adj(0);
                for (int64_t i = 0; i < total; ++i)
                    da[i] += d_out[i] * detail::gelu_tanh_grad(static_cast<double>(x[i]));
                break;
            }
            case OpKind::EmbeddingGather: {
                int d = out_shape[1];
                double* dt = in_adj(0);
                for (size_t r = 0; r < n.attrs.ids.size(); ++r)
                    for (int c = 0; c < d; ++c)
                        dt[static_cast<size_t>(n.attrs.ids[r]) * d + c] += d_out[r * d + c];
                break;
            }
            case OpKind::SoftmaxRows: {
                int rows = out_shape[0], cols = out_shape[1];
                const float* y = tape.values_[id].data();
                double* dx = in_adj(0);
                for (int r = 0; r < rows; ++r) {
                    const float* yr = y + static_cast<size_t>(r) * cols;
                    const double* dyr = d_out + static_cast<size_t>(r) * cols;
                    double dot = 0.0;
                    for (int c = 0; c < cols; ++c) dot += dyr[c] * static_cast<double>(yr[c]);
                    for (int c = 0; c < cols; ++c)
                        dx[static_cast<size_t>(r) * cols + c] +=
                            static_cast<double>(yr[c]) * (dyr[c] - dot);
                }
                break;
            }
            case OpKind::SoftmaxXent: {
                int rows = in_shape(0)[0], cols = in_shape(0)[1];
                const float* x = in_data(0);
                double* dx = in_adj(0);
                double u = d_out[0] / rows;
                for (int r = 0; r < rows; ++r) {
                    const float* xr = x + static_cast<size_t>(r) * cols;
                    double mx = static_cast<double>(xr[0]);
                    for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(xr[c]));
                    double denom = 0.0;
                    for (int c = 0; c < cols; ++c) denom += std::exp(static_cast<double>(xr[c]) - mx);
                    for (int c = 0; c < cols; ++c) {
                        double p = std::exp(static_cast<double>(xr[c]) - mx) / denom;
                        dx[static_cast<size_t>(r) * cols + c] +=
                            u * (p - (c == n.attrs.ids[r] ? 1.0 : 0.0));
                    }
                }
                break;
            }
        }
    }

    // Capture tap gradients, then emit per-binding gradients.
    const auto& taps = graph.taps();
    for (size_t h = 0; h < taps.size(); ++h) {
        const auto& s = tape.shapes_[taps[h]];
        Tensor g = Tensor::zeros(s);
        const double* src = adj_of(taps[h]);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<float>(src[i]);
        tape.tap_grads_[h] = std::move(g);
    }

    std::map<std::string, Tensor> grads;
    for (const auto& [name, tensor] : tape.bindings_) {
        if (!tensor->trainable) continue;
        Tensor g = Tensor::zeros(tensor->shape);
        auto it = graph.inputs_by_name().find(name);
        if (it != graph.inputs_by_name().end()) {
            const double* src = adj_of(it->second);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<float>(src[i]);
        }
        grads.emplace(name, std::move(g));
    }

    tape.backward_done_ = true;
    return grads;
}

// Central-difference gradient of a scalar function, evaluated coordinate by
// coordinate with the actually-representable step (f32 storage rounds the
// nominal step). Accumulation is float64 end to end.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double step) {
    if (!(step > 0.0)) throw std::invalid_argument("fd step must be positive");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (size_t j = 0; j < x.data.size(); ++j) {
        float orig = x.data[j];
        float hi = static_cast<float>(static_cast<double>(orig) + step);
        float lo = static_cast<float>(static_cast<double>(orig) - step);
        probe.data[j] = hi;
        double f_hi = f(probe);
        probe.data[j] = lo;
        double f_lo = f(probe);
        probe.data[j] = orig;
        if (!std::isfinite(f_hi) || !std::isfinite(f_lo))
            throw std::runtime_error("non-finite function value in fd_gradient");
        grad.data[j] =
            static_cast<float>((f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo)));
    }
    return grad;
}

} // namespace mnaft
