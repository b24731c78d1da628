#include "cftgan/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_set>

#include "cftgan/error.hpp"

namespace cftgan::ag {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

NodePtr make_node(Shape shape, std::vector<float> value, std::vector<NodePtr> parents) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const auto& p : parents) {
        if (p->requires_grad) node->requires_grad = true;
    }
    if (node->requires_grad) node->parents = std::move(parents);
    return node;
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <class Fwd, class Bwd>
Var unary(const Var& x, Fwd fwd, Bwd dydx) {
    const auto& xv = x.node()->value;
    std::vector<float> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    auto node = make_node(x.shape(), std::move(out), {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn, dydx] {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self->grad[i] * dydx(xn->value[i], self->value[i]);
            }
        };
    }
    return Var(node);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

Var Var::constant(Shape shape, std::vector<float> value) {
    if (ag::numel(shape) != value.size()) {
        throw Error(ErrorCode::ShapeMismatch, "constant: value size does not match " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    return Var(node);
}

Var Var::constant(Shape shape, float fill) {
    const auto n = ag::numel(shape);
    return constant(std::move(shape), std::vector<float>(n, fill));
}

Var Var::parameter(Shape shape, std::vector<float> value) {
    Var v = constant(std::move(shape), std::move(value));
    v.node()->requires_grad = true;
    return v;
}

Var Var::deep_copy() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->grad = node_->grad;
    node->requires_grad = node_->requires_grad;
    return Var(node);
}

Var Var::detach() const { return constant(node_->shape, node_->value); }

void backward(const Var& loss) {
    if (loss.numel() != 1) throw Error(ErrorCode::ShapeMismatch, "backward expects a scalar loss");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward();
    }
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    std::vector<float> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto node = make_node(a.shape(), std::move(out), {a.shared(), b.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* an = a.node();
        Node* bn = b ? b.node() : nullptr;
        node->backward = [self, an, bn] {
            for (Node* p : {an, bn}) {
                if (!p->requires_grad) continue;
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
            }
        };
    }
    return Var(node);
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    std::vector<float> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto node = make_node(a.shape(), std::move(out), {a.shared(), b.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* an = a.node();
        Node* bn = b ? b.node() : nullptr;
        node->backward = [self, an, bn] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self->grad[i];
            }
        };
    }
    return Var(node);
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    std::vector<float> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto node = make_node(a.shape(), std::move(out), {a.shared(), b.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* an = a.node();
        Node* bn = b ? b.node() : nullptr;
        node->backward = [self, an, bn] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * an->value[i];
            }
        };
    }
    return Var(node);
}

Var scale(const Var& a, float s) {
    return unary(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Var add_scalar(const Var& a, float s) {
    return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var one_minus(const Var& a) {
    return unary(a, [](float x) { return 1.0f - x; }, [](float, float) { return -1.0f; });
}

Var relu(const Var& x) {
    return unary(x, [](float v) { return v > 0.0f ? v : 0.0f; },
                 [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var leaky_relu(const Var& x, float slope) {
    return unary(x, [slope](float v) { return v > 0.0f ? v : slope * v; },
                 [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Var tanh(const Var& x) {
    return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](float v) {
            if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
            const float e = std::exp(v);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); });
}

Var exp(const Var& x) {
    return unary(x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Var clamped_log(const Var& x, float eps) {
    return unary(x, [eps](float v) { return std::log(std::max(v, eps)); },
                 [eps](float v, float) { return v > eps ? 1.0f / v : 0.0f; });
}

Var abs(const Var& x) {
    return unary(x, [](float v) { return std::fabs(v); },
                 [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (float v : x.value()) acc += v;
    auto node = make_node({1}, {static_cast<float>(acc)}, {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn] {
            auto& g = xn->ensure_grad();
            const float s = self->grad[0];
            for (auto& gi : g) gi += s;
        };
    }
    return Var(node);
}

Var mean(const Var& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Var reshape(const Var& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    auto node = make_node(std::move(shape), x.node()->value, {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn] {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        };
    }
    return Var(node);
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_last of nothing");
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::vector<int> widths;
    int total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        Shape s = p.shape();
        const int c = s.back();
        s.pop_back();
        if (s != lead) {
            throw Error(ErrorCode::ShapeMismatch,
                        "concat_last: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        }
        widths.push_back(c);
        total += c;
        parents.push_back(p.shared());
    }
    const std::size_t rows = numel(lead);
    std::vector<float> out(rows * static_cast<std::size_t>(total));
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const float* src = parts[k].node()->value.data();
        const int c = widths[k];
        for (std::size_t r = 0; r < rows; ++r) {
            std::memcpy(out.data() + r * total + offset, src + r * c, sizeof(float) * c);
        }
        offset += c;
    }
    Shape shape = lead;
    shape.push_back(total);
    auto node = make_node(std::move(shape), std::move(out), parents);
    if (node->requires_grad) {
        Node* self = node.get();
        std::vector<Node*> raw;
        for (const auto& p : parents) raw.push_back(p.get());
        node->backward = [self, raw, widths, rows, total] {
            int off = 0;
            for (std::size_t k = 0; k < raw.size(); ++k) {
                const int c = widths[k];
                if (raw[k]->requires_grad) {
                    auto& g = raw[k]->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        const float* src = self->grad.data() + r * total + off;
                        float* dst = g.data() + r * c;
                        for (int j = 0; j < c; ++j) dst[j] += src[j];
                    }
                }
                off += c;
            }
        };
    }
    return Var(node);
}

Var expand_last(const Var& x, int c) {
    if (x.dim(-1) != 1) throw Error(ErrorCode::ShapeMismatch, "expand_last expects trailing dim 1");
    const std::size_t rows = x.numel();
    std::vector<float> out(rows * c);
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.begin() + r * c, c, x.node()->value[r]);
    Shape shape = x.shape();
    shape.back() = c;
    auto node = make_node(std::move(shape), std::move(out), {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn, rows, c] {
            auto& g = xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                float acc = 0.0f;
                for (int j = 0; j < c; ++j) acc += self->grad[r * c + j];
                g[r] += acc;
            }
        };
    }
    return Var(node);
}

Var repeat_frames(const Var& x, int t) {
    if (x.rank() != 5 || x.dim(1) != 1) {
        throw Error(ErrorCode::ShapeMismatch, "repeat_frames expects [N,1,H,W,C], got " + shape_str(x.shape()));
    }
    const int n = x.dim(0);
    const std::size_t frame = static_cast<std::size_t>(x.dim(2)) * x.dim(3) * x.dim(4);
    std::vector<float> out(static_cast<std::size_t>(n) * t * frame);
    for (int b = 0; b < n; ++b) {
        const float* src = x.node()->value.data() + b * frame;
        for (int k = 0; k < t; ++k) std::memcpy(out.data() + (b * t + k) * frame, src, sizeof(float) * frame);
    }
    auto node = make_node({n, t, x.dim(2), x.dim(3), x.dim(4)}, std::move(out), {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn, n, t, frame] {
            auto& g = xn->ensure_grad();
            for (int b = 0; b < n; ++b) {
                for (int k = 0; k < t; ++k) {
                    const float* src = self->grad.data() + (b * t + k) * frame;
                    float* dst = g.data() + b * frame;
                    for (std::size_t i = 0; i < frame; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return Var(node);
}

Var tile_volume(const Var& x, int t, int h, int w) {
    if (x.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "tile_volume expects [N,C]");
    const int n = x.dim(0);
    const int c = x.dim(1);
    const std::size_t vox = static_cast<std::size_t>(t) * h * w;
    std::vector<float> out(static_cast<std::size_t>(n) * vox * c);
    for (int b = 0; b < n; ++b) {
        const float* src = x.node()->value.data() + static_cast<std::size_t>(b) * c;
        for (std::size_t v = 0; v < vox; ++v) std::memcpy(out.data() + (b * vox + v) * c, src, sizeof(float) * c);
    }
    auto node = make_node({n, t, h, w, c}, std::move(out), {x.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        node->backward = [self, xn, n, c, vox] {
            auto& g = xn->ensure_grad();
            for (int b = 0; b < n; ++b) {
                float* dst = g.data() + static_cast<std::size_t>(b) * c;
                for (std::size_t v = 0; v < vox; ++v) {
                    const float* src = self->grad.data() + (b * vox + v) * c;
                    for (int j = 0; j < c; ++j) dst[j] += src[j];
                }
            }
        };
    }
    return Var(node);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) ||
        (b && b.numel() != static_cast<std::size_t>(w.dim(1)))) {
        throw Error(ErrorCode::ShapeMismatch, "linear: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
    }
    const int n = x.dim(0);
    const int in = w.dim(0);
    const int outd = w.dim(1);
    std::vector<float> out(static_cast<std::size_t>(n) * outd);
    {
        MatMap y(out.data(), n, outd);
        ConstMatMap xm(x.node()->value.data(), n, in);
        ConstMatMap wm(w.node()->value.data(), in, outd);
        y.noalias() = xm * wm;
        if (b) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.node()->value.data(), outd);
    }
    std::vector<NodePtr> parents{x.shared(), w.shared()};
    if (b) parents.push_back(b.shared());
    auto node = make_node({n, outd}, std::move(out), std::move(parents));
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        Node* wn = w.node();
        Node* bn = b ? b.node() : nullptr;
        node->backward = [self, xn, wn, bn, n, in, outd] {
            ConstMatMap gy(self->grad.data(), n, outd);
            if (xn->requires_grad) {
                MatMap gx(xn->ensure_grad().data(), n, in);
                gx.noalias() += gy * ConstMatMap(wn->value.data(), in, outd).transpose();
            }
            if (wn->requires_grad) {
                MatMap gw(wn->ensure_grad().data(), in, outd);
                gw.noalias() += ConstMatMap(xn->value.data(), n, in).transpose() * gy;
            }
            if (bn && bn->requires_grad) {
                Eigen::Map<Eigen::RowVectorXf> gb(bn->ensure_grad().data(), outd);
                gb += gy.colwise().sum();
            }
        };
    }
    return Var(node);
}

namespace {

/// Per-axis index mapping. Taps that read the same source voxel (which happens
/// when up-sampling is fused in) are merged into one slot, and outputs sharing
/// the same tap-to-slot pattern form a phase.
struct AxisPlan {
    int in = 0, out = 0, kernel = 0;
    int slots = 0;                        // merged taps per output
    std::vector<int> base;                // base[o]: source of slot 0
    std::vector<int> phase;               // phase[o]
    std::vector<std::vector<int>> slot;   // slot[phase][k]
    std::vector<std::vector<int>> members;  // outputs of each phase, ascending
};

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

AxisPlan make_axis(int in, const AxisGeom& g) {
    AxisPlan p;
    p.in = in;
    p.kernel = g.kernel;
    p.out = g.output_size(in);
    p.base.resize(p.out);
    p.phase.resize(p.out);
    for (int o = 0; o < p.out; ++o) {
        const int lo = floor_div(o * g.stride - g.pad, g.upsample);
        std::vector<int> pattern(g.kernel);
        for (int k = 0; k < g.kernel; ++k) pattern[k] = floor_div(o * g.stride + k - g.pad, g.upsample) - lo;
        p.slots = std::max(p.slots, pattern.back() + 1);
        p.base[o] = lo;
        auto it = std::find(p.slot.begin(), p.slot.end(), pattern);
        if (it == p.slot.end()) {
            p.slot.push_back(pattern);
            p.members.emplace_back();
            it = p.slot.end() - 1;
        }
        p.phase[o] = static_cast<int>(it - p.slot.begin());
        p.members[p.phase[o]].push_back(o);
    }
    return p;
}

struct ConvPlan {
    int n = 0, cin = 0, cout = 0;
    std::array<AxisPlan, 3> ax;

    std::size_t rows() const { return static_cast<std::size_t>(n) * ax[0].out * ax[1].out * ax[2].out; }
    int taps() const { return ax[0].kernel * ax[1].kernel * ax[2].kernel; }
    int merged_taps() const { return ax[0].slots * ax[1].slots * ax[2].slots; }
    std::size_t merged_cols() const { return static_cast<std::size_t>(merged_taps()) * cin; }
    int phases() const {
        return static_cast<int>(ax[0].slot.size() * ax[1].slot.size() * ax[2].slot.size());
    }
    std::array<int, 3> phase_of(int id) const {
        const int p2 = id % static_cast<int>(ax[2].slot.size());
        id /= static_cast<int>(ax[2].slot.size());
        const int p1 = id % static_cast<int>(ax[1].slot.size());
        return {id / static_cast<int>(ax[1].slot.size()), p1, p2};
    }

    /// Output row indices belonging to one phase, in row-major order.
    std::vector<std::size_t> phase_rows(const std::array<int, 3>& ph) const {
        std::vector<std::size_t> r;
        for (int b = 0; b < n; ++b) {
            for (int t : ax[0].members[ph[0]]) {
                for (int y : ax[1].members[ph[1]]) {
                    for (int x : ax[2].members[ph[2]]) {
                        r.push_back(((static_cast<std::size_t>(b) * ax[0].out + t) * ax[1].out + y) * ax[2].out + x);
                    }
                }
            }
        }
        return r;
    }

    /// merged slot index of each original tap for a phase
    std::vector<int> tap_slots(const std::array<int, 3>& ph) const {
        std::vector<int> m(taps());
        int i = 0;
        for (int kt = 0; kt < ax[0].kernel; ++kt) {
            for (int ky = 0; ky < ax[1].kernel; ++ky) {
                for (int kx = 0; kx < ax[2].kernel; ++kx) {
                    m[i++] = (ax[0].slot[ph[0]][kt] * ax[1].slots + ax[1].slot[ph[1]][ky]) * ax[2].slots +
                             ax[2].slot[ph[2]][kx];
                }
            }
        }
        return m;
    }

    /// Calls f(row_offset_in_col, source_offset_in_x) for each valid merged tap of output row r.
    template <class F>
    void for_each_source(std::size_t r, F&& f) const {
        std::size_t rem = r;
        const int ox = static_cast<int>(rem % ax[2].out);
        rem /= ax[2].out;
        const int oy = static_cast<int>(rem % ax[1].out);
        rem /= ax[1].out;
        const int ot = static_cast<int>(rem % ax[0].out);
        const auto b = rem / ax[0].out;
        std::size_t slot = 0;
        for (int st = 0; st < ax[0].slots; ++st) {
            const int it = ax[0].base[ot] + st;
            const bool vt = it >= 0 && it < ax[0].in;
            for (int sy = 0; sy < ax[1].slots; ++sy) {
                const int iy = ax[1].base[oy] + sy;
                const bool vy = vt && iy >= 0 && iy < ax[1].in;
                for (int sx = 0; sx < ax[2].slots; ++sx, ++slot) {
                    const int ix = ax[2].base[ox] + sx;
                    if (vy && ix >= 0 && ix < ax[2].in) {
                        f(slot * cin, (((b * ax[0].in + it) * ax[1].in + iy) * ax[2].in + ix) * cin);
                    }
                }
            }
        }
    }

    void fill_cols(const float* x, const std::size_t* rows, std::size_t count, float* col) const {
        const std::size_t k = merged_cols();
        std::memset(col, 0, sizeof(float) * count * k);
        for (std::size_t i = 0; i < count; ++i) {
            float* dst = col + i * k;
            for_each_source(rows[i], [&](std::size_t d, std::size_t s) {
                for (int c = 0; c < cin; ++c) dst[d + c] = x[s + c];
            });
        }
    }

    void scatter_cols(const float* col, const std::size_t* rows, std::size_t count, float* gx) const {
        const std::size_t k = merged_cols();
        for (std::size_t i = 0; i < count; ++i) {
            const float* src = col + i * k;
            for_each_source(rows[i], [&](std::size_t d, std::size_t s) {
                for (int c = 0; c < cin; ++c) gx[s + c] += src[d + c];
            });
        }
    }

    std::size_t chunk_rows() const {
        constexpr std::size_t budget = std::size_t{1} << 21;  // floats per column buffer
        return std::max<std::size_t>(1, budget / std::max<std::size_t>(1, merged_cols()));
    }
};

/// Scratch buffers reused across calls; they grow but never shrink.
std::vector<float>& scratch(int which, std::size_t size) {
    thread_local std::array<std::vector<float>, 3> bufs;
    if (bufs[which].size() < size) bufs[which].resize(size);
    return bufs[which];
}

ConvPlan make_plan(const Var& x, const Var& w, const ConvGeom& geom) {
    if (x.rank() != 5) throw Error(ErrorCode::ShapeMismatch, "conv3d expects [N,T,H,W,C], got " + shape_str(x.shape()));
    ConvPlan p;
    p.n = x.dim(0);
    p.cin = x.dim(4);
    for (int a = 0; a < 3; ++a) {
        if (geom.axes[a].output_size(x.dim(a + 1)) <= 0) {
            throw Error(ErrorCode::ShapeMismatch, "conv3d: axis " + std::to_string(a) + " collapses to zero");
        }
        p.ax[a] = make_axis(x.dim(a + 1), geom.axes[a]);
    }
    const std::size_t cols = static_cast<std::size_t>(p.taps()) * p.cin;
    if (w.rank() != 2 || static_cast<std::size_t>(w.dim(0)) != cols) {
        throw Error(ErrorCode::ShapeMismatch,
                    "conv3d: weight " + shape_str(w.shape()) + " incompatible with " + std::to_string(cols) + " columns");
    }
    p.cout = w.dim(1);
    return p;
}

/// Sums the original tap weights into merged slots for one phase.
void merge_weights(const ConvPlan& p, const std::vector<int>& tap_slot, const float* w, float* merged) {
    const std::size_t row = static_cast<std::size_t>(p.cin) * p.cout;
    std::memset(merged, 0, sizeof(float) * p.merged_taps() * row);
    for (int k = 0; k < p.taps(); ++k) {
        const float* src = w + k * row;
        float* dst = merged + tap_slot[k] * row;
        for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
    }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var* bias, const ConvGeom& geom) {
    ConvPlan plan = make_plan(x, w, geom);
    if (bias && bias->numel() != static_cast<std::size_t>(plan.cout)) {
        throw Error(ErrorCode::ShapeMismatch, "conv3d: bias size");
    }
    const std::size_t k = plan.merged_cols();
    const int cout = plan.cout;
    const auto ek = static_cast<Eigen::Index>(k);
    std::vector<float> out(plan.rows() * cout);
    const std::size_t chunk = plan.chunk_rows();
    std::vector<float>& col = scratch(0, std::min(chunk, plan.rows()) * k);
    std::vector<float>& ybuf = scratch(1, std::min(chunk, plan.rows()) * cout);
    std::vector<float>& wmerged = scratch(2, k * cout);
    for (int id = 0; id < plan.phases(); ++id) {
        const auto ph = plan.phase_of(id);
        const auto rows = plan.phase_rows(ph);
        merge_weights(plan, plan.tap_slots(ph), w.node()->value.data(), wmerged.data());
        ConstMatMap wm(wmerged.data(), ek, cout);
        for (std::size_t r0 = 0; r0 < rows.size(); r0 += chunk) {
            const std::size_t nr = std::min(rows.size(), r0 + chunk) - r0;
            plan.fill_cols(x.node()->value.data(), rows.data() + r0, nr, col.data());
            MatMap ym(ybuf.data(), static_cast<Eigen::Index>(nr), cout);
            ym.noalias() = ConstMatMap(col.data(), static_cast<Eigen::Index>(nr), ek) * wm;
            const float* bv = bias ? bias->node()->value.data() : nullptr;
            for (std::size_t i = 0; i < nr; ++i) {
                float* dst = out.data() + rows[r0 + i] * cout;
                const float* src = ybuf.data() + i * cout;
                for (int c = 0; c < cout; ++c) dst[c] = src[c] + (bv ? bv[c] : 0.0f);
            }
        }
    }
    std::vector<NodePtr> parents{x.shared(), w.shared()};
    if (bias) parents.push_back(bias->shared());
    auto node = make_node({plan.n, plan.ax[0].out, plan.ax[1].out, plan.ax[2].out, cout}, std::move(out), parents);
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        Node* wn = w.node();
        Node* bn = bias ? bias->node() : nullptr;
        node->backward = [self, xn, wn, bn, plan = std::move(plan)] {
            const std::size_t k = plan.merged_cols();
            const auto ek = static_cast<Eigen::Index>(k);
            const int cout = plan.cout;
            const std::size_t chunk = plan.chunk_rows();
            std::vector<float>& col = scratch(0, std::min(chunk, plan.rows()) * k);
            std::vector<float>& gybuf = scratch(1, std::min(chunk, plan.rows()) * cout);
            std::vector<float>& wmerged = scratch(2, k * cout);
            std::vector<float> gmerged(wn->requires_grad ? k * cout : 0);
            float* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
            for (int id = 0; id < plan.phases(); ++id) {
                const auto ph = plan.phase_of(id);
                const auto rows = plan.phase_rows(ph);
                const auto tap_slot = plan.tap_slots(ph);
                if (gx) merge_weights(plan, tap_slot, wn->value.data(), wmerged.data());
                std::fill(gmerged.begin(), gmerged.end(), 0.0f);
                for (std::size_t r0 = 0; r0 < rows.size(); r0 += chunk) {
                    const std::size_t nr = std::min(rows.size(), r0 + chunk) - r0;
                    const auto enr = static_cast<Eigen::Index>(nr);
                    for (std::size_t i = 0; i < nr; ++i) {
                        std::memcpy(gybuf.data() + i * cout, self->grad.data() + rows[r0 + i] * cout, sizeof(float) * cout);
                    }
                    ConstMatMap gy(gybuf.data(), enr, cout);
                    if (!gmerged.empty()) {
                        plan.fill_cols(xn->value.data(), rows.data() + r0, nr, col.data());
                        MatMap(gmerged.data(), ek, cout).noalias() += ConstMatMap(col.data(), enr, ek).transpose() * gy;
                    }
                    if (gx) {
                        MatMap(col.data(), enr, ek).noalias() = gy * ConstMatMap(wmerged.data(), ek, cout).transpose();
                        plan.scatter_cols(col.data(), rows.data() + r0, nr, gx);
                    }
                }
                if (!gmerged.empty()) {
                    // Each original tap receives the gradient of the slot it was merged into.
                    auto& gw = wn->ensure_grad();
                    const std::size_t row = static_cast<std::size_t>(plan.cin) * cout;
                    for (int t = 0; t < plan.taps(); ++t) {
                        const float* src = gmerged.data() + tap_slot[t] * row;
                        float* dst = gw.data() + t * row;
                        for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
                    }
                }
            }
            if (bn && bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (std::size_t r = 0; r < plan.rows(); ++r) {
                    for (int c = 0; c < cout; ++c) gb[c] += self->grad[r * cout + c];
                }
            }
        };
    }
    return Var(node);
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training, float momentum,
               float eps) {
    const int c = x.dim(-1);
    if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
        throw Error(ErrorCode::ShapeMismatch, "batch_norm: affine size");
    }
    if (state.running_mean.size() != static_cast<std::size_t>(c)) {
        state.running_mean.assign(c, 0.0f);
        state.running_var.assign(c, 1.0f);
    }
    const std::size_t m = x.numel() / c;
    const auto& xv = x.node()->value;
    std::vector<float> inv_std(c);
    std::vector<float> mu(c);
    if (training) {
        std::vector<double> s(c, 0.0);
        std::vector<double> s2(c, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            for (int j = 0; j < c; ++j) s[j] += xv[r * c + j];
        }
        for (int j = 0; j < c; ++j) mu[j] = static_cast<float>(s[j] / static_cast<double>(m));
        for (std::size_t r = 0; r < m; ++r) {
            for (int j = 0; j < c; ++j) {
                const double d = xv[r * c + j] - mu[j];
                s2[j] += d * d;
            }
        }
        for (int j = 0; j < c; ++j) {
            const double var = s2[j] / static_cast<double>(m);
            inv_std[j] = static_cast<float>(1.0 / std::sqrt(var + eps));
            const double unbiased = m > 1 ? s2[j] / static_cast<double>(m - 1) : var;
            state.running_mean[j] = (1.0f - momentum) * state.running_mean[j] + momentum * mu[j];
            state.running_var[j] = (1.0f - momentum) * state.running_var[j] + momentum * static_cast<float>(unbiased);
        }
    } else {
        for (int j = 0; j < c; ++j) {
            mu[j] = state.running_mean[j];
            inv_std[j] = 1.0f / std::sqrt(state.running_var[j] + eps);
        }
    }
    std::vector<float> xhat(xv.size());
    std::vector<float> out(xv.size());
    const auto& g = gamma.node()->value;
    const auto& b = beta.node()->value;
    for (std::size_t r = 0; r < m; ++r) {
        for (int j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            xhat[i] = (xv[i] - mu[j]) * inv_std[j];
            out[i] = g[j] * xhat[i] + b[j];
        }
    }
    auto node = make_node(x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()});
    if (node->requires_grad) {
        Node* self = node.get();
        Node* xn = x.node();
        Node* gn = gamma.node();
        Node* bn = beta.node();
        node->backward = [self, xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), m, c, training] {
            std::vector<double> sum_gy(c, 0.0);
            std::vector<double> sum_gy_xhat(c, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                for (int j = 0; j < c; ++j) {
                    const std::size_t i = r * c + j;
                    sum_gy[j] += self->grad[i];
                    sum_gy_xhat[j] += self->grad[i] * xhat[i];
                }
            }
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                for (int j = 0; j < c; ++j) gg[j] += static_cast<float>(sum_gy_xhat[j]);
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int j = 0; j < c; ++j) gb[j] += static_cast<float>(sum_gy[j]);
            }
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const auto& gamma_v = gn->value;
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t r = 0; r < m; ++r) {
                    for (int j = 0; j < c; ++j) {
                        const std::size_t i = r * c + j;
                        const double scale_j = gamma_v[j] * inv_std[j];
                        if (training) {
                            gx[i] += static_cast<float>(
                                scale_j * (self->grad[i] - inv_m * sum_gy[j] - xhat[i] * inv_m * sum_gy_xhat[j]));
                        } else {
                            gx[i] += static_cast<float>(scale_j * self->grad[i]);
                        }
                    }
                }
            }
        };
    }
    return Var(node);
}

}  // namespace cftgan::ag
