#include "tabfair/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace tabfair {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap map_of(const Tensor& t) { return CMap(t.v.data(), t.rows, t.cols); }

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Neg: return "neg";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Scale: return "scale";
        case Op::AddConst: return "add_const";
        case Op::MatMul: return "matmul";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::StepMask: return "step_mask";
        case Op::Abs: return "abs";
        case Op::SignMask: return "sign_mask";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softplus: return "softplus";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::SqrtGrad: return "sqrt_grad";
        case Op::SumAll: return "sum_all";
        case Op::BcastAll: return "bcast_all";
        case Op::SegSum: return "seg_sum";
        case Op::SegBcast: return "seg_bcast";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::ConcatRows: return "concat_rows";
        case Op::SliceRows: return "slice_rows";
        case Op::RowEmbed: return "row_embed";
        case Op::Im2Col: return "im2col";
        case Op::Col2Im: return "col2im";
    }
    return "?";
}

int Tape::input(Tensor v) {
    nodes_.push_back(Node{Op::Input, -1, -1, {}, std::move(v)});
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::im2col(int a, int k, int stride, int pad, int batch) {
    const Tensor& x = val(a);
    require(x.cols % batch == 0, "im2col: columns not divisible by batch");
    int len_big = x.cols / batch;
    int len_small = (len_big + 2 * pad - k) / stride + 1;
    require(len_small > 0, "im2col: empty output window");
    Attrs at;
    at.k = k; at.stride = stride; at.pad = pad; at.batch = batch;
    at.len_big = len_big; at.len_small = len_small;
    return apply(Op::Im2Col, a, -1, at);
}

int Tape::col2im(int a, int k, int stride, int pad, int batch, int len_big) {
    const Tensor& x = val(a);
    require(x.cols % batch == 0, "col2im: columns not divisible by batch");
    Attrs at;
    at.k = k; at.stride = stride; at.pad = pad; at.batch = batch;
    at.len_big = len_big; at.len_small = x.cols / batch;
    return apply(Op::Col2Im, a, -1, at);
}

int Tape::apply(Op op, int a, int b, Attrs at) {
    Tensor out = eval(op, a, b, at);
    nodes_.push_back(Node{op, a, b, at, std::move(out)});
    int id = static_cast<int>(nodes_.size()) - 1;
    check_finite(id);
    return id;
}

void Tape::check_finite(int id) const {
    if (!nodes_[id].val.all_finite())
        throw NumericalFailure("non-finite value in node " + std::to_string(id) + " (" +
                               op_name(nodes_[id].op) + ")");
}

Tensor Tape::eval(Op op, int ia, int ib, const Attrs& at) const {
    auto& A = nodes_[ia].val;
    auto same_shape = [&](const Tensor& x, const Tensor& y) {
        require(x.same_shape(y), std::string(op_name(op)) + ": shape mismatch");
    };

    switch (op) {
        case Op::Input:
            throw ContractViolation("input nodes are created via input()");

        case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: {
            auto& B = nodes_[ib].val;
            same_shape(A, B);
            Tensor out(A.rows, A.cols);
            const double* pa = A.v.data();
            const double* pb = B.v.data();
            double* po = out.v.data();
            std::size_t n = A.size();
            switch (op) {
                case Op::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
                case Op::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
                case Op::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
                default:      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
            }
            return out;
        }
        case Op::Neg: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = -A.v[i];
            return out;
        }
        case Op::Scale: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = at.c * A.v[i];
            return out;
        }
        case Op::AddConst: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = at.c + A.v[i];
            return out;
        }
        case Op::MatMul: {
            auto& B = nodes_[ib].val;
            int am = at.ta ? A.cols : A.rows, ak = at.ta ? A.rows : A.cols;
            int bk = at.tb ? B.cols : B.rows, bn = at.tb ? B.rows : B.cols;
            require(ak == bk, "matmul: inner dimensions disagree");
            Tensor out(am, bn);
            MMap O(out.v.data(), am, bn);
            if (!at.ta && !at.tb)      O.noalias() = map_of(A) * map_of(B);
            else if (at.ta && !at.tb)  O.noalias() = map_of(A).transpose() * map_of(B);
            else if (!at.ta && at.tb)  O.noalias() = map_of(A) * map_of(B).transpose();
            else                       O.noalias() = map_of(A).transpose() * map_of(B).transpose();
            return out;
        }
        case Op::Relu: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] > 0 ? A.v[i] : 0.0;
            return out;
        }
        case Op::LeakyRelu: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i)
                out.v[i] = A.v[i] > 0 ? A.v[i] : at.c * A.v[i];
            return out;
        }
        case Op::StepMask: {
            // d relu / dx as a value; 0 at the origin by convention
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] > 0 ? 1.0 : at.c;
            return out;
        }
        case Op::Abs: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = std::abs(A.v[i]);
            return out;
        }
        case Op::SignMask: {
            // sign with sign(0) = 0, the documented subgradient choice
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i)
                out.v[i] = A.v[i] > 0 ? 1.0 : (A.v[i] < 0 ? -1.0 : 0.0);
            return out;
        }
        case Op::Tanh: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = std::tanh(A.v[i]);
            return out;
        }
        case Op::Sigmoid: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) {
                double x = A.v[i];
                out.v[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
            }
            return out;
        }
        case Op::Softplus: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) {
                double x = A.v[i];
                out.v[i] = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
            }
            return out;
        }
        case Op::Exp: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = std::exp(A.v[i]);
            return out;
        }
        case Op::Log: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = std::log(A.v[i]);
            return out;
        }
        case Op::Sqrt: {
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i) out.v[i] = std::sqrt(A.v[i]);
            return out;
        }
        case Op::SqrtGrad: {
            // derivative of sqrt as a function of the sqrt VALUE y: 0.5/y,
            // defined as 0 at y = 0 (subgradient of the norm at the origin)
            Tensor out(A.rows, A.cols);
            for (std::size_t i = 0; i < A.size(); ++i)
                out.v[i] = A.v[i] > 0 ? 0.5 / A.v[i] : 0.0;
            return out;
        }
        case Op::SumAll: {
            double s = 0;
            for (double x : A.v) s += x;
            return Tensor::scalar(s);
        }
        case Op::BcastAll: {
            require(A.size() == 1, "bcast_all: input must be scalar");
            return Tensor(at.rows, at.cols, A.v[0]);
        }
        case Op::SegSum: {
            require(at.seg > 0 && A.cols % at.seg == 0, "seg_sum: bad segment length");
            int nb = A.cols / at.seg;
            Tensor out(A.rows, nb);
            for (int r = 0; r < A.rows; ++r) {
                const double* row = A.v.data() + static_cast<std::size_t>(r) * A.cols;
                for (int s = 0; s < nb; ++s) {
                    double acc = 0;
                    for (int i = 0; i < at.seg; ++i) acc += row[s * at.seg + i];
                    out.at(r, s) = acc;
                }
            }
            return out;
        }
        case Op::SegBcast: {
            Tensor out(A.rows, A.cols * at.seg);
            for (int r = 0; r < A.rows; ++r)
                for (int s = 0; s < A.cols; ++s) {
                    double x = A.at(r, s);
                    double* dst = out.v.data() +
                                  static_cast<std::size_t>(r) * out.cols + s * at.seg;
                    for (int i = 0; i < at.seg; ++i) dst[i] = x;
                }
            return out;
        }
        case Op::Transpose: {
            Tensor out(A.cols, A.rows);
            for (int r = 0; r < A.rows; ++r)
                for (int c = 0; c < A.cols; ++c) out.at(c, r) = A.at(r, c);
            return out;
        }
        case Op::Reshape: {
            require(static_cast<std::size_t>(at.rows) * at.cols == A.size(),
                    "reshape: element count changed");
            Tensor out(at.rows, at.cols);
            out.v = A.v;
            return out;
        }
        case Op::ConcatRows: {
            auto& B = nodes_[ib].val;
            require(A.cols == B.cols, "concat_rows: column mismatch");
            Tensor out(A.rows + B.rows, A.cols);
            std::copy(A.v.begin(), A.v.end(), out.v.begin());
            std::copy(B.v.begin(), B.v.end(), out.v.begin() + A.size());
            return out;
        }
        case Op::SliceRows: {
            require(0 <= at.r0 && at.r0 < at.r1 && at.r1 <= A.rows, "slice_rows: bad range");
            Tensor out(at.r1 - at.r0, A.cols);
            std::copy(A.v.begin() + static_cast<std::size_t>(at.r0) * A.cols,
                      A.v.begin() + static_cast<std::size_t>(at.r1) * A.cols, out.v.begin());
            return out;
        }
        case Op::RowEmbed: {
            require(at.r0 >= 0 && at.r0 + A.rows <= at.rows, "row_embed: bad placement");
            Tensor out(at.rows, A.cols);
            std::copy(A.v.begin(), A.v.end(),
                      out.v.begin() + static_cast<std::size_t>(at.r0) * A.cols);
            return out;
        }
        case Op::Im2Col: {
            int C = A.rows;
            Tensor out(C * at.k, at.len_small * at.batch);
            for (int b = 0; b < at.batch; ++b)
                for (int lo = 0; lo < at.len_small; ++lo)
                    for (int ci = 0; ci < C; ++ci)
                        for (int kk = 0; kk < at.k; ++kk) {
                            int src = lo * at.stride + kk - at.pad;
                            double x = (src >= 0 && src < at.len_big)
                                           ? A.at(ci, b * at.len_big + src)
                                           : 0.0;
                            out.at(ci * at.k + kk, b * at.len_small + lo) = x;
                        }
            return out;
        }
        case Op::Col2Im: {
            require(A.rows % at.k == 0, "col2im: rows not divisible by kernel width");
            int C = A.rows / at.k;
            Tensor out(C, at.len_big * at.batch);
            for (int b = 0; b < at.batch; ++b)
                for (int lo = 0; lo < at.len_small; ++lo)
                    for (int ci = 0; ci < C; ++ci)
                        for (int kk = 0; kk < at.k; ++kk) {
                            int dst = lo * at.stride + kk - at.pad;
                            if (dst >= 0 && dst < at.len_big)
                                out.at(ci, b * at.len_big + dst) +=
                                    A.at(ci * at.k + kk, b * at.len_small + lo);
                        }
            return out;
        }
    }
    throw ContractViolation("unknown op");
}

std::vector<int> Tape::backward(int out, std::span<const int> wrt) {
    require(out >= 0 && out < size(), "backward: bad node id");
    require(val(out).size() == 1, "backward: output must be scalar");

    // restrict work to ancestors of out
    std::vector<char> reach(nodes_.size(), 0);
    {
        std::vector<int> stack{out};
        reach[out] = 1;
        while (!stack.empty()) {
            int id = stack.back();
            stack.pop_back();
            for (int in : {nodes_[id].a, nodes_[id].b})
                if (in >= 0 && !reach[in]) {
                    reach[in] = 1;
                    stack.push_back(in);
                }
        }
    }

    std::vector<int> adj(nodes_.size(), -1);
    adj[out] = input(Tensor::scalar(1.0));

    auto accum = [&](int node, int contrib) {
        if (contrib < 0) return;
        if (adj[node] < 0) adj[node] = contrib;
        else adj[node] = add(adj[node], contrib);
    };

    for (int id = out; id >= 0; --id) {
        if (!reach[id] || adj[id] < 0) continue;
        const Node n = nodes_[id];  // copy: nodes_ may reallocate below
        int g = adj[id];
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Add:
                accum(n.a, g);
                accum(n.b, g);
                break;
            case Op::Sub:
                accum(n.a, g);
                accum(n.b, neg(g));
                break;
            case Op::Neg:
                accum(n.a, neg(g));
                break;
            case Op::Mul:
                accum(n.a, mul(g, n.b));
                accum(n.b, mul(g, n.a));
                break;
            case Op::Div: {
                // y = a/b: da = g/b, db = -g*y/b
                accum(n.a, div(g, n.b));
                accum(n.b, neg(div(mul(g, id), n.b)));
                break;
            }
            case Op::Scale:
                accum(n.a, scale(g, n.at.c));
                break;
            case Op::AddConst:
                accum(n.a, g);
                break;
            case Op::MatMul: {
                bool ta = n.at.ta, tb = n.at.tb;
                if (!ta && !tb) {
                    accum(n.a, matmul(g, n.b, false, true));
                    accum(n.b, matmul(n.a, g, true, false));
                } else if (ta && !tb) {
                    accum(n.a, matmul(n.b, g, false, true));
                    accum(n.b, matmul(n.a, g, false, false));
                } else if (!ta && tb) {
                    accum(n.a, matmul(g, n.b, false, false));
                    accum(n.b, matmul(g, n.a, true, false));
                } else {
                    accum(n.a, matmul(n.b, g, true, true));
                    accum(n.b, matmul(g, n.a, true, true));
                }
                break;
            }
            case Op::Relu:
                accum(n.a, mul(g, apply(Op::StepMask, n.a, -1, {.c = 0.0})));
                break;
            case Op::LeakyRelu:
                accum(n.a, mul(g, apply(Op::StepMask, n.a, -1, {.c = n.at.c})));
                break;
            case Op::Abs:
                accum(n.a, mul(g, apply(Op::SignMask, n.a)));
                break;
            case Op::StepMask:
            case Op::SignMask:
                break;  // piecewise constant: zero derivative
            case Op::Tanh: {
                int one_minus = add_const(neg(mul(id, id)), 1.0);
                accum(n.a, mul(g, one_minus));
                break;
            }
            case Op::Sigmoid: {
                int one_minus = add_const(neg(id), 1.0);
                accum(n.a, mul(g, mul(id, one_minus)));
                break;
            }
            case Op::Softplus:
                accum(n.a, mul(g, sigmoid(n.a)));
                break;
            case Op::Exp:
                accum(n.a, mul(g, id));
                break;
            case Op::Log:
                accum(n.a, div(g, n.a));
                break;
            case Op::Sqrt:
                accum(n.a, mul(g, apply(Op::SqrtGrad, id)));
                break;
            case Op::SqrtGrad: {
                // m = 0.5/y (0 at 0): dm/dy = -0.5/y^2 = -2 m^2
                int m2 = mul(id, id);
                accum(n.a, neg(scale(mul(g, m2), 2.0)));
                break;
            }
            case Op::SumAll: {
                auto& shape = nodes_[n.a].val;
                accum(n.a, bcast_all(g, shape.rows, shape.cols));
                break;
            }
            case Op::BcastAll:
                accum(n.a, sum_all(g));
                break;
            case Op::SegSum:
                accum(n.a, seg_bcast(g, n.at.seg));
                break;
            case Op::SegBcast:
                accum(n.a, seg_sum(g, n.at.seg));
                break;
            case Op::Transpose:
                accum(n.a, transpose(g));
                break;
            case Op::Reshape: {
                auto& shape = nodes_[n.a].val;
                accum(n.a, reshape(g, shape.rows, shape.cols));
                break;
            }
            case Op::ConcatRows: {
                int ra = nodes_[n.a].val.rows;
                int rtot = nodes_[id].val.rows;
                accum(n.a, slice_rows(g, 0, ra));
                accum(n.b, slice_rows(g, ra, rtot));
                break;
            }
            case Op::SliceRows:
                accum(n.a, row_embed(g, n.at.r0, nodes_[n.a].val.rows));
                break;
            case Op::RowEmbed:
                accum(n.a, slice_rows(g, n.at.r0, n.at.r0 + nodes_[n.a].val.rows));
                break;
            case Op::Im2Col:
                accum(n.a, apply(Op::Col2Im, g, -1, n.at));
                break;
            case Op::Col2Im:
                accum(n.a, apply(Op::Im2Col, g, -1, n.at));
                break;
        }
    }

    std::vector<int> result;
    result.reserve(wrt.size());
    for (int w : wrt) {
        require(w >= 0 && w < static_cast<int>(adj.size()), "backward: bad wrt id");
        if (adj[w] >= 0) {
            result.push_back(adj[w]);
        } else {
            auto& shape = nodes_[w].val;
            result.push_back(input(Tensor(shape.rows, shape.cols)));
        }
    }
    return result;
}

GradResult grad(const std::function<int(Tape&, const std::vector<int>&)>& build,
                const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (auto& x : inputs) ids.push_back(t.input(x));
    int out = build(t, ids);
    require(t.val(out).size() == 1, "grad: function must evaluate to a scalar");
    auto adj = t.backward(out, ids);
    GradResult r;
    r.value = t.val(out).v[0];
    for (int a : adj) r.grads.push_back(t.val(a));
    return r;
}

PenaltyResult grad_penalty(
    const std::function<int(Tape&, const std::vector<int>& params, int x)>& critic,
    const std::vector<Tensor>& d_params, const Tensor& x_hat) {
    Tape t;
    std::vector<int> param_ids;
    param_ids.reserve(d_params.size());
    for (auto& p : d_params) param_ids.push_back(t.input(p));
    int x = t.input(x_hat);
    int out = critic(t, param_ids, x);
    require(t.val(out).size() == 1, "grad_penalty: critic output must be scalar");

    int gx = t.backward(out, std::vector<int>{x})[0];
    int norm = t.sqrt(t.sum_all(t.mul(gx, gx)));
    int diff = t.add_const(norm, -1.0);
    int pen = t.mul(diff, diff);

    auto adj = t.backward(pen, param_ids);
    PenaltyResult r;
    r.penalty = t.val(pen).v[0];
    for (int a : adj) r.grads.push_back(t.val(a));
    return r;
}

}  // namespace tabfair
