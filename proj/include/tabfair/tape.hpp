#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tabfair/tensor.hpp"

namespace tabfair {

// Primitive ops recorded on a Tape. Every op's backward pass is expressed in
// terms of these same ops, so adjoint computations are themselves recorded
// and can be differentiated again (needed for the critic gradient penalty).
enum class Op {
    Input,
    Add, Sub, Neg, Mul, Div, Scale, AddConst,
    MatMul,
    Relu, LeakyRelu, StepMask,
    Abs, SignMask,
    Tanh, Sigmoid, Softplus, Exp, Log,
    Sqrt, SqrtGrad,
    SumAll, BcastAll,
    SegSum, SegBcast,
    Transpose, Reshape,
    ConcatRows, SliceRows, RowEmbed,
    Im2Col, Col2Im,
};

const char* op_name(Op op);

// Static attributes of an op (never differentiated).
struct Attrs {
    double c = 0.0;         // Scale factor / AddConst addend / LeakyRelu slope
    int seg = 0;            // SegSum/SegBcast segment length
    int rows = 0, cols = 0; // BcastAll / Reshape target shape; RowEmbed total rows
    int r0 = 0, r1 = 0;     // SliceRows [r0, r1); RowEmbed places rows at r0
    int k = 0;              // im2col/col2im kernel width
    int stride = 1, pad = 0, batch = 1;
    int len_big = 0, len_small = 0; // per-sample lengths: input resp. window count
    bool ta = false, tb = false;    // MatMul operand transposes
};

// Append-only computation record with eagerly evaluated values.
// Node references are strictly backward-pointing; a backward() pass never
// mutates forward values, it only appends adjoint nodes.
class Tape {
public:
    int input(Tensor v);

    int apply(Op op, int a, int b = -1, Attrs at = {});

    // Named builders.
    int add(int a, int b) { return apply(Op::Add, a, b); }
    int sub(int a, int b) { return apply(Op::Sub, a, b); }
    int neg(int a) { return apply(Op::Neg, a); }
    int mul(int a, int b) { return apply(Op::Mul, a, b); }
    int div(int a, int b) { return apply(Op::Div, a, b); }
    int scale(int a, double c) { return apply(Op::Scale, a, -1, {.c = c}); }
    int add_const(int a, double c) { return apply(Op::AddConst, a, -1, {.c = c}); }
    int matmul(int a, int b, bool ta = false, bool tb = false) {
        return apply(Op::MatMul, a, b, {.ta = ta, .tb = tb});
    }
    int relu(int a) { return apply(Op::Relu, a); }
    int leaky_relu(int a, double slope) { return apply(Op::LeakyRelu, a, -1, {.c = slope}); }
    int abs(int a) { return apply(Op::Abs, a); }
    int tanh(int a) { return apply(Op::Tanh, a); }
    int sigmoid(int a) { return apply(Op::Sigmoid, a); }
    int softplus(int a) { return apply(Op::Softplus, a); }
    int exp(int a) { return apply(Op::Exp, a); }
    int log(int a) { return apply(Op::Log, a); }
    int sqrt(int a) { return apply(Op::Sqrt, a); }
    int sum_all(int a) { return apply(Op::SumAll, a); }
    int bcast_all(int a, int rows, int cols) {
        return apply(Op::BcastAll, a, -1, {.rows = rows, .cols = cols});
    }
    // (R, seg*B) -> (R, B): sums each contiguous run of `seg` columns.
    int seg_sum(int a, int seg) { return apply(Op::SegSum, a, -1, {.seg = seg}); }
    // (R, B) -> (R, seg*B): repeats each column `seg` times.
    int seg_bcast(int a, int seg) { return apply(Op::SegBcast, a, -1, {.seg = seg}); }
    int transpose(int a) { return apply(Op::Transpose, a); }
    int reshape(int a, int rows, int cols) {
        return apply(Op::Reshape, a, -1, {.rows = rows, .cols = cols});
    }
    int concat_rows(int a, int b) { return apply(Op::ConcatRows, a, b); }
    int slice_rows(int a, int r0, int r1) {
        return apply(Op::SliceRows, a, -1, {.r0 = r0, .r1 = r1});
    }
    int row_embed(int a, int r0, int total_rows) {
        return apply(Op::RowEmbed, a, -1, {.rows = total_rows, .r0 = r0});
    }
    // (C, len_big*batch) -> (C*k, len_small*batch), windows of width k.
    int im2col(int a, int k, int stride, int pad, int batch);
    // Adjoint scatter of im2col; len_big names the per-sample output length.
    int col2im(int a, int k, int stride, int pad, int batch, int len_big);

    const Tensor& val(int id) const { return nodes_[id].val; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Appends adjoint nodes for d(out)/d(wrt) and returns their ids, one per
    // entry of wrt (a fresh zero node when out does not depend on it).
    // out must hold a scalar. May be called repeatedly, including on nodes
    // produced by earlier backward() calls.
    std::vector<int> backward(int out, std::span<const int> wrt);

private:
    struct Node {
        Op op;
        int a = -1, b = -1;
        Attrs at;
        Tensor val;
    };
    std::vector<Node> nodes_;

    Tensor eval(Op op, int a, int b, const Attrs& at) const;
    void check_finite(int id) const;
};

// -- Convenience entry points matching the engine's contracts ---------------

struct GradResult {
    double value = 0.0;
    std::vector<Tensor> grads;
};

// Evaluates a recorded scalar function and returns d(value)/d(input) for
// every input, in order. `build` receives the tape and the input node ids
// and must return the id of a scalar node.
GradResult grad(const std::function<int(Tape&, const std::vector<int>&)>& build,
                const std::vector<Tensor>& inputs);

struct PenaltyResult {
    double penalty = 0.0;
    std::vector<Tensor> grads;  // d(penalty)/d(param), one per parameter array
};

// Gradient penalty (||d critic / d x||_2 - 1)^2 at x_hat, differentiated a
// second time with respect to the critic parameters by recording the first
// backward pass as ops. A zero input-gradient yields penalty exactly 1 with
// zero parameter gradient (the norm's subgradient at the origin is 0).
PenaltyResult grad_penalty(
    const std::function<int(Tape&, const std::vector<int>& params, int x)>& critic,
    const std::vector<Tensor>& d_params, const Tensor& x_hat);

}  // namespace tabfair
