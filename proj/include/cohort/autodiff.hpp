#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// Every trainable path in the library (visit encoder, reverse-time patient
// encoder, similarity classifier, backbones, GCN, fusion, joint loss) is
// written once against this tape. Vectors are column matrices; batches are
// laid out one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace cohort::ad {

using Mat = Eigen::MatrixXd;

/// A trainable tensor plus its gradient accumulator and adaptive-moment state.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;
    Mat v;

    Param() = default;
    Param(std::string param_name, Mat init);

    void zero_grad();
    std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

class Tape;

class Var {
   public:
    Var() = default;

    const Mat& value() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

   private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
   public:
    enum class Op : std::uint8_t {
        Constant,
        Parameter,
        MatMul,
        Add,
        Sub,
        CMul,
        Affine,
        ScaleCols,
        Tanh,
        Sigmoid,
        Relu,
        VStack,
        GatherCols,
        Transpose,
        ColDot,
        MaskedColSoftmax,
        Row,
        BceLogitsMean,
        SumAll,
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat value);
    /// Leaf bound to a parameter; backward() accumulates into p.grad.
    Var param(const Param& p);

    const Mat& value(Var v) const { return nodes_[v.id_].value; }
    /// Gradient of the last backward() target w.r.t. v (empty if unreached).
    const Mat& grad(Var v) const { return nodes_[v.id_].grad; }

    /// Reverse sweep from a 1x1 target; accumulates into every Param::grad.
    void backward(Var target);

    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Mat value;
        Mat grad;
        Mat aux;
        std::vector<int> inputs;
        std::vector<int> index;
        Param* param = nullptr;  // gradient sink only
        double alpha = 0.0;
        Op op = Op::Constant;
        bool requires_grad = false;
    };

    Var push(Op op, Mat value, std::vector<int> inputs);
    Node& node(Var v) { return nodes_[v.id_]; }
    void accumulate(int id, const Mat& g);
    void backprop_node(int id);

    std::vector<Node> nodes_;

    friend Var matmul(Var, Var);
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var cmul(Var, Var);
    friend Var affine(Var, double, double);
    friend Var scale_cols(Var, Var);
    friend Var tanh(Var);
    friend Var sigmoid(Var);
    friend Var relu(Var);
    friend Var vstack(const std::vector<Var>&);
    friend Var gather_cols(Var, const std::vector<int>&);
    friend Var transpose(Var);
    friend Var col_dot(Var, Var);
    friend Var masked_col_softmax(Var, const Mat&);
    friend Var row(Var, Eigen::Index);
    friend Var bce_logits_mean(Var, const Mat&);
    friend Var sum_all(Var);
};

inline const Mat& Var::value() const { return tape_->value(*this); }

/// a * b (matrix product).
Var matmul(Var a, Var b);
/// a + b. b may also be an (a.rows x 1) column broadcast over a's columns,
/// or a 1x1 scalar broadcast over all of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var cmul(Var a, Var b);
/// alpha * a + beta, elementwise.
Var affine(Var a, double alpha, double beta);
inline Var scale(Var a, double alpha) { return affine(a, alpha, 0.0); }
/// Column k of a multiplied by r(0, k). r is 1 x a.cols().
Var scale_cols(Var a, Var r);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Row-wise concatenation; all parts share the column count.
Var vstack(const std::vector<Var>& parts);
/// Select columns by index; a negative index yields a zero column.
Var gather_cols(Var a, const std::vector<int>& index);
Var transpose(Var a);
/// 1 x n row of per-column inner products.
Var col_dot(Var a, Var b);
/// Softmax down each column over rows where mask == 1; masked entries are
/// 0, and a fully masked column is all zeros.
Var masked_col_softmax(Var a, const Mat& mask);
Var row(Var a, Eigen::Index r);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels (1 x n).
Var bce_logits_mean(Var logits, const Mat& labels);
Var sum_all(Var a);

}  // namespace cohort::ad
