#include "cohort/autodiff.hpp"

#include <Eigen/SparseCore>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cohort::ad {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

Tape* tape_of(Var a) {
    require(a.valid(), "autodiff: uninitialised Var");
    return a.tape();
}

Tape* tape_of(Var a, Var b) {
    Tape* t = tape_of(a);
    require(t == tape_of(b), "autodiff: operands live on different tapes");
    return t;
}

double stable_sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

bool mostly_zero(const Mat& m) {
    if (m.rows() < 16) return false;
    const auto nnz = (m.array() != 0.0).count();
    return nnz * 8 < m.size();
}

Eigen::SparseMatrix<double> to_sparse(const Mat& m) { return m.sparseView(); }

}  // namespace

Param::Param(std::string param_name, Mat init)
    : name(std::move(param_name)), value(std::move(init)) {
    grad = Mat::Zero(value.rows(), value.cols());
    m = Mat::Zero(value.rows(), value.cols());
    v = Mat::Zero(value.rows(), value.cols());
}

void Param::zero_grad() { grad.setZero(value.rows(), value.cols()); }

Var Tape::push(Op op, Mat value, std::vector<int> inputs) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (int i : inputs) {
        if (nodes_[i].requires_grad) n.requires_grad = true;
    }
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Mat value) { return push(Op::Constant, std::move(value), {}); }

Var Tape::param(const Param& p) {
    Var v = push(Op::Parameter, p.value, {});
    Node& n = nodes_[v.id_];
    n.param = const_cast<Param*>(&p);
    n.requires_grad = true;
    return v;
}

void Tape::accumulate(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.rows() != g.rows() || n.grad.cols() != g.cols()) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var target) {
    require(target.tape_ == this, "autodiff: backward target from another tape");
    require(value(target).rows() == 1 && value(target).cols() == 1,
            "autodiff: backward target must be 1x1");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[target.id_].grad = Mat::Ones(1, 1);
    for (int id = target.id_; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) continue;
        if (n.grad.size() == 0) continue;
        backprop_node(id);
    }
}

void Tape::backprop_node(int id) {
    // nodes_ does not grow during the sweep, so these references stay valid.
    const Mat& g = nodes_[id].grad;
    const Node& n = nodes_[id];
    const auto in = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k]]; };

    switch (n.op) {
        case Op::Constant:
            break;
        case Op::Parameter:
            n.param->grad += g;
            break;
        case Op::MatMul: {
            const Mat& a = in(0).value;
            const Mat& b = in(1).value;
            if (in(0).requires_grad) {
                if (in(1).op == Op::Constant && mostly_zero(b)) {
                    accumulate(n.inputs[0], g * to_sparse(b).transpose());
                } else {
                    accumulate(n.inputs[0], g * b.transpose());
                }
            }
            if (in(1).requires_grad) accumulate(n.inputs[1], a.transpose() * g);
            break;
        }
        case Op::Add: {
            accumulate(n.inputs[0], g);
            if (in(1).requires_grad) {
                const Mat& b = in(1).value;
                if (b.rows() == g.rows() && b.cols() == g.cols()) {
                    accumulate(n.inputs[1], g);
                } else if (b.rows() == 1 && b.cols() == 1) {
                    accumulate(n.inputs[1], Mat::Constant(1, 1, g.sum()));
                } else {
                    accumulate(n.inputs[1], g.rowwise().sum());
                }
            }
            break;
        }
        case Op::Sub:
            accumulate(n.inputs[0], g);
            if (in(1).requires_grad) accumulate(n.inputs[1], -g);
            break;
        case Op::CMul:
            if (in(0).requires_grad) accumulate(n.inputs[0], g.cwiseProduct(in(1).value));
            if (in(1).requires_grad) accumulate(n.inputs[1], g.cwiseProduct(in(0).value));
            break;
        case Op::Affine:
            accumulate(n.inputs[0], n.alpha * g);
            break;
        case Op::ScaleCols: {
            const Mat& a = in(0).value;
            const Mat& r = in(1).value;
            if (in(0).requires_grad) {
                accumulate(n.inputs[0], g * r.row(0).asDiagonal());
            }
            if (in(1).requires_grad) {
                accumulate(n.inputs[1], g.cwiseProduct(a).colwise().sum());
            }
            break;
        }
        case Op::Tanh:
            accumulate(n.inputs[0],
                       g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
            break;
        case Op::Sigmoid:
            accumulate(n.inputs[0],
                       g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
            break;
        case Op::Relu:
            accumulate(n.inputs[0],
                       g.cwiseProduct((in(0).value.array() > 0.0).cast<double>().matrix()));
            break;
        case Op::VStack: {
            Eigen::Index offset = 0;
            for (int part : n.inputs) {
                const Eigen::Index r = nodes_[part].value.rows();
                if (nodes_[part].requires_grad) {
                    accumulate(part, g.middleRows(offset, r));
                }
                offset += r;
            }
            break;
        }
        case Op::GatherCols: {
            const Mat& a = in(0).value;
            Mat ga = Mat::Zero(a.rows(), a.cols());
            for (std::size_t k = 0; k < n.index.size(); ++k) {
                if (n.index[k] >= 0) ga.col(n.index[k]) += g.col(static_cast<Eigen::Index>(k));
            }
            accumulate(n.inputs[0], ga);
            break;
        }
        case Op::Transpose:
            accumulate(n.inputs[0], g.transpose());
            break;
        case Op::ColDot:
            if (in(0).requires_grad) accumulate(n.inputs[0], in(1).value * g.row(0).asDiagonal());
            if (in(1).requires_grad) accumulate(n.inputs[1], in(0).value * g.row(0).asDiagonal());
            break;
        case Op::MaskedColSoftmax: {
            const Mat& y = n.value;
            Mat ga(y.rows(), y.cols());
            for (Eigen::Index c = 0; c < y.cols(); ++c) {
                const double inner = g.col(c).dot(y.col(c));
                ga.col(c) = y.col(c).cwiseProduct((g.col(c).array() - inner).matrix());
            }
            accumulate(n.inputs[0], ga);
            break;
        }
        case Op::Row: {
            const Mat& a = in(0).value;
            Mat ga = Mat::Zero(a.rows(), a.cols());
            ga.row(static_cast<Eigen::Index>(n.alpha)) = g.row(0);
            accumulate(n.inputs[0], ga);
            break;
        }
        case Op::BceLogitsMean: {
            const Mat& z = in(0).value;
            const double scale = g(0, 0) / static_cast<double>(z.cols());
            Mat gz(1, z.cols());
            for (Eigen::Index c = 0; c < z.cols(); ++c) {
                gz(0, c) = scale * (stable_sigmoid(z(0, c)) - n.aux(0, c));
            }
            accumulate(n.inputs[0], gz);
            break;
        }
        case Op::SumAll: {
            const Mat& a = in(0).value;
            accumulate(n.inputs[0], Mat::Constant(a.rows(), a.cols(), g(0, 0)));
            break;
        }
    }
}

Var matmul(Var a, Var b) {
    Tape* t = tape_of(a, b);
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    // Multi-hot code inputs are almost all zeros.
    if (t->nodes_[static_cast<std::size_t>(b.id())].op == Tape::Op::Constant && mostly_zero(b.value())) {
        return t->push(Tape::Op::MatMul, a.value() * to_sparse(b.value()), {a.id(), b.id()});
    }
    return t->push(Tape::Op::MatMul, a.value() * b.value(), {a.id(), b.id()});
}

Var add(Var a, Var b) {
    Tape* t = tape_of(a, b);
    const Mat& av = a.value();
    const Mat& bv = b.value();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        return t->push(Tape::Op::Add, av + bv, {a.id(), b.id()});
    }
    if (bv.rows() == 1 && bv.cols() == 1) {
        return t->push(Tape::Op::Add, (av.array() + bv(0, 0)).matrix(), {a.id(), b.id()});
    }
    require(bv.cols() == 1 && bv.rows() == av.rows(), "add: incompatible shapes");
    Mat out = av.colwise() + bv.col(0);
    return t->push(Tape::Op::Add, std::move(out), {a.id(), b.id()});
}

Var sub(Var a, Var b) {
    Tape* t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return t->push(Tape::Op::Sub, a.value() - b.value(), {a.id(), b.id()});
}

Var cmul(Var a, Var b) {
    Tape* t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul: shape mismatch");
    return t->push(Tape::Op::CMul, a.value().cwiseProduct(b.value()), {a.id(), b.id()});
}

Var affine(Var a, double alpha, double beta) {
    Tape* t = tape_of(a);
    Var out = t->push(Tape::Op::Affine, (alpha * a.value().array() + beta).matrix(), {a.id()});
    t->node(out).alpha = alpha;
    return out;
}

Var scale_cols(Var a, Var r) {
    Tape* t = tape_of(a, r);
    require(r.rows() == 1 && r.cols() == a.cols(), "scale_cols: r must be 1 x a.cols()");
    Mat out = a.value() * r.value().row(0).asDiagonal();
    return t->push(Tape::Op::ScaleCols, std::move(out), {a.id(), r.id()});
}

Var tanh(Var a) {
    Tape* t = tape_of(a);
    return t->push(Tape::Op::Tanh, a.value().array().tanh().matrix(), {a.id()});
}

Var sigmoid(Var a) {
    Tape* t = tape_of(a);
    Mat out = a.value().unaryExpr([](double z) { return stable_sigmoid(z); });
    return t->push(Tape::Op::Sigmoid, std::move(out), {a.id()});
}

Var relu(Var a) {
    Tape* t = tape_of(a);
    return t->push(Tape::Op::Relu, a.value().cwiseMax(0.0), {a.id()});
}

Var vstack(const std::vector<Var>& parts) {
    require(!parts.empty(), "vstack: no parts");
    Tape* t = tape_of(parts.front());
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Var& p : parts) {
        require(tape_of(p) == t, "vstack: parts on different tapes");
        require(p.cols() == cols, "vstack: column counts differ");
        rows += p.rows();
        ids.push_back(p.id());
    }
    Mat out(rows, cols);
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
        out.middleRows(offset, p.rows()) = p.value();
        offset += p.rows();
    }
    return t->push(Tape::Op::VStack, std::move(out), std::move(ids));
}

Var gather_cols(Var a, const std::vector<int>& index) {
    Tape* t = tape_of(a);
    const Mat& av = a.value();
    Mat out(av.rows(), static_cast<Eigen::Index>(index.size()));
    for (std::size_t k = 0; k < index.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        if (index[k] < 0) {
            out.col(c).setZero();
        } else {
            require(index[k] < av.cols(), "gather_cols: index out of range");
            out.col(c) = av.col(index[k]);
        }
    }
    Var v = t->push(Tape::Op::GatherCols, std::move(out), {a.id()});
    t->node(v).index = index;
    return v;
}

Var transpose(Var a) {
    Tape* t = tape_of(a);
    return t->push(Tape::Op::Transpose, a.value().transpose(), {a.id()});
}

Var col_dot(Var a, Var b) {
    Tape* t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "col_dot: shape mismatch");
    Mat out = a.value().cwiseProduct(b.value()).colwise().sum();
    return t->push(Tape::Op::ColDot, std::move(out), {a.id(), b.id()});
}

Var masked_col_softmax(Var a, const Mat& mask) {
    Tape* t = tape_of(a);
    const Mat& av = a.value();
    require(mask.rows() == av.rows() && mask.cols() == av.cols(),
            "masked_col_softmax: mask shape mismatch");
    Mat out = Mat::Zero(av.rows(), av.cols());
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
        double hi = -std::numeric_limits<double>::infinity();
        for (Eigen::Index r = 0; r < av.rows(); ++r) {
            if (mask(r, c) != 0.0) hi = std::max(hi, av(r, c));
        }
        if (!std::isfinite(hi)) continue;
        double total = 0.0;
        for (Eigen::Index r = 0; r < av.rows(); ++r) {
            if (mask(r, c) != 0.0) {
                out(r, c) = std::exp(av(r, c) - hi);
                total += out(r, c);
            }
        }
        out.col(c) /= total;
    }
    return t->push(Tape::Op::MaskedColSoftmax, std::move(out), {a.id()});
}

Var row(Var a, Eigen::Index r) {
    Tape* t = tape_of(a);
    require(r >= 0 && r < a.rows(), "row: index out of range");
    Var v = t->push(Tape::Op::Row, Mat(a.value().row(r)), {a.id()});
    t->node(v).alpha = static_cast<double>(r);
    return v;
}

Var bce_logits_mean(Var logits, const Mat& labels) {
    Tape* t = tape_of(logits);
    const Mat& z = logits.value();
    require(z.rows() == 1 && labels.rows() == 1 && labels.cols() == z.cols() && z.cols() > 0,
            "bce_logits_mean: expects matching 1 x n logits and labels");
    double total = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double x = z(0, c);
        const double y = labels(0, c);
        total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    Var v = t->push(Tape::Op::BceLogitsMean,
                    Mat::Constant(1, 1, total / static_cast<double>(z.cols())), {logits.id()});
    t->node(v).aux = labels;
    return v;
}

Var sum_all(Var a) {
    Tape* t = tape_of(a);
    return t->push(Tape::Op::SumAll, Mat::Constant(1, 1, a.value().sum()), {a.id()});
}

}  // namespace cohort::ad
