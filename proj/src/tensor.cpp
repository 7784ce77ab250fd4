#include "textseg/tensor.hpp"

#include <cmath>

namespace textseg {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad_scalar(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
    check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "tape: invalid var handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) {
    check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "tape: invalid var handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::make(Mat val, bool requires_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value, bool requires_grad) {
    return make(std::move(value), requires_grad, nullptr);
}

Mat Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var root) {
    Node& r = node(root);
    check(r.val.rows() == 1 && r.val.cols() == 1, "backward: root must be a scalar");
    r.grad = Mat::Ones(1, 1);
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() == 0 || !n.back) continue;
        n.back(*this, id);
    }
}

void Tape::clear() { nodes_.clear(); }

Var Tape::matmul(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    check(av.cols() == bv.rows(), "matmul: inner dimensions differ");
    Mat out;
    out.noalias() = av * bv;
    const bool rg = requires_grad(a) || requires_grad(b);
    return make(std::move(out), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        if (t.requires_grad(a)) t.accumulate(a.id, g * t.val(b).transpose());
        if (t.requires_grad(b)) t.accumulate(b.id, t.val(a).transpose() * g);
    });
}

Var Tape::add(Var a, Var b) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "add: shape mismatch");
    const bool rg = requires_grad(a) || requires_grad(b);
    return make(val(a) + val(b), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
    });
}

Var Tape::sub(Var a, Var b) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "sub: shape mismatch");
    const bool rg = requires_grad(a) || requires_grad(b);
    return make(val(a) - val(b), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        t.accumulate(a.id, g);
        t.accumulate(b.id, -g);
    });
}

Var Tape::mul(Var a, Var b) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "mul: shape mismatch");
    const bool rg = requires_grad(a) || requires_grad(b);
    return make(val(a).cwiseProduct(val(b)), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        if (t.requires_grad(a)) t.accumulate(a.id, g.cwiseProduct(t.val(b)));
        if (t.requires_grad(b)) t.accumulate(b.id, g.cwiseProduct(t.val(a)));
    });
}

Var Tape::scale(Var a, double s) {
    return make(val(a) * s, requires_grad(a), [a, s](Tape& t, int self) {
        t.accumulate(a.id, t.nodes_[static_cast<size_t>(self)].grad * s);
    });
}

Var Tape::add_const(Var a, double c) {
    return make(val(a).array() + c, requires_grad(a), [a](Tape& t, int self) {
        t.accumulate(a.id, t.nodes_[static_cast<size_t>(self)].grad);
    });
}

Var Tape::add_rowvec(Var a, Var row) {
    const Mat& av = val(a);
    const Mat& rv = val(row);
    check(rv.rows() == 1 && rv.cols() == av.cols(), "add_rowvec: expected 1xC row");
    Mat out = av.rowwise() + rv.row(0);
    const bool rg = requires_grad(a) || requires_grad(row);
    return make(std::move(out), rg, [a, row](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        t.accumulate(a.id, g);
        if (t.requires_grad(row)) t.accumulate(row.id, g.colwise().sum());
    });
}

Var Tape::transpose(Var a) {
    return make(val(a).transpose(), requires_grad(a), [a](Tape& t, int self) {
        t.accumulate(a.id, t.nodes_[static_cast<size_t>(self)].grad.transpose());
    });
}

Var Tape::div_scalar(Var num, Var den) {
    check(val(num).size() == 1 && val(den).size() == 1, "div_scalar: operands must be 1x1");
    const double n = val(num)(0, 0);
    const double d = val(den)(0, 0);
    Mat out(1, 1);
    out(0, 0) = n / d;
    const bool rg = requires_grad(num) || requires_grad(den);
    return make(std::move(out), rg, [num, den](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad(0, 0);
        const double n = t.val(num)(0, 0);
        const double d = t.val(den)(0, 0);
        Mat gn(1, 1), gd(1, 1);
        gn(0, 0) = g / d;
        gd(0, 0) = -g * n / (d * d);
        t.accumulate(num.id, gn);
        t.accumulate(den.id, gd);
    });
}

Var Tape::slice_rows(Var a, int r0, int n) {
    check(r0 >= 0 && n >= 0 && r0 + n <= rows(a), "slice_rows: out of range");
    return make(val(a).middleRows(r0, n), requires_grad(a), [a, r0, n](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        Mat full = Mat::Zero(t.rows(a), t.cols(a));
        full.middleRows(r0, n) = g;
        t.accumulate(a.id, full);
    });
}

Var Tape::slice_cols(Var a, int c0, int n) {
    check(c0 >= 0 && n >= 0 && c0 + n <= cols(a), "slice_cols: out of range");
    return make(val(a).middleCols(c0, n), requires_grad(a), [a, c0, n](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        Mat full = Mat::Zero(t.rows(a), t.cols(a));
        full.middleCols(c0, n) = g;
        t.accumulate(a.id, full);
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: empty input");
    int total = 0;
    const int c = cols(parts[0]);
    bool rg = false;
    for (Var p : parts) {
        check(cols(p) == c, "concat_rows: column mismatch");
        total += rows(p);
        rg = rg || requires_grad(p);
    }
    Mat out(total, c);
    int r = 0;
    for (Var p : parts) {
        out.middleRows(r, rows(p)) = val(p);
        r += rows(p);
    }
    return make(std::move(out), rg, [parts](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        int r = 0;
        for (Var p : parts) {
            const int n = t.rows(p);
            t.accumulate(p.id, g.middleRows(r, n));
            r += n;
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty input");
    int total = 0;
    const int r = rows(parts[0]);
    bool rg = false;
    for (Var p : parts) {
        check(rows(p) == r, "concat_cols: row mismatch");
        total += cols(p);
        rg = rg || requires_grad(p);
    }
    Mat out(r, total);
    int c = 0;
    for (Var p : parts) {
        out.middleCols(c, cols(p)) = val(p);
        c += cols(p);
    }
    return make(std::move(out), rg, [parts](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        int c = 0;
        for (Var p : parts) {
            const int n = t.cols(p);
            t.accumulate(p.id, g.middleCols(c, n));
            c += n;
        }
    });
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    const Mat& av = val(a);
    Mat out(static_cast<int>(idx.size()), av.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < av.rows(), "gather_rows: index out of range");
        out.row(static_cast<int>(i)) = av.row(idx[i]);
    }
    return make(std::move(out), requires_grad(a),
                [a, idx = std::move(idx)](Tape& t, int self) {
                    const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
                    Mat full = Mat::Zero(t.rows(a), t.cols(a));
                    for (size_t i = 0; i < idx.size(); ++i) {
                        full.row(idx[i]) += g.row(static_cast<int>(i));
                    }
                    t.accumulate(a.id, full);
                });
}

Var Tape::softmax_rows(Var a) {
    const Mat& av = val(a);
    Mat out(av.rows(), av.cols());
    for (int r = 0; r < av.rows(); ++r) {
        const double m = av.row(r).maxCoeff();
        out.row(r) = (av.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return make(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        const Node& n = t.nodes_[static_cast<size_t>(self)];
        const Mat& y = n.val;
        const Mat& g = n.grad;
        Mat gx(y.rows(), y.cols());
        for (int r = 0; r < y.rows(); ++r) {
            const double dot = g.row(r).cwiseProduct(y.row(r)).sum();
            gx.row(r) = (g.row(r).array() - dot) * y.row(r).array();
        }
        t.accumulate(a.id, gx);
    });
}

Var Tape::layernorm_rows(Var a, Var gain, Var bias, double eps) {
    const Mat& av = val(a);
    const int c = static_cast<int>(av.cols());
    check(val(gain).rows() == 1 && val(gain).cols() == c, "layernorm: gain must be 1xC");
    check(val(bias).rows() == 1 && val(bias).cols() == c, "layernorm: bias must be 1xC");
    Mat xhat(av.rows(), c);
    Eigen::VectorXd inv_sd(av.rows());
    for (int r = 0; r < av.rows(); ++r) {
        const double mean = av.row(r).mean();
        const double var = (av.row(r).array() - mean).square().mean();
        inv_sd(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (av.row(r).array() - mean) * inv_sd(r);
    }
    Mat out = (xhat.array().rowwise() * val(gain).row(0).array()).rowwise() +
              val(bias).row(0).array();
    const bool rg = requires_grad(a) || requires_grad(gain) || requires_grad(bias);
    return make(std::move(out), rg,
                [a, gain, bias, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](
                    Tape& t, int self) {
                    const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
                    if (t.requires_grad(gain))
                        t.accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
                    if (t.requires_grad(bias)) t.accumulate(bias.id, g.colwise().sum());
                    if (!t.requires_grad(a)) return;
                    const Mat& gv = t.val(gain);
                    const int c = static_cast<int>(xhat.cols());
                    Mat gx(xhat.rows(), c);
                    for (int r = 0; r < xhat.rows(); ++r) {
                        // d/dx of (x - mean)/sd through both mean and sd
                        Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gv.row(0));
                        const double s1 = gy.sum();
                        const double s2 = gy.cwiseProduct(xhat.row(r)).sum();
                        gx.row(r) = inv_sd(r) *
                                    (gy.array() - s1 / c - xhat.row(r).array() * s2 / c);
                    }
                    t.accumulate(a.id, gx);
                });
}

Var Tape::gelu(Var a) {
    Mat out = val(a).unaryExpr([](double x) { return gelu_scalar(x); });
    return make(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Mat dx = t.val(a).unaryExpr([](double x) { return gelu_grad_scalar(x); });
        t.accumulate(a.id, g.cwiseProduct(dx));
    });
}

Var Tape::relu(Var a) {
    Mat out = val(a).cwiseMax(0.0);
    return make(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Mat mask = (t.val(a).array() > 0.0).cast<double>();
        t.accumulate(a.id, g.cwiseProduct(mask.matrix()));
    });
}

Var Tape::sigmoid(Var a) {
    Mat out = val(a).unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    return make(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        const Node& n = t.nodes_[static_cast<size_t>(self)];
        const Mat dx = n.val.array() * (1.0 - n.val.array());
        t.accumulate(a.id, n.grad.cwiseProduct(dx));
    });
}

Var Tape::sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    return make(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad(0, 0);
        t.accumulate(a.id, Mat::Constant(t.rows(a), t.cols(a), g));
    });
}

Var Tape::col_mean(Var a) {
    const int r = rows(a);
    check(r > 0, "col_mean: empty input");
    Mat out = val(a).colwise().mean();
    return make(std::move(out), requires_grad(a), [a, r](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        Mat gx = g.replicate(r, 1) / static_cast<double>(r);
        t.accumulate(a.id, gx);
    });
}

Var Tape::bce_with_logits(Var logits, const Mat& target) {
    const Mat& lv = val(logits);
    check(lv.rows() == target.rows() && lv.cols() == target.cols(),
          "bce_with_logits: shape mismatch");
    const double count = static_cast<double>(lv.size());
    check(count > 0, "bce_with_logits: empty input");
    double total = 0.0;
    for (int j = 0; j < lv.cols(); ++j) {
        for (int i = 0; i < lv.rows(); ++i) {
            const double l = lv(i, j);
            total += std::log1p(std::exp(-std::abs(l))) + std::max(l, 0.0) - l * target(i, j);
        }
    }
    Mat out(1, 1);
    out(0, 0) = total / count;
    return make(std::move(out), requires_grad(logits),
                [logits, target, count](Tape& t, int self) {
                    const double g = t.nodes_[static_cast<size_t>(self)].grad(0, 0);
                    const Mat& lv = t.val(logits);
                    Mat gx(lv.rows(), lv.cols());
                    for (int j = 0; j < lv.cols(); ++j) {
                        for (int i = 0; i < lv.rows(); ++i) {
                            const double l = lv(i, j);
                            const double s = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                                                      : std::exp(l) / (1.0 + std::exp(l));
                            gx(i, j) = g * (s - target(i, j)) / count;
                        }
                    }
                    t.accumulate(logits.id, gx);
                });
}

Var Tape::patchify(Var image, int patch) {
    const Mat& im = val(image);
    const int h = static_cast<int>(im.rows());
    const int w = static_cast<int>(im.cols());
    check(patch > 0 && h % patch == 0 && w % patch == 0,
          "patchify: image size not divisible by patch size");
    const int gh = h / patch, gw = w / patch;
    Mat out(gh * gw, patch * patch);
    for (int pi = 0; pi < gh; ++pi) {
        for (int pj = 0; pj < gw; ++pj) {
            int k = 0;
            for (int di = 0; di < patch; ++di) {
                for (int dj = 0; dj < patch; ++dj) {
                    out(pi * gw + pj, k++) = im(pi * patch + di, pj * patch + dj);
                }
            }
        }
    }
    return make(std::move(out), requires_grad(image),
                [image, patch, gh, gw](Tape& t, int self) {
                    const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
                    Mat full = Mat::Zero(gh * patch, gw * patch);
                    for (int pi = 0; pi < gh; ++pi) {
                        for (int pj = 0; pj < gw; ++pj) {
                            int k = 0;
                            for (int di = 0; di < patch; ++di) {
                                for (int dj = 0; dj < patch; ++dj) {
                                    full(pi * patch + di, pj * patch + dj) +=
                                        g(pi * gw + pj, k++);
                                }
                            }
                        }
                    }
                    t.accumulate(image.id, full);
                });
}

Var Tape::pixel_shuffle2(Var a, int h, int w) {
    const Mat& av = val(a);
    check(av.rows() == h * w, "pixel_shuffle2: row count != h*w");
    check(av.cols() % 4 == 0, "pixel_shuffle2: channels not divisible by 4");
    const int c = static_cast<int>(av.cols()) / 4;
    Mat out(4 * h * w, c);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int di = 0; di < 2; ++di) {
                for (int dj = 0; dj < 2; ++dj) {
                    out.row((2 * i + di) * (2 * w) + (2 * j + dj)) =
                        av.block(i * w + j, (di * 2 + dj) * c, 1, c);
                }
            }
        }
    }
    return make(std::move(out), requires_grad(a), [a, h, w, c](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        Mat full = Mat::Zero(h * w, 4 * c);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                for (int di = 0; di < 2; ++di) {
                    for (int dj = 0; dj < 2; ++dj) {
                        full.block(i * w + j, (di * 2 + dj) * c, 1, c) =
                            g.row((2 * i + di) * (2 * w) + (2 * j + dj));
                    }
                }
            }
        }
        t.accumulate(a.id, full);
    });
}

namespace {

struct BilinearTap {
    int i0, i1, j0, j1;
    double wi, wj;  // weight of i0 / j0; complements go to i1 / j1
};

BilinearTap bilinear_tap(int oi, int oj, int h, int w, int factor) {
    const double si = (oi + 0.5) / factor - 0.5;
    const double sj = (oj + 0.5) / factor - 0.5;
    BilinearTap tap;
    const double fi = std::floor(si), fj = std::floor(sj);
    tap.i0 = std::clamp(static_cast<int>(fi), 0, h - 1);
    tap.i1 = std::clamp(static_cast<int>(fi) + 1, 0, h - 1);
    tap.j0 = std::clamp(static_cast<int>(fj), 0, w - 1);
    tap.j1 = std::clamp(static_cast<int>(fj) + 1, 0, w - 1);
    tap.wi = 1.0 - std::clamp(si - fi, 0.0, 1.0);
    tap.wj = 1.0 - std::clamp(sj - fj, 0.0, 1.0);
    if (si < 0) tap.wi = 1.0;
    if (sj < 0) tap.wj = 1.0;
    return tap;
}

}  // namespace

Var Tape::upsample_bilinear(Var a, int h, int w, int factor) {
    const Mat& av = val(a);
    check(av.rows() == h * w, "upsample_bilinear: row count != h*w");
    check(factor >= 1, "upsample_bilinear: factor must be >= 1");
    if (factor == 1) {
        return make(av, requires_grad(a), [a](Tape& t, int self) {
            t.accumulate(a.id, t.nodes_[static_cast<size_t>(self)].grad);
        });
    }
    const int oh = h * factor, ow = w * factor;
    Mat out(oh * ow, av.cols());
    for (int oi = 0; oi < oh; ++oi) {
        for (int oj = 0; oj < ow; ++oj) {
            const BilinearTap tp = bilinear_tap(oi, oj, h, w, factor);
            out.row(oi * ow + oj) =
                tp.wi * (tp.wj * av.row(tp.i0 * w + tp.j0) +
                         (1 - tp.wj) * av.row(tp.i0 * w + tp.j1)) +
                (1 - tp.wi) * (tp.wj * av.row(tp.i1 * w + tp.j0) +
                               (1 - tp.wj) * av.row(tp.i1 * w + tp.j1));
        }
    }
    return make(std::move(out), requires_grad(a), [a, h, w, factor](Tape& t, int self) {
        const Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
        const int ow = w * factor;
        Mat full = Mat::Zero(h * w, t.cols(a));
        for (int oi = 0; oi < h * factor; ++oi) {
            for (int oj = 0; oj < ow; ++oj) {
                const BilinearTap tp = bilinear_tap(oi, oj, h, w, factor);
                const auto& gr = g.row(oi * ow + oj);
                full.row(tp.i0 * w + tp.j0) += tp.wi * tp.wj * gr;
                full.row(tp.i0 * w + tp.j1) += tp.wi * (1 - tp.wj) * gr;
                full.row(tp.i1 * w + tp.j0) += (1 - tp.wi) * tp.wj * gr;
                full.row(tp.i1 * w + tp.j1) += (1 - tp.wi) * (1 - tp.wj) * gr;
            }
        }
        t.accumulate(a.id, full);
    });
}

Mat finite_difference(const std::function<double(const Mat&)>& f, const Mat& x,
                      double step) {
    Mat g(x.rows(), x.cols());
    Mat probe = x;
    for (int j = 0; j < x.cols(); ++j) {
        for (int i = 0; i < x.rows(); ++i) {
            const double orig = probe(i, j);
            probe(i, j) = orig + step;
            const double fp = f(probe);
            probe(i, j) = orig - step;
            const double fm = f(probe);
            probe(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * step);
        }
    }
    return g;
}

}  // namespace textseg
