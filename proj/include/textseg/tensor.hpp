#pragma once

#include <Eigen/Core>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace textseg {

using Mat = Eigen::MatrixXd;

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::clear().
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over dense double matrices. A fresh graph is built for
// every forward pass; backward() walks the nodes in reverse creation order.
// Scalars are represented as 1x1 matrices. Gradients only propagate through
// nodes whose ancestors include a grad-requiring leaf, so binding frozen
// parameters costs no backward work.
class Tape {
  public:
    Var leaf(Mat value, bool requires_grad = false);

    const Mat& val(Var v) const { return node(v).val; }
    // Gradient of the last backward() root w.r.t. v; zeros if unreached.
    Mat grad(Var v) const;
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    int rows(Var v) const { return static_cast<int>(node(v).val.rows()); }
    int cols(Var v) const { return static_cast<int>(node(v).val.cols()); }

    // --- arithmetic ---
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double s);
    Var add_const(Var a, double c);
    Var add_rowvec(Var a, Var row);  // broadcast a 1xC row over all rows of a
    Var transpose(Var a);
    Var div_scalar(Var num, Var den);  // both 1x1

    // --- shape ---
    Var slice_rows(Var a, int r0, int n);
    Var slice_cols(Var a, int c0, int n);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(Var a, std::vector<int> idx);

    // --- nonlinearities / reductions ---
    Var softmax_rows(Var a);
    Var layernorm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
    Var gelu(Var a);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var sum(Var a);       // 1x1
    Var col_mean(Var a);  // 1xC, mean over rows

    // Numerically stable mean binary cross-entropy with logits; target is a
    // constant. Gradient w.r.t. logits is (sigmoid(l) - g) / count.
    Var bce_with_logits(Var logits, const Mat& target);

    // --- grid ops; grids are (H*W)xC row-major by position ---
    // Extract non-overlapping patches from a HxW single-channel image (given as
    // an HxW matrix); result is (num_patches)x(patch*patch).
    Var patchify(Var image, int patch);
    // Input (h*w)x(4*C): each position holds the 2x2 block written to the
    // upsampled output; result is (2h*2w)xC.
    Var pixel_shuffle2(Var a, int h, int w);
    // Bilinear upsampling of a (h*w)xC grid by an integer factor
    // (half-pixel-center convention); result is (h*f*w*f)xC.
    Var upsample_bilinear(Var a, int h, int w, int factor);

    // Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
    // grad-requiring node. root must be 1x1.
    void backward(Var root);

    void clear();
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Tape&, int)> back;
        bool requires_grad = false;
    };

    const Node& node(Var v) const;
    Node& node(Var v);
    Var make(Mat val, bool requires_grad, std::function<void(Tape&, int)> back);
    void accumulate(int id, const Mat& g);

    std::vector<Node> nodes_;
};

// Central-difference gradient of a scalar function at x; test oracles and the
// acceptance gradient suite both use it.
Mat finite_difference(const std::function<double(const Mat&)>& f, const Mat& x,
                      double step = 1e-5);

}  // namespace textseg
