#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "viewfuse/tensor.hpp"

namespace vf::nn {

// Define-by-run reverse-mode tape. Each op returns a fresh node whose
// backprop closure scatters the node's gradient into its parents. Values are
// immutable once produced within a forward pass; gradients accumulate in a
// fixed order, so runs are bit-reproducible.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  void accumulate(const Tensor& g);
  void ensure_grad();
};

Var constant(Tensor value);
Var leaf(Tensor value);  // requires_grad = true

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

enum class Act { Sigmoid, LeakyRelu };

// Cross-correlation with zero padding chosen so out = ceil(in / stride).
Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride = 1);
Var linear(const Var& input, const Var& weight, const Var& bias);
Var activation(const Var& input, Act kind);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x);

// Bilinear sampling of `input` (C×H×W) at `grid` (H'×W'×2, pixel units of
// the source image; channel order x,y). Coordinates outside
// [0,W-1]×[0,H-1] contribute zeros. Differentiable in input and grid.
Var grid_sample(const Var& input, const Var& grid);

// Elementwise maximum over the set; gradient routes to the lowest-index
// argmax contributor.
Var set_max(const std::vector<Var>& inputs);

Var concat_channels(const std::vector<Var>& inputs);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double c);
// C×H×W features times a 1×H×W gate, broadcast over channels.
Var mul_gate(const Var& features, const Var& gate);
// C×H×W features times a scalar variable (shape {1}).
Var mul_scalar(const Var& features, const Var& s);

// Bilinear resize with border clamping (used for flow upsampling; values are
// not rescaled — compose with scale() for flow magnitude).
Var upsample_bilinear(const Var& input, int out_h, int out_w);

// Reflect-pad on the bottom/right of a C×H×W map.
Var reflect_pad(const Var& input, int pad_bottom, int pad_right);
Var crop(const Var& input, int y0, int x0, int h, int w);

// Scalar reductions.
Var mean_abs_diff(const Var& a, const Var& b);  // mean |a - b|
Var mean_all(const Var& x);
Var weighted_sum(const Var& x, Tensor weights);  // sum x*w, for grad checks

}  // namespace vf::nn
