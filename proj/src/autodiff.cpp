#include "viewfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <unordered_set>

namespace vf::nn {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

void Node::ensure_grad() {
  if (grad.data.empty()) grad = Tensor::zeros(value.shape);
}

void Node::accumulate(const Tensor& g) {
  ensure_grad();
  for (int i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const Var& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

bool wants_grad(const Node& n, std::size_t parent) { return n.parents[parent]->requires_grad; }

}  // namespace

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1) throw ArgumentError("backward expects a scalar root");
  if (!root->requires_grad) return;

  // Iterative DFS topological order over grad-requiring subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeom {
  int ci, hi, wi, co, kh, kw, stride;
  int ho, wo, pad_top, pad_left;
};

ConvGeom conv_geometry(const Tensor& in, const Tensor& w, const Tensor& b, int stride) {
  if (in.rank() != 3) throw ConfigError("conv2d input must be C×H×W, got " + shape_str(in.shape));
  if (w.rank() != 4) throw ConfigError("conv2d weight must be Co×Ci×kh×kw, got " + shape_str(w.shape));
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
  ConvGeom g;
  g.ci = in.shape[0];
  g.hi = in.shape[1];
  g.wi = in.shape[2];
  g.co = w.shape[0];
  g.kh = w.shape[2];
  g.kw = w.shape[3];
  g.stride = stride;
  if (w.shape[1] != g.ci)
    throw ConfigError("conv2d channel mismatch: weight " + shape_str(w.shape) + " vs input " +
                      shape_str(in.shape));
  if (b.rank() != 1 || b.shape[0] != g.co)
    throw ConfigError("conv2d bias must be [" + std::to_string(g.co) + "], got " +
                      shape_str(b.shape));
  g.ho = (g.hi + stride - 1) / stride;
  g.wo = (g.wi + stride - 1) / stride;
  int pad_h = std::max(0, (g.ho - 1) * stride + g.kh - g.hi);
  int pad_w = std::max(0, (g.wo - 1) * stride + g.kw - g.wi);
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride) {
  const Tensor& in = input->value;
  const Tensor& w = weight->value;
  const Tensor& b = bias->value;
  ConvGeom g = conv_geometry(in, w, b, stride);

  Tensor out({g.co, g.ho, g.wo});
  const double* ind = in.data.data();
  const double* wd = w.data.data();
  double* od = out.data.data();
  const std::size_t in_cs = static_cast<std::size_t>(g.hi) * g.wi;
  const std::size_t out_cs = static_cast<std::size_t>(g.ho) * g.wo;

#pragma omp parallel for schedule(static)
  for (int co = 0; co < g.co; ++co) {
    double* oc = od + co * out_cs;
    const double bv = b[co];
    for (std::size_t i = 0; i < out_cs; ++i) oc[i] = bv;
    for (int ci = 0; ci < g.ci; ++ci) {
      const double* icn = ind + ci * in_cs;
      for (int ky = 0; ky < g.kh; ++ky) {
        for (int kx = 0; kx < g.kw; ++kx) {
          const double wv = wd[((static_cast<std::size_t>(co) * g.ci + ci) * g.kh + ky) * g.kw + kx];
          if (wv == 0.0) continue;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride + ky - g.pad_top;
            if (iy < 0 || iy >= g.hi) continue;
            // valid ox range: 0 <= ox*s + kx - pad_left < wi
            int ox0 = 0;
            while (ox0 * g.stride + kx - g.pad_left < 0) ++ox0;
            int ox1 = g.wo;
            while (ox1 > ox0 && (ox1 - 1) * g.stride + kx - g.pad_left >= g.wi) --ox1;
            const double* irow = icn + static_cast<std::size_t>(iy) * g.wi + (kx - g.pad_left);
            double* orow = oc + static_cast<std::size_t>(oy) * g.wo;
            if (g.stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * g.stride];
            }
          }
        }
      }
    }
  }

  return make_node(std::move(out), {input, weight, bias}, [g](Node& self) {
    const Tensor& go = self.grad;
    Node& nin = *self.parents[0];
    Node& nw = *self.parents[1];
    Node& nb = *self.parents[2];
    const double* god = go.data.data();
    const std::size_t in_cs = static_cast<std::size_t>(g.hi) * g.wi;
    const std::size_t out_cs = static_cast<std::size_t>(g.ho) * g.wo;

    if (wants_grad(self, 2)) {
      nb.ensure_grad();
      for (int co = 0; co < g.co; ++co) {
        double s = 0.0;
        const double* gc = god + co * out_cs;
        for (std::size_t i = 0; i < out_cs; ++i) s += gc[i];
        nb.grad[co] += s;
      }
    }
    if (wants_grad(self, 1)) {
      nw.ensure_grad();
      const double* ind = nin.value.data.data();
      double* gwd = nw.grad.data.data();
#pragma omp parallel for schedule(static)
      for (int co = 0; co < g.co; ++co) {
        const double* gc = god + co * out_cs;
        for (int ci = 0; ci < g.ci; ++ci) {
          const double* icn = ind + ci * in_cs;
          for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
              double s = 0.0;
              for (int oy = 0; oy < g.ho; ++oy) {
                const int iy = oy * g.stride + ky - g.pad_top;
                if (iy < 0 || iy >= g.hi) continue;
                int ox0 = 0;
                while (ox0 * g.stride + kx - g.pad_left < 0) ++ox0;
                int ox1 = g.wo;
                while (ox1 > ox0 && (ox1 - 1) * g.stride + kx - g.pad_left >= g.wi) --ox1;
                const double* irow = icn + static_cast<std::size_t>(iy) * g.wi + (kx - g.pad_left);
                const double* grow = gc + static_cast<std::size_t>(oy) * g.wo;
                if (g.stride == 1) {
                  for (int ox = ox0; ox < ox1; ++ox) s += grow[ox] * irow[ox];
                } else {
                  for (int ox = ox0; ox < ox1; ++ox) s += grow[ox] * irow[ox * g.stride];
                }
              }
              gwd[((static_cast<std::size_t>(co) * g.ci + ci) * g.kh + ky) * g.kw + kx] += s;
            }
          }
        }
      }
    }
    if (wants_grad(self, 0)) {
      nin.ensure_grad();
      const double* wd = nw.value.data.data();
      double* gid = nin.grad.data.data();
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < g.ci; ++ci) {
        double* gin = gid + ci * in_cs;
        for (int co = 0; co < g.co; ++co) {
          const double* gc = god + co * out_cs;
          for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
              const double wv =
                  wd[((static_cast<std::size_t>(co) * g.ci + ci) * g.kh + ky) * g.kw + kx];
              if (wv == 0.0) continue;
              for (int oy = 0; oy < g.ho; ++oy) {
                const int iy = oy * g.stride + ky - g.pad_top;
                if (iy < 0 || iy >= g.hi) continue;
                int ox0 = 0;
                while (ox0 * g.stride + kx - g.pad_left < 0) ++ox0;
                int ox1 = g.wo;
                while (ox1 > ox0 && (ox1 - 1) * g.stride + kx - g.pad_left >= g.wi) --ox1;
                double* irow = gin + static_cast<std::size_t>(iy) * g.wi + (kx - g.pad_left);
                const double* grow = gc + static_cast<std::size_t>(oy) * g.wo;
                if (g.stride == 1) {
                  for (int ox = ox0; ox < ox1; ++ox) irow[ox] += wv * grow[ox];
                } else {
                  for (int ox = ox0; ox < ox1; ++ox) irow[ox * g.stride] += wv * grow[ox];
                }
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear

Var linear(const Var& input, const Var& weight, const Var& bias) {
  const Tensor& x = input->value;
  const Tensor& w = weight->value;
  const Tensor& b = bias->value;
  if (w.rank() != 2) throw ConfigError("linear weight must be out×in, got " + shape_str(w.shape));
  const int nout = w.shape[0], nin = w.shape[1];
  if (x.numel() != nin)
    throw ConfigError("linear dimension mismatch: weight " + shape_str(w.shape) + " vs input " +
                      shape_str(x.shape));
  if (b.numel() != nout)
    throw ConfigError("linear bias must have " + std::to_string(nout) + " elements");

  Tensor out({nout});
  for (int o = 0; o < nout; ++o) {
    double s = b[o];
    for (int i = 0; i < nin; ++i) s += w[o * nin + i] * x[i];
    out[o] = s;
  }
  return make_node(std::move(out), {input, weight, bias}, [nout, nin](Node& self) {
    const Tensor& go = self.grad;
    Node& nx = *self.parents[0];
    Node& nw = *self.parents[1];
    Node& nb = *self.parents[2];
    if (wants_grad(self, 2)) nb.accumulate(go);
    if (wants_grad(self, 1)) {
      nw.ensure_grad();
      for (int o = 0; o < nout; ++o)
        for (int i = 0; i < nin; ++i) nw.grad[o * nin + i] += go[o] * nx.value[i];
    }
    if (wants_grad(self, 0)) {
      nx.ensure_grad();
      for (int o = 0; o < nout; ++o)
        for (int i = 0; i < nin; ++i) nx.grad[i] += go[o] * nw.value[o * nin + i];
    }
  });
}

// ---------------------------------------------------------------------------
// activations

namespace {
constexpr double kLeakySlope = 0.01;

double sigmoid_stable(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = sigmoid_stable(x->value[i]);
  Tensor saved = out;
  return make_node(std::move(out), {x}, [saved](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < saved.numel(); ++i) {
      double s = saved[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var leaky_relu(const Var& x) {
  Tensor out(x->value.shape);
  for (int i = 0; i < out.numel(); ++i) {
    double v = x->value[i];
    out[i] = v >= 0.0 ? v : kLeakySlope * v;
  }
  return make_node(std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < self.grad.numel(); ++i)
      p.grad[i] += self.grad[i] * (p.value[i] >= 0.0 ? 1.0 : kLeakySlope);
  });
}

Var activation(const Var& input, Act kind) {
  switch (kind) {
    case Act::Sigmoid: return sigmoid(input);
    case Act::LeakyRelu: return leaky_relu(input);
  }
  throw ArgumentError("unknown activation kind");
}

// ---------------------------------------------------------------------------
// grid_sample

Var grid_sample(const Var& input, const Var& grid) {
  const Tensor& in = input->value;
  const Tensor& gr = grid->value;
  if (in.rank() != 3) throw ConfigError("grid_sample input must be C×H×W");
  if (gr.rank() != 3 || gr.shape[2] != 2)
    throw ConfigError("grid_sample grid must be H×W×2, got " + shape_str(gr.shape));
  const int c = in.shape[0], hi = in.shape[1], wi = in.shape[2];
  const int ho = gr.shape[0], wo = gr.shape[1];

  Tensor out({c, ho, wo});
  const std::size_t in_cs = static_cast<std::size_t>(hi) * wi;
  const std::size_t out_cs = static_cast<std::size_t>(ho) * wo;

  auto fetch = [&](const double* chan, int y, int x) -> double {
    if (x < 0 || x >= wi || y < 0 || y >= hi) return 0.0;  // zero padding
    return chan[static_cast<std::size_t>(y) * wi + x];
  };

  for (std::size_t p = 0; p < out_cs; ++p) {
    const double gx = gr.data[p * 2];
    const double gy = gr.data[p * 2 + 1];
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0, fy = gy - y0;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
    const double w10 = (1 - fx) * fy, w11 = fx * fy;
    for (int ch = 0; ch < c; ++ch) {
      const double* chan = in.data.data() + ch * in_cs;
      out.data[ch * out_cs + p] = w00 * fetch(chan, y0, x0) + w01 * fetch(chan, y0, x0 + 1) +
                                  w10 * fetch(chan, y0 + 1, x0) + w11 * fetch(chan, y0 + 1, x0 + 1);
    }
  }

  return make_node(std::move(out), {input, grid}, [c, hi, wi, ho, wo](Node& self) {
    Node& nin = *self.parents[0];
    Node& ngr = *self.parents[1];
    const Tensor& gr = ngr.value;
    const std::size_t in_cs = static_cast<std::size_t>(hi) * wi;
    const std::size_t out_cs = static_cast<std::size_t>(ho) * wo;
    const bool gi = wants_grad(self, 0);
    const bool gg = wants_grad(self, 1);
    if (gi) nin.ensure_grad();
    if (gg) ngr.ensure_grad();

    auto in_bounds = [&](int y, int x) { return x >= 0 && x < wi && y >= 0 && y < hi; };
    for (std::size_t p = 0; p < out_cs; ++p) {
      const double gx = gr.data[p * 2];
      const double gy = gr.data[p * 2 + 1];
      const int x0 = static_cast<int>(std::floor(gx));
      const int y0 = static_cast<int>(std::floor(gy));
      const double fx = gx - x0, fy = gy - y0;
      double dgx = 0.0, dgy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double go = self.grad.data[ch * out_cs + p];
        if (go == 0.0) continue;
        const double* chan = nin.value.data.data() + ch * in_cs;
        double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
        if (in_bounds(y0, x0)) v00 = chan[static_cast<std::size_t>(y0) * wi + x0];
        if (in_bounds(y0, x0 + 1)) v01 = chan[static_cast<std::size_t>(y0) * wi + x0 + 1];
        if (in_bounds(y0 + 1, x0)) v10 = chan[static_cast<std::size_t>(y0 + 1) * wi + x0];
        if (in_bounds(y0 + 1, x0 + 1)) v11 = chan[static_cast<std::size_t>(y0 + 1) * wi + x0 + 1];
        if (gi) {
          double* gchan = nin.grad.data.data() + ch * in_cs;
          if (in_bounds(y0, x0)) gchan[static_cast<std::size_t>(y0) * wi + x0] += go * (1 - fx) * (1 - fy);
          if (in_bounds(y0, x0 + 1)) gchan[static_cast<std::size_t>(y0) * wi + x0 + 1] += go * fx * (1 - fy);
          if (in_bounds(y0 + 1, x0)) gchan[static_cast<std::size_t>(y0 + 1) * wi + x0] += go * (1 - fx) * fy;
          if (in_bounds(y0 + 1, x0 + 1)) gchan[static_cast<std::size_t>(y0 + 1) * wi + x0 + 1] += go * fx * fy;
        }
        if (gg) {
          dgx += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
          dgy += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
        }
      }
      if (gg) {
        ngr.grad.data[p * 2] += dgx;
        ngr.grad.data[p * 2 + 1] += dgy;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// set_max

Var set_max(const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ArgumentError("set_max requires at least one input");
  const Shape& shape = inputs[0]->value.shape;
  for (const Var& v : inputs)
    if (v->value.shape != shape)
      throw ConfigError("set_max inputs must share one shape, got " + shape_str(v->value.shape) +
                        " vs " + shape_str(shape));
  if (inputs.size() == 1) return inputs[0];

  const int n = Tensor::count(shape);
  Tensor out(shape);
  std::vector<int> argmax(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    double best = inputs[0]->value[i];
    int bi = 0;
    for (std::size_t k = 1; k < inputs.size(); ++k) {
      const double v = inputs[k]->value[i];
      if (v > best) {  // strict: ties keep the lowest index
        best = v;
        bi = static_cast<int>(k);
      }
    }
    out[i] = best;
    argmax[i] = bi;
  }
  return make_node(std::move(out), std::vector<Var>(inputs), [argmax = std::move(argmax)](Node& self) {
    for (int i = 0; i < self.grad.numel(); ++i) {
      Node& p = *self.parents[argmax[i]];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      p.grad[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// shape plumbing

Var concat_channels(const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ArgumentError("concat_channels requires at least one input");
  const int h = inputs[0]->value.shape[1], w = inputs[0]->value.shape[2];
  int ctotal = 0;
  for (const Var& v : inputs) {
    if (v->value.rank() != 3 || v->value.shape[1] != h || v->value.shape[2] != w)
      throw ConfigError("concat_channels spatial mismatch at " + shape_str(v->value.shape));
    ctotal += v->value.shape[0];
  }
  Tensor out({ctotal, h, w});
  std::size_t off = 0;
  for (const Var& v : inputs) {
    std::copy(v->value.data.begin(), v->value.data.end(), out.data.begin() + off);
    off += v->value.data.size();
  }
  return make_node(std::move(out), std::vector<Var>(inputs), [](Node& self) {
    std::size_t off = 0;
    for (const Var& p : self.parents) {
      const std::size_t n = p->value.data.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) p->grad.data[i] += self.grad.data[off + i];
      }
      off += n;
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ConfigError("add shape mismatch: " + shape_str(a->value.shape) + " vs " +
                      shape_str(b->value.shape));
  Tensor out(a->value.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ConfigError("sub shape mismatch: " + shape_str(a->value.shape) + " vs " +
                      shape_str(b->value.shape));
  Tensor out(a->value.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) {
      Node& p = *self.parents[1];
      p.ensure_grad();
      for (int i = 0; i < self.grad.numel(); ++i) p.grad[i] -= self.grad[i];
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out(x->value.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = c * x->value[i];
  return make_node(std::move(out), {x}, [c](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < self.grad.numel(); ++i) p.grad[i] += c * self.grad[i];
  });
}

Var mul_gate(const Var& features, const Var& gate) {
  const Tensor& f = features->value;
  const Tensor& m = gate->value;
  if (f.rank() != 3 || m.rank() != 3 || m.shape[0] != 1 || m.shape[1] != f.shape[1] ||
      m.shape[2] != f.shape[2])
    throw ConfigError("mul_gate expects C×H×W features and 1×H×W gate, got " +
                      shape_str(f.shape) + " and " + shape_str(m.shape));
  const int c = f.shape[0];
  const std::size_t plane = static_cast<std::size_t>(f.shape[1]) * f.shape[2];
  Tensor out(f.shape);
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p)
      out.data[ch * plane + p] = f.data[ch * plane + p] * m.data[p];
  return make_node(std::move(out), {features, gate}, [c, plane](Node& self) {
    Node& nf = *self.parents[0];
    Node& nm = *self.parents[1];
    if (wants_grad(self, 0)) {
      nf.ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          nf.grad.data[ch * plane + p] += self.grad.data[ch * plane + p] * nm.value.data[p];
    }
    if (wants_grad(self, 1)) {
      nm.ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          nm.grad.data[p] += self.grad.data[ch * plane + p] * nf.value.data[ch * plane + p];
    }
  });
}

Var mul_scalar(const Var& features, const Var& s) {
  if (s->value.numel() != 1) throw ConfigError("mul_scalar expects a scalar variable");
  const double sv = s->value[0];
  Tensor out(features->value.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = features->value[i] * sv;
  return make_node(std::move(out), {features, s}, [](Node& self) {
    Node& nf = *self.parents[0];
    Node& ns = *self.parents[1];
    if (wants_grad(self, 0)) {
      nf.ensure_grad();
      const double sv = ns.value[0];
      for (int i = 0; i < self.grad.numel(); ++i) nf.grad[i] += self.grad[i] * sv;
    }
    if (wants_grad(self, 1)) {
      ns.ensure_grad();
      double acc = 0.0;
      for (int i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * nf.value[i];
      ns.grad[0] += acc;
    }
  });
}

Var upsample_bilinear(const Var& input, int out_h, int out_w) {
  const Tensor& in = input->value;
  if (in.rank() != 3) throw ConfigError("upsample_bilinear input must be C×H×W");
  const int hi = in.shape[1], wi = in.shape[2];
  // Align pixel centers (the align_corners=false convention) and clamp to the
  // border so values are not tapered at the edges.
  const double sy = static_cast<double>(hi) / out_h;
  const double sx = static_cast<double>(wi) / out_w;
  Tensor grid({out_h, out_w, 2});
  for (int y = 0; y < out_h; ++y) {
    double gy = (y + 0.5) * sy - 0.5;
    gy = std::clamp(gy, 0.0, static_cast<double>(hi - 1));
    for (int x = 0; x < out_w; ++x) {
      double gx = (x + 0.5) * sx - 0.5;
      gx = std::clamp(gx, 0.0, static_cast<double>(wi - 1));
      grid.data[(static_cast<std::size_t>(y) * out_w + x) * 2] = gx;
      grid.data[(static_cast<std::size_t>(y) * out_w + x) * 2 + 1] = gy;
    }
  }
  return grid_sample(input, constant(std::move(grid)));
}

Var reflect_pad(const Var& input, int pad_bottom, int pad_right) {
  const Tensor& in = input->value;
  if (in.rank() != 3) throw ConfigError("reflect_pad input must be C×H×W");
  const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
  if (pad_bottom >= h || pad_right >= w)
    throw ArgumentError("reflect_pad amount must be smaller than the map");
  if (pad_bottom == 0 && pad_right == 0) return input;
  const int ho = h + pad_bottom, wo = w + pad_right;
  auto src_y = [h](int y) { return y < h ? y : 2 * h - 2 - y; };
  auto src_x = [w](int x) { return x < w ? x : 2 * w - 2 - x; };
  Tensor out({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) out.at3(ch, y, x) = in.at3(ch, src_y(y), src_x(x));
  return make_node(std::move(out), {input}, [c, h, w, ho, wo, src_y, src_x](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x)
          p.grad.at3(ch, src_y(y), src_x(x)) += self.grad.at3(ch, y, x);
  });
}

Var crop(const Var& input, int y0, int x0, int h, int w) {
  const Tensor& in = input->value;
  if (in.rank() != 3) throw ConfigError("crop input must be C×H×W");
  const int c = in.shape[0];
  if (y0 < 0 || x0 < 0 || y0 + h > in.shape[1] || x0 + w > in.shape[2])
    throw ArgumentError("crop window exceeds input bounds");
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at3(ch, y, x) = in.at3(ch, y0 + y, x0 + x);
  return make_node(std::move(out), {input}, [c, y0, x0, h, w](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) p.grad.at3(ch, y0 + y, x0 + x) += self.grad.at3(ch, y, x);
  });
}

// ---------------------------------------------------------------------------
// reductions

Var mean_abs_diff(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ArgumentError("mean_abs_diff shape mismatch: " + shape_str(a->value.shape) + " vs " +
                        shape_str(b->value.shape));
  const int n = a->value.numel();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::fabs(a->value[i] - b->value[i]);
  Tensor out = Tensor::scalar(s / n);
  return make_node(std::move(out), {a, b}, [n](Node& self) {
    const double g = self.grad[0] / n;
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
    if (ga) na.ensure_grad();
    if (gb) nb.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double d = na.value[i] - nb.value[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) na.grad[i] += g * sgn;
      if (gb) nb.grad[i] -= g * sgn;
    }
  });
}

Var mean_all(const Var& x) {
  const int n = x->value.numel();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x->value[i];
  return make_node(Tensor::scalar(s / n), {x}, [n](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0] / n;
    for (int i = 0; i < n; ++i) p.grad[i] += g;
  });
}

Var weighted_sum(const Var& x, Tensor weights) {
  if (!x->value.same_shape(weights))
    throw ArgumentError("weighted_sum shape mismatch");
  double s = 0.0;
  for (int i = 0; i < weights.numel(); ++i) s += x->value[i] * weights[i];
  return make_node(Tensor::scalar(s), {x}, [w = std::move(weights)](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0];
    for (int i = 0; i < w.numel(); ++i) p.grad[i] += g * w[i];
  });
}

}  // namespace vf::nn
