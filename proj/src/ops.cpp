#include "bams/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bams::ops {

namespace {

using D = std::shared_ptr<TensorData>;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  }
}

// Outputs are tracked only while a record is active; forward passes outside
// a Tape (evaluation) allocate no gradient buffers.
bool track_out(const Tensor& a) { return Tape::active() != nullptr && a.tracked(); }
bool track_out(const Tensor& a, const Tensor& b) {
  return Tape::active() != nullptr && (a.tracked() || b.tracked());
}

// Unary pointwise op with dy/dx expressed from (x, y).
template <class Fwd, class Bwd>
Tensor pointwise_unary(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (int64_t i = 0; i < a.size(); ++i) out[i] = fwd(av[i]);
  Tensor y(a.shape(), std::move(out), track_out(a));
  if (y.tracked()) {
    Tape::active()->record(name, {a}, y, [ad = a.data(), yd = y.data(), bwd] {
      const auto& g = yd->grad;
      for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i] * bwd(ad->values[i], yd->values[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor y(a.shape(), std::move(out), track_out(a, b));
  if (y.tracked()) {
    Tape::active()->record("add", {a, b}, y, [ad = a.data(), bd = b.data(), yd = y.data()] {
      const auto& g = yd->grad;
      if (ad->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i];
      if (bd->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bd->grad[i] += g[i];
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor y(a.shape(), std::move(out), track_out(a, b));
  if (y.tracked()) {
    Tape::active()->record("sub", {a, b}, y, [ad = a.data(), bd = b.data(), yd = y.data()] {
      const auto& g = yd->grad;
      if (ad->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i];
      if (bd->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bd->grad[i] -= g[i];
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor y(a.shape(), std::move(out), track_out(a, b));
  if (y.tracked()) {
    Tape::active()->record("mul", {a, b}, y, [ad = a.data(), bd = b.data(), yd = y.data()] {
      const auto& g = yd->grad;
      if (ad->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i] * bd->values[i];
      if (bd->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bd->grad[i] += g[i] * ad->values[i];
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double c) { return affine(a, c, 0.0); }

Tensor affine(const Tensor& a, double c, double d) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = c * a.values()[i] + d;
  Tensor y(a.shape(), std::move(out), track_out(a));
  if (y.tracked()) {
    Tape::active()->record("affine", {a}, y, [ad = a.data(), yd = y.data(), c] {
      const auto& g = yd->grad;
      for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += c * g[i];
    });
  }
  return y;
}

Tensor smul(const Tensor& s, const Tensor& a) {
  if (s.size() != 1) throw DimError("smul: scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.values()[0];
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = sv * a.values()[i];
  Tensor y(a.shape(), std::move(out), track_out(s, a));
  if (y.tracked()) {
    Tape::active()->record("smul", {s, a}, y, [sd = s.data(), ad = a.data(), yd = y.data()] {
      const auto& g = yd->grad;
      if (sd->requires_grad) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * ad->values[i];
        sd->grad[0] += acc;
      }
      if (ad->requires_grad) {
        const double sv = sd->values[0];
        for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += sv * g[i];
      }
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& a) {
  return pointwise_unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return pointwise_unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return pointwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
  return pointwise_unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor y({1}, {acc}, track_out(a));
  if (y.tracked()) {
    Tape::active()->record("sum", {a}, y, [ad = a.data(), yd = y.data()] {
      const double g = yd->grad[0];
      for (auto& gv : ad->grad) gv += g;
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimError("reshape: " + shape_str(a.shape()) + " to incompatible " + shape_str(shape));
  }
  Tensor y(std::move(shape), a.values(), track_out(a));
  if (y.tracked()) {
    Tape::active()->record("reshape", {a}, y, [ad = a.data(), yd = y.data()] {
      for (size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += yd->grad[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimError("concat: no operands");
  int64_t total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 1) throw DimError("concat: operand has shape " + shape_str(p.shape()));
    total += p.size();
    track = track || p.tracked();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor y({static_cast<int>(total)}, std::move(out), Tape::active() != nullptr && track);
  if (y.tracked()) {
    std::vector<D> datas;
    datas.reserve(parts.size());
    for (const Tensor& p : parts) datas.push_back(p.data());
    Tape::active()->record("concat", parts, y, [datas, yd = y.data()] {
      size_t off = 0;
      for (const D& pd : datas) {
        if (pd->requires_grad) {
          pd->grad.resize(pd->values.size(), 0.0);
          for (size_t i = 0; i < pd->values.size(); ++i) pd->grad[i] += yd->grad[off + i];
        }
        off += pd->values.size();
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& a, int64_t offset, int64_t len) {
  if (a.shape().size() != 1) throw DimError("slice: operand has shape " + shape_str(a.shape()));
  if (offset < 0 || len <= 0 || offset + len > a.size()) {
    throw DimError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                   ") out of bounds for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin() + offset, a.values().begin() + offset + len);
  Tensor y({static_cast<int>(len)}, std::move(out), track_out(a));
  if (y.tracked()) {
    Tape::active()->record("slice", {a}, y, [ad = a.data(), yd = y.data(), offset] {
      for (size_t i = 0; i < yd->grad.size(); ++i) ad->grad[offset + i] += yd->grad[i];
    });
  }
  return y;
}

Tensor pick(const Tensor& a, int64_t index) {
  if (a.shape().size() != 1) throw DimError("pick: operand has shape " + shape_str(a.shape()));
  if (index < 0 || index >= a.size()) {
    throw DimError("pick: index " + std::to_string(index) + " out of bounds for " +
                   shape_str(a.shape()));
  }
  Tensor y({1}, {a.values()[index]}, track_out(a));
  if (y.tracked()) {
    Tape::active()->record("pick", {a}, y,
              [ad = a.data(), yd = y.data(), index] { ad->grad[index] += yd->grad[0]; });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  }
  const int p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(p) * r, 0.0);
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (int i = 0; i < p; ++i) {
      const double* arow = A + static_cast<size_t>(i) * q;
      double* crow = out.data() + static_cast<size_t>(i) * r;
      for (int k = 0; k < q; ++k) {
        const double av = arow[k];
        const double* brow = B + static_cast<size_t>(k) * r;
        for (int j = 0; j < r; ++j) crow[j] += av * brow[j];
      }
    }
  }
  Tensor y({p, r}, std::move(out), track_out(a, b));
  if (y.tracked()) {
    Tape::active()->record("matmul", {a, b}, y, [ad = a.data(), bd = b.data(), yd = y.data(), p, q, r] {
      const double* G = yd->grad.data();
      if (ad->requires_grad) {
        // dA[i,k] += sum_j G[i,j] * B[k,j]
        double* dA = ad->grad.data();
        const double* B = bd->values.data();
        for (int i = 0; i < p; ++i) {
          const double* grow = G + static_cast<size_t>(i) * r;
          double* darow = dA + static_cast<size_t>(i) * q;
          for (int k = 0; k < q; ++k) {
            const double* brow = B + static_cast<size_t>(k) * r;
            double acc = 0.0;
            for (int j = 0; j < r; ++j) acc += grow[j] * brow[j];
            darow[k] += acc;
          }
        }
      }
      if (bd->requires_grad) {
        // dB[k,j] += sum_i A[i,k] * G[i,j]
        double* dB = bd->grad.data();
        const double* A = ad->values.data();
        for (int i = 0; i < p; ++i) {
          const double* arow = A + static_cast<size_t>(i) * q;
          const double* grow = G + static_cast<size_t>(i) * r;
          for (int k = 0; k < q; ++k) {
            const double av = arow[k];
            double* dbrow = dB + static_cast<size_t>(k) * r;
            for (int j = 0; j < r; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& logits, double divisor) {
  if (logits.shape().size() != 1 || logits.size() < 1) {
    throw DimError("softmax: want non-empty vector, got " + shape_str(logits.shape()));
  }
  if (!(divisor > 0.0)) throw DimError("softmax: divisor must be positive");
  const int64_t n = logits.size();
  std::vector<double> out(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.values()) mx = std::max(mx, v / divisor);
  double z = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(logits.values()[i] / divisor - mx);
    z += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= z;
  Tensor y(logits.shape(), std::move(out), track_out(logits));
  if (y.tracked()) {
    Tape::active()->record("softmax", {logits}, y, [ad = logits.data(), yd = y.data(), divisor] {
      const auto& g = yd->grad;
      const auto& yv = yd->values;
      double dot = 0.0;
      for (size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
      for (size_t i = 0; i < g.size(); ++i) ad->grad[i] += yv[i] * (g[i] - dot) / divisor;
    });
  }
  return y;
}

namespace {

struct ConvGeom {
  int ci, h, w, co, k, oh, ow, stride, pad;
};

ConvGeom conv_geometry(const char* op, const Tensor& input, const Tensor& kernels, int stride,
                       int padding, bool transpose) {
  if (input.shape().size() != 3 || kernels.shape().size() != 4) {
    throw DimError(std::string(op) + ": want [CxHxW] input and 4-d kernels, got " +
                   shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
  }
  if (stride < 1 || padding < 0) throw DimError(std::string(op) + ": bad stride/padding");
  if (kernels.shape()[2] != kernels.shape()[3]) {
    throw DimError(std::string(op) + ": non-square kernel " + shape_str(kernels.shape()));
  }
  ConvGeom g{};
  g.stride = stride;
  g.pad = padding;
  g.k = kernels.shape()[2];
  g.h = input.shape()[1];
  g.w = input.shape()[2];
  if (!transpose) {
    g.ci = input.shape()[0];
    g.co = kernels.shape()[0];
    if (kernels.shape()[1] != g.ci) {
      throw DimError(std::string(op) + ": kernel input channels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(input.shape()));
    }
    g.oh = (g.h + 2 * padding - g.k) / stride + 1;
    g.ow = (g.w + 2 * padding - g.k) / stride + 1;
    if (g.k > g.h + 2 * padding || g.k > g.w + 2 * padding || g.oh < 1 || g.ow < 1) {
      throw DimError(std::string(op) + ": non-positive output size for input " +
                     shape_str(input.shape()) + ", kernel " + shape_str(kernels.shape()));
    }
  } else {
    g.ci = input.shape()[0];
    g.co = kernels.shape()[1];
    if (kernels.shape()[0] != g.ci) {
      throw DimError(std::string(op) + ": kernel input channels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(input.shape()));
    }
    g.oh = (g.h - 1) * stride - 2 * padding + g.k;
    g.ow = (g.w - 1) * stride - 2 * padding + g.k;
    if (g.oh < 1 || g.ow < 1) {
      throw DimError(std::string(op) + ": non-positive output size for input " +
                     shape_str(input.shape()) + ", kernel " + shape_str(kernels.shape()));
    }
  }
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  const ConvGeom g = conv_geometry("conv2d", input, kernels, stride, padding, false);
  std::vector<double> out(static_cast<size_t>(g.co) * g.oh * g.ow, 0.0);
  const double* X = input.values().data();
  const double* K = kernels.values().data();
  for (int co = 0; co < g.co; ++co) {
    for (int oi = 0; oi < g.oh; ++oi) {
      for (int oj = 0; oj < g.ow; ++oj) {
        double acc = 0.0;
        for (int ci = 0; ci < g.ci; ++ci) {
          const double* xc = X + (static_cast<size_t>(ci) * g.h) * g.w;
          const double* kc = K + ((static_cast<size_t>(co) * g.ci + ci) * g.k) * g.k;
          for (int a = 0; a < g.k; ++a) {
            const int ii = oi * g.stride + a - g.pad;
            if (ii < 0 || ii >= g.h) continue;
            for (int b = 0; b < g.k; ++b) {
              const int jj = oj * g.stride + b - g.pad;
              if (jj < 0 || jj >= g.w) continue;
              acc += xc[ii * g.w + jj] * kc[a * g.k + b];
            }
          }
        }
        out[(static_cast<size_t>(co) * g.oh + oi) * g.ow + oj] = acc;
      }
    }
  }
  Tensor y({g.co, g.oh, g.ow}, std::move(out), track_out(input, kernels));
  if (y.tracked()) {
    Tape::active()->record("conv2d", {input, kernels}, y, [xd = input.data(), kd = kernels.data(),
                                              yd = y.data(), g] {
      const double* G = yd->grad.data();
      const double* X = xd->values.data();
      const double* K = kd->values.data();
      double* dX = xd->requires_grad ? xd->grad.data() : nullptr;
      double* dK = kd->requires_grad ? kd->grad.data() : nullptr;
      for (int co = 0; co < g.co; ++co) {
        for (int oi = 0; oi < g.oh; ++oi) {
          for (int oj = 0; oj < g.ow; ++oj) {
            const double gy = G[(static_cast<size_t>(co) * g.oh + oi) * g.ow + oj];
            if (gy == 0.0) continue;
            for (int ci = 0; ci < g.ci; ++ci) {
              const size_t xoff = static_cast<size_t>(ci) * g.h * g.w;
              const size_t koff = (static_cast<size_t>(co) * g.ci + ci) * g.k * g.k;
              for (int a = 0; a < g.k; ++a) {
                const int ii = oi * g.stride + a - g.pad;
                if (ii < 0 || ii >= g.h) continue;
                for (int b = 0; b < g.k; ++b) {
                  const int jj = oj * g.stride + b - g.pad;
                  if (jj < 0 || jj >= g.w) continue;
                  if (dX) dX[xoff + ii * g.w + jj] += gy * K[koff + a * g.k + b];
                  if (dK) dK[koff + a * g.k + b] += gy * X[xoff + ii * g.w + jj];
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  const ConvGeom g = conv_geometry("conv_transpose2d", input, kernels, stride, padding, true);
  std::vector<double> out(static_cast<size_t>(g.co) * g.oh * g.ow, 0.0);
  const double* Z = input.values().data();
  const double* K = kernels.values().data();
  for (int ci = 0; ci < g.ci; ++ci) {
    for (int i = 0; i < g.h; ++i) {
      for (int j = 0; j < g.w; ++j) {
        const double zv = Z[(static_cast<size_t>(ci) * g.h + i) * g.w + j];
        if (zv == 0.0) continue;
        for (int co = 0; co < g.co; ++co) {
          const size_t koff = (static_cast<size_t>(ci) * g.co + co) * g.k * g.k;
          const size_t ooff = static_cast<size_t>(co) * g.oh * g.ow;
          for (int a = 0; a < g.k; ++a) {
            const int u = i * g.stride + a - g.pad;
            if (u < 0 || u >= g.oh) continue;
            for (int b = 0; b < g.k; ++b) {
              const int v = j * g.stride + b - g.pad;
              if (v < 0 || v >= g.ow) continue;
              out[ooff + u * g.ow + v] += zv * K[koff + a * g.k + b];
            }
          }
        }
      }
    }
  }
  Tensor y({g.co, g.oh, g.ow}, std::move(out), track_out(input, kernels));
  if (y.tracked()) {
    Tape::active()->record("conv_transpose2d", {input, kernels}, y, [zd = input.data(), kd = kernels.data(),
                                                        yd = y.data(), g] {
      const double* G = yd->grad.data();
      const double* Z = zd->values.data();
      const double* K = kd->values.data();
      double* dZ = zd->requires_grad ? zd->grad.data() : nullptr;
      double* dK = kd->requires_grad ? kd->grad.data() : nullptr;
      for (int ci = 0; ci < g.ci; ++ci) {
        for (int i = 0; i < g.h; ++i) {
          for (int j = 0; j < g.w; ++j) {
            const size_t zoff = (static_cast<size_t>(ci) * g.h + i) * g.w + j;
            for (int co = 0; co < g.co; ++co) {
              const size_t koff = (static_cast<size_t>(ci) * g.co + co) * g.k * g.k;
              const size_t ooff = static_cast<size_t>(co) * g.oh * g.ow;
              for (int a = 0; a < g.k; ++a) {
                const int u = i * g.stride + a - g.pad;
                if (u < 0 || u >= g.oh) continue;
                for (int b = 0; b < g.k; ++b) {
                  const int v = j * g.stride + b - g.pad;
                  if (v < 0 || v >= g.ow) continue;
                  const double go = G[ooff + u * g.ow + v];
                  if (dZ) dZ[zoff] += go * K[koff + a * g.k + b];
                  if (dK) dK[koff + a * g.k + b] += go * Z[zoff];
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor bias_add_channel(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 3 || b.shape().size() != 1 || b.shape()[0] != x.shape()[0]) {
    throw DimError("bias_add_channel: shapes " + shape_str(x.shape()) + " and " +
                   shape_str(b.shape()));
  }
  const int c = x.shape()[0];
  const int64_t hw = static_cast<int64_t>(x.shape()[1]) * x.shape()[2];
  std::vector<double> out(x.size());
  for (int ch = 0; ch < c; ++ch) {
    const double bv = b.values()[ch];
    for (int64_t i = 0; i < hw; ++i) out[ch * hw + i] = x.values()[ch * hw + i] + bv;
  }
  Tensor y(x.shape(), std::move(out), track_out(x, b));
  if (y.tracked()) {
    Tape::active()->record("bias_add_channel", {x, b}, y, [xd = x.data(), bd = b.data(), yd = y.data(), c, hw] {
      const auto& g = yd->grad;
      if (xd->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) xd->grad[i] += g[i];
      if (bd->requires_grad) {
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i) acc += g[ch * hw + i];
          bd->grad[ch] += acc;
        }
      }
    });
  }
  return y;
}

}  // namespace bams::ops
