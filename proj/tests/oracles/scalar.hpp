#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace oracle {

/// Dense N x C x H x W array of doubles, filled from a tensor once and then
/// only touched through plain loops.
struct Grid {
  int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int64_t n_, int64_t c_, int64_t h_, int64_t w_) : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_ * c_ * h_ * w_), 0.0) {}

  static Grid from(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kDouble).contiguous();
    while (d.dim() < 4) d = d.unsqueeze(0);
    Grid g(d.size(0), d.size(1), d.size(2), d.size(3));
    const double* p = d.data_ptr<double>();
    g.v.assign(p, p + d.numel());
    return g;
  }

  double& at(int64_t i, int64_t ch, int64_t y, int64_t x) {
    return v[static_cast<size_t>(((i * c + ch) * h + y) * w + x)];
  }
  double at(int64_t i, int64_t ch, int64_t y, int64_t x) const {
    return v[static_cast<size_t>(((i * c + ch) * h + y) * w + x)];
  }
  size_t size() const { return v.size(); }
};

/// Element of `m` matching (i, ch, y, x) of a larger grid, broadcasting
/// singleton dimensions.
inline double broadcast_at(const Grid& m, int64_t i, int64_t ch, int64_t y, int64_t x) {
  return m.at(m.n == 1 ? 0 : i, m.c == 1 ? 0 : ch, m.h == 1 ? 0 : y, m.w == 1 ? 0 : x);
}

}  // namespace oracle
