#pragma once

// Naive reference implementations used as test oracles. Each one is written
// as plain loops over doubles and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <tuple>
#include <vector>

#include "eyecue/attention.hpp"
#include "eyecue/dataset.hpp"
#include "eyecue/gaze_geometry.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

template <typename M>
Grid to_grid(const M& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) g[r][c] = static_cast<double>(m(r, c));
  }
  return g;
}

/// Patch containing the gaze point, found by scanning every patch's pixel
/// rectangle for the gaze pixel.
inline int patch_by_scan(const eyecue::PatchGrid& grid, eyecue::GazePoint g) {
  int px = static_cast<int>(std::floor(g.x * grid.frame_width));
  int py = static_cast<int>(std::floor(g.y * grid.frame_height));
  px = std::clamp(px, 0, grid.grid_cols * grid.patch_size - 1);
  py = std::clamp(py, 0, grid.grid_rows * grid.patch_size - 1);
  for (int r = 0; r < grid.grid_rows; ++r) {
    for (int c = 0; c < grid.grid_cols; ++c) {
      const int x0 = c * grid.patch_size, y0 = r * grid.patch_size;
      if (px >= x0 && px < x0 + grid.patch_size && py >= y0 && py < y0 + grid.patch_size) return r * grid.grid_cols + c;
    }
  }
  return -1;
}

/// Sorts every patch of the grid by (distance, row, col) and keeps the first h.
inline std::vector<int> nearest_k_scan(const eyecue::PatchGrid& grid, int center, int h) {
  const int cr = center / grid.grid_cols, cc = center % grid.grid_cols;
  std::vector<std::tuple<int, int, int>> all;
  for (int r = 0; r < grid.grid_rows; ++r) {
    for (int c = 0; c < grid.grid_cols; ++c) {
      const int dr = std::abs(r - cr), dc = std::abs(c - cc);
      const int d = h == 5 ? dr + dc : std::max(dr, dc);
      all.emplace_back(d, r, c);
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<int> out;
  for (int i = 0; i < h; ++i) out.push_back(std::get<1>(all[i]) * grid.grid_cols + std::get<2>(all[i]));
  return out;
}

inline Grid matmul(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  }
  return out;
}

inline Grid linear(const Grid& x, const Grid& w, const Grid& bias) {
  Grid out = matmul(x, w);
  for (auto& row : out) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
  }
  return out;
}

inline Grid add(const Grid& a, const Grid& b) {
  Grid out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  }
  return out;
}

inline Grid layer_norm(const Grid& x, const Grid& gain, const Grid& bias) {
  Grid out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * gain[0][j] + bias[0][j];
    }
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Per-head attention probabilities, [head][query][key].
template <typename T>
std::vector<Grid> attention_probs(const Grid& q_in, const Grid& kv_in, const eyecue::ParamStore<T>& p,
                                  const std::string& prefix, int heads) {
  const Grid q = linear(q_in, to_grid(p.get(prefix + ".query.weight")), to_grid(p.get(prefix + ".query.bias")));
  const Grid k = linear(kv_in, to_grid(p.get(prefix + ".key.weight")), to_grid(p.get(prefix + ".key.bias")));
  const std::size_t d = q[0].size(), dh = d / heads;
  std::vector<Grid> probs(heads, Grid(q.size(), std::vector<double>(k.size())));
  for (int h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < k.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[j][c];
        probs[h][i][j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, probs[h][i][j]);
      }
      double z = 0.0;
      for (auto& s : probs[h][i]) z += (s = std::exp(s - mx));
      for (auto& s : probs[h][i]) s /= z;
    }
  }
  return probs;
}

template <typename T>
Grid mha(const Grid& q_in, const Grid& kv_in, const eyecue::ParamStore<T>& p, const std::string& prefix, int heads) {
  const auto probs = attention_probs(q_in, kv_in, p, prefix, heads);
  const Grid v = linear(kv_in, to_grid(p.get(prefix + ".value.weight")), to_grid(p.get(prefix + ".value.bias")));
  const std::size_t d = v[0].size(), dh = d / heads;
  Grid concat(q_in.size(), std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q_in.size(); ++i) {
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        for (std::size_t j = 0; j < v.size(); ++j) concat[i][c] += probs[h][i][j] * v[j][c];
      }
    }
  }
  return linear(concat, to_grid(p.get(prefix + ".out.weight")), to_grid(p.get(prefix + ".out.bias")));
}

template <typename T>
Grid ffn_residual(const Grid& x, const eyecue::ParamStore<T>& p) {
  const Grid n = layer_norm(x, to_grid(p.get("norm_ffn.gain")), to_grid(p.get("norm_ffn.bias")));
  Grid hdn = linear(n, to_grid(p.get("ffn.fc1.weight")), to_grid(p.get("ffn.fc1.bias")));
  for (auto& row : hdn) {
    for (auto& v : row) v = gelu(v);
  }
  return add(x, linear(hdn, to_grid(p.get("ffn.fc2.weight")), to_grid(p.get("ffn.fc2.bias"))));
}

template <typename T>
Grid cross_attention_block(const Grid& q, const Grid& kv, const eyecue::AttentionParams<T>& ap) {
  const auto& p = ap.values;
  const Grid qn = layer_norm(q, to_grid(p.get("norm_q.gain")), to_grid(p.get("norm_q.bias")));
  const Grid kvn = layer_norm(kv, to_grid(p.get("norm_kv.gain")), to_grid(p.get("norm_kv.bias")));
  return ffn_residual(add(q, mha(qn, kvn, p, "attn", ap.heads)), p);
}

template <typename T>
Grid encoder_block(const Grid& x, const eyecue::AttentionParams<T>& ap) {
  const auto& p = ap.values;
  const Grid n = layer_norm(x, to_grid(p.get("norm_q.gain")), to_grid(p.get("norm_q.bias")));
  return ffn_residual(add(x, mha(n, n, p, "attn", ap.heads)), p);
}

/// Density map by visiting every cell for every point.
inline std::vector<double> density_map(const std::vector<eyecue::GazePoint>& pts, int width, int height,
                                       double sigma) {
  std::vector<double> cells(static_cast<std::size_t>(width) * height, 0.0);
  for (const auto& p : pts) {
    const double cx = p.x * width, cy = p.y * height;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 <= 16.0 * sigma * sigma) cells[r * width + c] += std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  double total = 0.0;
  for (double v : cells) total += v;
  if (total > 0.0) {
    for (double& v : cells) v /= total;
  }
  return cells;
}

/// Textbook Pearson correlation.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
