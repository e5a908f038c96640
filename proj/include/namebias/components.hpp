#pragma once

// Neuron-activation components.
//
// The per-layer feed-forward activations of one input (L x h x n) are
// stacked into an (L*h) x n matrix, factorized as V ~ W H with non-negative
// factors, and each token is assigned the component with the largest weight
// in its column of H.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "namebias/bridge.hpp"
#include "namebias/common.hpp"

namespace namebias {

using Matrix = Eigen::MatrixXd;

enum class NegativeHandling { Clamp, Shift };

struct NmfConfig {
  std::size_t k = 8;
  std::size_t max_iter = 200;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  double epsilon = 1e-12;
  // Multiplies the uniform(0,1) initial factors.
  double init_scale = 1.0;
};

struct NmfResult {
  Matrix W;
  Matrix H;
  double error = 0.0;
  std::size_t iterations = 0;
  // ||V - WH||_F before the first update and after every iteration.
  std::vector<double> objective;
};

// Rows are layer * h + unit, columns are tokens.
inline Matrix stack_activations(const ActivationBundle& b, NegativeHandling neg = NegativeHandling::Clamp) {
  b.check_shape();
  const auto n = b.tokens.size();
  Matrix v(static_cast<Eigen::Index>(b.layers * b.hidden), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < b.layers * b.hidden; ++r)
    for (std::size_t t = 0; t < n; ++t) v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = b.data[r * n + t];
  if (neg == NegativeHandling::Clamp) {
    v = v.cwiseMax(0.0);
  } else {
    const double lo = v.minCoeff();
    if (lo < 0.0) v.array() -= lo;
  }
  return v;
}

namespace detail {

// splitmix64 stream mapped to [0, 1) with 53 bits; identical on every platform.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : state_(seed) {}

  double next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace detail

// Multiplicative updates on the Frobenius objective:
//   H <- H .* (W^T V) ./ (W^T W H + eps)
//   W <- W .* (V H^T) ./ (W H H^T + eps)
// Stops after max_iter iterations or once the relative decrease of the
// objective falls below tol.
inline NmfResult nmf(const Matrix& v, const NmfConfig& cfg) {
  const auto m = static_cast<std::size_t>(v.rows()), n = static_cast<std::size_t>(v.cols());
  if (cfg.k < 1) throw Error("nmf: k must be at least 1");
  if (cfg.k > std::min(m, n))
    throw Error("nmf: k = " + std::to_string(cfg.k) + " exceeds min(rows, cols) = " + std::to_string(std::min(m, n)));
  if (!v.allFinite()) throw Error("nmf: input has non-finite entries");
  if ((v.array() < 0.0).any()) throw Error("nmf: input has negative entries");

  const auto k = static_cast<Eigen::Index>(cfg.k);
  NmfResult r;
  r.W.resize(v.rows(), k);
  r.H.resize(k, v.cols());
  detail::UniformStream rng(cfg.seed);
  for (Eigen::Index i = 0; i < r.W.rows(); ++i)
    for (Eigen::Index j = 0; j < k; ++j) r.W(i, j) = rng.next() * cfg.init_scale;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < r.H.cols(); ++j) r.H(i, j) = rng.next() * cfg.init_scale;

  double prev = (v - r.W * r.H).norm();
  r.objective.push_back(prev);
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    r.H.array() *= (r.W.transpose() * v).array() / (((r.W.transpose() * r.W) * r.H).array() + cfg.epsilon);
    r.W.array() *= (v * r.H.transpose()).array() / ((r.W * (r.H * r.H.transpose())).array() + cfg.epsilon);
    const double cur = (v - r.W * r.H).norm();
    r.objective.push_back(cur);
    r.iterations = it;
    const bool converged = cur == 0.0 || prev == 0.0 || (prev - cur) / prev < cfg.tol;
    prev = cur;
    if (converged) break;
  }
  r.error = prev;
  return r;
}

// Reorders components by the stacked unit that loads most on them (argmax
// over each column of W), so inputs sharing neuron groups share component
// indices. Ties keep the original order.
inline void order_components_by_unit(NmfResult& r) {
  const auto k = r.W.cols();
  std::vector<Eigen::Index> dominant(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) r.W.col(c).maxCoeff(&dominant[static_cast<std::size_t>(c)]);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](auto a, auto b) {
    return dominant[static_cast<std::size_t>(a)] < dominant[static_cast<std::size_t>(b)];
  });
  Matrix w(r.W.rows(), k), h(k, r.H.cols());
  for (Eigen::Index c = 0; c < k; ++c) {
    w.col(c) = r.W.col(perm[static_cast<std::size_t>(c)]);
    h.row(c) = r.H.row(perm[static_cast<std::size_t>(c)]);
  }
  r.W = std::move(w);
  r.H = std::move(h);
}

struct ComponentMap {
  std::string instance_id;
  std::vector<std::string> tokens;
  Matrix M;
  std::vector<std::size_t> assignment;
  double reconstruction_error = 0.0;
};

// Per-token argmax over the rows of H; ties go to the lowest row.
inline ComponentMap assign_components(const Matrix& h, std::span<const std::string> tokens) {
  if (static_cast<std::size_t>(h.cols()) != tokens.size())
    throw Error("assign_components: " + std::to_string(tokens.size()) + " tokens for " + std::to_string(h.cols()) +
                " columns");
  ComponentMap map;
  map.tokens.assign(tokens.begin(), tokens.end());
  map.M = h;
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < h.rows(); ++i)
      if (h(i, j) > h(best, j)) best = i;
    map.assignment.push_back(static_cast<std::size_t>(best));
  }
  return map;
}

// Full pipeline for one input.
inline ComponentMap analyze_activations(const ActivationBundle& b, const NmfConfig& cfg,
                                        NegativeHandling neg = NegativeHandling::Clamp) {
  const Matrix v = stack_activations(b, neg);
  NmfConfig c = cfg;
  c.k = std::min<std::size_t>(cfg.k, static_cast<std::size_t>(std::min(v.rows(), v.cols())));
  auto r = nmf(v, c);
  order_components_by_unit(r);
  auto map = assign_components(r.H, b.tokens);
  map.instance_id = b.instance_id;
  map.reconstruction_error = r.error;
  return map;
}

// ---------------------------------------------------------------------------
// Rendering

enum class RenderFormat { Html, Ansi, Json };

struct Rgb {
  std::uint8_t r, g, b;
};

// Colours of the neuron-activation figure, in component order.
inline constexpr std::array<Rgb, 8> kPalette = {{{102, 197, 204},
                                                 {135, 197, 95},
                                                 {248, 156, 116},
                                                 {246, 207, 113},
                                                 {201, 219, 116},
                                                 {158, 185, 243},
                                                 {254, 136, 177},
                                                 {139, 224, 164}}};

inline std::string hex_color(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02X%02X%02X", c.r, c.g, c.b);
  return buf;
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Rendered {
  std::string document;
  std::vector<std::string> warnings;
};

inline nlohmann::json assignment_json(const ComponentMap& map) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < map.tokens.size(); ++i)
    arr.push_back({{"token", map.tokens[i]}, {"component", map.assignment[i]}});
  return arr;
}

inline std::vector<std::size_t> assignment_from_json(const nlohmann::json& arr) {
  std::vector<std::size_t> out;
  for (const auto& e : arr) out.push_back(e.at("component").get<std::size_t>());
  return out;
}

// A single map renders to the bare token array in JSON; several maps render
// to one document (HTML paragraph or ANSI line per input).
inline Rendered render_components(std::span<const ComponentMap> maps, RenderFormat format) {
  Rendered out;
  std::size_t max_component = 0;
  for (const auto& m : maps)
    for (auto a : m.assignment) max_component = std::max(max_component, a);
  if (!maps.empty() && max_component >= kPalette.size())
    out.warnings.push_back("component count " + std::to_string(max_component + 1) + " exceeds the " +
                           std::to_string(kPalette.size()) + "-colour palette; colours repeat");
  auto color = [](std::size_t c) { return kPalette[c % kPalette.size()]; };

  switch (format) {
    case RenderFormat::Json: {
      if (maps.size() == 1) {
        out.document = assignment_json(maps.front()).dump() + "\n";
      } else {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& m : maps) doc.push_back({{"instance_id", m.instance_id}, {"tokens", assignment_json(m)}});
        out.document = doc.dump(1) + "\n";
      }
      break;
    }
    case RenderFormat::Html: {
      std::string& d = out.document;
      d += "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>Neuron components</title></head>\n<body>\n";
      for (const auto& m : maps) {
        d += "<p title=\"" + html_escape(m.instance_id) + "\">";
        for (std::size_t i = 0; i < m.tokens.size(); ++i) {
          if (i) d += ' ';
          d += "<span style=\"background:" + hex_color(color(m.assignment[i])) + "\">" + html_escape(m.tokens[i]) +
               "</span>";
        }
        d += "</p>\n";
      }
      d += "</body>\n</html>\n";
      break;
    }
    case RenderFormat::Ansi: {
      for (const auto& m : maps) {
        for (std::size_t i = 0; i < m.tokens.size(); ++i) {
          const auto c = color(m.assignment[i]);
          if (i) out.document += ' ';
          out.document += "\x1b[48;2;" + std::to_string(c.r) + ";" + std::to_string(c.g) + ";" + std::to_string(c.b) +
                          "m" + m.tokens[i] + "\x1b[0m";
        }
        out.document += "\n";
      }
      break;
    }
  }
  return out;
}

inline Rendered render_components(const ComponentMap& map, RenderFormat format) {
  return render_components(std::span<const ComponentMap>(&map, 1), format);
}

}  // namespace namebias
