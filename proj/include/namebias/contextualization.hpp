#pragma once

// Per-layer contextualization of name embeddings.
//
// Cosine: mean pairwise cosine over the n^2 - n ordered pairs of a group's
// per-name vectors (each name's vectors averaged over its instances).
// Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centered
// matrices. For the profile each name contributes a template-aligned matrix
// (rows = templates), so pairs of names are compared on the same inputs.
// Layers are never compared with each other.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "namebias/bridge.hpp"
#include "namebias/common.hpp"

namespace namebias {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error("cosine of a zero vector is undefined");
  return a.dot(b) / (na * nb);
}

// Rows are name vectors.
inline double cosine_self_similarity(const Matrix& rows) {
  const auto n = rows.rows();
  if (n < 2) throw Error("cosine self-similarity needs at least 2 rows");
  Matrix unit = rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = rows.row(i).norm();
    if (norm == 0.0) throw Error("cosine self-similarity: row " + std::to_string(i) + " is a zero vector");
    unit.row(i) /= norm;
  }
  const Matrix g = unit * unit.transpose();
  // Off-diagonal sum covers every ordered pair i != j.
  const double off = g.sum() - g.trace();
  return off / static_cast<double>(n * n - n);
}

// Mean cosine over all (a_i, b_j) pairs.
inline double mean_cross_cosine(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("cross cosine needs non-empty groups");
  if (a.cols() != b.cols()) throw Error("cross cosine: dimension mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) sum += cosine(a.row(i).transpose(), b.row(j).transpose());
  return sum / static_cast<double>(a.rows() * b.rows());
}

inline Matrix center_columns(const Matrix& x) { return x.rowwise() - x.colwise().mean(); }

inline double linear_cka(const Matrix& x, const Matrix& y, bool center = true) {
  if (x.rows() != y.rows()) throw Error("linear_cka: row counts differ");
  if (x.rows() < 2) throw Error("linear_cka: need at least 2 rows");
  const Matrix xc = center ? center_columns(x) : x;
  const Matrix yc = center ? center_columns(y) : y;
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0) throw Error("linear_cka: matrix is all zero after centering");
  return (yc.transpose() * xc).squaredNorm() / (xx * yy);
}

// ---------------------------------------------------------------------------
// Profiles

// One name's embeddings: per layer, a (templates x d) matrix whose rows are
// aligned with the group's template order.
struct NameEmbeddings {
  std::string name;
  std::vector<Matrix> layers;
};

struct EmbeddingGroup {
  std::string label;
  std::vector<std::string> template_ids;
  std::vector<NameEmbeddings> names;
};

struct ProfileRow {
  std::size_t layer = 0;
  std::string metric;  // "cosine", "cka" (centered) or "cka_raw"
  double self_most = 0.0;
  double self_least = 0.0;
  double inter = 0.0;
};

namespace detail {

inline Matrix pooled_rows(const EmbeddingGroup& g, std::size_t layer) {
  const auto d = g.names.front().layers[layer].cols();
  Matrix m(static_cast<Eigen::Index>(g.names.size()), d);
  for (std::size_t i = 0; i < g.names.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = g.names[i].layers[layer].colwise().mean();
  return m;
}

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

// CKA through Gram matrices: pair (i, j) costs one Frobenius inner product.
struct GramSet {
  std::vector<Matrix> grams;
  std::vector<double> norms;
};

inline GramSet grams(const EmbeddingGroup& g, std::size_t layer, bool center) {
  GramSet s;
  for (const auto& n : g.names) {
    const Matrix x = center ? center_columns(n.layers[layer]) : n.layers[layer];
    s.grams.push_back(x * x.transpose());
    s.norms.push_back(s.grams.back().norm());
  }
  return s;
}

inline double mean_pair_cka(const GramSet& a, const GramSet& b, bool same_group) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < a.grams.size(); ++i)
    for (std::size_t j = 0; j < b.grams.size(); ++j) {
      if (same_group && i == j) continue;
      if (a.norms[i] == 0.0 || b.norms[j] == 0.0) return nan();
      sum += (a.grams[i].cwiseProduct(b.grams[j])).sum() / (a.norms[i] * b.norms[j]);
      ++pairs;
    }
  return pairs ? sum / static_cast<double>(pairs) : nan();
}

}  // namespace detail

// One row per (layer, metric). Undefined cells (zero vectors, constant
// matrices, fewer than 2 templates) hold NaN.
inline std::vector<ProfileRow> similarity_profile(const EmbeddingGroup& most, const EmbeddingGroup& least) {
  if (most.names.size() < 2 || least.names.size() < 2) throw Error("similarity_profile: each group needs 2+ names");
  const auto layers = most.names.front().layers.size();
  for (const auto* g : {&most, &least})
    for (const auto& n : g->names)
      if (n.layers.size() != layers)
        throw Error("similarity_profile: layer-count mismatch for `" + n.name + "` in " + g->label);
  if (most.template_ids != least.template_ids) throw Error("similarity_profile: groups cover different templates");

  std::vector<ProfileRow> rows;
  for (std::size_t l = 0; l < layers; ++l) {
    ProfileRow cos{l, "cosine", detail::nan(), detail::nan(), detail::nan()};
    const Matrix pm = detail::pooled_rows(most, l), pl = detail::pooled_rows(least, l);
    try {
      cos.self_most = cosine_self_similarity(pm);
    } catch (const Error&) {}
    try {
      cos.self_least = cosine_self_similarity(pl);
    } catch (const Error&) {}
    try {
      cos.inter = mean_cross_cosine(pm, pl);
    } catch (const Error&) {}
    rows.push_back(cos);

    for (bool center : {true, false}) {
      ProfileRow cka{l, center ? "cka" : "cka_raw", detail::nan(), detail::nan(), detail::nan()};
      if (most.template_ids.size() >= 2) {
        const auto gm = detail::grams(most, l, center), gl = detail::grams(least, l, center);
        cka.self_most = detail::mean_pair_cka(gm, gm, true);
        cka.self_least = detail::mean_pair_cka(gl, gl, true);
        cka.inter = detail::mean_pair_cka(gm, gl, false);
      }
      rows.push_back(cka);
    }
  }
  return rows;
}

// Builds a group from embedding bundles. `instances` maps bundle ids to
// (template, name); several bundles for one (template, name) are averaged.
// Only templates covered for every listed name are kept.
inline EmbeddingGroup build_embedding_group(std::string label, std::span<const std::string> names,
                                            std::span<const Instance> instances,
                                            std::span<const EmbeddingBundle> bundles) {
  std::map<std::string, const Instance*> by_id;
  for (const auto& i : instances) by_id.emplace(i.id, &i);
  // name -> template -> (sum per layer, count)
  std::map<std::string, std::map<std::string, std::pair<std::vector<Vector>, int>>> acc;
  for (const auto& b : bundles) {
    auto it = by_id.find(b.instance_id);
    if (it == by_id.end()) continue;
    auto& slot = acc[it->second->name][it->second->template_id];
    if (slot.first.empty())
      for (const auto& v : b.layers) slot.first.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    else
      for (std::size_t l = 0; l < b.layers.size(); ++l)
        slot.first[l] += Eigen::Map<const Vector>(b.layers[l].data(), static_cast<Eigen::Index>(b.layers[l].size()));
    ++slot.second;
  }
  EmbeddingGroup g;
  g.label = std::move(label);
  std::map<std::string, std::size_t> coverage;
  std::size_t present = 0;
  for (const auto& name : names) {
    auto it = acc.find(name);
    if (it == acc.end()) continue;
    ++present;
    for (const auto& [tid, _] : it->second) ++coverage[tid];
  }
  for (const auto& [tid, count] : coverage)
    if (count == present) g.template_ids.push_back(tid);
  for (const auto& name : names) {
    auto it = acc.find(name);
    if (it == acc.end() || g.template_ids.empty()) continue;
    NameEmbeddings ne{name, {}};
    const auto& first = it->second.at(g.template_ids.front()).first;
    for (std::size_t l = 0; l < first.size(); ++l) {
      Matrix m(static_cast<Eigen::Index>(g.template_ids.size()), first[l].size());
      for (std::size_t r = 0; r < g.template_ids.size(); ++r) {
        const auto& [sum, count] = it->second.at(g.template_ids[r]);
        m.row(static_cast<Eigen::Index>(r)) = sum[l].transpose() / static_cast<double>(count);
      }
      ne.layers.push_back(std::move(m));
    }
    g.names.push_back(std::move(ne));
  }
  return g;
}

// Restricts two groups to their common templates.
inline void align_templates(EmbeddingGroup& a, EmbeddingGroup& b) {
  std::vector<std::string> common;
  std::set_intersection(a.template_ids.begin(), a.template_ids.end(), b.template_ids.begin(), b.template_ids.end(),
                        std::back_inserter(common));
  for (auto* g : {&a, &b}) {
    if (g->template_ids == common) continue;
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < g->template_ids.size(); ++i)
      if (std::binary_search(common.begin(), common.end(), g->template_ids[i])) keep.push_back(static_cast<Eigen::Index>(i));
    for (auto& n : g->names)
      for (auto& m : n.layers) {
        Matrix sub(static_cast<Eigen::Index>(keep.size()), m.cols());
        for (std::size_t r = 0; r < keep.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = m.row(keep[r]);
        m = std::move(sub);
      }
    g->template_ids = common;
  }
}

}  // namespace namebias
