#pragma once

// Model bridge: the contract between the audit and an external model.
//
// Models are reached through a line-delimited JSON protocol (see
// protocol.hpp) or, for tests and dry runs, through the in-process stub
// catalogue defined here. Every batch call returns one record per instance
// or a failure entry naming the instance id.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "namebias/census.hpp"
#include "namebias/common.hpp"
#include "namebias/templates.hpp"

namespace namebias {

enum class Capability { Predict, Embed, Activations };

inline std::string_view to_string(Capability c) noexcept {
  switch (c) {
    case Capability::Predict: return "predict";
    case Capability::Embed: return "embed";
    case Capability::Activations: return "activations";
  }
  return "?";
}

inline std::optional<Capability> parse_capability(std::string_view s) noexcept {
  for (auto c : {Capability::Predict, Capability::Embed, Capability::Activations})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

enum class EndpointKind { Subprocess, FileBatch, Stub };

struct EndpointInfo {
  EndpointKind kind = EndpointKind::Stub;
  std::string address;
  std::string checkpoint_tag;
  std::set<Capability> capabilities;
  // Declared by the handshake; 0 when unknown.
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::string hook;

  bool can(Capability c) const { return capabilities.contains(c); }
};

struct PredictionRecord {
  std::string instance_id;
  int choice = 0;
  std::optional<std::array<double, 3>> scores;
  std::string checkpoint_tag;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct EmbeddingBundle {
  std::string instance_id;
  std::string name;
  std::vector<std::vector<double>> layers;

  friend bool operator==(const EmbeddingBundle&, const EmbeddingBundle&) = default;
};

// Row-major (layer, unit, token).
struct ActivationBundle {
  std::string instance_id;
  std::vector<std::string> tokens;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::vector<double> data;

  double at(std::size_t layer, std::size_t unit, std::size_t token) const {
    return data[(layer * hidden + unit) * tokens.size() + token];
  }

  void check_shape() const {
    if (tokens.empty()) throw Error("activation bundle `" + instance_id + "` has no tokens");
    if (data.size() != layers * hidden * tokens.size())
      throw Error("activation bundle `" + instance_id + "`: header says " + std::to_string(layers) + "x" +
                  std::to_string(hidden) + "x" + std::to_string(tokens.size()) + " but payload holds " +
                  std::to_string(data.size()) + " values");
  }

  friend bool operator==(const ActivationBundle&, const ActivationBundle&) = default;
};

struct RequestFailure {
  std::string id;
  std::string message;
};

template <typename Record>
struct BatchResult {
  std::vector<Record> records;
  std::vector<RequestFailure> failures;

  bool complete() const noexcept { return failures.empty(); }
};

// Lowest index wins ties.
inline int argmax3(const std::array<double, 3>& s) noexcept {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(best)]) best = i;
  return best;
}

class ModelEndpoint {
 public:
  virtual ~ModelEndpoint() = default;

  virtual const EndpointInfo& info() const = 0;
  virtual BatchResult<PredictionRecord> predict(std::span<const Instance> instances) = 0;
  virtual BatchResult<EmbeddingBundle> embed(std::span<const Instance> instances) = 0;
  virtual BatchResult<ActivationBundle> activations(std::span<const Instance> instances) = 0;
};

// ---------------------------------------------------------------------------
// Capability-checked entry points

namespace detail {

inline void require(const ModelEndpoint& ep, Capability c) {
  if (!ep.info().can(c))
    throw Error("endpoint `" + ep.info().address + "` (" + ep.info().checkpoint_tag + ") lacks the " +
                std::string(to_string(c)) + " capability");
}

template <typename Record>
void finish(BatchResult<Record>& r, std::span<const Instance> instances) {
  std::sort(r.records.begin(), r.records.end(),
            [](const Record& a, const Record& b) { return a.instance_id < b.instance_id; });
  std::sort(r.failures.begin(), r.failures.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (r.records.size() + r.failures.size() != instances.size())
    throw Error("bridge returned " + std::to_string(r.records.size()) + " records and " +
                std::to_string(r.failures.size()) + " failures for " + std::to_string(instances.size()) +
                " instances");
}

}  // namespace detail

inline BatchResult<PredictionRecord> predict_batch(ModelEndpoint& ep, std::span<const Instance> instances) {
  detail::require(ep, Capability::Predict);
  if (instances.empty()) throw Error("predict_batch: no instances");
  auto r = ep.predict(instances);
  for (auto& rec : r.records) {
    if (rec.checkpoint_tag.empty()) rec.checkpoint_tag = ep.info().checkpoint_tag;
  }
  detail::finish(r, instances);
  return r;
}

inline BatchResult<EmbeddingBundle> embed_names(ModelEndpoint& ep, std::span<const Instance> instances) {
  detail::require(ep, Capability::Embed);
  if (instances.empty()) throw Error("embed_names: no instances");
  auto r = ep.embed(instances);
  detail::finish(r, instances);
  return r;
}

inline BatchResult<ActivationBundle> fetch_activations(ModelEndpoint& ep, std::span<const Instance> instances) {
  detail::require(ep, Capability::Activations);
  if (instances.empty()) throw Error("fetch_activations: no instances");
  auto r = ep.activations(instances);
  detail::finish(r, instances);
  return r;
}

inline ActivationBundle fetch_activations(ModelEndpoint& ep, const Instance& instance) {
  auto r = fetch_activations(ep, std::span<const Instance>(&instance, 1));
  if (!r.failures.empty()) throw Error("activations for `" + instance.id + "`: " + r.failures.front().message);
  return std::move(r.records.front());
}

// ---------------------------------------------------------------------------
// Prediction records on disk (JSONL)

inline nlohmann::json to_json(const PredictionRecord& p) {
  nlohmann::json j{{"instance_id", p.instance_id}, {"choice", p.choice}, {"checkpoint", p.checkpoint_tag}};
  if (p.scores) j["scores"] = *p.scores;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.choice = j.at("choice").get<int>();
  p.checkpoint_tag = j.value("checkpoint", "");
  if (j.contains("scores")) p.scores = j.at("scores").get<std::array<double, 3>>();
  return p;
}

inline std::string dump_predictions_jsonl(std::span<const PredictionRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<PredictionRecord> load_predictions_jsonl(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  std::size_t line_no = 0;
  const auto content = read_file(path);
  for (auto line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stub catalogue
//
// Predict:      oracle, const0, hash, biased(F), flip-female
// Embed:        unit-embed, histogram, basis
// Activations:  ramp, tokenhash
//
// Stubs combine with '+', e.g. "biased(MOST)+unit-embed+ramp". biased(F)
// takes a comma-separated name list or an intervention-set label that the
// caller resolves.

namespace stub {

// Bytes hashed by the `hash` stub: question and candidates joined by '\n'.
inline std::string hash_input(std::string_view question, std::span<const std::string> candidates) {
  std::string text(question);
  for (const auto& c : candidates) text.append("\n").append(c);
  return text;
}

inline int hash_choice(std::string_view question, std::span<const std::string> candidates) {
  return static_cast<int>(fnv1a64(hash_input(question, candidates)) % 3);
}

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\n') ++j;
    if (j > i) tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

inline constexpr std::size_t kUnitEmbedLayers = 4;
inline constexpr std::size_t kUnitEmbedDim = 8;
inline constexpr std::size_t kHistogramLayers = 2;
inline constexpr std::size_t kBasisDim = 8;
inline constexpr std::size_t kRampLayers = 2;
inline constexpr std::size_t kRampHidden = 3;
inline constexpr std::size_t kTokenHashLayers = 2;
inline constexpr std::size_t kTokenHashGroups = 4;
inline constexpr std::size_t kTokenHashUnitsPerGroup = 2;

inline std::vector<std::vector<double>> byte_histogram_layers(std::string_view name) {
  std::vector<double> hist(256, 0.0);
  for (unsigned char c : name) hist[c] += 1.0;
  return std::vector<std::vector<double>>(kHistogramLayers, hist);
}

inline ActivationBundle ramp_activations(std::string id, std::vector<std::string> tokens) {
  ActivationBundle b{std::move(id), std::move(tokens), kRampLayers, kRampHidden, {}};
  const auto n = b.tokens.size();
  b.data.resize(b.layers * b.hidden * n);
  for (std::size_t l = 0; l < b.layers; ++l)
    for (std::size_t u = 0; u < b.hidden; ++u)
      for (std::size_t t = 0; t < n; ++t) b.data[(l * b.hidden + u) * n + t] = static_cast<double>(l + u + t);
  return b;
}

// Each token fires one group of units chosen by its hash; position plays no
// role, so a token shared by two inputs has identical activations in both.
inline ActivationBundle tokenhash_activations(std::string id, std::vector<std::string> tokens) {
  const std::size_t hidden = kTokenHashGroups * kTokenHashUnitsPerGroup;
  ActivationBundle b{std::move(id), std::move(tokens), kTokenHashLayers, hidden, {}};
  const auto n = b.tokens.size();
  b.data.assign(b.layers * hidden * n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto group = fnv1a64(b.tokens[t]) % kTokenHashGroups;
    for (std::size_t l = 0; l < b.layers; ++l)
      for (std::size_t u = 0; u < kTokenHashUnitsPerGroup; ++u)
        b.data[(l * hidden + group * kTokenHashUnitsPerGroup + u) * n + t] = 1.0 + 0.5 * static_cast<double>(l + u);
  }
  return b;
}

enum class PredictKind { None, Oracle, Const0, Hash, Biased, FlipFemale };
enum class EmbedKind { None, UnitEmbed, Histogram, Basis };
enum class ActivationKind { None, Ramp, TokenHash };

// Maps an intervention-set label used inside biased(...) to its names.
using SetResolver = std::function<std::optional<std::vector<std::string>>(std::string_view)>;

class StubEndpoint final : public ModelEndpoint {
 public:
  StubEndpoint(std::string spec, std::string checkpoint_tag, const SetResolver& resolve = {}) {
    info_.kind = EndpointKind::Stub;
    info_.address = spec;
    info_.checkpoint_tag = std::move(checkpoint_tag);
    info_.hook = "stub";
    for (const auto& part : split(spec, '+')) configure(std::string(trim(part)), resolve);
    if (info_.capabilities.empty()) throw Error("stub spec `" + spec + "` names no stub");
  }

  const EndpointInfo& info() const override { return info_; }

  BatchResult<PredictionRecord> predict(std::span<const Instance> instances) override {
    BatchResult<PredictionRecord> r;
    for (const auto& inst : instances) r.records.push_back({inst.id, choose(inst), std::nullopt, info_.checkpoint_tag});
    return r;
  }

  BatchResult<EmbeddingBundle> embed(std::span<const Instance> instances) override {
    BatchResult<EmbeddingBundle> r;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& inst = instances[i];
      EmbeddingBundle b{inst.id, inst.name, {}};
      switch (embed_) {
        case EmbedKind::UnitEmbed:
          b.layers.assign(kUnitEmbedLayers, std::vector<double>(kUnitEmbedDim, 1.0));
          break;
        case EmbedKind::Histogram:
          b.layers = byte_histogram_layers(inst.name);
          break;
        case EmbedKind::Basis: {
          std::vector<double> e(kBasisDim, 0.0);
          e[i % kBasisDim] = 1.0;
          b.layers = {e};
          break;
        }
        case EmbedKind::None:
          break;
      }
      r.records.push_back(std::move(b));
    }
    return r;
  }

  BatchResult<ActivationBundle> activations(std::span<const Instance> instances) override {
    BatchResult<ActivationBundle> r;
    for (const auto& inst : instances) {
      auto tokens = whitespace_tokens(inst.rendered_question);
      if (tokens.empty()) {
        r.failures.push_back({inst.id, "empty token list"});
        continue;
      }
      r.records.push_back(activation_ == ActivationKind::Ramp ? ramp_activations(inst.id, std::move(tokens))
                                                               : tokenhash_activations(inst.id, std::move(tokens)));
    }
    return r;
  }

  const std::set<std::string, std::less<>>& biased_names() const noexcept { return favoured_; }

 private:
  int choose(const Instance& inst) const {
    switch (predict_) {
      case PredictKind::Oracle: return inst.gold_label;
      case PredictKind::Const0: return 0;
      case PredictKind::Hash: return hash_choice(inst.rendered_question, inst.rendered_candidates);
      case PredictKind::Biased:
        return favoured_.contains(inst.name) ? inst.gold_label
                                             : hash_choice(inst.rendered_question, inst.rendered_candidates);
      case PredictKind::FlipFemale:
        return inst.pronouns.label == PronounLabel::Male ? inst.gold_label : (inst.gold_label + 1) % 3;
      case PredictKind::None: break;
    }
    return 0;
  }

  void configure(const std::string& part, const SetResolver& resolve) {
    auto set_predict = [&](PredictKind k) {
      if (predict_ != PredictKind::None) throw Error("stub spec combines two prediction stubs: " + info_.address);
      predict_ = k;
      info_.capabilities.insert(Capability::Predict);
    };
    auto set_embed = [&](EmbedKind k, std::size_t layers) {
      embed_ = k;
      info_.capabilities.insert(Capability::Embed);
      info_.layers = std::max(info_.layers, layers);
    };
    auto set_act = [&](ActivationKind k, std::size_t layers, std::size_t hidden) {
      activation_ = k;
      info_.capabilities.insert(Capability::Activations);
      info_.layers = layers;
      info_.hidden = hidden;
    };
    if (part == "oracle") {
      set_predict(PredictKind::Oracle);
    } else if (part == "const0") {
      set_predict(PredictKind::Const0);
    } else if (part == "hash") {
      set_predict(PredictKind::Hash);
    } else if (part == "flip-female") {
      set_predict(PredictKind::FlipFemale);
    } else if (part.starts_with("biased(") && part.ends_with(")")) {
      set_predict(PredictKind::Biased);
      const auto arg = std::string_view(part).substr(7, part.size() - 8);
      std::optional<std::vector<std::string>> names;
      if (resolve) names = resolve(arg);
      if (!names) {
        names.emplace();
        for (const auto& n : split(arg, ','))
          if (!trim(n).empty()) names->emplace_back(trim(n));
      }
      favoured_.insert(names->begin(), names->end());
    } else if (part == "unit-embed") {
      set_embed(EmbedKind::UnitEmbed, kUnitEmbedLayers);
    } else if (part == "histogram") {
      set_embed(EmbedKind::Histogram, kHistogramLayers);
    } else if (part == "basis") {
      set_embed(EmbedKind::Basis, 1);
    } else if (part == "ramp") {
      set_act(ActivationKind::Ramp, kRampLayers, kRampHidden);
    } else if (part == "tokenhash") {
      set_act(ActivationKind::TokenHash, kTokenHashLayers, kTokenHashGroups * kTokenHashUnitsPerGroup);
    } else {
      throw Error("unknown stub `" + part + "`");
    }
  }

  EndpointInfo info_;
  PredictKind predict_ = PredictKind::None;
  EmbedKind embed_ = EmbedKind::None;
  ActivationKind activation_ = ActivationKind::None;
  std::set<std::string, std::less<>> favoured_;
};

}  // namespace stub

using stub::StubEndpoint;

}  // namespace namebias
