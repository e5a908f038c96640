#include <random>

#include <gtest/gtest.h>

#include "namebias/components.hpp"
#include "nmf_fixtures.hpp"

using namespace namebias;
using nlohmann::json;

TEST(Stack, Shape) {
  ActivationBundle b{"x", {"a", "b", "c", "d"}, 2, 3, std::vector<double>(24, 1.0)};
  const auto v = stack_activations(b);
  EXPECT_EQ(v.rows(), 6);
  EXPECT_EQ(v.cols(), 4);
}

TEST(Stack, NegativesClampToZero) {
  ActivationBundle b{"x", {"a", "b"}, 1, 2, {-1, -2, -0.5, -3}};
  EXPECT_TRUE(stack_activations(b).isZero(0.0));
  const auto shifted = stack_activations(b, NegativeHandling::Shift);
  EXPECT_EQ(shifted.minCoeff(), 0.0);
  EXPECT_EQ(shifted(0, 0), 2.0);
}

TEST(Stack, RampIndexFormula) {
  const auto b = stub::ramp_activations("r", {"w0", "w1", "w2", "w3"});
  EXPECT_EQ(stack_activations(b)(1 * 3 + 2, 3), 6.0);
}

TEST(Stack, ShapeMismatch) {
  ActivationBundle b{"x", {"a", "b"}, 1, 2, {1, 2, 3}};
  EXPECT_THROW(stack_activations(b), Error);
}

TEST(Nmf, ExactRankRecovered) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix v = testing_support::block_rank2(seed);
    NmfConfig cfg;
    cfg.k = 2;
    cfg.tol = 0.0;
    cfg.seed = seed;
    const auto r = nmf(v, cfg);
    EXPECT_LE(r.iterations, 200u);
    EXPECT_LE(r.error, 1e-6 * v.norm()) << "seed " << seed;
  }
}

TEST(Nmf, ZeroMatrix) {
  NmfConfig cfg;
  cfg.k = 2;
  const auto r = nmf(Matrix::Zero(4, 3), cfg);
  EXPECT_EQ(r.error, 0.0);
  EXPECT_EQ(r.iterations, 1u);
}

TEST(Nmf, ObjectiveNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Matrix v = testing_support::random_nonnegative(seed, 6 + seed % 5, 5 + seed % 7);
    NmfConfig cfg;
    cfg.k = 1 + seed % 4;
    cfg.tol = 0.0;
    cfg.max_iter = 60;
    cfg.seed = seed;
    const auto r = nmf(v, cfg);
    for (std::size_t i = 1; i < r.objective.size(); ++i)
      ASSERT_LE(r.objective[i], r.objective[i - 1] * (1 + 1e-12)) << "seed " << seed << " iteration " << i;
  }
}

TEST(Nmf, FixedSeedIsBitIdentical) {
  const Matrix v = testing_support::random_nonnegative(42, 12, 9);
  NmfConfig cfg;
  cfg.k = 3;
  cfg.seed = 7;
  const auto a = nmf(v, cfg), b = nmf(v, cfg);
  EXPECT_TRUE(a.W == b.W);
  EXPECT_TRUE(a.H == b.H);
  EXPECT_EQ(a.objective, b.objective);
  cfg.seed = 8;
  EXPECT_FALSE(nmf(v, cfg).W == a.W);
}

TEST(Nmf, RejectsBadInput) {
  NmfConfig cfg;
  cfg.k = 4;
  EXPECT_THROW(nmf(Matrix::Ones(3, 5), cfg), Error);
  cfg.k = 0;
  EXPECT_THROW(nmf(Matrix::Ones(3, 5), cfg), Error);
  cfg.k = 1;
  Matrix neg = Matrix::Ones(3, 3);
  neg(1, 1) = -1;
  EXPECT_THROW(nmf(neg, cfg), Error);
  Matrix inf = Matrix::Ones(3, 3);
  inf(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(nmf(inf, cfg), Error);
}

TEST(Assign, Identity) {
  const std::vector<std::string> tokens = {"a", "b", "c"};
  EXPECT_EQ(assign_components(Matrix::Identity(3, 3), tokens).assignment, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Assign, TiesGoToLowestRow) {
  Matrix h = Matrix::Constant(3, 1, 0.4);
  const std::vector<std::string> tokens = {"x"};
  EXPECT_EQ(assign_components(h, tokens).assignment, std::vector<std::size_t>{0});
}

TEST(Assign, HandFixture) {
  Matrix h(2, 4);
  h << 1, 0, 2, 2, 0, 3, 2, 1;
  const std::vector<std::string> tokens = {"a", "b", "c", "d"};
  EXPECT_EQ(assign_components(h, tokens).assignment, (std::vector<std::size_t>{0, 1, 0, 0}));
  const std::vector<std::string> short_tokens = {"a"};
  EXPECT_THROW(assign_components(h, short_tokens), Error);
}

TEST(Render, SingleTokenSpan) {
  ComponentMap m{"i", {"Mary"}, Matrix::Ones(1, 1), {0}, 0.0};
  const auto html = render_components(m, RenderFormat::Html).document;
  EXPECT_NE(html.find("<span style=\"background:#66C5CC\">Mary</span>"), std::string::npos) << html;
  std::size_t spans = 0;
  for (auto p = html.find("<span"); p != std::string::npos; p = html.find("<span", p + 1)) ++spans;
  EXPECT_EQ(spans, 1u);
}

TEST(Render, JsonRoundTrip) {
  ComponentMap m{"i", {"Mary", "was", "<b>"}, Matrix::Zero(3, 3), {2, 0, 1}, 0.0};
  const auto doc = json::parse(render_components(m, RenderFormat::Json).document);
  ASSERT_TRUE(doc.is_array());
  EXPECT_EQ(doc[0], json({{"token", "Mary"}, {"component", 2}}));
  EXPECT_EQ(assignment_from_json(doc), m.assignment);
}

TEST(Render, EscapesHtml) {
  ComponentMap m{"a\"b", {"<b>&"}, Matrix::Ones(1, 1), {0}, 0.0};
  const auto html = render_components(m, RenderFormat::Html).document;
  EXPECT_NE(html.find("&lt;b&gt;&amp;"), std::string::npos);
  EXPECT_NE(html.find("title=\"a&quot;b\""), std::string::npos);
}

TEST(Render, PaletteCyclesWithWarning) {
  ComponentMap m{"i", {"a", "b"}, Matrix::Ones(9, 2), {0, 8}, 0.0};
  const auto r = render_components(m, RenderFormat::Ansi);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.document.find("\x1b[48;2;102;197;204ma\x1b[0m \x1b[48;2;102;197;204mb"), std::string::npos);
  ComponentMap small{"i", {"a"}, Matrix::Ones(1, 1), {7}, 0.0};
  EXPECT_TRUE(render_components(small, RenderFormat::Html).warnings.empty());
}

TEST(Render, RepeatedTokensShareColours) {
  const auto a = stub::tokenhash_activations("a", {"Mary", "was", "the", "type", "the", "type", "Mary"});
  NmfConfig cfg;
  cfg.k = 4;
  const auto m = analyze_activations(a, cfg);
  EXPECT_EQ(m.assignment[2], m.assignment[4]);
  EXPECT_EQ(m.assignment[3], m.assignment[5]);
  EXPECT_EQ(m.assignment[0], m.assignment[6]);
  const std::vector<ComponentMap> both = {m, m};
  EXPECT_NE(render_components(both, RenderFormat::Html).document.find("title=\"a\""), std::string::npos);
}

TEST(Analyze, ClipsComponentCount) {
  const auto b = stub::ramp_activations("r", {"only", "two"});
  NmfConfig cfg;
  cfg.k = 8;
  const auto m = analyze_activations(b, cfg);
  EXPECT_EQ(m.M.rows(), 2);
  EXPECT_EQ(m.assignment.size(), 2u);
  EXPECT_EQ(m.instance_id, "r");
}
