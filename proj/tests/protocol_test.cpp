#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>

#include "namebias/protocol.hpp"
#include "support.hpp"

using namespace namebias;
using namespace std::chrono_literals;
using testing_support::TempDir;

namespace {

const std::string kAdapter = NAMEBIAS_STUB_ADAPTER;

std::vector<Instance> grid(std::size_t templates = 6) {
  const auto ts = parse_templates(testing_support::generated_templates(templates));
  const std::vector<std::string> names = {"Mary", "Leuvenia", "James"};
  return instance_grid(ts, names, PronounPolicy::Both);
}

TransportOptions quick() {
  TransportOptions o;
  o.batch_timeout = 10s;
  o.handshake_timeout = 5s;
  return o;
}

}  // namespace

TEST(Wire, RequestShapes) {
  const auto i = grid(1).front();
  const auto p = protocol::predict_request(i);
  EXPECT_EQ(p.at("type"), "predict");
  EXPECT_EQ(p.at("id"), i.id);
  EXPECT_EQ(p.at("candidates").size(), 3u);
  EXPECT_EQ(protocol::embed_request(i).at("name"), i.name);
  EXPECT_EQ(protocol::activations_request(i).at("text"), i.rendered_question);
}

TEST(Wire, DecodeChecks) {
  using nlohmann::json;
  EXPECT_THROW(protocol::decode_prediction({{"type", "prediction"}, {"id", "a"}, {"choice", 3}}, "c"), Error);
  EXPECT_THROW(protocol::decode_prediction(
                   {{"type", "prediction"}, {"id", "a"}, {"choice", 0}, {"scores", {0.1, 0.9, 0.0}}}, "c"),
               Error);
  EXPECT_THROW(protocol::decode_prediction({{"type", "error"}, {"id", "a"}, {"message", "oom"}}, "c"), Error);
  const auto ok = protocol::decode_prediction(
      {{"type", "prediction"}, {"id", "a"}, {"choice", 1}, {"scores", {0.1, 0.9, 0.0}}}, "c");
  EXPECT_EQ(ok.choice, 1);
  EXPECT_EQ(ok.checkpoint_tag, "c");
  EXPECT_THROW(protocol::decode_embedding({{"type", "embedding"}, {"id", "a"}, {"layers", {{1.0}, {1.0, 2.0}}}}, "n"),
               Error);
  EXPECT_THROW(protocol::decode_activations(
                   {{"type", "activations"}, {"id", "a"}, {"tokens", {"x"}}, {"L", 1}, {"h", 2}, {"data", {1.0}}},
                   nullptr),
               Error);
  EXPECT_THROW(protocol::parse_hello({{"type", "prediction"}}), Error);
  EXPECT_THROW(protocol::parse_hello({{"type", "hello"}, {"capabilities", {"TELEPATHY"}}}), Error);
}

TEST(Subprocess, MatchesInProcessStub) {
  const auto instances = grid();
  SubprocessEndpoint remote(kAdapter + " --predict hash --embed histogram --activations tokenhash", "e1", quick());
  StubEndpoint local("hash+histogram+tokenhash", "e1");
  EXPECT_TRUE(remote.info().can(Capability::Predict));
  EXPECT_EQ(remote.info().layers, local.info().layers);
  EXPECT_EQ(remote.info().hook, "stub");

  const auto rp = predict_batch(remote, instances), lp = predict_batch(local, instances);
  ASSERT_TRUE(rp.complete());
  ASSERT_EQ(rp.records.size(), instances.size());
  for (std::size_t i = 0; i < rp.records.size(); ++i) {
    EXPECT_EQ(rp.records[i].instance_id, lp.records[i].instance_id);
    EXPECT_EQ(rp.records[i].choice, lp.records[i].choice);
  }
  const auto re = embed_names(remote, instances), le = embed_names(local, instances);
  ASSERT_TRUE(re.complete());
  for (std::size_t i = 0; i < re.records.size(); ++i) EXPECT_EQ(re.records[i].layers, le.records[i].layers);
  const auto ra = fetch_activations(remote, instances), la = fetch_activations(local, instances);
  ASSERT_TRUE(ra.complete());
  for (std::size_t i = 0; i < ra.records.size(); ++i) EXPECT_EQ(ra.records[i], la.records[i]);
  EXPECT_EQ(remote.launches(), 1u);
}

TEST(Subprocess, EveryIdAnsweredOnceWithSmallWindow) {
  const auto instances = grid(20);
  auto opts = quick();
  opts.max_in_flight = 3;
  SubprocessEndpoint ep(kAdapter, "e", opts);
  const auto r = predict_batch(ep, instances);
  ASSERT_TRUE(r.complete());
  std::set<std::string> ids;
  for (const auto& rec : r.records) ids.insert(rec.instance_id);
  EXPECT_EQ(ids.size(), instances.size());
}

TEST(Subprocess, MissingCapability) {
  SubprocessEndpoint ep(kAdapter + " --predict none", "e", quick());
  EXPECT_FALSE(ep.info().can(Capability::Predict));
  EXPECT_THROW(predict_batch(ep, grid(1)), Error);
}

TEST(Subprocess, RecoversFromOneCrash) {
  TempDir dir;
  SubprocessEndpoint ep(kAdapter + " --crash-once-file " + (dir / "marker").string(), "e", quick());
  const auto r = predict_batch(ep, grid());
  EXPECT_TRUE(r.complete());
  EXPECT_EQ(ep.launches(), 2u);
  EXPECT_FALSE(ep.transport_errors().empty());
}

TEST(Subprocess, RetriesExhausted) {
  auto opts = quick();
  opts.max_retries = 1;
  SubprocessEndpoint ep(kAdapter + " --crash-after 2", "e", opts);
  const auto instances = grid();
  const auto r = predict_batch(ep, instances);
  EXPECT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.failures.size(), instances.size() - 4);
  EXPECT_NE(r.failures.front().message.find("retries exhausted"), std::string::npos);
}

TEST(Subprocess, GarbageLines) {
  auto opts = quick();
  opts.max_retries = 0;
  SubprocessEndpoint ep(kAdapter + " --garbage-after 1", "e", opts);
  const auto instances = grid(2);
  const auto r = predict_batch(ep, instances);
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records.size() + r.failures.size(), instances.size());
  EXPECT_NE(ep.transport_errors().front().find("malformed"), std::string::npos);
}

TEST(Subprocess, PerRequestErrors) {
  SubprocessEndpoint ep(kAdapter + " --error-ids Leuvenia", "e", quick());
  const auto instances = grid(3);
  const auto r = predict_batch(ep, instances);
  EXPECT_EQ(r.failures.size(), 6u);
  for (const auto& f : r.failures) {
    EXPECT_NE(f.id.find("Leuvenia"), std::string::npos);
    EXPECT_NE(f.message.find("injected failure"), std::string::npos);
  }
  EXPECT_EQ(r.records.size(), 12u);
  EXPECT_EQ(ep.launches(), 1u);
}

TEST(Subprocess, Timeout) {
  auto opts = quick();
  opts.batch_timeout = 300ms;
  SubprocessEndpoint ep(kAdapter + " --sleep-ms 2000", "e", opts);
  const auto r = predict_batch(ep, grid(1));
  EXPECT_TRUE(r.records.empty());
  ASSERT_EQ(r.failures.size(), 6u);
  EXPECT_EQ(r.failures.front().message, "timeout");
}

TEST(Subprocess, ShapeDisagreesWithHandshake) {
  SubprocessEndpoint ep(kAdapter + " --bad-shape", "e", quick());
  const auto r = fetch_activations(ep, grid(1));
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.failures.size(), 6u);
}

TEST(Subprocess, NoHandshake) {
  auto opts = quick();
  opts.handshake_timeout = 300ms;
  EXPECT_THROW(SubprocessEndpoint(kAdapter + " --no-hello", "e", opts), Error);
  EXPECT_THROW(SubprocessEndpoint("exit 0", "e", opts), Error);
}

TEST(FileBatch, RoundTrip) {
  TempDir dir;
  const auto batch = dir / "xchg";
  std::thread adapter([&] {
    const auto cmd = kAdapter + " --file-batch " + batch.string() + " --wait-ms 10000";
    EXPECT_EQ(std::system(cmd.c_str()), 0);
  });
  FileBatchEndpoint ep(batch, "fb", quick(), 5ms);
  const auto instances = grid(2);
  BatchResult<PredictionRecord> r;
  try {
    r = predict_batch(ep, instances);
  } catch (...) {
    adapter.join();
    throw;
  }
  adapter.join();
  ASSERT_TRUE(r.complete());
  StubEndpoint local("hash", "fb");
  const auto expected = predict_batch(local, instances);
  for (std::size_t i = 0; i < r.records.size(); ++i) EXPECT_EQ(r.records[i].choice, expected.records[i].choice);
  EXPECT_EQ(ep.info().hook, "stub");
}

TEST(FileBatch, TimeoutWithoutAdapter) {
  TempDir dir;
  auto opts = quick();
  opts.batch_timeout = 100ms;
  FileBatchEndpoint ep(dir / "xchg", "fb", opts, 5ms);
  const auto r = predict_batch(ep, grid(1));
  EXPECT_EQ(r.failures.size(), 6u);
  EXPECT_FALSE(ep.transport_errors().empty());
}

TEST(MakeEndpoint, Kinds) {
  EXPECT_EQ(make_endpoint("stub:oracle", "t")->info().kind, EndpointKind::Stub);
  EXPECT_THROW(make_endpoint("oracle", "t"), Error);
  EXPECT_THROW(make_endpoint("grpc:host", "t"), Error);
  EXPECT_THROW(make_endpoint("stub:telepathy", "t"), Error);
}

TEST(Adapter, RefusesGoldDependentStubs) {
  EXPECT_NE(std::system((kAdapter + " --predict oracle </dev/null >/dev/null 2>&1").c_str()), 0);
}
