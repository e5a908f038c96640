// Adapter process backed by the stub catalogue.
//
// Speaks the line protocol on stdin/stdout, or answers one requests.jsonl in
// a file-batch directory. Fault flags make it misbehave on purpose so the
// transport's retry and timeout paths can be exercised.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "namebias/bridge.hpp"
#include "namebias/common.hpp"
#include "namebias/protocol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace namebias;

namespace {

struct Faults {
  std::string hook;
  std::string crash_once_file;
  long crash_after = -1;
  long garbage_after = -1;
  long sleep_ms = 0;
  std::string error_substring;
  bool bad_shape = false;
  bool no_hello = false;
};

// Rebuilds enough of an instance from a request for the stubs to answer it.
Instance instance_from_request(const json& req) {
  Instance inst;
  inst.id = req.at("id").get<std::string>();
  const auto parts = split(inst.id, '|');
  if (parts.size() == 3) {
    inst.template_id = parts[0];
    inst.name = parts[1];
    inst.pronouns = PronounSet::of(parts[2] == "MALE" ? PronounLabel::Male : PronounLabel::Female);
  }
  if (req.contains("name")) inst.name = req.at("name").get<std::string>();
  inst.rendered_question = req.value("question", req.value("text", ""));
  if (req.contains("candidates")) inst.rendered_candidates = req.at("candidates").get<std::array<std::string, 3>>();
  return inst;
}

json hello(const stub::StubEndpoint& ep, const Faults& faults) {
  auto j = protocol::hello_line(ep.info());
  j["hook"] = faults.hook;
  return j;
}

json answer(stub::StubEndpoint& ep, const json& req, const Faults& faults) {
  const auto id = req.value("id", "");
  if (!faults.error_substring.empty() && id.find(faults.error_substring) != std::string::npos)
    return protocol::error_response(id, "injected failure");
  const auto type = req.value("type", "");
  const Instance inst = instance_from_request(req);
  const std::span<const Instance> one(&inst, 1);
  try {
    if (type == "predict" && ep.info().can(Capability::Predict)) {
      return protocol::encode(ep.predict(one).records.at(0));
    }
    if (type == "embed" && ep.info().can(Capability::Embed)) {
      return protocol::encode(ep.embed(one).records.at(0));
    }
    if (type == "activations" && ep.info().can(Capability::Activations)) {
      auto r = ep.activations(one);
      if (r.records.empty()) return protocol::error_response(id, r.failures.at(0).message);
      auto j = protocol::encode(r.records.front());
      if (faults.bad_shape) j["L"] = j["L"].get<std::size_t>() + 1;
      return j;
    }
  } catch (const std::exception& e) {
    return protocol::error_response(id, e.what());
  }
  return protocol::error_response(id, "unsupported request type `" + type + "`");
}

int serve(stub::StubEndpoint& ep, const Faults& faults) {
  if (!faults.no_hello) std::cout << hello(ep, faults).dump() << std::endl;
  bool crash_once = false;
  if (!faults.crash_once_file.empty() && !fs::exists(faults.crash_once_file)) {
    write_file_atomic(faults.crash_once_file, "crashed\n");
    crash_once = true;
  }
  long answered = 0;
  for (std::string line; std::getline(std::cin, line);) {
    if (trim(line).empty()) continue;
    if (crash_once) return 3;
    if (faults.crash_after >= 0 && answered >= faults.crash_after) return 3;
    if (faults.garbage_after >= 0 && answered >= faults.garbage_after) {
      std::cout << "this is not json" << std::endl;
      continue;
    }
    json req;
    try {
      req = json::parse(line);
    } catch (const json::exception&) {
      std::cout << protocol::error_response("", "request is not JSON").dump() << std::endl;
      continue;
    }
    if (faults.sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(faults.sleep_ms));
    std::cout << answer(ep, req, faults).dump() << std::endl;
    ++answered;
  }
  return 0;
}

int file_batch(stub::StubEndpoint& ep, const Faults& faults, const fs::path& dir, long wait_ms) {
  const auto requests = dir / "requests.jsonl";
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(wait_ms);
  while (!fs::exists(requests)) {
    if (std::chrono::steady_clock::now() >= deadline) {
      std::cerr << "no requests.jsonl in " << dir << "\n";
      return 1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  std::string out;
  if (!faults.no_hello) out += hello(ep, faults).dump() + "\n";
  const auto content = read_file(requests);
  for (auto line : split_lines(content)) {
    if (trim(line).empty()) continue;
    out += answer(ep, json::parse(line), faults).dump() + "\n";
  }
  fs::remove(requests);
  write_file_atomic(dir / "responses.jsonl", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Protocol adapter backed by deterministic stubs"};
  std::string predict = "hash", embed = "unit-embed", activations = "ramp", checkpoint = "stub";
  std::string batch_dir;
  long wait_ms = 10000;
  Faults faults;
  faults.hook = "stub";
  app.add_option("--predict", predict, "Prediction stub: const0, hash or none")->capture_default_str();
  app.add_option("--embed", embed, "Embedding stub: unit-embed, histogram or none")->capture_default_str();
  app.add_option("--activations", activations, "Activation stub: ramp, tokenhash or none")->capture_default_str();
  app.add_option("--checkpoint", checkpoint, "Checkpoint tag announced in the handshake")->capture_default_str();
  app.add_option("--hook", faults.hook, "Hook point announced in the handshake")->capture_default_str();
  app.add_option("--file-batch", batch_dir, "Answer <dir>/requests.jsonl once instead of serving stdin");
  app.add_option("--wait-ms", wait_ms, "File-batch mode: how long to wait for requests")->capture_default_str();
  app.add_option("--crash-once-file", faults.crash_once_file, "Exit on the first request unless this file exists");
  app.add_option("--crash-after", faults.crash_after, "Exit after answering this many requests");
  app.add_option("--garbage-after", faults.garbage_after, "Emit non-JSON lines after this many answers");
  app.add_option("--sleep-ms", faults.sleep_ms, "Delay before each answer");
  app.add_option("--error-ids", faults.error_substring, "Answer with an error for ids containing this text");
  app.add_flag("--bad-shape", faults.bad_shape, "Misreport L in activation responses");
  app.add_flag("--no-hello", faults.no_hello, "Skip the handshake line");
  CLI11_PARSE(app, argc, argv);

  // Gold labels never reach the adapter, so stubs that need them are refused.
  if (predict == "oracle" || predict == "flip-female" || predict.starts_with("biased")) {
    std::cerr << "prediction stub `" << predict << "` needs gold labels and cannot run behind the protocol\n";
    return 1;
  }
  std::string spec;
  for (const auto& part : {predict, embed, activations})
    if (part != "none") spec += (spec.empty() ? "" : "+") + part;
  try {
    stub::StubEndpoint ep(spec, checkpoint);
    if (!batch_dir.empty()) return file_batch(ep, faults, batch_dir, wait_ms);
    return serve(ep, faults);
  } catch (const std::exception& e) {
    std::cerr << "stub adapter: " << e.what() << "\n";
    return 1;
  }
}
