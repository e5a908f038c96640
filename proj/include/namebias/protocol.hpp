#pragma once

// Line-delimited JSON protocol spoken by model adapters.
//
// Session: the adapter writes a handshake line first,
//   {"type":"hello","capabilities":[...],"L":int,"h":int,"checkpoint":s,"hook":s?}
// then answers one response line per request line, matched by "id":
//   predict      -> {"type":"prediction","id":s,"choice":0|1|2,"scores":[f,f,f]?}
//   embed        -> {"type":"embedding","id":s,"layers":[[f,...],...]}
//   activations  -> {"type":"activations","id":s,"tokens":[s,...],"L":int,"h":int,"data":[f,...]}
// or {"type":"error","id":s,"message":s} for a request the adapter cannot serve.
//
// Two transports carry it: a child process on stdin/stdout (SUBPROCESS) and a
// directory exchange of requests.jsonl / responses.jsonl (FILE_BATCH).

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "namebias/bridge.hpp"

namespace namebias {

namespace protocol {

using nlohmann::json;

inline json predict_request(const Instance& i) {
  return {{"type", "predict"}, {"id", i.id}, {"question", i.rendered_question}, {"candidates", i.rendered_candidates}};
}

inline json embed_request(const Instance& i) {
  return {{"type", "embed"}, {"id", i.id}, {"text", i.rendered_question}, {"name", i.name}};
}

inline json activations_request(const Instance& i) {
  return {{"type", "activations"}, {"id", i.id}, {"text", i.rendered_question}};
}

struct Hello {
  std::set<Capability> capabilities;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::string checkpoint;
  std::string hook;
};

inline Hello parse_hello(const json& j) {
  if (j.value("type", "") != "hello") throw Error("adapter did not open with a hello line");
  Hello h;
  for (const auto& c : j.at("capabilities")) {
    auto cap = parse_capability(c.get<std::string>());
    if (!cap) throw Error("adapter announced unknown capability " + c.dump());
    h.capabilities.insert(*cap);
  }
  h.layers = j.value("L", std::size_t{0});
  h.hidden = j.value("h", std::size_t{0});
  h.checkpoint = j.value("checkpoint", "");
  h.hook = j.value("hook", "");
  return h;
}

inline json hello_line(const EndpointInfo& info) {
  json caps = json::array();
  for (auto c : info.capabilities) caps.push_back(to_string(c));
  json j{{"type", "hello"}, {"capabilities", caps}, {"L", info.layers}, {"h", info.hidden},
         {"checkpoint", info.checkpoint_tag}};
  if (!info.hook.empty()) j["hook"] = info.hook;
  return j;
}

// Response decoders throw Error with a message suitable for a RequestFailure.

inline void expect_type(const json& r, std::string_view type) {
  const auto t = r.value("type", "");
  if (t == "error") throw Error("adapter error: " + r.value("message", std::string("(no message)")));
  if (t != type) throw Error("expected a `" + std::string(type) + "` response, got `" + t + "`");
}

inline PredictionRecord decode_prediction(const json& r, const std::string& checkpoint) {
  expect_type(r, "prediction");
  PredictionRecord p;
  p.instance_id = r.at("id").get<std::string>();
  p.choice = r.at("choice").get<int>();
  if (p.choice < 0 || p.choice > 2) throw Error("choice " + std::to_string(p.choice) + " out of range");
  if (r.contains("scores") && !r.at("scores").is_null()) {
    const auto s = r.at("scores").get<std::vector<double>>();
    if (s.size() != 3) throw Error("expected 3 scores");
    p.scores = std::array<double, 3>{s[0], s[1], s[2]};
    if (argmax3(*p.scores) != p.choice) throw Error("choice disagrees with argmax of scores");
  }
  p.checkpoint_tag = checkpoint;
  return p;
}

inline EmbeddingBundle decode_embedding(const json& r, const std::string& name) {
  expect_type(r, "embedding");
  EmbeddingBundle b;
  b.instance_id = r.at("id").get<std::string>();
  b.name = name;
  b.layers = r.at("layers").get<std::vector<std::vector<double>>>();
  if (b.layers.empty()) throw Error("embedding has no layers");
  for (const auto& l : b.layers)
    if (l.size() != b.layers.front().size()) throw Error("embedding layers differ in dimension");
  return b;
}

inline ActivationBundle decode_activations(const json& r, const Hello* hello) {
  expect_type(r, "activations");
  ActivationBundle b;
  b.instance_id = r.at("id").get<std::string>();
  b.tokens = r.at("tokens").get<std::vector<std::string>>();
  b.layers = r.at("L").get<std::size_t>();
  b.hidden = r.at("h").get<std::size_t>();
  b.data = r.at("data").get<std::vector<double>>();
  b.check_shape();
  if (hello && hello->layers && hello->hidden && (hello->layers != b.layers || hello->hidden != b.hidden))
    throw Error("activation shape " + std::to_string(b.layers) + "x" + std::to_string(b.hidden) +
                " does not match the handshake " + std::to_string(hello->layers) + "x" +
                std::to_string(hello->hidden));
  return b;
}

inline json encode(const PredictionRecord& p) {
  json j{{"type", "prediction"}, {"id", p.instance_id}, {"choice", p.choice}};
  if (p.scores) j["scores"] = *p.scores;
  return j;
}

inline json encode(const EmbeddingBundle& b) { return {{"type", "embedding"}, {"id", b.instance_id}, {"layers", b.layers}}; }

inline json encode(const ActivationBundle& b) {
  return {{"type", "activations"}, {"id", b.instance_id}, {"tokens", b.tokens},
          {"L", b.layers},         {"h", b.hidden},       {"data", b.data}};
}

inline json error_response(const std::string& id, const std::string& message) {
  return {{"type", "error"}, {"id", id}, {"message", message}};
}

}  // namespace protocol

// ---------------------------------------------------------------------------
// Transports

struct TransportOptions {
  std::size_t max_in_flight = 32;
  std::size_t max_retries = 2;
  std::chrono::milliseconds batch_timeout{60000};
  std::chrono::milliseconds handshake_timeout{30000};
};

struct Exchange {
  std::map<std::string, nlohmann::json> responses;
  std::vector<RequestFailure> failures;
  std::vector<std::string> transport_errors;
};

// Child process wired to one end of a socketpair (its stdin and stdout).
// A socket rather than pipes lets writes use MSG_NOSIGNAL when the child dies.
class AdapterProcess {
 public:
  explicit AdapterProcess(const std::string& command) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
      throw Error(std::string("socketpair: ") + std::strerror(errno));
    pid_ = ::fork();
    if (pid_ < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw Error(std::string("fork: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
    ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_NONBLOCK);
  }

  AdapterProcess(const AdapterProcess&) = delete;
  AdapterProcess& operator=(const AdapterProcess&) = delete;

  ~AdapterProcess() {
    if (fd_ >= 0) ::close(fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  int fd() const noexcept { return fd_; }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
};

// Line framing and buffered I/O over the adapter socket.
class LineChannel {
 public:
  explicit LineChannel(std::unique_ptr<AdapterProcess> proc) : proc_(std::move(proc)) {}

  void queue(const std::string& line) { out_ += line + "\n"; }

  enum class Status { Ok, Timeout, Closed };

  // Flushes pending output and waits until at least one full line is
  // available or the deadline passes.
  Status pump(std::chrono::steady_clock::time_point deadline, std::vector<std::string>& lines) {
    for (;;) {
      extract(lines);
      if (!lines.empty()) return Status::Ok;
      if (eof_) return Status::Closed;
      const auto now = std::chrono::steady_clock::now();
      if (now >= deadline) return Status::Timeout;
      pollfd pfd{proc_->fd(), static_cast<short>(POLLIN | (out_.empty() ? 0 : POLLOUT)), 0};
      const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(wait + 1, 1000)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        return Status::Closed;
      }
      if (pfd.revents & POLLOUT) {
        const auto n = ::send(proc_->fd(), out_.data(), out_.size(), MSG_NOSIGNAL);
        if (n > 0)
          out_.erase(0, static_cast<std::size_t>(n));
        else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK)
          return Status::Closed;
      }
      if (pfd.revents & (POLLIN | POLLHUP | POLLERR)) {
        char buf[65536];
        const auto n = ::recv(proc_->fd(), buf, sizeof buf, 0);
        if (n > 0)
          in_.append(buf, static_cast<std::size_t>(n));
        else if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK))
          eof_ = true;
      }
    }
  }

 private:
  void extract(std::vector<std::string>& lines) {
    std::size_t pos;
    while ((pos = in_.find('\n')) != std::string::npos) {
      std::string line = in_.substr(0, pos);
      in_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!trim(line).empty()) lines.push_back(std::move(line));
    }
  }

  std::unique_ptr<AdapterProcess> proc_;
  std::string out_;
  std::string in_;
  bool eof_ = false;
};

// Endpoint that speaks the protocol; subclasses supply the exchange.
class ProtocolEndpoint : public ModelEndpoint {
 public:
  const EndpointInfo& info() const override { return info_; }

  BatchResult<PredictionRecord> predict(std::span<const Instance> instances) override {
    return run<PredictionRecord>(instances, protocol::predict_request, [&](const nlohmann::json& r, const Instance&) {
      return protocol::decode_prediction(r, info_.checkpoint_tag);
    });
  }

  BatchResult<EmbeddingBundle> embed(std::span<const Instance> instances) override {
    auto r = run<EmbeddingBundle>(instances, protocol::embed_request, [](const nlohmann::json& resp, const Instance& i) {
      return protocol::decode_embedding(resp, i.name);
    });
    // Layer count and width must be constant within one checkpoint.
    if (!r.records.empty()) {
      const auto layers = r.records.front().layers.size();
      const auto dim = r.records.front().layers.front().size();
      std::vector<EmbeddingBundle> ok;
      for (auto& b : r.records) {
        if (b.layers.size() != layers || b.layers.front().size() != dim)
          r.failures.push_back({b.instance_id, "embedding shape differs from the rest of the batch"});
        else
          ok.push_back(std::move(b));
      }
      r.records = std::move(ok);
    }
    return r;
  }

  BatchResult<ActivationBundle> activations(std::span<const Instance> instances) override {
    return run<ActivationBundle>(instances, protocol::activations_request,
                                 [&](const nlohmann::json& r, const Instance&) {
                                   return protocol::decode_activations(r, hello_ ? &*hello_ : nullptr);
                                 });
  }

  const std::vector<std::string>& transport_errors() const noexcept { return transport_errors_; }

 protected:
  virtual Exchange exchange(const std::vector<nlohmann::json>& requests) = 0;

  void adopt(const protocol::Hello& h) {
    info_.capabilities = h.capabilities;
    info_.layers = h.layers;
    info_.hidden = h.hidden;
    info_.hook = h.hook;
    if (info_.checkpoint_tag.empty()) info_.checkpoint_tag = h.checkpoint;
    hello_ = h;
  }

  EndpointInfo info_;
  std::optional<protocol::Hello> hello_;
  std::vector<std::string> transport_errors_;

 private:
  template <typename Record, typename MakeRequest, typename Decode>
  BatchResult<Record> run(std::span<const Instance> instances, MakeRequest make, Decode decode) {
    std::vector<nlohmann::json> requests;
    std::map<std::string, const Instance*> by_id;
    for (const auto& i : instances) {
      if (!by_id.emplace(i.id, &i).second) throw Error("duplicate instance id in batch: " + i.id);
      requests.push_back(make(i));
    }
    auto ex = exchange(requests);
    transport_errors_.insert(transport_errors_.end(), ex.transport_errors.begin(), ex.transport_errors.end());
    BatchResult<Record> out;
    out.failures = std::move(ex.failures);
    for (const auto& [id, resp] : ex.responses) {
      try {
        out.records.push_back(decode(resp, *by_id.at(id)));
      } catch (const std::exception& e) {
        out.failures.push_back({id, e.what()});
      }
    }
    return out;
  }
};

class SubprocessEndpoint final : public ProtocolEndpoint {
 public:
  SubprocessEndpoint(std::string command, std::string checkpoint_tag, TransportOptions opts = {})
      : opts_(opts) {
    info_.kind = EndpointKind::Subprocess;
    info_.address = std::move(command);
    info_.checkpoint_tag = std::move(checkpoint_tag);
    start();
  }

  std::size_t launches() const noexcept { return launches_; }

 protected:
  Exchange exchange(const std::vector<nlohmann::json>& requests) override {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + opts_.batch_timeout;
    Exchange ex;
    std::deque<std::size_t> pending;
    for (std::size_t i = 0; i < requests.size(); ++i) pending.push_back(i);
    std::map<std::string, std::size_t> in_flight;
    std::size_t retries = 0;

    auto fail_remaining = [&](const std::string& why) {
      for (const auto& [id, _] : in_flight) ex.failures.push_back({id, why});
      for (auto idx : pending) ex.failures.push_back({requests[idx].at("id").get<std::string>(), why});
      in_flight.clear();
      pending.clear();
    };
    // Transport broke: requeue what was in flight and relaunch, or give up.
    auto recover = [&](const std::string& why) {
      ex.transport_errors.push_back(why);
      channel_.reset();
      std::vector<std::size_t> back;
      for (const auto& [_, idx] : in_flight) back.push_back(idx);
      std::sort(back.rbegin(), back.rend());
      for (auto idx : back) pending.push_front(idx);
      in_flight.clear();
      if (retries++ >= opts_.max_retries) {
        fail_remaining(why + " (retries exhausted)");
        return;
      }
      try {
        start();
      } catch (const std::exception& e) {
        ex.transport_errors.push_back(e.what());
        fail_remaining(e.what());
      }
    };

    if (!channel_) {
      try {
        start();
      } catch (const std::exception& e) {
        ex.transport_errors.push_back(e.what());
        fail_remaining(e.what());
        return ex;
      }
    }
    while (!pending.empty() || !in_flight.empty()) {
      while (in_flight.size() < opts_.max_in_flight && !pending.empty()) {
        const auto idx = pending.front();
        pending.pop_front();
        in_flight.emplace(requests[idx].at("id").get<std::string>(), idx);
        channel_->queue(requests[idx].dump());
      }
      std::vector<std::string> lines;
      const auto status = channel_->pump(deadline, lines);
      bool broken = false;
      for (const auto& line : lines) {
        nlohmann::json resp;
        try {
          resp = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          recover("malformed response line: " + line.substr(0, 120));
          broken = true;
          break;
        }
        const auto id = resp.is_object() ? resp.value("id", "") : "";
        auto it = in_flight.find(id);
        if (it == in_flight.end()) {
          recover("response for unknown id `" + id + "`");
          broken = true;
          break;
        }
        ex.responses[id] = std::move(resp);
        in_flight.erase(it);
      }
      if (broken) continue;
      if (status == LineChannel::Status::Timeout) {
        channel_.reset();
        ex.transport_errors.push_back("batch timed out");
        fail_remaining("timeout");
      } else if (status == LineChannel::Status::Closed && (!in_flight.empty() || !pending.empty())) {
        recover("adapter closed the connection");
      }
    }
    return ex;
  }

 private:
  void start() {
    channel_ = std::make_unique<LineChannel>(std::make_unique<AdapterProcess>(info_.address));
    ++launches_;
    std::vector<std::string> lines;
    const auto status = channel_->pump(std::chrono::steady_clock::now() + opts_.handshake_timeout, lines);
    if (status != LineChannel::Status::Ok || lines.empty()) {
      channel_.reset();
      throw Error("adapter `" + info_.address + "` sent no handshake");
    }
    try {
      adopt(protocol::parse_hello(nlohmann::json::parse(lines.front())));
    } catch (const nlohmann::json::exception& e) {
      channel_.reset();
      throw Error("malformed handshake from `" + info_.address + "`: " + e.what());
    }
    if (lines.size() > 1) {
      channel_.reset();
      throw Error("adapter `" + info_.address + "` sent data before any request");
    }
  }

  TransportOptions opts_;
  std::unique_ptr<LineChannel> channel_;
  std::size_t launches_ = 0;
};

// Air-gapped mode: the bridge writes <dir>/requests.jsonl and waits for the
// adapter to publish <dir>/responses.jsonl (hello line first). Both files are
// written through a rename so neither side reads a partial file.
class FileBatchEndpoint final : public ProtocolEndpoint {
 public:
  FileBatchEndpoint(std::filesystem::path dir, std::string checkpoint_tag, TransportOptions opts = {},
                    std::chrono::milliseconds poll_interval = std::chrono::milliseconds(20))
      : dir_(std::move(dir)), opts_(opts), poll_interval_(poll_interval) {
    info_.kind = EndpointKind::FileBatch;
    info_.address = dir_.string();
    info_.checkpoint_tag = std::move(checkpoint_tag);
    // Unknown until the first response file arrives.
    info_.capabilities = {Capability::Predict, Capability::Embed, Capability::Activations};
    std::filesystem::create_directories(dir_);
  }

 protected:
  Exchange exchange(const std::vector<nlohmann::json>& requests) override {
    namespace fs = std::filesystem;
    Exchange ex;
    const auto responses = dir_ / "responses.jsonl";
    fs::remove(responses);
    std::string body;
    for (const auto& r : requests) body += r.dump() + "\n";
    write_file_atomic(dir_ / "requests.jsonl", body);

    const auto deadline = std::chrono::steady_clock::now() + opts_.batch_timeout;
    while (!fs::exists(responses)) {
      if (std::chrono::steady_clock::now() >= deadline) {
        ex.transport_errors.push_back("no responses.jsonl before the batch timeout");
        for (const auto& r : requests) ex.failures.push_back({r.at("id").get<std::string>(), "timeout"});
        return ex;
      }
      std::this_thread::sleep_for(poll_interval_);
    }
    const auto content = read_file(responses);
    const auto lines = split_lines(content);
    std::size_t line_no = 0;
    bool have_hello = false;
    for (auto line : lines) {
      ++line_no;
      if (trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        ex.transport_errors.push_back("responses.jsonl:" + std::to_string(line_no) + ": malformed line");
        continue;
      }
      if (!have_hello) {
        try {
          adopt(protocol::parse_hello(j));
        } catch (const std::exception& e) {
          ex.transport_errors.push_back(std::string("responses.jsonl: ") + e.what());
          break;
        }
        have_hello = true;
        continue;
      }
      if (!j.is_object()) {
        ex.transport_errors.push_back("responses.jsonl:" + std::to_string(line_no) + ": not an object");
        continue;
      }
      auto id = j.value("id", "");
      ex.responses[std::move(id)] = std::move(j);
    }
    std::map<std::string, nlohmann::json> matched;
    for (const auto& r : requests) {
      const auto id = r.at("id").get<std::string>();
      auto it = ex.responses.find(id);
      if (!have_hello || it == ex.responses.end())
        ex.failures.push_back({id, have_hello ? "no response" : "missing handshake"});
      else
        matched.emplace(id, std::move(it->second));
    }
    ex.responses = std::move(matched);
    return ex;
  }

 private:
  std::filesystem::path dir_;
  TransportOptions opts_;
  std::chrono::milliseconds poll_interval_;
};

// "stub:<spec>", "cmd:<shell command>" or "file:<directory>".
inline std::unique_ptr<ModelEndpoint> make_endpoint(const std::string& spec, const std::string& checkpoint_tag,
                                                    const stub::SetResolver& resolve = {},
                                                    TransportOptions opts = {}) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw Error("endpoint spec needs a kind prefix (stub:, cmd:, file:): " + spec);
  const auto kind = spec.substr(0, colon);
  const auto address = spec.substr(colon + 1);
  if (kind == "stub") return std::make_unique<StubEndpoint>(address, checkpoint_tag, resolve);
  if (kind == "cmd") return std::make_unique<SubprocessEndpoint>(address, checkpoint_tag, opts);
  if (kind == "file") return std::make_unique<FileBatchEndpoint>(address, checkpoint_tag, opts);
  throw Error("unknown endpoint kind `" + kind + "`");
}

}  // namespace namebias
