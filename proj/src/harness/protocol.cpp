#include <boost/asio.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <list>
#include <mutex>
#include <thread>

#include "ragmark/error.hpp"
#include "ragmark/harness.hpp"

namespace ragmark {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

constexpr int kProtocolVersion = 1;
constexpr int kMaxAgents = 1024;
constexpr std::size_t kMaxLine = 16u << 20;

struct WireError {
  std::string code, msg;
};

[[noreturn]] void fail(std::string code, std::string msg) { throw WireError{std::move(code), std::move(msg)}; }

template <typename T>
T int_field(const Json& msg, const char* key, T fallback, T lo, T hi, const char* code) {
  if (!msg.contains(key)) return fallback;
  const Json& v = msg[key];
  if (!v.is_number_integer()) fail("bad_json", std::string(key) + " must be an integer");
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(hi) || (lo > 0 && u < static_cast<std::uint64_t>(lo))) {
      fail(code, std::string(key) + " out of range");
    }
    return static_cast<T>(u);
  }
  const auto s = v.get<std::int64_t>();
  if (s < static_cast<std::int64_t>(lo) || s > static_cast<std::int64_t>(hi)) {
    fail(code, std::string(key) + " out of range");
  }
  return static_cast<T>(s);
}

}  // namespace

ProtocolSession::ProtocolSession(std::string assets, std::string only_env)
    : assets_(std::move(assets)), only_env_(std::move(only_env)) {}

Json ProtocolSession::error(std::string_view code, const std::string& msg) {
  Json e;
  e["type"] = "error";
  e["code"] = code;
  e["msg"] = msg;
  return e;
}

std::string ProtocolSession::handle(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  Json reply;
  try {
    if (closed_) fail("bad_state", "session is closed");
    Json msg = Json::parse(line.begin(), line.end(), nullptr, false);
    if (msg.is_discarded()) fail("bad_json", "line is not valid JSON");
    if (!msg.is_object()) fail("bad_json", "message must be a JSON object");
    if (!msg.contains("cmd") || !msg["cmd"].is_string()) fail("bad_json", "missing string field 'cmd'");
    const std::string cmd = msg["cmd"].get<std::string>();
    if (cmd == "hello") reply = hello(msg);
    else if (cmd == "reset") reply = reset(msg);
    else if (cmd == "step") reply = step(msg);
    else if (cmd == "goal") reply = goal(msg);
    else if (cmd == "close") {
      closed_ = true;
      reply["type"] = "bye";
    } else {
      fail("bad_json", "unknown cmd '" + cmd + "'");
    }
  } catch (const WireError& e) {
    reply = error(e.code, e.msg);
  } catch (const Error& e) {
    const ErrorCode c = e.code();
    const char* code = c == ErrorCode::ShapeMismatch || c == ErrorCode::NonFiniteAction ? "bad_shape" : "bad_state";
    reply = error(code, e.what());
  } catch (const std::exception& e) {
    reply = error("bad_state", e.what());
  }
  return reply.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

Json ProtocolSession::hello(const Json& msg) {
  if (scene_) fail("bad_state", "hello already received");
  if (!msg.contains("env") || !msg["env"].is_string()) fail("bad_json", "hello needs a string field 'env'");
  if (msg.contains("version") && msg["version"] != kProtocolVersion) fail("bad_json", "unsupported protocol version");
  const int agents = int_field<int>(msg, "agents", 16, 1, kMaxAgents, "bad_shape");
  const int K = int_field<int>(msg, "decision_frequency", 5, 1, 1000, "bad_shape");
  seed_ = int_field<std::uint64_t>(msg, "seed", 0, 0, std::numeric_limits<std::int64_t>::max(), "bad_json");
  std::vector<std::string> wrappers;
  if (msg.contains("wrappers")) {
    if (!msg["wrappers"].is_array()) fail("bad_json", "wrappers must be a list of strings");
    for (const auto& w : msg["wrappers"]) {
      if (!w.is_string()) fail("bad_json", "wrappers must be a list of strings");
      wrappers.push_back(w.get<std::string>());
    }
  }
  EnvSpecPtr spec;
  try {
    const EnvId id = parse_env_id(msg["env"].get<std::string>());
    if (!only_env_.empty() && to_string(id) != only_env_) fail("unknown_env", "this server only serves " + only_env_);
    spec = make_env_spec(id, assets_);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnknownEnv) fail("unknown_env", e.what());
    throw;
  }
  EnvInstance proto(spec);
  try {
    apply_wrappers(proto, wrappers);
  } catch (const Error& e) {
    fail("unknown_env", e.what());
  }
  scene_ = std::make_unique<VecScene>(proto, agents, K);
  Json r;
  r["type"] = "spec";
  r["obs_dim"] = scene_->obs_dim();
  r["act_dim"] = scene_->act_dim();
  r["agents"] = agents;
  r["decision_frequency"] = K;
  r["version"] = kProtocolVersion;
  return r;
}

Json ProtocolSession::obs_message(const std::string& type, const BatchTransition& t) const {
  Json r;
  r["type"] = type;
  Json rows = Json::array();
  for (int i = 0; i < t.agents; ++i) {
    auto row = t.obs_row(i);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  r["obs"] = std::move(rows);
  return r;
}

Json ProtocolSession::reset(const Json& msg) {
  if (!scene_) fail("bad_state", "reset before hello");
  if (msg.contains("seed")) {
    seed_ = int_field<std::uint64_t>(msg, "seed", 0, 0, std::numeric_limits<std::int64_t>::max(), "bad_json");
  }
  last_ = scene_->reset(seed_);
  has_obs_ = true;
  return obs_message("obs", last_);
}

Json ProtocolSession::step(const Json& msg) {
  if (!scene_) fail("bad_state", "step before hello");
  if (!has_obs_) fail("bad_state", "step before reset");
  if (!msg.contains("actions")) fail("bad_shape", "step needs 'actions'");
  const Json& a = msg["actions"];
  const int N = scene_->agents(), A = scene_->act_dim();
  if (!a.is_array() || static_cast<int>(a.size()) != N) {
    fail("bad_shape", "actions must be a list of " + std::to_string(N) + " rows");
  }
  std::vector<double> flat;
  flat.reserve(size_t(N) * A);
  for (int i = 0; i < N; ++i) {
    const Json& row = a[i];
    if (!row.is_array() || static_cast<int>(row.size()) != A) {
      fail("bad_shape", "action row " + std::to_string(i) + " must hold " + std::to_string(A) + " numbers");
    }
    for (const auto& v : row) {
      if (!v.is_number()) fail("bad_shape", "action row " + std::to_string(i) + " holds a non-number");
      flat.push_back(v.get<double>());
    }
  }
  last_ = scene_->step(flat);
  Json r = obs_message("transition", last_);
  r["rew"] = last_.rewards;
  Json status = Json::array(), reset = Json::array();
  for (int i = 0; i < N; ++i) {
    status.push_back(to_string(last_.status[i]));
    reset.push_back(last_.reset_flags[i] != 0);
  }
  r["status"] = std::move(status);
  r["reset"] = std::move(reset);
  return r;
}

Json ProtocolSession::goal(const Json& msg) {
  if (!scene_) fail("bad_state", "goal before hello");
  if (!scene_->instance(0).find_task<ControllerTask>()) fail("bad_state", "session has no controller wrapper");
  if (!msg.contains("value")) fail("bad_goal", "goal needs 'value'");
  const Json& v = msg["value"];
  for (int i = 0; i < scene_->agents(); ++i) {
    auto* task = scene_->instance(i).find_task<ControllerTask>();
    try {
      if (v.is_string()) task->set_goal(parse_goal(v.get<std::string>()));
      else if (v.is_number()) task->set_goal(v.get<double>());
      else fail("bad_goal", "goal value must be a name or a number");
    } catch (const Error& e) {
      fail("bad_goal", e.what());
    }
  }
  Json r;
  r["type"] = "goal";
  r["value"] = v;
  return r;
}

// ---------------------------------------------------------------- server

struct VecEnvServer::Impl {
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::thread io_thread;
  std::mutex mu;
  std::condition_variable stopped_cv;
  bool stopped = false;
  std::list<std::shared_ptr<tcp::socket>> sockets;
  std::vector<std::thread> workers;
};

VecEnvServer::VecEnvServer(std::string assets, std::string only_env)
    : impl_(std::make_unique<Impl>()), assets_(std::move(assets)), only_env_(std::move(only_env)) {}

VecEnvServer::~VecEnvServer() { stop(); }

namespace {

void serve_connection(std::shared_ptr<tcp::socket> sock, const std::string& assets, const std::string& only_env) {
  ProtocolSession session(assets, only_env);
  asio::streambuf buf(kMaxLine);
  boost::system::error_code ec;
  while (!session.closed()) {
    const std::size_t n = asio::read_until(*sock, buf, '\n', ec);
    std::string line;
    if (ec == asio::error::not_found) {
      const std::string reply = ProtocolSession::error("bad_json", "line exceeds 16 MiB").dump() + "\n";
      asio::write(*sock, asio::buffer(reply), ec);
      break;
    }
    if (ec) {
      // a final line without a newline still gets its reply
      if (buf.size() == 0) break;
      line.assign(asio::buffers_begin(buf.data()), asio::buffers_end(buf.data()));
      buf.consume(buf.size());
    } else {
      line.assign(asio::buffers_begin(buf.data()), asio::buffers_begin(buf.data()) + std::ptrdiff_t(n) - 1);
      buf.consume(n);
    }
    const std::string reply = session.handle(line) + "\n";
    asio::write(*sock, asio::buffer(reply), ec);
    if (ec) break;
  }
  sock->shutdown(tcp::socket::shutdown_both, ec);
  sock->close(ec);
}

}  // namespace

void VecEnvServer::start(std::uint16_t port, const std::string& host) {
  Impl& m = *impl_;
  tcp::endpoint ep(asio::ip::make_address(host), port);
  boost::system::error_code ec;
  m.acceptor.open(ep.protocol(), ec);
  if (!ec) m.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) m.acceptor.bind(ep, ec);
  if (!ec) m.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::IoError, "listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
  port_ = m.acceptor.local_endpoint().port();

  auto accept = std::make_shared<std::function<void()>>();
  *accept = [this, &m, weak = std::weak_ptr(accept)]() {
    auto sock = std::make_shared<tcp::socket>(m.io);
    m.acceptor.async_accept(*sock, [this, sock, weak, &m](const boost::system::error_code& aec) {
      if (aec) return;
      sock->set_option(tcp::no_delay(true));
      {
        std::lock_guard lock(m.mu);
        if (m.stopped) return;
        m.sockets.push_back(sock);
        sessions_ += 1;
        m.workers.emplace_back([sock, assets = assets_, only = only_env_] {
          try {
            serve_connection(sock, assets, only);
          } catch (const std::exception& e) {
            spdlog::warn("vec-env connection ended: {}", e.what());
          }
        });
      }
      if (auto next = weak.lock()) (*next)();
    });
  };
  (*accept)();
  m.io_thread = std::thread([&m, accept] { m.io.run(); });
}

void VecEnvServer::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

void VecEnvServer::stop() {
  Impl& m = *impl_;
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(m.mu);
    if (m.stopped && !m.io_thread.joinable()) return;
    m.stopped = true;
    boost::system::error_code ec;
    for (auto& s : m.sockets) s->shutdown(tcp::socket::shutdown_both, ec);
    workers.swap(m.workers);
  }
  if (m.io_thread.joinable()) {
    asio::post(m.io, [&m] {
      boost::system::error_code ec;
      m.acceptor.close(ec);
      m.io.stop();
    });
    m.io_thread.join();
  }
  for (auto& w : workers) w.join();
  m.stopped_cv.notify_all();
}

}  // namespace ragmark
