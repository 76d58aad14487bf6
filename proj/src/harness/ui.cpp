#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

#include "ragmark/error.hpp"
#include "ragmark/harness.hpp"

namespace ragmark {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using asio::ip::tcp;

// ---------------------------------------------------------------- session

UiSession::UiSession(const Checkpoint& ck, std::uint64_t seed, std::string assets)
    : params_(ck.params), decision_frequency_(ck.meta.decision_frequency), rng_(seed) {
  inst_ = make_prototype(ck.meta, assets);
  if (inst_.obs_dim() != params_.obs_dim() || inst_.act_dim() != params_.act_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "checkpoint does not match " + ck.meta.env_id);
  }
  if (decision_frequency_ < 1) throw Error(ErrorCode::BadCheckpoint, "decision_frequency");
  obs_ = agent_reset(inst_, rng_);
}

double UiSession::decision_seconds() const { return decision_frequency_ * inst_.spec->physics.dt; }

void UiSession::step() {
  const std::vector<double> action = act_deterministic(params_, obs_);
  DecisionResult r = step_decision(inst_, action, decision_frequency_);
  last_reward_ = r.reward;
  steps_ += 1;
  if (r.status.status != StepStatus::Running) {
    obs_ = agent_reset(inst_, rng_);
    send_terrain_ = true;
  } else {
    obs_ = std::move(r.obs);
  }
}

Json UiSession::frame() const {
  const auto& model = inst_.spec->model();
  Json bodies = Json::array();
  for (size_t b = 0; b < inst_.scene.bodies.size(); ++b) {
    const RigidState& s = inst_.scene.bodies[b];
    for (const auto& g : model.bodies[b].geoms) {
      if (g.shape == GeomShape::Plane) continue;
      const Vec3 pos = s.pos + s.quat * Vec3(g.local_pos[0], g.local_pos[1], g.local_pos[2]);
      const Quat q = s.quat * Quat(g.local_quat[0], g.local_quat[1], g.local_quat[2], g.local_quat[3]);
      Json body;
      body["id"] = b;
      body["pos"] = {pos.x(), pos.y(), pos.z()};
      body["quat"] = {q.w(), q.x(), q.y(), q.z()};
      body["shape"] = to_string(g.shape);
      body["size"] = {g.size[0], g.size[1], g.size[2]};
      bodies.push_back(std::move(body));
    }
  }
  Json hud;
  hud["reward"] = last_reward_;
  hud["vx"] = inst_.pelvis().lin_vel.x();
  if (const auto* task = inst_.find_task<ControllerTask>()) {
    const ControllerGoal& g = task->goal();
    if (g.mode == ControllerMode::Discrete) hud["goal"] = to_string(g.discrete_goal);
    else hud["goal"] = g.target_velocity;
  } else {
    hud["goal"] = nullptr;
  }
  Json f;
  f["type"] = "frame";
  f["t"] = inst_.phase_clock;
  f["step"] = steps_;
  f["bodies"] = std::move(bodies);
  f["hud"] = std::move(hud);
  if (send_terrain_) {
    Json line = Json::array();
    const Terrain& t = *inst_.terrain;
    if (t.kind() == Terrain::Kind::Heightfield) {
      for (size_t i = 0; i < t.heights().size(); ++i) line.push_back({t.x0() + i * t.spacing(), t.heights()[i]});
    } else {
      line.push_back({-1000.0, 0.0});
      line.push_back({1000.0, 0.0});
    }
    f["terrain"] = std::move(line);
    send_terrain_ = false;
  }
  return f;
}

void UiSession::set_goal(const std::string& value) {
  auto* task = inst_.find_task<ControllerTask>();
  if (!task) throw Error(ErrorCode::BadState, "checkpoint has no controller wrapper");
  if (task->params().mode == ControllerMode::Discrete) {
    task->set_goal(parse_goal(value));
    return;
  }
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw Error(ErrorCode::InvalidValue, "unknown goal '" + value + "'");
  task->set_goal(v);
}

// ---------------------------------------------------------------- server

namespace {

class UiConnection : public std::enable_shared_from_this<UiConnection> {
 public:
  UiConnection(tcp::socket sock, const Checkpoint& ck, const UiServer::Options& opts, std::atomic<std::int64_t>& steps)
      : ws_(std::move(sock)), timer_(ws_.get_executor()), session_(ck, opts.seed, opts.assets), counter_(steps) {
    const double period = opts.tick > 0 ? opts.tick : session_.decision_seconds();
    tick_ = std::chrono::microseconds(static_cast<std::int64_t>(period * 1e6));
  }

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->queue_frame();
      self->read();
      self->schedule();
    });
  }

  void close() {
    closed_ = true;
    timer_.cancel();
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
  }

 private:
  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->on_message(beast::buffers_to_string(self->in_.data()));
      self->in_.consume(self->in_.size());
      self->read();
    });
  }

  void on_message(const std::string& text) {
    Json msg = Json::parse(text, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) return send_error("bad_json", "message must be a JSON object");
    if (!msg.contains("cmd") || msg["cmd"] != "goal") return send_error("bad_json", "expected {\"cmd\":\"goal\",...}");
    if (!msg.contains("value")) return send_error("bad_goal", "goal needs 'value'");
    const Json& v = msg["value"];
    try {
      session_.set_goal(v.is_string() ? v.get<std::string>() : v.dump());
    } catch (const Error& e) {
      send_error(e.code() == ErrorCode::BadState ? "bad_state" : "bad_goal", e.what());
    }
  }

  void send_error(const std::string& code, const std::string& msg) {
    errors_.push_back(ProtocolSession::error(code, msg).dump());
    flush();
  }

  void schedule() {
    if (closed_) return;
    timer_.expires_after(tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      try {
        self->session_.step();
        self->counter_ += 1;
        self->queue_frame();
      } catch (const std::exception& e) {
        self->send_error("bad_state", e.what());
      }
      self->schedule();
    });
  }

  void queue_frame() {
    // only the newest frame is kept while a write is in flight
    frame_ = session_.frame().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    flush();
  }

  void flush() {
    if (writing_ || closed_) return;
    if (!errors_.empty()) {
      out_ = std::move(errors_.front());
      errors_.pop_front();
    } else if (frame_) {
      out_ = std::move(*frame_);
      frame_.reset();
    } else {
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->close();
        return;
      }
      self->flush();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  UiSession session_;
  std::atomic<std::int64_t>& counter_;
  std::chrono::microseconds tick_{20000};
  beast::flat_buffer in_;
  std::deque<std::string> errors_;
  std::optional<std::string> frame_;
  std::string out_;
  bool writing_ = false;
  bool closed_ = false;
};

}  // namespace

struct UiServer::Impl {
  Checkpoint ck;
  Options opts;
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::thread io_thread;
  std::mutex mu;
  std::condition_variable cv;
  bool stopped = false;
  std::vector<std::weak_ptr<UiConnection>> conns;
};

UiServer::UiServer(Checkpoint ck, Options opts) : impl_(std::make_unique<Impl>()) {
  // Fail on a mismatched checkpoint before any client connects.
  UiSession probe(ck, opts.seed, opts.assets);
  impl_->ck = std::move(ck);
  impl_->opts = std::move(opts);
}

UiServer::~UiServer() { stop(); }

void UiServer::start(std::uint16_t port, const std::string& host) {
  Impl& m = *impl_;
  tcp::endpoint ep(asio::ip::make_address(host), port);
  beast::error_code ec;
  m.acceptor.open(ep.protocol(), ec);
  if (!ec) m.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) m.acceptor.bind(ep, ec);
  if (!ec) m.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::IoError, "listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
  port_ = m.acceptor.local_endpoint().port();

  auto accept = std::make_shared<std::function<void()>>();
  *accept = [this, &m, weak = std::weak_ptr(accept)]() {
    m.acceptor.async_accept([this, &m, weak](beast::error_code aec, tcp::socket sock) {
      if (aec) return;
      try {
        auto conn = std::make_shared<UiConnection>(std::move(sock), m.ck, m.opts, steps_);
        m.conns.push_back(conn);
        conn->start();
      } catch (const std::exception& e) {
        spdlog::warn("viewer connection rejected: {}", e.what());
      }
      if (auto next = weak.lock()) (*next)();
    });
  };
  (*accept)();
  m.io_thread = std::thread([&m, accept] { m.io.run(); });
}

void UiServer::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait(lock, [&] { return impl_->stopped; });
}

void UiServer::stop() {
  Impl& m = *impl_;
  {
    std::lock_guard lock(m.mu);
    if (m.stopped && !m.io_thread.joinable()) return;
    m.stopped = true;
  }
  if (m.io_thread.joinable()) {
    asio::post(m.io, [&m] {
      for (auto& w : m.conns) {
        if (auto c = w.lock()) c->close();
      }
      beast::error_code ec;
      m.acceptor.close(ec);
      m.io.stop();
    });
    m.io_thread.join();
  }
  m.cv.notify_all();
}

}  // namespace ragmark
