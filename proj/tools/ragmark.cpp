// ragmark: train, evaluate, benchmark and serve the benchmark environments.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "ragmark/error.hpp"
#include "ragmark/harness.hpp"
#include "ragmark/util.hpp"

using namespace ragmark;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// Single-line error on stderr; returns the exit code.
int report(std::string_view code, const std::string& token, const std::string& msg) {
  Json j;
  j["error"] = code;
  j["token"] = token;
  j["msg"] = msg;
  std::cerr << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << std::endl;
  return code == "UnknownCommand" || code == "BadFlag" ? 2 : 1;
}

struct Usage {
  std::string token, msg;
};

[[noreturn]] void bad_flag(std::string token, std::string msg) { throw Usage{std::move(token), std::move(msg)}; }

std::string strip_code(const Error& e) {
  const std::string what = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

// First option-looking word in a CLI11 message.
std::string flag_in(const std::string& msg, const std::vector<std::string>& args) {
  std::smatch m;
  if (std::regex_search(msg, m, std::regex(R"(--?[A-Za-z][\w-]*)"))) return m.str();
  for (const auto& a : args) {
    if (msg.find(a) != std::string::npos) return a;
  }
  return args.empty() ? "" : args.back();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::default_logger()->clone("ragmark"));
  spdlog::set_pattern("[%H:%M:%S] %v");

  const std::set<std::string> commands = {"train", "eval", "bench", "serve", "motion-gen"};
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty() && args[0][0] != '-' && !commands.count(args[0])) {
    return report("UnknownCommand", args[0], "unknown command '" + args[0] + "'");
  }

  CLI::App app{"ragmark: active-ragdoll benchmark suite"};
  app.require_subcommand(1);
  std::string context;  // file the current command reads, for error tokens

  std::string env, config, out, wrappers, manifest;
  int agents = 16, decision_frequency = 5, threads = 0;
  std::uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "train a policy into a run directory");
  train->add_option("--env", env, "hopper, walker2d, humanoid, ant, slider, pendulum");
  train->add_option("--agents", agents)->check(CLI::Range(1, 4096));
  train->add_option("--config", config, "trainer config (yaml)");
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--decision-frequency", decision_frequency)->check(CLI::Range(1, 1000));
  train->add_option("--seed", seed);
  train->add_option("--wrappers", wrappers, "comma separated wrapper names");
  train->add_option("--threads", threads)->check(CLI::Range(0, 1024));
  train->add_option("--manifest", manifest, "repeat the run a manifest.json describes");

  std::string ckpt;
  int episodes = 0;
  bool deterministic = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--episodes", episodes)->required()->check(CLI::Range(1, 1000000));
  eval->add_flag("--deterministic", deterministic, "act with the policy mean");
  eval->add_option("--seed", seed);

  double seconds = 10;
  bool serial = false;
  std::string actions = "random";
  auto* bench = app.add_subcommand("bench", "measure vec-scene throughput");
  bench->add_option("--env", env)->required();
  bench->add_option("--agents", agents)->check(CLI::Range(1, 4096));
  bench->add_option("--seconds", seconds)->check(CLI::PositiveNumber);
  bench->add_option("--decision-frequency", decision_frequency)->check(CLI::Range(1, 1000));
  bench->add_option("--threads", threads)->check(CLI::Range(0, 1024));
  bench->add_option("--actions", actions)->check(CLI::IsMember({"zeros", "random"}));
  bench->add_flag("--serial", serial, "step instances one after another");
  bench->add_option("--seed", seed);

  int port = 0;
  bool ws = false;
  std::string host = "127.0.0.1";
  double tick = 0;
  auto* serve = app.add_subcommand("serve", "vec-env protocol server, or the viewer with --ws");
  serve->add_option("--env", env)->required();
  serve->add_option("--port", port)->required()->check(CLI::Range(0, 65535));
  serve->add_option("--host", host);
  serve->add_option("--ckpt", ckpt);
  serve->add_flag("--ws", ws, "stream a checkpointed policy over a websocket");
  serve->add_option("--tick", tick, "seconds between viewer steps")->check(CLI::NonNegativeNumber);
  serve->add_option("--seed", seed);

  std::string kind;
  auto* motion = app.add_subcommand("motion-gen", "write a reference motion file");
  motion->add_option("--kind", kind)->required();
  motion->add_option("--out", out)->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      bad_flag(flag_in(e.what(), args), e.what());
    }

    if (*train) {
      RunSetup setup;
      if (!manifest.empty()) {
        context = manifest;
        setup = setup_from_manifest(manifest);
      } else {
        if (env.empty()) bad_flag("--env", "--env is required");
        if (config.empty()) bad_flag("--config", "--config is required");
        context = config;
        setup = make_run_setup(env, config);
      }
      if (train->count("--agents")) setup.agents = agents;
      if (train->count("--decision-frequency")) setup.decision_frequency = decision_frequency;
      if (train->count("--seed")) setup.seed = seed;
      if (train->count("--threads")) setup.threads = threads;
      if (train->count("--wrappers")) setup.wrappers = split_list(wrappers);
      context = out;
      RunOutcome o = run_training(setup, out);
      std::cout << "total_agent_steps=" << o.result.total_agent_steps << "\n"
                << "updates=" << o.result.updates << "\n"
                << "wall_seconds=" << o.result.wall_seconds << "\n"
                << "eval_mean_return=" << o.eval.mean_return << "\n"
                << "eval_mean_length=" << o.eval.mean_length << "\n"
                << "eval_mean_forward_distance=" << o.eval.mean_forward_distance << "\n"
                << "checkpoint=" << o.checkpoint_path << "\n"
                << "manifest=" << o.manifest_path << "\n";
    } else if (*eval) {
      context = ckpt;
      Checkpoint ck = load_checkpoint(ckpt);
      EnvInstance proto = make_prototype(ck.meta);
      EvalReport r = evaluate(ck.params, proto, episodes, deterministic, ck.meta.decision_frequency, seed);
      std::cout.precision(17);
      std::cout << "env=" << ck.meta.env_id << "\n"
                << "episodes=" << r.episodes << "\n"
                << "mean_return=" << r.mean_return << "\n"
                << "mean_length=" << r.mean_length << "\n"
                << "mean_forward_distance=" << r.mean_forward_distance << "\n";
    } else if (*bench) {
      context = env;
      VecScene scene(make_env_spec(env), agents, decision_frequency);
      scene.set_threads(threads);
      BenchReport r = bench_throughput(scene, seconds, actions == "zeros" ? ActionSource::Zeros : ActionSource::Random,
                                       seed, serial);
      std::cout << r.to_text();
    } else if (*serve) {
      context = env;
      const std::string env_name(to_string(parse_env_id(env)));
      if (ws) {
        if (ckpt.empty()) bad_flag("--ws", "--ws requires --ckpt");
        context = ckpt;
        Checkpoint ck = load_checkpoint(ckpt);
        if (ck.meta.env_id != env_name) {
          throw Error(ErrorCode::ConfigError, "checkpoint is for " + ck.meta.env_id + ", not " + env_name);
        }
        UiServer::Options opts;
        opts.seed = seed;
        opts.tick = tick;
        UiServer server(std::move(ck), opts);
        server.start(static_cast<std::uint16_t>(port), host);
        std::cout << "listening=ws://" << host << ":" << server.port() << "/" << std::endl;
        wait_for_signal();
        server.stop();
      } else {
        if (!ckpt.empty()) bad_flag("--ckpt", "--ckpt is only used with --ws");
        VecEnvServer server(assets_dir(), env_name);
        server.start(static_cast<std::uint16_t>(port), host);
        std::cout << "listening=tcp://" << host << ":" << server.port() << std::endl;
        wait_for_signal();
        server.stop();
      }
    } else if (*motion) {
      context = kind;
      ReferenceMotion m = generate_motion(kind);
      context = out;
      write_file_atomic(out, format_motion(m));
      std::cout << "motion=" << m.name << "\nframes=" << m.frames.size() << "\nout=" << out << "\n";
    }
  } catch (const Usage& u) {
    return report("BadFlag", u.token, u.msg);
  } catch (const Error& e) {
    std::string msg = strip_code(e);
    std::string token = context;
    if (e.code() == ErrorCode::ConfigError) {
      const auto colon = msg.find(':');
      if (colon != std::string::npos && msg.substr(0, colon).find(' ') == std::string::npos) {
        token = msg.substr(0, colon);
      }
    }
    return report(to_string(e.code()), token, msg);
  } catch (const std::exception& e) {
    return report("Internal", context, e.what());
  }
  return 0;
}
