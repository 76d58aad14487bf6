#include <bit>
#include <cstring>

#include <json.hpp>

#include "ragmark/error.hpp"
#include "ragmark/ppo.hpp"
#include "ragmark/util.hpp"

namespace ragmark {

namespace {

constexpr std::string_view kMagic = "RGMK1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= std::uint32_t(static_cast<unsigned char>(in[at + k])) << (8 * k);
  return v;
}

void put_floats(std::string& out, const float* data, size_t n) {
  for (size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& params, const CheckpointMeta& meta) {
  const int D = params.obs_dim();
  nlohmann::ordered_json head;
  head["format"] = "RGMK1";
  head["env_id"] = meta.env_id;
  head["obs_dim"] = D;
  head["act_dim"] = params.act_dim();
  head["num_layers"] = params.net.num_layers();
  head["hidden_units"] = params.net.hidden_units();
  head["activation"] = "tanh";
  head["log_std_init"] = kLogStdInit;
  head["value_head"] = "separate_stream";
  head["advantage_standardization"] = "per_buffer";
  head["normalize"] = params.normalize;
  head["normalizer_count"] = params.normalizer.count();
  head["decision_frequency"] = meta.decision_frequency;
  head["wrappers"] = meta.wrappers;
  head["assets_sha256"] = meta.asset_sha256;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta.config) cfg[k] = v;
  head["config"] = cfg;
  head["arrays"] = {
      {{"name", "parameters"}, {"length", params.net.size()}},
      {{"name", "normalizer_mean"}, {"length", D}},
      {{"name", "normalizer_var"}, {"length", D}},
  };
  const std::string header = head.dump();

  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_floats(out, params.net.theta.data(), size_t(params.net.size()));
  Eigen::VectorXf mean = params.normalizer.mean().cast<float>();
  Eigen::VectorXf var = params.normalizer.variance().cast<float>();
  if (mean.size() != D) {
    mean = Eigen::VectorXf::Zero(D);
    var = Eigen::VectorXf::Zero(D);
  }
  put_floats(out, mean.data(), D);
  put_floats(out, var.data(), D);
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  auto bad = [&](const std::string& why) { return Error(ErrorCode::BadCheckpoint, path + ": " + why); };
  if (bytes.size() < kMagic.size() + 4 || std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    throw bad("missing RGMK1 magic");
  }
  const size_t hlen = get_u32(bytes, kMagic.size());
  size_t at = kMagic.size() + 4;
  if (bytes.size() < at + hlen) throw bad("truncated header");
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(bytes.substr(at, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("header: ") + e.what());
  }
  at += hlen;

  Checkpoint ck;
  try {
    const int D = head.at("obs_dim").get<int>();
    const int A = head.at("act_dim").get<int>();
    ck.params.net = ActorCritic<float>(D, A, head.at("num_layers").get<int>(), head.at("hidden_units").get<int>());
    ck.params.normalize = head.at("normalize").get<bool>();
    ck.meta.env_id = head.at("env_id").get<std::string>();
    ck.meta.asset_sha256 = head.value("assets_sha256", "");
    ck.meta.decision_frequency = head.value("decision_frequency", 5);
    ck.meta.wrappers = head.value("wrappers", std::vector<std::string>{});
    for (const auto& [k, v] : head.at("config").items()) ck.meta.config.emplace_back(k, v.get<std::string>());
    const size_t n = size_t(ck.params.net.size());
    if (head.at("arrays").at(0).at("length").get<size_t>() != n) throw bad("parameter count does not match shape");
    if (bytes.size() != at + 4 * (n + 2 * size_t(D))) throw bad("payload length");
    auto read = [&](float* dst, size_t count) {
      for (size_t i = 0; i < count; ++i, at += 4) dst[i] = std::bit_cast<float>(get_u32(bytes, at));
    };
    read(ck.params.net.theta.data(), n);
    Eigen::VectorXf mean(D), var(D);
    read(mean.data(), D);
    read(var.data(), D);
    ck.params.normalizer = Normalizer(D);
    ck.params.normalizer.assign(head.at("normalizer_count").get<double>(), mean.cast<double>(), var.cast<double>());
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("header field: ") + e.what());
  }
  return ck;
}

}  // namespace ragmark
