#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/ppo.hpp"

namespace ragmark {

template <typename T>
ActorCritic<T>::ActorCritic(int obs_dim, int act_dim, int num_layers, int hidden_units)
    : obs_dim_(obs_dim), act_dim_(act_dim), hidden_(hidden_units) {
  if (obs_dim < 1 || act_dim < 1 || num_layers < 0 || (num_layers > 0 && hidden_units < 1)) {
    throw Error(ErrorCode::InvalidValue, "network shape");
  }
  Eigen::Index cursor = 0;
  for (auto* stream : {&pi_stream_, &v_stream_}) {
    int width = obs_dim;
    for (int k = 0; k < num_layers; ++k) {
      stream->push_back(add_layer(width, hidden_units, cursor));
      width = hidden_units;
    }
  }
  const int width = num_layers > 0 ? hidden_units : obs_dim;
  pi_ = add_layer(width, act_dim, cursor);
  v_ = add_layer(width, 1, cursor);
  log_std_ = cursor;
  cursor += act_dim;
  theta = Vec::Zero(cursor);
  log_std().setConstant(static_cast<T>(kLogStdInit));
}

template <typename T>
typename ActorCritic<T>::Layer ActorCritic<T>::add_layer(int in, int out, Eigen::Index& cursor) {
  Layer l{in, out, cursor, cursor + Eigen::Index(in) * out};
  cursor = l.b + out;
  return l;
}

template <typename T>
void ActorCritic<T>::init(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](const Layer& l, double scale) {
    const double s = scale / std::sqrt(static_cast<double>(l.in));
    for (Eigen::Index k = 0; k < Eigen::Index(l.in) * l.out; ++k) theta[l.w + k] = static_cast<T>(s * normal(rng));
    theta.segment(l.b, l.out).setZero();
  };
  for (const auto& l : pi_stream_) fill(l, 1.0);
  for (const auto& l : v_stream_) fill(l, 1.0);
  fill(pi_, 0.01);
  fill(v_, 1.0);
  log_std().setConstant(static_cast<T>(kLogStdInit));
}

namespace {

template <typename Mat, typename Layers, typename W, typename B>
void run_stream(const Layers& layers, const Mat& X, std::vector<Mat>& acts, W weight, B bias) {
  acts.resize(layers.size() + 1);
  acts[0] = X;
  for (size_t k = 0; k < layers.size(); ++k) {
    acts[k + 1] = ((weight(layers[k]) * acts[k]).colwise() + bias(layers[k])).array().tanh().matrix();
  }
}

}  // namespace

template <typename T>
void ActorCritic<T>::forward(const Mat& X, Cache& cache) const {
  auto w = [this](const Layer& l) { return weight(l); };
  auto b = [this](const Layer& l) { return bias(l); };
  run_stream(pi_stream_, X, cache.pi_acts, w, b);
  run_stream(v_stream_, X, cache.v_acts, w, b);
  cache.mean = (weight(pi_) * cache.pi_acts.back()).colwise() + bias(pi_);
  cache.value = ((weight(v_) * cache.v_acts.back()).colwise() + bias(v_)).row(0);
}

template <typename T>
typename ActorCritic<T>::Vec ActorCritic<T>::backward(const Cache& cache, const Mat& d_mean, const RowVec& d_value,
                                                      const Vec& d_log_std) const {
  Vec grad = Vec::Zero(theta.size());
  auto gW = [&](const Layer& l) { return Eigen::Map<Mat>(grad.data() + l.w, l.out, l.in); };
  auto gb = [&](const Layer& l) { return Eigen::Map<Vec>(grad.data() + l.b, l.out); };

  auto head = [&](const Layer& l, const Mat& d_out, const std::vector<Mat>& acts,
                  const std::vector<Layer>& stream) {
    gW(l).noalias() = d_out * acts.back().transpose();
    gb(l) = d_out.rowwise().sum();
    if (stream.empty()) return;
    Mat dh = weight(l).transpose() * d_out;
    for (int k = static_cast<int>(stream.size()) - 1; k >= 0; --k) {
      const Layer& s = stream[k];
      Mat dz = (dh.array() * (T(1) - acts[k + 1].array().square())).matrix();
      gW(s).noalias() = dz * acts[k].transpose();
      gb(s) = dz.rowwise().sum();
      if (k > 0) dh = weight(s).transpose() * dz;
    }
  };
  head(pi_, d_mean, cache.pi_acts, pi_stream_);
  head(v_, Mat(d_value), cache.v_acts, v_stream_);
  grad.segment(log_std_, act_dim_) = d_log_std;
  return grad;
}

template class ActorCritic<float>;
template class ActorCritic<double>;

// ---------------------------------------------------------------- normalizer

Normalizer::Normalizer(int dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

Eigen::VectorXd Normalizer::variance() const {
  if (count_ < 2) return Eigen::VectorXd::Zero(mean_.size());
  return m2_ / count_;
}

void Normalizer::update(std::span<const double> obs) { update_batch(obs, 1); }

void Normalizer::update_batch(std::span<const double> rows, int n) {
  const int d = dim();
  if (n < 1) return;
  if (rows.size() != size_t(n) * d) throw Error(ErrorCode::ShapeMismatch, "normalizer batch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(rows.data(), n, d);
  Eigen::VectorXd bmean = X.colwise().mean().transpose();
  Eigen::VectorXd bm2 = (X.rowwise() - bmean.transpose()).colwise().squaredNorm().transpose();
  const double nb = n, na = count_, total = na + nb;
  Eigen::VectorXd delta = bmean - mean_;
  mean_ += delta * (nb / total);
  m2_ += bm2 + delta.cwiseProduct(delta) * (na * nb / total);
  count_ = total;
}

void Normalizer::apply(std::span<const double> obs, float* out) const {
  const Eigen::VectorXd var = variance();
  for (int k = 0; k < dim(); ++k) {
    const float m = static_cast<float>(mean_[k]);
    const float v = static_cast<float>(var[k]);
    float z = (static_cast<float>(obs[k]) - m) / std::sqrt(v + 1e-8f);
    out[k] = std::clamp(z, -5.0f, 5.0f);
  }
}

void Normalizer::assign(double count, const Eigen::VectorXd& mean, const Eigen::VectorXd& variance) {
  count_ = count;
  mean_ = mean;
  m2_ = variance * count;
}

// ---------------------------------------------------------------- policy

void PolicyParams::prepare(std::span<const double> obs, float* out) const {
  if (normalize) {
    normalizer.apply(obs, out);
  } else {
    for (size_t k = 0; k < obs.size(); ++k) out[k] = static_cast<float>(obs[k]);
  }
}

PolicyParams make_policy(int obs_dim, int act_dim, const TrainerConfig& config, Rng& rng) {
  PolicyParams p;
  p.net = ActorCritic<float>(obs_dim, act_dim, config.num_layers, config.hidden_units);
  p.net.init(rng);
  p.normalizer = Normalizer(obs_dim);
  p.normalize = config.normalize;
  return p;
}

std::vector<double> act_deterministic(const PolicyParams& params, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != params.obs_dim()) throw Error(ErrorCode::ShapeMismatch, "observation length");
  ActorCritic<float>::Mat x(params.obs_dim(), 1);
  params.prepare(obs, x.data());
  ActorCritic<float>::Cache cache;
  params.net.forward(x, cache);
  std::vector<double> a(params.act_dim());
  for (int k = 0; k < params.act_dim(); ++k) a[k] = cache.mean(k, 0);
  return a;
}

}  // namespace ragmark
