#include <cmath>
#include <sstream>

#include "qairn/error.hpp"
#include "qairn/trainer.hpp"

namespace qairn::trainer {

void OptimizerConfig::validate() const {
  require(lr_floor > 0.0 && lr0 >= lr_floor, ErrorKind::Config,
          "learning rates must satisfy lr0 >= lr_floor > 0");
  require(halving_period >= 1, ErrorKind::Config, "halving_period must be at least 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::Config,
          "Adam betas must lie in [0, 1)");
  require(epsilon > 0.0, ErrorKind::Config, "Adam epsilon must be positive");
  require(!grad_clip || *grad_clip > 0.0, ErrorKind::Config, "grad_clip must be positive");
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"algorithm", "adam"},
       {"lr0", c.lr0},
       {"halving_period", c.halving_period},
       {"lr_floor", c.lr_floor},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"total_steps", c.total_steps},
       {"grad_clip", c.grad_clip ? nlohmann::json(*c.grad_clip) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  OptimizerConfig d;
  const std::string algo = j.value("algorithm", std::string("adam"));
  require(algo == "adam", ErrorKind::Config, "unsupported optimizer '" + algo + "'");
  c.lr0 = j.value("lr0", d.lr0);
  c.halving_period = j.value("halving_period", d.halving_period);
  c.lr_floor = j.value("lr_floor", d.lr_floor);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.grad_clip.reset();
  if (j.contains("grad_clip") && !j.at("grad_clip").is_null())
    c.grad_clip = j.at("grad_clip").get<double>();
}

double lr_at_step(std::uint64_t step, const OptimizerConfig& cfg) {
  const std::uint64_t halvings = step / cfg.halving_period;
  // past ~1100 halvings the power underflows to zero, which the floor absorbs
  const double lr = halvings > 2000 ? 0.0 : std::ldexp(cfg.lr0, -static_cast<int>(halvings));
  return std::max(lr, cfg.lr_floor);
}

TrainState init_state(Model model, std::uint64_t data_seed) {
  ParameterSet m = model.parameters().zeros_like();
  ParameterSet v = m;
  return TrainState{std::move(model), 0, std::move(m), std::move(v),
                    dataio::SamplerState{data_seed, 0}, std::nullopt};
}

namespace {

std::string describe(const dataio::TrainingBatch& batch) {
  std::ostringstream os;
  os << "batch " << batch.batch_index << " (qf";
  for (const auto& p : batch.plan) os << ' ' << p.qf;
  os << ')';
  return os.str();
}

}  // namespace

LossReport train_step(TrainState& state, const dataio::TrainingBatch& batch,
                      const OptimizerConfig& opt, const SsimParams& ssim) {
  const Model& model = state.model;
  require(batch.compressed.shape() == batch.pristine.shape(), ErrorKind::Dimension,
          "compressed and pristine batches differ in shape");
  require(batch.compressed.c() == model.config().input_channels, ErrorKind::Dimension,
          "batch has " + std::to_string(batch.compressed.c()) + " channels, model expects " +
              std::to_string(model.config().input_channels));
  const double lr = lr_at_step(state.step, opt);

  ForwardTape tape;
  const RestorationOutput out = model.forward_train(batch.compressed, tape);
  Tensor d_out;
  const LossReport report = total_loss(out.restored, batch.pristine, &d_out, ssim);
  const auto where = [&] {
    std::ostringstream os;
    os << "step " << state.step << ", lr " << lr << ", " << describe(batch);
    return os.str();
  };
  require(std::isfinite(report.total), ErrorKind::NonFinite,
          "non-finite loss (l1 " + std::to_string(report.l1) + ", ssim term " +
              std::to_string(report.ssim_term) + ") at " + where());

  ParameterSet grads = model.parameters().zeros_like();
  model.backward(tape, d_out, grads);

  double norm2 = 0.0;
  for (const auto& g : grads)
    for (float x : g.values) norm2 += double(x) * double(x);
  require(std::isfinite(norm2), ErrorKind::NonFinite, "non-finite gradient at " + where());
  double scale = 1.0;
  if (opt.grad_clip && std::sqrt(norm2) > *opt.grad_clip) scale = *opt.grad_clip / std::sqrt(norm2);

  const double t = double(state.step + 1);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  ParameterSet& params = state.model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    float* p = params[k].values.data();
    float* m = state.m[k].values.data();
    float* v = state.v[k].values.data();
    const float* g = grads[k].values.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(params[k].values.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double gi = double(g[i]) * scale;
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.epsilon));
    }
  }
  ++state.step;
  return report;
}

}  // namespace qairn::trainer
