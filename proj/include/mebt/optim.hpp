#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "mebt/autograd.hpp"
#include "mebt/nn.hpp"

// AdamW with decoupled weight decay and global-gradient-norm clipping.
// Decay skips parameters flagged as no-decay (norms, biases, embeddings by
// caller's choice). State is allocated lazily on the first step.

namespace mebt::optim {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // 0 disables clipping

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adamw: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adamw: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
    if (weight_decay < 0.0 || clip_norm < 0.0)
      throw ConfigError("adamw: weight_decay and clip_norm must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const AdamWConfig& c) {
  j = {{"lr", c.lr},   {"beta1", c.beta1},
       {"beta2", c.beta2}, {"eps", c.eps},
       {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, AdamWConfig& c) {
  j.at("lr").get_to(c.lr);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("clip_norm").get_to(c.clip_norm);
}

template <typename S>
class AdamW {
 public:
  AdamW(nn::NamedParams<S> params, AdamWConfig cfg, std::vector<bool> decay_mask = {})
      : params_(std::move(params)), cfg_(cfg), decay_(std::move(decay_mask)) {
    cfg_.validate();
    if (decay_.empty()) decay_.assign(params_.size(), true);
    check(decay_.size() == params_.size(), "adamw: decay mask size mismatch");
  }

  // Default no-decay rule: biases, norm scales/shifts, and the 1-row vectors.
  static std::vector<bool> default_decay_mask(const nn::NamedParams<S>& params) {
    std::vector<bool> mask;
    mask.reserve(params.size());
    for (const auto& [name, p] : params) {
      const bool no_decay = name.ends_with(".b") || name.ends_with(".gamma") ||
                            name.ends_with(".beta") || p->val.rows() == 1;
      mask.push_back(!no_decay);
    }
    return mask;
  }

  std::int64_t step_count() const { return t_; }

  // Returns the pre-clip global gradient norm. Parameters with no recorded
  // gradient this step are treated as zero-gradient (state still advances).
  double step() {
    double sq = 0.0;
    for (const auto& [name, p] : params_)
      if (p->grad.size() > 0) sq += static_cast<double>(p->grad.template cast<double>().squaredNorm());
    const double norm = std::sqrt(sq);
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

    if (m_.empty()) {
      for (const auto& [name, p] : params_) {
        m_.push_back(Mat<S>::Zero(p->val.rows(), p->val.cols()));
        v_.push_back(Mat<S>::Zero(p->val.rows(), p->val.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      Mat<S> g = p->grad.size() > 0 ? Mat<S>(p->grad * static_cast<S>(scale))
                                    : Mat<S>(Mat<S>::Zero(p->val.rows(), p->val.cols()));
      if (!g.allFinite()) throw NumericError("adamw: non-finite gradient for " + params_[k].first);
      m_[k] = static_cast<S>(cfg_.beta1) * m_[k] + static_cast<S>(1.0 - cfg_.beta1) * g;
      v_[k] = (static_cast<S>(cfg_.beta2) * v_[k].array() +
               static_cast<S>(1.0 - cfg_.beta2) * g.array().square())
                  .matrix();
      const Mat<S> m_hat = m_[k] / static_cast<S>(bc1);
      const Mat<S> v_hat = v_[k] / static_cast<S>(bc2);
      if (decay_[k] && cfg_.weight_decay > 0.0)
        p->val -= static_cast<S>(cfg_.lr * cfg_.weight_decay) * p->val;
      p->val -= (static_cast<S>(cfg_.lr) * m_hat.array() /
                 (v_hat.array().sqrt() + static_cast<S>(cfg_.eps)))
                    .matrix();
    }
    return norm;
  }

  void zero_grads() {
    for (const auto& [name, p] : params_) p->grad.resize(0, 0);
  }

 private:
  nn::NamedParams<S> params_;
  AdamWConfig cfg_;
  std::vector<bool> decay_;
  std::vector<Mat<S>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace mebt::optim
