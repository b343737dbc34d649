#include "mapi/params.hpp"

#include <cmath>

namespace mapi {

Matrix& ParameterSet::create(const std::string& name, Matrix init) {
  if (items_.count(name))
    throw ContractError("parameter '" + name + "' already exists");
  Entry e;
  e.grad = Matrix(init.rows, init.cols);
  e.m = Matrix(init.rows, init.cols);
  e.v = Matrix(init.rows, init.cols);
  e.value = std::move(init);
  auto [it, ok] = items_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

Matrix& ParameterSet::value(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end())
    throw ContractError("unknown parameter '" + name + "'");
  return it->second.value;
}

const Matrix& ParameterSet::value(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end())
    throw ContractError("unknown parameter '" + name + "'");
  return it->second.value;
}

Matrix& ParameterSet::grad(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end())
    throw ContractError("unknown parameter '" + name + "'");
  return it->second.grad;
}

void ParameterSet::zero_grads() {
  for (auto& [name, e] : items_)
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

void ParameterSet::adam_step(double lr, double beta1, double beta2,
                             double eps) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& [name, e] : items_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      double g = e.grad.data[i];
      if (!std::isfinite(g))
        throw TrainingError("non-finite gradient in parameter '" + name + "'");
      e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
      e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
      double mhat = e.m.data[i] / bc1;
      double vhat = e.v.data[i] / bc2;
      e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

BoundParams::BoundParams(Tape& tape, ParameterSet& ps) : tape_(&tape), ps_(&ps) {
  for (auto& [name, e] : ps.items()) vars_[name] = tape.param(e.value);
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end())
    throw ContractError("parameter '" + name + "' not bound to tape");
  return it->second;
}

void BoundParams::collect_grads() {
  for (auto& [name, v] : vars_) {
    if (!tape_->has_grad(v)) continue;
    const Matrix& g = tape_->grad(v);
    Matrix& acc = ps_->grad(name);
    for (std::size_t i = 0; i < g.size(); ++i) acc.data[i] += g.data[i];
  }
}

}  // namespace mapi
