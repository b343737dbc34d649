#pragma once

#include <map>
#include <string>

#include "mapi/matrix.hpp"
#include "mapi/tape.hpp"

namespace mapi {

// Named parameters with matching gradient accumulators and optimizer moment
// state. Parameters outlive the per-epoch tapes; bind() copies values onto a
// tape and collect_grads() copies leaf gradients back.
class ParameterSet {
 public:
  struct Entry {
    Matrix value;
    Matrix grad;
    Matrix m;  // first moment
    Matrix v;  // second moment
  };

  Matrix& create(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return items_.count(name) > 0; }
  Matrix& value(const std::string& name);
  const Matrix& value(const std::string& name) const;
  Matrix& grad(const std::string& name);

  void zero_grads();

  // One adaptive-moment step over every parameter; throws TrainingError if a
  // gradient is non-finite.
  void adam_step(double lr, double beta1, double beta2, double eps);

  std::size_t count() const { return items_.size(); }
  long step_count() const { return step_; }

  // Ordered iteration (std::map) keeps runs deterministic.
  std::map<std::string, Entry>& items() { return items_; }
  const std::map<std::string, Entry>& items() const { return items_; }

 private:
  std::map<std::string, Entry> items_;
  long step_ = 0;
};

// Tape leaves for every parameter, by name.
class BoundParams {
 public:
  BoundParams(Tape& tape, ParameterSet& ps);
  Var operator[](const std::string& name) const;

  // Adds each leaf's gradient into the ParameterSet accumulators.
  void collect_grads();

 private:
  Tape* tape_;
  ParameterSet* ps_;
  std::map<std::string, Var> vars_;
};

}  // namespace mapi
