#pragma once

// Tape-based reverse mode on top of the kernels in ops.hpp. Ops take a
// nullable Tape*: with no tape (or no input requiring grad) nothing is
// recorded and the call is a plain forward.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "apd/ops.hpp"
#include "apd/tensor.hpp"

namespace apd {

struct Variable {
  Tensor4 value;
  bool requires_grad = false;
};

using Var = std::shared_ptr<Variable>;

Var make_var(Tensor4 value, bool requires_grad = false);

class Tape {
 public:
  void record(std::string op, std::function<void()> backward);

  // Seeds `output` with `seed` (added to any existing grad) and replays every
  // recorded op once, newest first.
  void backward(const Var& output, const Tensor4& seed);
  void backward(const Var& output);  // seed of ones
  // Replays assuming the caller already seeded output grads.
  void replay();

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::string>& op_names() const { return names_; }
  void clear();

 private:
  std::vector<std::string> names_;
  std::vector<std::function<void()>> entries_;
};

// True when a tape is active and at least one input needs a gradient.
bool should_record(const Tape* tape, std::initializer_list<const Var*> inputs);

namespace ag {

Var conv2d(Tape* tape, const Var& x, const ConvSpec& spec, const Var& weight,
           const Var& bias = nullptr);
Var maxpool2d(Tape* tape, const Var& x, int k, int s, int p);
// gamma and beta are (1, C, 1, 1) parameters; stats are updated in place when
// training.
Var batchnorm2d(Tape* tape, const Var& x, const Var& gamma, const Var& beta,
                BatchNormStats& stats);
Var concat_channels(Tape* tape, const std::vector<Var>& parts);
Var resize_nearest(Tape* tape, const Var& x, int target_h, int target_w);
Var add(Tape* tape, const Var& a, const Var& b);
Var mul(Tape* tape, const Var& a, const Var& b);
Var scalar_mul(Tape* tape, const Var& a, double s);
Var sigmoid(Tape* tape, const Var& x);
Var tanh(Tape* tape, const Var& x);
Var softplus(Tape* tape, const Var& x);
Var exp(Tape* tape, const Var& x);
Var log(Tape* tape, const Var& x);
// Sum of all elements as a (1,1,1,1) tensor.
Var sum(Tape* tape, const Var& x);

}  // namespace ag
}  // namespace apd
