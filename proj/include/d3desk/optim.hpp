#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "d3desk/tensor.hpp"

namespace d3desk::ad {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Adam (adaptive moment estimation) with bias correction. A step with zero
// gradients leaves parameters exactly unchanged.
class Adam {
 public:
  Adam(std::vector<Tensor> params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
       Scalar eps = 1e-8);

  void step();
  void zero_grad();

  Scalar lr() const { return lr_; }
  void set_lr(Scalar lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }

  // Moment state keyed per parameter slot, for checkpointing.
  struct State {
    std::vector<std::vector<Scalar>> m, v;
    int64_t t = 0;
  };
  State export_state() const;
  void import_state(const State& s);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Scalar>> m_, v_;
  Scalar lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Checkpoints: named tensors plus free-form string metadata, stored in a
// little-endian binary container. Round trips are bit-exact.
void save_checkpoint(const std::string& path, const NamedParams& params,
                     const std::map<std::string, std::string>& meta = {});
void load_checkpoint(const std::string& path, NamedParams* params,
                     std::map<std::string, std::string>* meta = nullptr);

// Loads values into an existing parameter list by name; every entry must be
// present in the file with an identical shape.
void load_into(const std::string& path, NamedParams& params,
               std::map<std::string, std::string>* meta = nullptr);

}  // namespace d3desk::ad
