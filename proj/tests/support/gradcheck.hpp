#pragma once

// Central finite-difference oracle for scalar functionals of tensors. It
// only evaluates the function; it never touches autograd, so it stays
// independent of the backward passes it is used to check.

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace storyviz::testing {

using ScalarFn = std::function<torch::Tensor(const std::vector<torch::Tensor>&)>;

inline std::vector<torch::Tensor> numeric_gradients(const ScalarFn& f, std::vector<torch::Tensor> inputs,
                                                    double eps = 1e-6) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> grads;
  for (auto& x : inputs) {
    auto g = torch::zeros_like(x);
    auto flat = x.view(-1);
    auto gflat = g.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = f(inputs).item<double>();
      flat[i] = orig - eps;
      const double down = f(inputs).item<double>();
      flat[i] = orig;
      gflat[i] = (up - down) / (2.0 * eps);
    }
    grads.push_back(g);
  }
  return grads;
}

inline std::vector<torch::Tensor> autograd_gradients(const ScalarFn& f, const std::vector<torch::Tensor>& inputs) {
  std::vector<torch::Tensor> leaves;
  for (const auto& x : inputs) leaves.push_back(x.detach().clone().requires_grad_(true));
  auto out = f(leaves);
  auto grads = torch::autograd::grad({out}, leaves, /*grad_outputs=*/{}, /*retain_graph=*/false,
                                     /*create_graph=*/false, /*allow_unused=*/true);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].defined()) grads[i] = torch::zeros_like(inputs[i]);
  }
  return grads;
}

// ||a - n|| / max(||a||, ||n||) per input; 0 when both vanish.
inline double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
  const double diff = (analytic - numeric).norm().item<double>();
  const double scale = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  return scale == 0.0 ? 0.0 : diff / scale;
}

inline double max_gradient_error(const ScalarFn& f, const std::vector<torch::Tensor>& inputs, double eps = 1e-6) {
  std::vector<torch::Tensor> copies;
  for (const auto& x : inputs) copies.push_back(x.detach().clone());
  const auto numeric = numeric_gradients(f, copies, eps);
  const auto analytic = autograd_gradients(f, inputs);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

// Random mask [N, L] with at least one real token per row, right-padded.
inline torch::Tensor random_prefix_mask(int64_t n, int64_t l, torch::Generator& gen) {
  auto mask = torch::zeros({n, l}, torch::kBool);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t len = torch::randint(1, l + 1, {1}, gen).item<int64_t>();
    mask[i].slice(0, 0, len).fill_(true);
  }
  return mask;
}

}  // namespace storyviz::testing

namespace storyviz::testing {

// Worst relative error between autograd and central differences over every
// trainable parameter of `module` for the scalar `loss()`.
inline double module_gradient_error(torch::nn::Module& module, const std::function<torch::Tensor()>& loss,
                                    double eps = 1e-6) {
  auto params = module.parameters();
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  loss().backward();
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (auto& p : params) {
    auto analytic = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto numeric = torch::zeros_like(p);
    auto flat = p.view(-1);
    auto nflat = numeric.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = loss().item<double>();
      flat[i] = orig - eps;
      const double down = loss().item<double>();
      flat[i] = orig;
      nflat[i] = (up - down) / (2.0 * eps);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace storyviz::testing
