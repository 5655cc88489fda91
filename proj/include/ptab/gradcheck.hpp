#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ptab/encoder.hpp"

namespace ptab {

/// Below this magnitude a tensor's gradient counts as identically zero.
inline constexpr double kZeroGradient = 1e-9;

struct TensorGradError {
  std::string name;
  double error = 0.0;  // relative, or absolute when scale <= kZeroGradient
  double scale = 0.0;  // largest |analytic| or |numeric| entry
};

/// Central differences against `analytic` for every tensor. The error of a
/// tensor is max |a - n| over its entries divided by the largest magnitude in
/// either gradient; entry-wise ratios are meaningless near zero, where the
/// O(h^2) truncation error dominates.
inline std::vector<TensorGradError> gradient_check(
    nn::Parameters<double> p, const nn::Parameters<double>& analytic,
    const std::function<double(const nn::Parameters<double>&)>& loss, double h = 1e-3) {
  std::vector<const nn::Mat<double>*> grads;
  nn::for_each_tensor(analytic, [&](const std::string&, const nn::Mat<double>& g) { grads.push_back(&g); });
  std::vector<TensorGradError> out;
  std::size_t ti = 0;
  nn::Parameters<double>* pp = &p;
  nn::for_each_tensor(*pp, [&](const std::string& name, nn::Mat<double>& t) {
    const nn::Mat<double>& g = *grads[ti++];
    double diff = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + h;
      const double up = loss(*pp);
      t.data()[i] = orig - h;
      const double down = loss(*pp);
      t.data()[i] = orig;
      const double num = (up - down) / (2 * h);
      const double a = g.data()[i];
      diff = std::max(diff, std::abs(a - num));
      scale = std::max({scale, std::abs(a), std::abs(num)});
    }
    out.push_back({name, scale > kZeroGradient ? diff / scale : diff, scale});
  });
  return out;
}

}  // namespace ptab
