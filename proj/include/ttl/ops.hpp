#pragma once

#include <vector>

#include "ttl/tensor.hpp"

namespace ttl {

// Every op records a backward closure on the tape when a tape is supplied and
// at least one input requires grad. Output requires_grad is the OR of inputs'.

Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor transpose(const Tensor& a, GradTape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor scale(const Tensor& a, double c, GradTape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double c, GradTape* tape = nullptr);

// y[i,:] = a[i,:] + bias
Tensor add_rowwise(const Tensor& a, const Tensor& bias, GradTape* tape = nullptr);

// y = a * s where s is a 1-element tensor (scalar broadcast)
Tensor scale_by(const Tensor& a, const Tensor& s, GradTape* tape = nullptr);

// p[i,j] = exp(tau*x[i,j] - max_j') / sum, rowwise over the last dimension
Tensor softmax(const Tensor& x, double temperature, GradTape* tape = nullptr);

// per-row normalization with learned affine over the last dimension
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  GradTape* tape = nullptr, double eps = 1e-5);

Tensor gelu(const Tensor& x, GradTape* tape = nullptr);       // exact erf form
Tensor log_op(const Tensor& x, GradTape* tape = nullptr);
Tensor exp_op(const Tensor& x, GradTape* tape = nullptr);
Tensor sqrt_op(const Tensor& x, GradTape* tape = nullptr);
Tensor reciprocal(const Tensor& x, GradTape* tape = nullptr);

Tensor sum(const Tensor& x, GradTape* tape = nullptr);   // -> scalar
Tensor mean(const Tensor& x, GradTape* tape = nullptr);  // -> scalar

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape, GradTape* tape = nullptr);

Tensor concat_rows(const std::vector<Tensor>& parts, GradTape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, GradTape* tape = nullptr);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len, GradTape* tape = nullptr);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len, GradTape* tape = nullptr);

// [C,H,W] image -> [num_patches, C*ps*ps] rows, patches in raster order
Tensor extract_patches(const Tensor& image, std::size_t patch_size, GradTape* tape = nullptr);

// x / ||x||_2 over the whole tensor (used on the final embedding)
Tensor l2_normalize(const Tensor& x, GradTape* tape = nullptr);

}  // namespace ttl
