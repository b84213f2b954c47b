#include "storyviz/story_ops.hpp"

#include <limits>
#include <sstream>

#include "storyviz/error.hpp"

namespace storyviz::ops {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream ss;
  ss << t.sizes();
  return ss.str();
}

void expect_dim(const torch::Tensor& t, int64_t dim, const char* what) {
  if (t.dim() != dim) {
    throw ShapeError(std::string(what) + " must have " + std::to_string(dim) + " dimensions, got " +
                     shape_str(t));
  }
}

// Softmax with explicit backward so masked entries never see the logits
// stored there (not even through NaN * 0 in the gradient).
class MaskedSoftmaxFunction : public torch::autograd::Function<MaskedSoftmaxFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& logits,
                               const torch::Tensor& mask, int64_t dim) {
    const auto neg_inf = torch::full({}, -std::numeric_limits<double>::infinity(), logits.options());
    const auto filled = torch::where(mask, logits, neg_inf);
    const auto max = std::get<0>(filled.max(dim, /*keepdim=*/true));
    const auto e = torch::where(mask, torch::exp(filled - max), torch::zeros({}, logits.options()));
    const auto p = e / e.sum(dim, /*keepdim=*/true);
    ctx->save_for_backward({p});
    ctx->saved_data["dim"] = dim;
    return p;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto p = ctx->get_saved_variables()[0];
    const int64_t dim = ctx->saved_data["dim"].toInt();
    const auto& g = grad_outputs[0];
    const auto grad = p * (g - (g * p).sum(dim, /*keepdim=*/true));
    return {grad, torch::Tensor(), torch::Tensor()};
  }
};

// Adds the batch dimension if the caller omitted it.
struct Batched {
  bool added = false;
  torch::Tensor lift(const torch::Tensor& t, int64_t unbatched_dim) {
    if (t.dim() == unbatched_dim) {
      added = true;
      return t.unsqueeze(0);
    }
    return t;
  }
  torch::Tensor drop(const torch::Tensor& t) const { return added ? t.squeeze(0) : t; }
};

}  // namespace

torch::Tensor masked_softmax(const torch::Tensor& logits, const torch::Tensor& mask, int64_t dim) {
  torch::Tensor m;
  try {
    m = mask.to(torch::kBool).expand_as(logits);
  } catch (const c10::Error&) {
    throw ShapeError("mask " + shape_str(mask) + " does not broadcast to logits " + shape_str(logits));
  }
  if (!m.any(dim).all().item<bool>()) {
    throw NumericError("masked_softmax: a slice has no unmasked entry");
  }
  return MaskedSoftmaxFunction::apply(logits, m, dim);
}

torch::Tensor flatten_word_mask(const torch::Tensor& mask) {
  expect_dim(mask, 3, "word mask");
  return mask.to(torch::kBool).reshape({mask.size(0), mask.size(1) * mask.size(2)});
}

torch::Tensor flatten_words(const torch::Tensor& w, const torch::Tensor& mask) {
  expect_dim(w, 4, "word embeddings");
  const int64_t b = w.size(0), n = w.size(1), d = w.size(2), l = w.size(3);
  if (mask.dim() != 3 || mask.size(0) != b || mask.size(1) != n || mask.size(2) != l) {
    throw ShapeError("word mask " + shape_str(mask) + " does not match embeddings " + shape_str(w));
  }
  const auto flat = w.permute({0, 2, 1, 3}).reshape({b, d, n * l});
  const auto keep = flatten_word_mask(mask).unsqueeze(1);
  return torch::where(keep, flat, torch::zeros({}, w.options()));
}

EnrichedSentences enrich_sentences(const torch::Tensor& s_in, const torch::Tensor& w_in,
                                   const torch::Tensor& mask_in) {
  Batched batch;
  const auto s = batch.lift(s_in, 2);
  const auto w = batch.lift(w_in, 3);
  const auto mask = batch.lift(mask_in, 2);
  expect_dim(s, 3, "sentence vectors");
  expect_dim(w, 4, "word embeddings");
  if (s.size(0) != w.size(0) || s.size(1) != w.size(1) || s.size(2) != w.size(2)) {
    throw ShapeError("sentence vectors " + shape_str(s) + " do not match word embeddings " +
                     shape_str(w));
  }
  const auto w_flat = flatten_words(w, mask);                         // [B, D, NL]
  const auto word_mask = flatten_word_mask(mask).unsqueeze(1);        // [B, 1, NL]
  const auto logits = torch::bmm(s, w_flat);                          // [B, N, NL]
  auto sigma = masked_softmax(logits, word_mask, -1);
  auto s_prime = torch::bmm(sigma, w_flat.transpose(1, 2));           // [B, N, D]
  return {batch.drop(sigma), batch.drop(s_prime)};
}

AttentionResult extended_spatial_attention(const torch::Tensor& v_in, const torch::Tensor& w_in,
                                           const torch::Tensor& mask_in, const torch::Tensor& proj,
                                           AttentionScope scope) {
  Batched batch;
  const auto v = batch.lift(v_in, 4);
  const auto w = batch.lift(w_in, 3);
  const auto mask = batch.lift(mask_in, 2);
  expect_dim(v, 5, "visual features");
  expect_dim(w, 4, "word embeddings");
  expect_dim(proj, 2, "projection weight");
  const int64_t b = v.size(0), n = v.size(1), c = v.size(2), h = v.size(3), wd = v.size(4);
  const int64_t d = w.size(2), l = w.size(3);
  if (w.size(0) != b || w.size(1) != n) {
    throw ShapeError("visual features " + shape_str(v) + " and words " + shape_str(w) +
                     " disagree on batch or story length");
  }
  if (proj.size(0) != d || proj.size(1) != c) {
    throw ShapeError("projection " + shape_str(proj) + " must be [D=" + std::to_string(d) +
                     ", C=" + std::to_string(c) + "]");
  }

  const auto w_flat = flatten_words(w, mask);                                   // [B, D, NL]
  const auto v_flat = v.permute({0, 2, 1, 3, 4}).reshape({b, c, n * h * wd});   // [B, C, NHW]
  const auto v_proj = torch::matmul(proj, v_flat);                              // [B, D, NHW]
  auto logits = torch::bmm(v_proj.transpose(1, 2), w_flat);                     // [B, NHW, NL]

  auto attend = flatten_word_mask(mask).unsqueeze(1);                           // [B, 1, NL]
  if (scope == AttentionScope::kSentence) {
    const auto opts = torch::TensorOptions().dtype(torch::kLong).device(v.device());
    const auto frame_of_row = torch::arange(n * h * wd, opts).div(h * wd, "floor");
    const auto sentence_of_col = torch::arange(n * l, opts).div(l, "floor");
    const auto same = frame_of_row.unsqueeze(1).eq(sentence_of_col.unsqueeze(0));  // [NHW, NL]
    attend = torch::logical_and(attend, same.unsqueeze(0));
  }
  auto beta = masked_softmax(logits, attend, -1);
  auto v_w = torch::bmm(w_flat, beta.transpose(1, 2));                           // [B, D, NHW]
  auto maps = v_w.reshape({b, d, n, h, wd}).permute({0, 2, 1, 3, 4});
  return {batch.drop(logits), batch.drop(beta), batch.drop(v_w), batch.drop(maps)};
}

torch::Tensor fuse_features(const torch::Tensor& v_in, const torch::Tensor& words_in,
                            const torch::Tensor& mask_in, const torch::Tensor& proj) {
  Batched batch;
  const auto v = batch.lift(v_in, 3);
  const auto words = batch.lift(words_in, 2);
  const auto mask = batch.lift(mask_in, 1);
  expect_dim(v, 4, "visual features");
  expect_dim(words, 3, "words");
  expect_dim(mask, 2, "word mask");
  const int64_t b = v.size(0), c = v.size(1), h = v.size(2), wd = v.size(3);
  const int64_t d = words.size(1), lt = words.size(2);
  if (words.size(0) != b || mask.size(0) != b || mask.size(1) != lt) {
    throw ShapeError("fusion inputs disagree: v " + shape_str(v) + ", words " + shape_str(words) +
                     ", mask " + shape_str(mask));
  }
  if (proj.dim() != 2 || proj.size(0) != d || proj.size(1) != c) {
    throw ShapeError("projection " + shape_str(proj) + " must be [D=" + std::to_string(d) +
                     ", C=" + std::to_string(c) + "]");
  }
  const auto keep = mask.to(torch::kBool);
  const auto clean = torch::where(keep.unsqueeze(1), words, torch::zeros({}, words.options()));
  const auto v_proj = torch::matmul(proj, v.reshape({b, c, h * wd}));  // [B, D, HW]
  auto fused = torch::bmm(clean.transpose(1, 2), v_proj);              // [B, Lt, HW]
  fused = torch::where(keep.unsqueeze(-1), fused, torch::zeros({}, fused.options()));
  return batch.drop(fused.reshape({b, lt, h, wd}));
}

WordSpaceProjectionImpl::WordSpaceProjectionImpl(int64_t in_channels, int64_t word_dim) {
  weight_ = register_parameter("weight", torch::empty({word_dim, in_channels}));
  torch::NoGradGuard guard;
  torch::nn::init::orthogonal_(weight_);
}

}  // namespace storyviz::ops
