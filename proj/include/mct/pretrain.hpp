#pragma once

// Center-mask pretraining: embed the patch, encode it, overwrite the center
// token of the encoded sequence with a learnable vector, decode with two
// standard transformer blocks, and reconstruct the center spectrum under MSE.
// The encoder and the pretraining-only parts train jointly; fine-tuning
// transfers the encoder side by name.

#include <cstdint>
#include <string>
#include <vector>

#include "mct/checkpoint.hpp"
#include "mct/hsi.hpp"
#include "mct/model.hpp"
#include "mct/optim.hpp"

namespace mct {

template <typename T>
struct CmppModule {
  VarPtr<T> mask_vector;  // V_l, replaces the center token
  EncoderBlock<T> dec0, dec1;
  MlpHead<T> recon;  // d_model -> hidden -> hidden -> bands

  static CmppModule build(ParamStore<T>& store, int d_model, int bands, int recon_hidden,
                          const EncoderConfig& encoder_cfg, uint64_t seed) {
    CmppModule c;
    // zero-mean Gaussian, std 0.02
    c.mask_vector = store.add_param(
        "cmpp.mask_vector", normal_init<T>({d_model}, seed, "cmpp.mask_vector", 0.02));
    EncoderConfig dec_cfg = encoder_cfg;
    dec_cfg.depth = 2;  // the decoder is exactly two standard blocks
    c.dec0 = EncoderBlock<T>::build(store, "cmpp.decoder.block0", dec_cfg, seed);
    c.dec1 = EncoderBlock<T>::build(store, "cmpp.decoder.block1", dec_cfg, seed);
    c.recon = MlpHead<T>::build(store, "cmpp.recon", d_model,
                                recon_hidden > 0 ? recon_hidden : d_model, bands, seed);
    return c;
  }
};

// Replace the center token with V_l; order and length preserved.
template <typename T>
TokenSequence<T> mask_center(Tape<T>* tape, const TokenSequence<T>& seq,
                             const VarPtr<T>& mask_vector) {
  TokenSequence<T> masked = seq;
  masked.tokens = ops::replace_token(tape, seq.tokens, seq.center_index, mask_vector);
  return masked;
}

// Decode the full masked sequence, read the decoded center token, and map it
// to a spectrum estimate of length B: [N, L, d] -> [N, B].
template <typename T>
VarPtr<T> reconstruct(Tape<T>* tape, const TokenSequence<T>& masked, const CmppModule<T>& cmpp,
                      DropoutCtx* drop = nullptr) {
  VarPtr<T> h = cmpp.dec0.forward(tape, masked.tokens, drop);
  h = cmpp.dec1.forward(tape, h, drop);
  VarPtr<T> center = ops::select_token(tape, h, masked.center_index);
  return cmpp.recon.forward(tape, center);
}

// Encoder (MCT minus head) plus the pretraining-only parts in one store, so a
// single optimizer owns the whole tree.
template <typename T>
class PretrainModel {
 public:
  ModelHyper hyper;  // classes ignored
  int recon_hidden = 0;
  ParamStore<T> params;
  MceModule<T> mce;
  TransformerEncoder<T> encoder;
  CmppModule<T> cmpp;

  static PretrainModel build(const ModelHyper& hyper, int recon_hidden, uint64_t seed) {
    hyper.validate(/*need_classes=*/false);
    PretrainModel m;
    m.hyper = hyper;
    m.recon_hidden = recon_hidden;
    m.mce = MceModule<T>::build(m.params, hyper.mce, seed);
    m.encoder = TransformerEncoder<T>::build(m.params, "encoder", hyper.encoder, seed);
    m.cmpp = CmppModule<T>::build(m.params, hyper.mce.d_model, hyper.mce.bands, recon_hidden,
                                  hyper.encoder, seed);
    return m;
  }

  // patches [N,w,w,B] -> spectrum estimates [N,B]
  VarPtr<T> forward(Tape<T>* tape, const Tensor<T>& patches, bool train_mode,
                    DropoutCtx* drop = nullptr) const {
    TokenSequence<T> seq = mce.forward(tape, patches, train_mode);
    seq.tokens = encoder.forward(tape, seq.tokens, drop);
    TokenSequence<T> masked = mask_center(tape, seq, cmpp.mask_vector);
    return reconstruct(tape, masked, cmpp, drop);
  }
};

// The reconstruction target: the (normalized) spectrum at each patch center.
template <typename T>
Tensor<T> center_spectra(const std::vector<Patch>& batch) {
  if (batch.empty()) throw Error::data("empty pretraining batch");
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t b = batch[0].bands;
  const int64_t ctr = (batch[0].size - 1) / 2;
  Tensor<T> t({n, b});
  for (int64_t i = 0; i < n; ++i) {
    const Patch& p = batch[static_cast<size_t>(i)];
    for (int64_t band = 0; band < b; ++band) {
      t[i * b + band] = static_cast<T>(p.at(ctr, ctr, band));
    }
  }
  return t;
}

// One joint optimization step; returns the pre-step loss.
template <typename T>
T pretrain_step(PretrainModel<T>& model, const std::vector<Patch>& batch, Adam<T>& opt, double lr,
                DropoutCtx* drop = nullptr) {
  Tape<T> tape;
  const Tensor<T> patches = stack_patches<T>(batch);
  const Tensor<T> targets = center_spectra<T>(batch);
  VarPtr<T> estimate = model.forward(&tape, patches, /*train_mode=*/true, drop);
  VarPtr<T> loss = ops::mse(&tape, estimate, targets);
  model.params.zero_grad();
  tape.backward(loss);
  opt.step(model.params, lr);
  return loss->value[0];
}

// How strongly the reconstruction depends on the raw center spectrum, which
// the conv receptive fields and attention have mixed into neighboring tokens
// before masking. Reported, not asserted: ||recon(x + delta at center) -
// recon(x)||_2 / ||delta||_2.
template <typename T>
double center_leakage_sensitivity(const PretrainModel<T>& model, const Patch& patch,
                                  double delta = 1e-3) {
  std::vector<Patch> one{patch};
  const Tensor<T> base = stack_patches<T>(one);
  Tensor<T> bumped = base;
  const int64_t w = patch.size, b = patch.bands;
  const int64_t ctr = (w - 1) / 2;
  double delta_norm_sq = 0.0;
  for (int64_t band = 0; band < b; ++band) {
    bumped[((ctr * w) + ctr) * b + band] += static_cast<T>(delta);
    delta_norm_sq += delta * delta;
  }
  const VarPtr<T> r0 = model.forward(nullptr, base, /*train_mode=*/false);
  const VarPtr<T> r1 = model.forward(nullptr, bumped, /*train_mode=*/false);
  double diff_sq = 0.0;
  for (int64_t i = 0; i < r0->value.numel(); ++i) {
    const double d = static_cast<double>(r1->value[i]) - static_cast<double>(r0->value[i]);
    diff_sq += d * d;
  }
  return std::sqrt(diff_sq) / std::sqrt(delta_norm_sq);
}

// ---------------------------------------------------------------------------
// weight transfer

enum class TransferScope { none, full, partial };

inline TransferScope transfer_scope_from_string(const std::string& s) {
  if (s == "none") return TransferScope::none;
  if (s == "full") return TransferScope::full;
  if (s == "partial") return TransferScope::partial;
  throw Error::config("unknown transfer scope: " + s + " (expected full|partial|none)");
}

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> skipped;  // encoder-side names present in only one tree
};

inline bool is_encoder_side(const std::string& name) {
  return name.rfind("mce.", 0) == 0 || name.rfind("encoder.", 0) == 0;
}

// Copies encoder-side tensors (params and buffers) by name from a checkpoint
// into a freshly initialized target. The classifier head is never touched;
// V_l, decoder and reconstruction head are never transferred.
template <typename T>
TransferReport transfer_weights(const LoadedCheckpoint& ck, ParamStore<T>& target,
                                TransferScope scope) {
  TransferReport report;
  if (scope == TransferScope::none) return report;

  std::vector<std::string> target_names = target.param_names();
  for (const auto& b : target.buffer_names()) target_names.push_back(b);

  std::vector<std::string> missing;
  for (const auto& name : target_names) {
    if (!is_encoder_side(name)) continue;
    const CheckpointEntry* entry = ck.find(name);
    if (entry == nullptr) {
      if (scope == TransferScope::full) {
        missing.push_back(name);
      } else {
        report.skipped.push_back(name);
      }
      continue;
    }
    Tensor<T>* dst = nullptr;
    if (auto* p = target.find_param(name)) {
      dst = &p->var->value;
    } else {
      dst = target.find_buffer(name);
    }
    if (dst->shape() != entry->shape) {
      throw Error::shape("transfer shape mismatch for " + name + ": checkpoint " +
                         shape_str(entry->shape) + " vs model " + shape_str(dst->shape()));
    }
    for (int64_t i = 0; i < dst->numel(); ++i) {
      (*dst)[i] = static_cast<T>(entry->values[static_cast<size_t>(i)]);
    }
    report.copied.push_back(name);
  }
  if (!missing.empty()) {
    std::string msg = "full transfer failed; names missing from checkpoint:";
    for (const auto& n : missing) msg += " " + n;
    throw Error::data(msg);
  }
  // encoder-side checkpoint names the target does not have (e.g. IIE weights
  // when fine-tuning the conv-only variant)
  for (const auto& e : ck.entries) {
    if (!is_encoder_side(e.name)) continue;
    if (target.find_param(e.name) == nullptr && target.find_buffer(e.name) == nullptr) {
      report.skipped.push_back(e.name);
    }
  }
  return report;
}

}  // namespace mct
