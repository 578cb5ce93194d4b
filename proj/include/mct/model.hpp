#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mct/mce.hpp"
#include "mct/params.hpp"
#include "mct/transformer.hpp"

namespace mct {

struct ModelHyper {
  MceConfig mce;
  EncoderConfig encoder;
  int classes = 0;      // 0 for the pretraining model (head unused)
  int head_hidden = 0;  // defaults to d_model when 0

  int64_t head_hidden_or_default() const { return head_hidden > 0 ? head_hidden : mce.d_model; }

  void validate(bool need_classes) const {
    mce.validate();
    encoder.validate();
    if (encoder.d_model != mce.d_model) {
      throw Error::config("model: encoder d_model " + std::to_string(encoder.d_model) +
                          " differs from mce d_model " + std::to_string(mce.d_model));
    }
    if (need_classes && classes < 2) {
      throw Error::config("model: classifier needs at least 2 classes");
    }
  }
};

// Full classifier: MCE embedding, encoder stack, mean-pool + MLP head.
template <typename T>
class MctModel {
 public:
  ModelHyper hyper;
  ParamStore<T> params;
  MceModule<T> mce;
  TransformerEncoder<T> encoder;
  MlpHead<T> head;

  static MctModel build(const ModelHyper& hyper, uint64_t seed) {
    hyper.validate(/*need_classes=*/true);
    MctModel m;
    m.hyper = hyper;
    m.mce = MceModule<T>::build(m.params, hyper.mce, seed);
    m.encoder = TransformerEncoder<T>::build(m.params, "encoder", hyper.encoder, seed);
    m.head = MlpHead<T>::build(m.params, "head", hyper.mce.d_model,
                               hyper.head_hidden_or_default(), hyper.classes, seed);
    return m;
  }

  // patches [N,w,w,B] -> logits [N,C]
  VarPtr<T> logits(Tape<T>* tape, const Tensor<T>& patches, bool train_mode,
                   DropoutCtx* drop = nullptr) const {
    TokenSequence<T> seq = mce.forward(tape, patches, train_mode);
    VarPtr<T> enc = encoder.forward(tape, seq.tokens, drop);
    return classify(tape, enc, head);
  }

  // eval-mode argmax predictions as 1-based class ids
  std::vector<int> predict(const Tensor<T>& patches) const {
    VarPtr<T> out = logits(nullptr, patches, /*train_mode=*/false);
    const int64_t n = out->value.extent(0);
    const int64_t c = out->value.extent(1);
    std::vector<int> preds(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      preds[static_cast<size_t>(i)] = argmax_lowest(out->value.data() + i * c, c) + 1;
    }
    return preds;
  }
};

}  // namespace mct
