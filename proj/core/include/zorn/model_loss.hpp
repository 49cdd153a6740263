#pragma once

#include <memory>

#include "zorn/models.hpp"
#include "zorn/tasks.hpp"
#include "zorn/zoo.hpp"

namespace zorn {

// Black-box view of an LSTM on a fixed batch: eval() runs the
// teacher-forced forward pass, probes perturb the flat float32 theta in
// place. Workspaces are owned, so repeated evaluations allocate nothing
// and the live working set stays independent of sequence length.
class ModelBatchLoss final : public BlackBoxLoss {
 public:
  ModelBatchLoss(LstmParams params, const TaskBatch& batch,
                 std::size_t chunk_size = kDefaultChunkSize)
      : params_(std::move(params)), batch_(&batch), chunk_(chunk_size),
        state_(params_.config()), ws_(params_.config()),
        logits_(params_.config().vocab_size) {}

  std::size_t dim() const override { return params_.dim(); }
  double eval() override {
    return forward_loss(params_, *batch_, state_, ws_, logits_);
  }
  void apply_probe(double alpha, const ProbeSpec& spec) override {
    zorn::apply_probe(params_.theta(), alpha, spec, chunk_);
  }
  double apply_probe_batch(std::span<const double> alphas,
                           std::span<const ProbeSpec> specs) override {
    return zorn::apply_probe_batch(params_.theta().span(), alphas, specs, chunk_);
  }
  void snapshot() override { saved_ = params_.theta().values; }
  void restore() override { params_.theta().values = saved_; }
  std::unique_ptr<BlackBoxLoss> clone() const override {
    return std::make_unique<ModelBatchLoss>(params_, *batch_, chunk_);
  }

  LstmParams& params() { return params_; }
  const LstmParams& params() const { return params_; }
  void set_batch(const TaskBatch& batch) { batch_ = &batch; }

 private:
  LstmParams params_;
  const TaskBatch* batch_;
  std::size_t chunk_;
  HiddenState state_;
  LstmWorkspace ws_;
  std::vector<float> logits_;
  std::vector<float> saved_;
};

}  // namespace zorn
