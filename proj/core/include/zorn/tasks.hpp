#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "zorn/numerics.hpp"

namespace zorn {

// Padded integer token batch for teacher-forced training. Position (b, t)
// is live iff t < lengths[b]; the loss mask selects scored positions.
struct TaskBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;  // padded time dimension
  std::vector<std::int32_t> inputs;   // batch x steps
  std::vector<std::int32_t> targets;  // batch x steps
  std::vector<std::uint8_t> mask;     // batch x steps
  std::vector<std::int32_t> lengths;  // batch

  std::int32_t input(std::size_t b, std::size_t t) const { return inputs[b * steps + t]; }
  std::int32_t target(std::size_t b, std::size_t t) const { return targets[b * steps + t]; }
  bool masked(std::size_t b, std::size_t t) const { return mask[b * steps + t] != 0; }
  std::size_t masked_count() const;
};

// Symbol table: payload symbols first (ids [0, n_symbols)), then the three
// specials. Transduction uses the 26 lowercase letters (vocab 29); ROLLING
// SUM uses ids 0..9 of the same table as digits. LM alphabets are corpus
// derived, with the last symbol reserved as UNK for unseen characters.
struct Alphabet {
  std::size_t n_symbols = 26;
  std::vector<char> chars;           // per symbol id; empty for transduction
  std::vector<std::int32_t> byte_to_id;  // 256 entries, LM only
  bool has_unk = false;

  std::int32_t pad() const { return static_cast<std::int32_t>(n_symbols); }
  std::int32_t sep() const { return static_cast<std::int32_t>(n_symbols) + 1; }
  std::int32_t eos() const { return static_cast<std::int32_t>(n_symbols) + 2; }
  std::int32_t unk() const { return static_cast<std::int32_t>(n_symbols) - 1; }
  std::size_t vocab_size() const { return n_symbols + 3; }

  static Alphabet transduction() { return Alphabet{}; }

  std::int32_t encode(unsigned char c) const;
};

enum class TransductionTask : std::uint8_t { kCopy = 0, kReverse = 1, kSum = 2 };

const char* to_string(TransductionTask t);
TransductionTask transduction_task_from_string(const std::string& s);

// One deterministic batch. Per sample: length L uniform in [len_lo,
// len_hi], payload uniform. COPY/REVERSE lay out [x1..xL, SEP, y1..yL,
// EOS] with next-token targets and the mask covering y and EOS only; SUM
// feeds digits with the running sum mod 10 as the target at every
// position.
TaskBatch gen_transduction(TransductionTask task, std::size_t batch_size,
                           int len_lo, int len_hi, std::uint64_t seed);

// Character corpus with a deterministic 90/10 train/validation split.
struct Corpus {
  std::vector<std::int32_t> tokens;
  Alphabet alphabet;
  std::size_t train_end = 0;  // tokens[0, train_end) train, rest validation

  std::span<const std::int32_t> train() const {
    return {tokens.data(), train_end};
  }
  std::span<const std::int32_t> validation() const {
    return {tokens.data() + train_end, tokens.size() - train_end};
  }
};

Corpus load_corpus(const std::string& path);
Corpus corpus_from_text(std::string_view text);

// Sequential window cursor over a token stream.
struct LmCursor {
  std::size_t pos = 0;
};

// Next batch of contiguous windows: inputs tokens[p, p+seq_len), targets
// tokens[p+1, p+seq_len]; every position masked. Wraps at end of stream.
TaskBatch next_lm_batch(std::span<const std::int32_t> stream,
                        const Alphabet& alphabet, std::size_t batch_size,
                        std::size_t seq_len, LmCursor& cursor);

// Number of non-overlapping windows in one full pass over the stream.
std::size_t lm_window_count(std::size_t stream_tokens, std::size_t seq_len);

// Deterministic batch feed shared by training and evaluation loops.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual TaskBatch next() = 0;
  virtual void reset() = 0;
  virtual std::size_t vocab_size() const = 0;
  // Advance past n batches (resume support).
  virtual void skip(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) (void)next();
  }
};

class TransductionSource final : public BatchSource {
 public:
  TransductionSource(TransductionTask task, std::size_t batch_size, int len_lo,
                     int len_hi, std::uint64_t seed)
      : task_(task), batch_size_(batch_size), len_lo_(len_lo), len_hi_(len_hi),
        seed_(seed) {}

  TaskBatch next() override {
    return gen_transduction(task_, batch_size_, len_lo_, len_hi_,
                            derive_seed(seed_, index_++));
  }
  void reset() override { index_ = 0; }
  void skip(std::size_t n) override { index_ += n; }
  std::size_t vocab_size() const override { return Alphabet{}.vocab_size(); }

 private:
  TransductionTask task_;
  std::size_t batch_size_;
  int len_lo_;
  int len_hi_;
  std::uint64_t seed_;
  std::uint64_t index_ = 0;
};

class LmSource final : public BatchSource {
 public:
  LmSource(const Corpus& corpus, bool validation, std::size_t batch_size,
           std::size_t seq_len)
      : corpus_(&corpus), validation_(validation), batch_size_(batch_size),
        seq_len_(seq_len) {}

  TaskBatch next() override {
    auto stream = validation_ ? corpus_->validation() : corpus_->train();
    return next_lm_batch(stream, corpus_->alphabet, batch_size_, seq_len_,
                         cursor_);
  }
  void reset() override { cursor_ = {}; }
  std::size_t vocab_size() const override {
    return corpus_->alphabet.vocab_size();
  }

 private:
  const Corpus* corpus_;
  bool validation_;
  std::size_t batch_size_;
  std::size_t seq_len_;
  LmCursor cursor_;
};

// Mean of a per-batch loss over n freshly drawn batches.
double evaluate(const std::function<double(const TaskBatch&)>& batch_loss,
                BatchSource& source, std::size_t n_batches);

}  // namespace zorn
