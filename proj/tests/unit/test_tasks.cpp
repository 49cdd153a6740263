#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "zorn/error.hpp"
#include "zorn/models.hpp"
#include "zorn/tasks.hpp"

using namespace zorn;

namespace {

// Extracts the one sample of a batch generated with a forced length.
struct Sample {
  std::vector<std::int32_t> inputs, targets;
  std::vector<bool> mask;
  std::int32_t length;
};

Sample first_sample(const TaskBatch& b) {
  Sample s;
  s.length = b.lengths[0];
  for (std::size_t t = 0; t < static_cast<std::size_t>(b.lengths[0]); ++t) {
    s.inputs.push_back(b.input(0, t));
    s.targets.push_back(b.target(0, t));
    s.mask.push_back(b.masked(0, t));
  }
  return s;
}

}  // namespace

TEST_CASE("copy layout: payload, separator, payload again, EOS") {
  const Alphabet ab = Alphabet::transduction();
  const TaskBatch b = gen_transduction(TransductionTask::kCopy, 1, 3, 3, 12);
  const Sample s = first_sample(b);
  REQUIRE(s.length == 7);  // x1 x2 x3 SEP y1 y2 y3 (inputs), predicting to EOS
  CHECK(s.inputs[3] == ab.sep());
  for (int t = 0; t < 3; ++t) {
    CHECK(s.inputs[4 + t] == s.inputs[t]);     // teacher-forced copy
    CHECK(s.targets[3 + t] == s.inputs[t]);    // predicted copy
    CHECK(s.inputs[t] < 26);
  }
  CHECK(s.targets[6] == ab.eos());
  // mask covers exactly the predictions of y and EOS
  for (int t = 0; t < 3; ++t) CHECK(!s.mask[t]);
  for (int t = 3; t < 7; ++t) CHECK(s.mask[t]);
}

TEST_CASE("reverse layout reverses the payload") {
  const TaskBatch b = gen_transduction(TransductionTask::kReverse, 1, 3, 3, 12);
  const Sample s = first_sample(b);
  for (int t = 0; t < 3; ++t) {
    CHECK(s.targets[3 + t] == s.inputs[2 - t]);
  }
}

TEST_CASE("rolling sum targets are running sums mod 10") {
  // digits 3, 5, 4 -> targets 3, 8, 2
  TaskBatch b;
  bool found = false;
  for (std::uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    b = gen_transduction(TransductionTask::kSum, 1, 3, 3, seed);
    found = b.input(0, 0) == 3 && b.input(0, 1) == 5 && b.input(0, 2) == 4;
  }
  REQUIRE(found);
  CHECK(b.target(0, 0) == 3);
  CHECK(b.target(0, 1) == 8);
  CHECK(b.target(0, 2) == 2);
  for (int t = 0; t < 3; ++t) CHECK(b.masked(0, t));
}

TEST_CASE("rolling sum uses digit symbols only") {
  const TaskBatch b = gen_transduction(TransductionTask::kSum, 16, 1, 10, 3);
  for (std::size_t bb = 0; bb < b.batch; ++bb) {
    for (std::size_t t = 0; t < static_cast<std::size_t>(b.lengths[bb]); ++t) {
      CHECK(b.input(bb, t) < 10);
      CHECK(b.target(bb, t) < 10);
    }
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const TaskBatch a = gen_transduction(TransductionTask::kCopy, 8, 1, 10, 777);
  const TaskBatch b = gen_transduction(TransductionTask::kCopy, 8, 1, 10, 777);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(a.mask == b.mask);
  CHECK(a.lengths == b.lengths);
  const TaskBatch c = gen_transduction(TransductionTask::kCopy, 8, 1, 10, 778);
  CHECK(a.inputs != c.inputs);
}

TEST_CASE("specials never appear in generated payloads") {
  const Alphabet ab = Alphabet::transduction();
  const TaskBatch b = gen_transduction(TransductionTask::kReverse, 32, 1, 10, 5);
  for (std::size_t bb = 0; bb < b.batch; ++bb) {
    const auto len = static_cast<std::size_t>(b.lengths[bb]);
    const std::size_t L = (len - 1) / 2;
    for (std::size_t t = 0; t < L; ++t) {
      CHECK(b.input(bb, t) < 26);
    }
    // masked targets are payload or EOS, never PAD or SEP
    for (std::size_t t = 0; t < len; ++t) {
      if (!b.masked(bb, t)) continue;
      CHECK(b.target(bb, t) != ab.pad());
      CHECK(b.target(bb, t) != ab.sep());
    }
  }
}

TEST_CASE("lengths are uniform within the requested range") {
  const TaskBatch b = gen_transduction(TransductionTask::kSum, 400, 4, 9, 11);
  std::set<int> seen;
  for (const auto len : b.lengths) {
    CHECK(len >= 4);
    CHECK(len <= 9);
    seen.insert(len);
  }
  CHECK(seen.size() == 6);  // all lengths hit at this batch size
  CHECK_THROWS_AS(gen_transduction(TransductionTask::kSum, 4, 0, 9, 1), InputError);
  CHECK_THROWS_AS(gen_transduction(TransductionTask::kSum, 4, 5, 4, 1), InputError);
}

TEST_CASE("train and validation length ranges never overlap") {
  TransductionSource train(TransductionTask::kCopy, 16, 1, 10, 3);
  TransductionSource val(TransductionTask::kCopy, 16, 11, 60, 4);
  for (int i = 0; i < 8; ++i) {
    for (const auto len : train.next().lengths) CHECK((len - 1) / 2 <= 10);
    for (const auto len : val.next().lengths) CHECK((len - 1) / 2 >= 11);
  }
}

TEST_CASE("corpus aba: first window inputs ab, targets ba") {
  const Corpus c = corpus_from_text("aba");
  LmCursor cur;
  const TaskBatch b = next_lm_batch(c.tokens, c.alphabet, 1, 2, cur);
  const std::int32_t a_id = c.alphabet.encode('a');
  const std::int32_t b_id = c.alphabet.encode('b');
  CHECK(b.input(0, 0) == a_id);
  CHECK(b.input(0, 1) == b_id);
  CHECK(b.target(0, 0) == b_id);
  CHECK(b.target(0, 1) == a_id);
  CHECK(b.masked(0, 0));
  CHECK(b.masked(0, 1));
}

TEST_CASE("corpus vocabulary counts distinct characters plus specials") {
  const Corpus c = corpus_from_text("aab");
  // 2 characters + reserved UNK = 3 symbols, + PAD/SEP/EOS
  CHECK(c.alphabet.n_symbols == 3);
  CHECK(c.alphabet.vocab_size() == 6);
  CHECK(c.alphabet.encode('a') == 0);
  CHECK(c.alphabet.encode('b') == 1);
  // unseen characters map to the reserved UNK id
  CHECK(c.alphabet.encode('z') == c.alphabet.unk());
}

TEST_CASE("one full pass covers floor((n-1)/seq_len) windows") {
  const std::string text = "the quick brown fox jumps over the lazy dog";
  const Corpus c = corpus_from_text(text);
  const std::size_t n = text.size();
  for (const std::size_t seq_len : {2u, 5u, 7u}) {
    const std::size_t windows = lm_window_count(n, seq_len);
    CHECK(windows == (n - 1) / seq_len);
    // token count consumed in one pass = windows * seq_len = (n-1) minus
    // the truncated remainder
    CHECK(windows * seq_len == (n - 1) - (n - 1) % seq_len);
    LmCursor cur;
    std::set<std::size_t> starts;
    for (std::size_t w = 0; w < windows; ++w) {
      (void)next_lm_batch(c.tokens, c.alphabet, 1, seq_len, cur);
      starts.insert(cur.pos);
    }
    CHECK(starts.size() == windows);
    // next batch wraps to the start
    const TaskBatch wrapped = next_lm_batch(c.tokens, c.alphabet, 1, seq_len, cur);
    CHECK(wrapped.input(0, 0) == c.alphabet.encode('t'));
  }
}

TEST_CASE("empty corpora are rejected") {
  CHECK_THROWS_AS(corpus_from_text(""), InputError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/zorn_corpus.txt"), InputError);
}

TEST_CASE("lm cursor advances deterministically") {
  const Corpus c = corpus_from_text("abcdefghijklmnop");
  LmCursor c1, c2;
  const TaskBatch a1 = next_lm_batch(c.tokens, c.alphabet, 2, 3, c1);
  const TaskBatch a2 = next_lm_batch(c.tokens, c.alphabet, 2, 3, c2);
  CHECK(a1.inputs == a2.inputs);
  const TaskBatch b1 = next_lm_batch(c.tokens, c.alphabet, 2, 3, c1);
  CHECK(a1.inputs != b1.inputs);
}

TEST_CASE("evaluate averages the per-batch loss") {
  TransductionSource src(TransductionTask::kCopy, 4, 2, 5, 9);
  int calls = 0;
  const double mean = evaluate(
      [&calls](const TaskBatch&) {
        ++calls;
        return static_cast<double>(calls);  // 1, 2, 3, 4
      },
      src, 4);
  CHECK(calls == 4);
  CHECK(mean == doctest::Approx(2.5));
  CHECK_THROWS_AS(evaluate([](const TaskBatch&) { return 0.0; }, src, 0),
                  InputError);
}

TEST_CASE("uniform-over-digits prediction scores ln 10 on rolling sum") {
  // targets are uniform over the 10 digit symbols, so a constant
  // uniform-over-digits predictor pays exactly ln 10 per position
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.embed_dim = 2;
  cfg.hidden_dim = 2;
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);
  LstmParams params(cfg, std::move(theta));
  auto& tv = params.theta();
  auto b_out = tv.tensor(tv.layout.back());
  for (std::size_t v = 10; v < cfg.vocab_size; ++v) b_out[v] = -1e9f;

  TransductionSource src(TransductionTask::kSum, 32, 1, 10, 77);
  const double loss = evaluate(
      [&](const TaskBatch& b) { return forward_loss(params, b); }, src, 4);
  CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("a perfect copier oracle scores near zero on copy") {
  // batch-loss oracle that emits one-hot-correct logits at masked
  // positions, bypassing any model
  TransductionSource src(TransductionTask::kCopy, 8, 11, 60, 13);
  const double loss = evaluate(
      [](const TaskBatch& b) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t bb = 0; bb < b.batch; ++bb) {
          for (std::size_t t = 0; t < static_cast<std::size_t>(b.lengths[bb]); ++t) {
            if (!b.masked(bb, t)) continue;
            std::vector<double> logits(29, 0.0);
            logits[static_cast<std::size_t>(b.target(bb, t))] = 100.0;
            double mx = 100.0, z = 0.0;
            for (const double lg : logits) z += std::exp(lg - mx);
            sum += mx + std::log(z) - 100.0;
            ++n;
          }
        }
        return sum / static_cast<double>(n);
      },
      src, 2);
  CHECK(loss < 0.01);
}

TEST_CASE("fresh 100k model evaluates at the untrained copy plateau") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 140;
  const LstmParams params = init_params(cfg, 2024);
  TransductionSource val(TransductionTask::kCopy, 8, 11, 60, 31);
  const double loss = evaluate(
      [&](const TaskBatch& b) { return forward_loss(params, b); }, val, 2);
  CHECK(std::abs(loss - 3.37) < 0.05);
}
