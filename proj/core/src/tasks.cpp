#include "zorn/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "zorn/error.hpp"

namespace zorn {

std::size_t TaskBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto m : mask) n += m != 0;
  return n;
}

std::int32_t Alphabet::encode(unsigned char c) const {
  if (byte_to_id.empty()) {
    // transduction table: 'a'..'z'
    if (c >= 'a' && c <= 'z') return c - 'a';
    throw InputError("Alphabet::encode: not a lowercase letter");
  }
  const std::int32_t id = byte_to_id[c];
  if (id >= 0) return id;
  if (has_unk) return unk();
  throw InputError("Alphabet::encode: unseen character with no UNK");
}

const char* to_string(TransductionTask t) {
  switch (t) {
    case TransductionTask::kCopy: return "copy";
    case TransductionTask::kReverse: return "reverse";
    case TransductionTask::kSum: return "sum";
  }
  return "?";
}

TransductionTask transduction_task_from_string(const std::string& s) {
  if (s == "copy") return TransductionTask::kCopy;
  if (s == "reverse") return TransductionTask::kReverse;
  if (s == "sum") return TransductionTask::kSum;
  throw InputError("unknown transduction task: " + s);
}

TaskBatch gen_transduction(TransductionTask task, std::size_t batch_size,
                           int len_lo, int len_hi, std::uint64_t seed) {
  if (len_lo < 1 || len_hi < len_lo) {
    throw InputError("gen_transduction: invalid length range");
  }
  if (batch_size == 0) throw InputError("gen_transduction: empty batch");
  const Alphabet ab = Alphabet::transduction();
  RngStream rng(seed);

  const bool is_sum = task == TransductionTask::kSum;
  std::vector<int> lens(batch_size);
  std::vector<std::vector<std::int32_t>> payloads(batch_size);
  const std::uint64_t span = static_cast<std::uint64_t>(len_hi - len_lo + 1);
  const std::uint64_t n_sym = is_sum ? 10 : 26;
  for (std::size_t b = 0; b < batch_size; ++b) {
    lens[b] = len_lo + static_cast<int>(rng.next_u64() % span);
    payloads[b].resize(lens[b]);
    for (auto& s : payloads[b]) {
      s = static_cast<std::int32_t>(rng.next_u64() % n_sym);
    }
  }

  TaskBatch out;
  out.batch = batch_size;
  std::size_t max_steps = 0;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t steps = is_sum ? static_cast<std::size_t>(lens[b])
                                     : static_cast<std::size_t>(2 * lens[b] + 1);
    max_steps = std::max(max_steps, steps);
  }
  out.steps = max_steps;
  out.inputs.assign(batch_size * max_steps, ab.pad());
  out.targets.assign(batch_size * max_steps, ab.pad());
  out.mask.assign(batch_size * max_steps, 0);
  out.lengths.resize(batch_size);

  for (std::size_t b = 0; b < batch_size; ++b) {
    const int L = lens[b];
    const auto& x = payloads[b];
    auto* in = out.inputs.data() + b * max_steps;
    auto* tg = out.targets.data() + b * max_steps;
    auto* mk = out.mask.data() + b * max_steps;
    if (is_sum) {
      std::int32_t acc = 0;
      for (int t = 0; t < L; ++t) {
        in[t] = x[t];
        acc = (acc + x[t]) % 10;
        tg[t] = acc;
        mk[t] = 1;
      }
      out.lengths[b] = L;
    } else {
      // sequence: x1..xL SEP y1..yL EOS; inputs are positions [0, 2L],
      // targets the next token, mask covers predictions of y and EOS.
      std::vector<std::int32_t> seq(2 * L + 2);
      for (int t = 0; t < L; ++t) seq[t] = x[t];
      seq[L] = ab.sep();
      for (int t = 0; t < L; ++t) {
        seq[L + 1 + t] = task == TransductionTask::kCopy ? x[t] : x[L - 1 - t];
      }
      seq[2 * L + 1] = ab.eos();
      for (int t = 0; t <= 2 * L; ++t) {
        in[t] = seq[t];
        tg[t] = seq[t + 1];
        mk[t] = t >= L ? 1 : 0;
      }
      out.lengths[b] = 2 * L + 1;
    }
  }
  return out;
}

Corpus corpus_from_text(std::string_view text) {
  if (text.empty()) throw InputError("corpus: empty text");
  std::set<unsigned char> seen(text.begin(), text.end());

  Corpus c;
  c.alphabet.byte_to_id.assign(256, -1);
  c.alphabet.chars.reserve(seen.size() + 1);
  std::int32_t next_id = 0;
  for (const unsigned char ch : seen) {
    c.alphabet.byte_to_id[ch] = next_id++;
    c.alphabet.chars.push_back(static_cast<char>(ch));
  }
  // reserved UNK slot for characters unseen in this corpus
  c.alphabet.chars.push_back('\0');
  c.alphabet.n_symbols = static_cast<std::size_t>(next_id) + 1;
  c.alphabet.has_unk = true;

  c.tokens.reserve(text.size());
  for (const unsigned char ch : text) {
    c.tokens.push_back(c.alphabet.byte_to_id[ch]);
  }
  c.train_end = c.tokens.size() - c.tokens.size() / 10;
  return c;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("corpus: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.empty()) throw InputError("corpus: empty file " + path);
  return corpus_from_text(text);
}

std::size_t lm_window_count(std::size_t stream_tokens, std::size_t seq_len) {
  if (stream_tokens < 2 || seq_len == 0) return 0;
  return (stream_tokens - 1) / seq_len;
}

TaskBatch next_lm_batch(std::span<const std::int32_t> stream,
                        const Alphabet& alphabet, std::size_t batch_size,
                        std::size_t seq_len, LmCursor& cursor) {
  if (batch_size == 0 || seq_len == 0) throw InputError("next_lm_batch: empty shape");
  const std::size_t windows = lm_window_count(stream.size(), seq_len);
  if (windows == 0) throw InputError("next_lm_batch: stream shorter than one window");

  TaskBatch out;
  out.batch = batch_size;
  out.steps = seq_len;
  out.inputs.resize(batch_size * seq_len);
  out.targets.resize(batch_size * seq_len);
  out.mask.assign(batch_size * seq_len, 1);
  out.lengths.assign(batch_size, static_cast<std::int32_t>(seq_len));
  (void)alphabet;

  for (std::size_t b = 0; b < batch_size; ++b) {
    if (cursor.pos >= windows) cursor.pos = 0;
    const std::size_t start = cursor.pos * seq_len;
    for (std::size_t t = 0; t < seq_len; ++t) {
      out.inputs[b * seq_len + t] = stream[start + t];
      out.targets[b * seq_len + t] = stream[start + t + 1];
    }
    ++cursor.pos;
  }
  return out;
}

double evaluate(const std::function<double(const TaskBatch&)>& batch_loss,
                BatchSource& source, std::size_t n_batches) {
  if (n_batches == 0) throw InputError("evaluate: n_batches must be >= 1");
  double sum = 0.0;
  for (std::size_t i = 0; i < n_batches; ++i) {
    sum += batch_loss(source.next());
  }
  return sum / static_cast<double>(n_batches);
}

}  // namespace zorn
