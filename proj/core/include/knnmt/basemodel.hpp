#pragma once

// Per-position feed-forward transducer. At step t it sees the source token at
// t and the previous target token, produces a tanh hidden state (the
// retrieval key/query) and a softmax over the target vocabulary.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "knnmt/binary_io.hpp"
#include "knnmt/mathcore.hpp"
#include "knnmt/toytask.hpp"

namespace knnmt {

struct BaseModelDims {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embed = 16;
  std::size_t hidden = 32;

  friend bool operator==(const BaseModelDims&, const BaseModelDims&) = default;
};

struct BaseModelParams {
  BaseModelDims dims;
  Matrix source_embed;  // source_vocab x embed
  Matrix prev_embed;    // (target_vocab + 1) x embed; last row is begin-of-sequence
  Affine hidden;        // 2*embed -> hidden
  Affine output;        // hidden -> target_vocab

  // Zero-filled parameters of the given shape.
  explicit BaseModelParams(const BaseModelDims& d = {});

  Token bos() const noexcept { return static_cast<Token>(dims.target_vocab); }

  // Declaration order; also the checkpoint order.
  std::vector<ParamBlock> blocks();

  friend bool operator==(const BaseModelParams&, const BaseModelParams&) = default;
};

// Small uniform initialization from a seeded stream.
BaseModelParams init_base_params(const BaseModelDims& dims, std::uint64_t seed);

struct ForwardRecord {
  std::size_t t = 0;
  Vector hidden;
  Vector logits;
  Vector probs;
};

// Throws ErrorKind::out_of_range for tokens outside the vocabularies.
// `prev` may be bos().
ForwardRecord forward_step(const BaseModelParams& params, Token source, Token prev, std::size_t t = 0);

// Teacher-forced records for every position of a pair.
std::vector<ForwardRecord> teacher_forced_pass(const BaseModelParams& params, const SentencePair& pair);

// p_NMT(token | record); throws ErrorKind::out_of_range.
double confidence(const ForwardRecord& record, Token token);

struct BaseTrainOptions {
  std::size_t epochs = 10;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct BaseTrainReport {
  std::vector<double> epoch_loss;  // mean teacher-forced cross-entropy per epoch
};

// Teacher-forced cross-entropy with Adam over shuffled token minibatches.
BaseModelParams train_base(BaseModelParams params, const Corpus& corpus, const BaseTrainOptions& options,
                           BaseTrainReport* report = nullptr);

double teacher_forced_accuracy(const BaseModelParams& params, const Corpus& corpus);

// Maps the step record to the distribution used for the argmax. An empty hook
// uses record.probs.
using StepHook = std::function<Vector(const ForwardRecord&)>;

Sequence greedy_decode(const BaseModelParams& params, const Sequence& source, const StepHook& hook = {});

// Smallest index among maxima.
std::size_t argmax(std::span<const double> v);

// "KNBM", u32 version, u32 dims (source_vocab, target_vocab, embed, hidden),
// then every parameter block as little-endian f64.
Bytes serialize_base_model(const BaseModelParams& params);
BaseModelParams deserialize_base_model(std::span<const std::uint8_t> bytes);
void save_base_model(const BaseModelParams& params, const std::filesystem::path& path);
BaseModelParams load_base_model(const std::filesystem::path& path);

}  // namespace knnmt
