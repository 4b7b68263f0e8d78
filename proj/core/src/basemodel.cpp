#include "knnmt/basemodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "knnmt/error.hpp"

namespace knnmt {

namespace {

constexpr char kMagic[] = "KNBM";
constexpr std::uint32_t kVersion = 1;

void check_tokens(const BaseModelDims& dims, Token source, Token prev) {
  if (source >= dims.source_vocab) {
    throw Error(ErrorKind::out_of_range, "source token " + std::to_string(source) + " outside vocabulary of " +
                                             std::to_string(dims.source_vocab));
  }
  if (prev > dims.target_vocab) {
    throw Error(ErrorKind::out_of_range, "previous token " + std::to_string(prev) + " outside vocabulary of " +
                                             std::to_string(dims.target_vocab));
  }
}

Vector concat_embeddings(const BaseModelParams& p, Token source, Token prev) {
  Vector x;
  x.reserve(2 * p.dims.embed);
  auto s = p.source_embed.row(source);
  auto q = p.prev_embed.row(prev);
  x.insert(x.end(), s.begin(), s.end());
  x.insert(x.end(), q.begin(), q.end());
  return x;
}

void fill_uniform(std::span<double> values, SeededRng& rng, double scale) {
  for (double& v : values) v = rng.uniform(-scale, scale);
}

}  // namespace

BaseModelParams::BaseModelParams(const BaseModelDims& d)
    : dims(d),
      source_embed(d.source_vocab, d.embed),
      prev_embed(d.target_vocab + 1, d.embed),
      hidden(d.hidden, 2 * d.embed),
      output(d.target_vocab, d.hidden) {}

std::vector<ParamBlock> BaseModelParams::blocks() {
  std::vector<ParamBlock> out{{"source_embed", source_embed.data()}, {"prev_embed", prev_embed.data()}};
  for (auto& b : affine_blocks("hidden", hidden)) out.push_back(b);
  for (auto& b : affine_blocks("output", output)) out.push_back(b);
  return out;
}

BaseModelParams init_base_params(const BaseModelDims& dims, std::uint64_t seed) {
  BaseModelParams p(dims);
  SeededRng root(seed);
  SeededRng rng_embed = root.child("embed");
  SeededRng rng_hidden = root.child("hidden");
  SeededRng rng_output = root.child("output");
  fill_uniform(p.source_embed.data(), rng_embed, 1.0);
  fill_uniform(p.prev_embed.data(), rng_embed, 1.0);
  fill_uniform(p.hidden.weight.data(), rng_hidden, 1.0 / std::sqrt(static_cast<double>(2 * dims.embed)));
  fill_uniform(p.output.weight.data(), rng_output, 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
  return p;
}

ForwardRecord forward_step(const BaseModelParams& params, Token source, Token prev, std::size_t t) {
  check_tokens(params.dims, source, prev);
  ForwardRecord rec;
  rec.t = t;
  rec.hidden = affine(params.hidden, concat_embeddings(params, source, prev));
  tanh_inplace(rec.hidden);
  rec.logits = affine(params.output, rec.hidden);
  rec.probs = softmax(rec.logits);
  return rec;
}

std::vector<ForwardRecord> teacher_forced_pass(const BaseModelParams& params, const SentencePair& pair) {
  std::vector<ForwardRecord> out;
  out.reserve(pair.source.size());
  Token prev = params.bos();
  for (std::size_t t = 0; t < pair.source.size(); ++t) {
    out.push_back(forward_step(params, pair.source[t], prev, t));
    prev = pair.target[t];
  }
  return out;
}

double confidence(const ForwardRecord& record, Token token) {
  if (token >= record.probs.size()) {
    throw Error(ErrorKind::out_of_range, "confidence: token " + std::to_string(token) + " outside vocabulary");
  }
  return record.probs[token];
}

BaseModelParams train_base(BaseModelParams params, const Corpus& corpus, const BaseTrainOptions& options,
                           BaseTrainReport* report) {
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "train_base: empty corpus");
  if (options.batch_size == 0) throw Error(ErrorKind::invalid_argument, "train_base: batch size must be positive");

  struct Position {
    Token source;
    Token prev;
    Token target;
  };
  std::vector<Position> positions;
  positions.reserve(corpus.token_count());
  for (const auto& pair : corpus.pairs) {
    Token prev = params.bos();
    for (std::size_t t = 0; t < pair.source.size(); ++t) {
      check_tokens(params.dims, pair.source[t], prev);
      if (pair.target[t] >= params.dims.target_vocab) {
        throw Error(ErrorKind::out_of_range, "train_base: target token outside vocabulary");
      }
      positions.push_back({pair.source[t], prev, pair.target[t]});
      prev = pair.target[t];
    }
  }

  const auto& dims = params.dims;
  auto param_blocks = params.blocks();
  BaseModelParams grads(dims);
  auto grad_blocks = grads.blocks();
  AdamState adam = make_adam_state(param_blocks);
  SeededRng shuffle_rng = SeededRng(options.seed).child("shuffle");

  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vector dlogits(dims.target_vocab);
  Vector dh(dims.hidden);
  Vector dx(2 * dims.embed);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& b : grad_blocks) std::fill(b.values.begin(), b.values.end(), 0.0);

      for (std::size_t k = start; k < end; ++k) {
        const Position& pos = positions[order[k]];
        const Vector x = concat_embeddings(params, pos.source, pos.prev);
        Vector h = affine(params.hidden, x);
        tanh_inplace(h);
        const Vector probs = softmax(affine(params.output, h));
        epoch_loss -= std::log(std::max(probs[pos.target], 1e-300));

        for (std::size_t v = 0; v < dims.target_vocab; ++v) dlogits[v] = probs[v] * scale;
        dlogits[pos.target] -= scale;
        affine_grad_accumulate(grads.output, dlogits, h);
        std::fill(dh.begin(), dh.end(), 0.0);
        affine_transpose_accumulate(params.output.weight, dlogits, dh);
        for (std::size_t j = 0; j < dims.hidden; ++j) dh[j] *= 1.0 - h[j] * h[j];
        affine_grad_accumulate(grads.hidden, dh, x);
        std::fill(dx.begin(), dx.end(), 0.0);
        affine_transpose_accumulate(params.hidden.weight, dh, dx);
        auto gs = grads.source_embed.row(pos.source);
        auto gp = grads.prev_embed.row(pos.prev);
        for (std::size_t j = 0; j < dims.embed; ++j) {
          gs[j] += dx[j];
          gp[j] += dx[dims.embed + j];
        }
      }
      adam_step(param_blocks, grad_blocks, adam, options.lr);
    }
    if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(positions.size()));
  }
  return params;
}

double teacher_forced_accuracy(const BaseModelParams& params, const Corpus& corpus) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& pair : corpus.pairs) {
    const auto records = teacher_forced_pass(params, pair);
    for (std::size_t t = 0; t < records.size(); ++t) {
      correct += argmax(records[t].probs) == pair.target[t];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Sequence greedy_decode(const BaseModelParams& params, const Sequence& source, const StepHook& hook) {
  Sequence out;
  out.reserve(source.size());
  Token prev = params.bos();
  for (std::size_t t = 0; t < source.size(); ++t) {
    const ForwardRecord rec = forward_step(params, source[t], prev, t);
    const Token next = static_cast<Token>(hook ? argmax(hook(rec)) : argmax(rec.probs));
    out.push_back(next);
    prev = next;
  }
  return out;
}

Bytes serialize_base_model(const BaseModelParams& params) {
  ByteWriter w;
  w.put_magic(kMagic);
  w.put_u32(kVersion);
  w.put_u32(static_cast<std::uint32_t>(params.dims.source_vocab));
  w.put_u32(static_cast<std::uint32_t>(params.dims.target_vocab));
  w.put_u32(static_cast<std::uint32_t>(params.dims.embed));
  w.put_u32(static_cast<std::uint32_t>(params.dims.hidden));
  w.put_f64s(params.source_embed.data());
  w.put_f64s(params.prev_embed.data());
  w.put_f64s(params.hidden.weight.data());
  w.put_f64s(params.hidden.bias);
  w.put_f64s(params.output.weight.data());
  w.put_f64s(params.output.bias);
  return w.take();
}

BaseModelParams deserialize_base_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kMagic, "base model checkpoint");
  const auto version = r.get_u32();
  if (version != kVersion) {
    throw Error(ErrorKind::format, "unsupported base model checkpoint version " + std::to_string(version));
  }
  BaseModelDims dims;
  dims.source_vocab = r.get_u32();
  dims.target_vocab = r.get_u32();
  dims.embed = r.get_u32();
  dims.hidden = r.get_u32();
  BaseModelParams params(dims);
  for (auto& block : params.blocks()) r.get_f64s(block.values);
  if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after base model checkpoint");
  return params;
}

void save_base_model(const BaseModelParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_base_model(params));
}

BaseModelParams load_base_model(const std::filesystem::path& path) {
  return deserialize_base_model(read_file(path));
}

}  // namespace knnmt
