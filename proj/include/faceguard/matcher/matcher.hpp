// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "faceguard/core/io.hpp"
#include "faceguard/core/rng.hpp"
#include "faceguard/dataio/dataset.hpp"
#include "faceguard/networks/models.hpp"
#include "faceguard/networks/network.hpp"
#include "faceguard/trainer/adam.hpp"

namespace faceguard {

// Cosine similarity of two vectors, clamped to [-1, 1] against rounding.
template <Scalar T>
T cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "cosine_similarity");
  T ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0) || !(bb > 0)) throw NumericError("cosine_similarity: zero-norm vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), T(-1), T(1));
}

// Smallest threshold t such that the fraction of impostor scores >= t is at
// most far. Candidate thresholds sit one ulp above each observed score, so
// ties push the threshold up (stricter).
inline double threshold_at_far(std::vector<double> impostor_scores, double far) {
  if (impostor_scores.empty()) throw NumericError("threshold_at_far: empty score list");
  if (!(far > 0.0 && far < 1.0)) throw ValidationError("threshold_at_far: far must be in (0,1)");
  std::sort(impostor_scores.begin(), impostor_scores.end(), std::greater<>());
  const std::size_t n = impostor_scores.size();
  std::size_t allowed = 0;
  while (allowed < n &&
         static_cast<double>(allowed + 1) / static_cast<double>(n) <= far) {
    ++allowed;
  }
  return std::nextafter(impostor_scores[allowed], std::numeric_limits<double>::infinity());
}

struct MatcherConfig {
  std::string spec;  // when empty, derived from backbone_depth
  std::size_t backbone_depth = 3;
  std::size_t embedding_dim = 128;
  std::size_t image_hw = 160;
  std::size_t batch_size = 16;
  std::size_t train_epochs = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  std::string resolved_spec() const {
    if (!spec.empty()) return spec;
    std::string out;
    std::size_t width = 32;
    for (std::size_t i = 0; i < backbone_depth; ++i) {
      if (!out.empty()) out += ',';
      out += "d" + std::to_string(width);
      width *= 2;
    }
    return out;
  }

  void validate() const {
    if (embedding_dim < 8) throw ValidationError("matcher: embedding_dim must be >= 8");
    if (!(learning_rate > 0)) throw ValidationError("matcher: learning_rate must be positive");
    if (batch_size == 0) throw ValidationError("matcher: batch_size must be positive");
    if (backbone_depth == 0 && spec.empty()) {
      throw ValidationError("matcher: backbone_depth must be positive");
    }
  }
};

// Adapter for externally supplied embeddings: a directory of per-image
// vectors, little-endian float32 of a fixed dimension, filename = image_id.
class ExternalEmbeddings {
 public:
  static ExternalEmbeddings load(const std::filesystem::path& dir, std::size_t dim) {
    if (!std::filesystem::is_directory(dir)) {
      throw IoError("embedding directory not found: " + dir.string());
    }
    ExternalEmbeddings store;
    store.dim_ = dim;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto size = std::filesystem::file_size(entry.path());
      if (size != dim * sizeof(float)) {
        throw FormatError("embedding file has wrong size for dimension " +
                          std::to_string(dim) + ": " + entry.path().string());
      }
      Tensor<float> v({dim});
      std::ifstream in(entry.path(), std::ios::binary);
      in.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(dim * sizeof(float)));
      if (!in) throw IoError("cannot read embedding: " + entry.path().string());
      store.vectors_[std::filesystem::relative(entry.path(), dir).generic_string()] =
          std::move(v);
    }
    if (store.vectors_.empty()) {
      throw ValidationError("embedding directory is empty: " + dir.string());
    }
    return store;
  }

  static void write_embedding(const std::filesystem::path& dir, const std::string& image_id,
                              const Tensor<float>& v) {
    const std::filesystem::path path = dir / image_id;
    std::filesystem::create_directories(path.parent_path().empty() ? dir
                                                                   : path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!out) throw IoError("cannot write embedding: " + path.string());
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool has(const std::string& image_id) const { return vectors_.count(image_id) > 0; }

  const Tensor<float>& embedding(const std::string& image_id) const {
    auto it = vectors_.find(image_id);
    if (it == vectors_.end()) {
      throw ValidationError("no embedding stored for image_id '" + image_id + "'");
    }
    return it->second;
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, Tensor<float>> vectors_;
};

// Embedding network used both as the white-box training signal and as the
// evaluation matcher. Weights are frozen everywhere except train(); forward
// passes run the normalization layers on their stored statistics, so
// embeddings are deterministic and independent of batch composition.
class Matcher {
 public:
  Matcher() = default;

  Matcher(const MatcherConfig& cfg, std::size_t n_subjects) : cfg_(cfg) {
    cfg_.validate();
    Rng init = derive_rng(cfg.seed, /*stream_id=*/0x3a7cu);
    backbone_ = build_matcher_backbone<float>(parse_net_spec(cfg_.resolved_spec()),
                                              cfg_.embedding_dim, init);
    set_head(n_subjects, &init);
  }

  const MatcherConfig& config() const { return cfg_; }
  std::size_t embedding_dim() const { return cfg_.embedding_dim; }
  std::size_t image_hw() const { return cfg_.image_hw; }
  Network<float>& backbone() { return backbone_; }

  // One unit-norm embedding per image row; inference mode.
  Tensor<float> embed(const Tensor<float>& batch) {
    check_input(batch);
    Tape<float> tape;
    return backbone_.forward(batch, tape, /*training=*/false);
  }

  Tensor<float> embed_one(const Tensor<float>& chw) {
    Tensor<float> batch = chw;
    batch.reshape({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    Tensor<float> e = embed(batch);
    e.reshape({e.dim(1)});
    return e;
  }

  // Differentiable inference-mode forward; tape enables backward_to_input.
  Tensor<float> embed_traced(const Tensor<float>& batch, Tape<float>& tape) {
    check_input(batch);
    return backbone_.forward(batch, tape, /*training=*/false);
  }

  Tensor<float> backward_to_input(Tape<float>& tape, const Tensor<float>& g_embeddings) {
    return backbone_.backward(tape, g_embeddings, /*into_params=*/false,
                              /*need_input_grad=*/true);
  }

  struct TrainResult {
    std::vector<float> losses;  // one entry per optimizer step
    float train_accuracy = 0.0f;
  };

  // Softmax classification over subject labels; embeddings are the normalized
  // penultimate features. Steps = epochs * floor(n / batch).
  TrainResult train(const Dataset& ds) {
    if (ds.subjects.size() < 2) {
      throw ValidationError("matcher training needs at least 2 subjects");
    }
    for (const auto& [subject, indices] : ds.subjects) {
      if (indices.size() < 2) {
        throw ValidationError("matcher training needs >= 2 images per subject (subject '" +
                              subject + "')");
      }
    }
    if (ds.image_hw != cfg_.image_hw) {
      throw ShapeError("dataset size does not match matcher input size");
    }
    std::vector<std::string> subject_names;
    for (const auto& [subject, indices] : ds.subjects) subject_names.push_back(subject);
    std::sort(subject_names.begin(), subject_names.end());
    subjects_ = subject_names;
    set_head(subject_names.size(), nullptr);
    Rng head_init = derive_rng(cfg_.seed, /*stream_id=*/0x3a7du);
    detail::he_init(head_fc().weight(), cfg_.embedding_dim, head_init);
    head_fc().bias().fill(0.0f);

    std::vector<std::size_t> labels(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      labels[i] = static_cast<std::size_t>(
          std::lower_bound(subject_names.begin(), subject_names.end(), ds.images[i].subject_id) -
          subject_names.begin());
    }

    auto params = backbone_.params();
    auto head_params = head_.params();
    params.insert(params.end(), head_params.begin(), head_params.end());
    Adam<float> opt(params, 0.9f, 0.999f);

    const std::size_t batch = std::min(cfg_.batch_size, ds.images.size());
    const std::size_t steps_per_epoch = ds.images.size() / batch;
    Rng shuffle_rng = derive_rng(cfg_.seed, /*stream_id=*/0x3a7eu);
    TrainResult result;
    std::vector<std::size_t> order(ds.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg_.train_epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (std::size_t step = 0; step < steps_per_epoch; ++step) {
        std::vector<std::size_t> idx(order.begin() + step * batch,
                                     order.begin() + (step + 1) * batch);
        Tensor<float> x = make_batch(ds, idx);
        Tape<float> tape_backbone, tape_head;
        Tensor<float> emb = backbone_.forward(x, tape_backbone, /*training=*/true);
        Tensor<float> logits = head_.forward(emb, tape_head, /*training=*/true);
        // softmax cross-entropy
        const std::size_t n = logits.dim(0), s = logits.dim(1);
        Tensor<float> glogits(logits.shape());
        float loss = 0.0f;
        for (std::size_t r = 0; r < n; ++r) {
          const float* lg = logits.data() + r * s;
          float mx = lg[0];
          for (std::size_t c = 1; c < s; ++c) mx = std::max(mx, lg[c]);
          float denom = 0.0f;
          for (std::size_t c = 0; c < s; ++c) denom += std::exp(lg[c] - mx);
          const std::size_t y = labels[idx[r]];
          loss += -(lg[y] - mx - std::log(denom));
          float* gl = glogits.data() + r * s;
          for (std::size_t c = 0; c < s; ++c) {
            const float p = std::exp(lg[c] - mx) / denom;
            gl[c] = (p - (c == y ? 1.0f : 0.0f)) / static_cast<float>(n);
          }
        }
        loss /= static_cast<float>(n);
        result.losses.push_back(loss);

        backbone_.zero_grads();
        head_.zero_grads();
        Tensor<float> gemb = head_.backward(tape_head, glogits, true, true);
        backbone_.backward(tape_backbone, gemb, true, false);
        opt.step(params, static_cast<float>(cfg_.learning_rate));
      }
    }

    // Training accuracy in inference mode.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      Tensor<float> x = make_batch(ds, {i});
      Tape<float> t1, t2;
      Tensor<float> emb = backbone_.forward(x, t1, false);
      Tensor<float> logits = head_.forward(emb, t2, false);
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.dim(1); ++c) {
        if (logits[c] > logits[best]) best = c;
      }
      if (best == labels[i]) ++correct;
    }
    result.train_accuracy =
        static_cast<float>(correct) / static_cast<float>(ds.images.size());
    return result;
  }

  void save(const std::filesystem::path& path) const {
    BlobFile blob;
    write_into(blob, "matcher");
    blob.put_u64("meta/version", 1);
    blob.save(path);
  }

  static Matcher load(const std::filesystem::path& path) {
    BlobFile blob = BlobFile::load(path);
    Matcher m;
    m.read_from(blob, "matcher");
    return m;
  }

  // A defense checkpoint embeds its (frozen) training matcher under the same
  // section name, so this works on both matcher and defense checkpoints.
  static Matcher load_from_defense(const std::filesystem::path& path) { return load(path); }

  // Embeds the matcher inside a larger checkpoint (the defense checkpoint
  // carries its training matcher).
  void write_into(BlobFile& blob, const std::string& prefix) const {
    blob.put_string(prefix + "/spec", cfg_.resolved_spec());
    blob.put_u64(prefix + "/embedding_dim", cfg_.embedding_dim);
    blob.put_u64(prefix + "/image_hw", cfg_.image_hw);
    blob.put_u64(prefix + "/seed", cfg_.seed);
    blob.put_u64(prefix + "/n_subjects", subjects_.size());
    std::string joined;
    for (const auto& s : subjects_) {
      joined += s;
      joined += '\n';
    }
    blob.put_string(prefix + "/subjects", joined);
    auto& self = const_cast<Matcher&>(*this);
    for (auto& p : self.backbone_.params()) blob.put_tensor(prefix + "/bb/" + p.name, *p.value);
    for (auto& b : self.backbone_.buffers()) blob.put_tensor(prefix + "/bb/" + b.name, *b.value);
    for (auto& p : self.head_.params()) blob.put_tensor(prefix + "/head/" + p.name, *p.value);
  }

  void read_from(const BlobFile& blob, const std::string& prefix) {
    cfg_ = MatcherConfig{};
    cfg_.spec = blob.string(prefix + "/spec");
    cfg_.embedding_dim = blob.u64(prefix + "/embedding_dim");
    cfg_.image_hw = blob.u64(prefix + "/image_hw");
    cfg_.seed = blob.u64(prefix + "/seed");
    Rng init = derive_rng(cfg_.seed, 0x3a7cu);
    backbone_ =
        build_matcher_backbone<float>(parse_net_spec(cfg_.spec), cfg_.embedding_dim, init);
    const std::uint64_t n_subjects = blob.u64(prefix + "/n_subjects");
    set_head(n_subjects, nullptr);
    subjects_.clear();
    const std::string& joined = blob.string(prefix + "/subjects");
    std::size_t pos = 0;
    while (pos < joined.size()) {
      const auto nl = joined.find('\n', pos);
      subjects_.push_back(joined.substr(pos, nl - pos));
      pos = nl + 1;
    }
    for (auto& p : backbone_.params()) *p.value = blob.tensor(prefix + "/bb/" + p.name);
    for (auto& b : backbone_.buffers()) *b.value = blob.tensor(prefix + "/bb/" + b.name);
    for (auto& p : head_.params()) *p.value = blob.tensor(prefix + "/head/" + p.name);
  }

  static Tensor<float> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ValidationError("make_batch: empty index list");
    const auto& first = ds.images[indices[0]].values;
    Tensor<float> batch({indices.size(), first.dim(0), first.dim(1), first.dim(2)});
    const std::size_t stride = first.size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& img = ds.images[indices[i]].values;
      std::copy(img.data(), img.data() + stride, batch.data() + i * stride);
    }
    return batch;
  }

 private:
  void set_head(std::size_t n_subjects, Rng* init) {
    head_ = Network<float>();
    head_.add(std::make_unique<Fc<float>>(cfg_.embedding_dim, std::max<std::size_t>(n_subjects, 1),
                                          init));
  }

  Fc<float>& head_fc() { return dynamic_cast<Fc<float>&>(head_.layer(0)); }

  void check_input(const Tensor<float>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != kImageChannels ||
        batch.dim(2) != cfg_.image_hw || batch.dim(3) != cfg_.image_hw) {
      throw ShapeError("matcher: expected (N,3," + std::to_string(cfg_.image_hw) + "," +
                       std::to_string(cfg_.image_hw) + "), got " +
                       Tensor<float>::shape_str(batch.shape()));
    }
  }

  MatcherConfig cfg_;
  Network<float> backbone_;
  Network<float> head_;
  std::vector<std::string> subjects_;
};

}  // namespace faceguard
