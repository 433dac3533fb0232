#pragma once

#include "ocr/modules.hpp"
#include "ocr/rnn.hpp"
#include "ocr/vocab.hpp"

namespace ocr {

struct HeadDims {
  std::int64_t channels = 128;     // encoder width, equals the backbone output width
  std::int64_t encoder_layers = 2;
  std::int64_t encoder_kernel = 3;
  std::int64_t attn_dim = 128;
  std::int64_t hidden = 256;
  std::int64_t embed = 64;
  std::int64_t num_classes = 40;
  std::int64_t max_len = 33;  // 32 characters + end token
  std::int64_t feat_h = 3;
  std::int64_t feat_w = 12;

  std::int64_t positions() const { return feat_h * feat_w; }
};

// Encoded feature map flattened to attention memory. keys carry the learned
// per-position encoding; keys_proj caches the attention key projection for
// the whole decode.
template <class S>
struct HeadMemory {
  Tensor<S> keys;       // [N,P,D]
  Tensor<S> values;     // [N,P,D]
  Tensor<S> keys_proj;  // [N,P,A]
};

template <class S>
struct DecodeState {
  Tensor<S> hidden;        // [N,Dh]
  std::vector<int> prev;   // previous token per row
  std::int64_t step = 0;
};

// Additive attention over the flattened 3x12 lattice:
//   score_i = v . tanh(Wk k_i + bk + Wh h)
template <class S>
struct Attention {
  LinearLayer<S> wk;  // D -> A (with bias)
  LinearLayer<S> wh;  // Dh -> A (no bias)
  Tensor<S> v;        // [A]

  static Attention make(const HeadDims& dims, RandomStream& rng) {
    Attention a;
    a.wk = LinearLayer<S>::make(dims.channels, dims.attn_dim, rng);
    a.wh = LinearLayer<S>::make(dims.hidden, dims.attn_dim, rng, /*bias=*/false);
    a.v = init::xavier_uniform<S>({dims.attn_dim}, dims.attn_dim, 1, rng);
    return a;
  }

  Tensor<S> project_keys(const Tensor<S>& keys) const { return linear_3d(keys, wk.w, &wk.b); }

  // -> (context [N,D], weights [N,P])
  std::pair<Tensor<S>, Tensor<S>> attend(const Tensor<S>& hidden, const HeadMemory<S>& memory) const {
    Tensor<S> q = linear(hidden, wh.w, nullptr);                 // [N,A]
    Tensor<S> t = tanh(add_per_position(memory.keys_proj, q));   // [N,P,A]
    Tensor<S> scores = inner_lastdim(t, v);                      // [N,P]
    Tensor<S> weights = softmax(scores, 1);
    Tensor<S> context = attend_mix(weights, memory.values);      // [N,D]
    return {context, weights};
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    wk.collect(prefix + ".wk", reg);
    wh.collect(prefix + ".wh", reg);
    reg.add(prefix + ".v", v);
  }
};

template <class S>
struct GreedyResult {
  std::vector<std::string> texts;
  std::vector<std::vector<int>> tokens;       // emitted character tokens, specials excluded
  std::vector<std::vector<S>> attention;      // per row: steps x P weights, row-major
  std::vector<std::int64_t> steps;            // decode steps taken per row
};

// Sequence modelling + prediction: positionwise conv encoder over the
// feature map, GRU decoder with additive 2D attention, linear projection to
// the class logits.
template <class S>
struct RecognitionHead {
  HeadDims dims;
  std::vector<Conv2dLayer<S>> encoder;
  Tensor<S> positional;  // [P,D]
  Attention<S> attn;
  Tensor<S> embed;       // [V,E]
  GruParams<S> gru;
  LinearLayer<S> out;

  static RecognitionHead make(const HeadDims& dims, RandomStream& rng) {
    RecognitionHead h;
    h.dims = dims;
    for (std::int64_t i = 0; i < dims.encoder_layers; ++i)
      h.encoder.push_back(Conv2dLayer<S>::make(dims.channels, dims.channels, dims.encoder_kernel, 1,
                                               dims.encoder_kernel / 2, 1, true, rng));
    h.positional = init::normal<S>({dims.positions(), dims.channels}, 0.02, rng);
    h.attn = Attention<S>::make(dims, rng);
    h.embed = init::normal<S>({dims.num_classes, dims.embed}, 0.1, rng);
    h.gru = GruParams<S>::init(dims.embed + dims.channels, dims.hidden, rng);
    h.out = LinearLayer<S>::make(dims.hidden, dims.num_classes, rng);
    return h;
  }

  // features [N,C,feat_h,feat_w] -> memory with P = feat_h*feat_w positions
  // flattened row-major (y-major).
  HeadMemory<S> encode(const Tensor<S>& features) const {
    if (features.rank() != 4 || features.dim(1) != dims.channels || features.dim(2) != dims.feat_h ||
        features.dim(3) != dims.feat_w)
      throw std::invalid_argument("RecognitionHead: expected [N," + std::to_string(dims.channels) + "," +
                                  std::to_string(dims.feat_h) + "," + std::to_string(dims.feat_w) +
                                  "] features, got " + shape_str(features.shape()));
    Tensor<S> x = features;
    for (const auto& conv : encoder) x = relu(conv.forward(x));
    const std::int64_t n = x.dim(0);
    // [N,C,H,W] -> [N,C,P] -> [N,P,C]
    Tensor<S> flat = transpose_12(reshape(x, {n, dims.channels, dims.positions()}));
    HeadMemory<S> mem;
    mem.values = flat;
    mem.keys = add_positional(flat, positional);
    mem.keys_proj = attn.project_keys(mem.keys);
    return mem;
  }

  DecodeState<S> initial_state(std::int64_t n, int start_token) const {
    DecodeState<S> st;
    st.hidden = Tensor<S>::zeros({n, dims.hidden});
    st.prev.assign(static_cast<std::size_t>(n), start_token);
    st.step = 0;
    return st;
  }

  // One decoder step: embed prev token, attend with the current hidden
  // state, GRU update, project to logits. Returns logits [N,V]; also hands
  // back the attention weights for diagnostics.
  Tensor<S> decode_step(DecodeState<S>& state, const HeadMemory<S>& memory, Tensor<S>* weights_out = nullptr) const {
    for (int t : state.prev)
      if (t < 0 || t >= dims.num_classes)
        throw std::out_of_range("decode_step: token " + std::to_string(t) + " out of range [0," +
                                std::to_string(dims.num_classes) + ")");
    Tensor<S> emb = embedding(embed, state.prev);
    auto [context, weights] = attn.attend(state.hidden, memory);
    Tensor<S> x = concat(emb, context, 1);
    state.hidden = gru_cell(x, state.hidden, gru);
    state.step += 1;
    if (weights_out) *weights_out = weights;
    return out.forward(state.hidden);
  }

  // Teacher forcing: step t is conditioned on gold token t-1 (start token
  // at t=0). targets is row-major [N,T]. Returns log-probs [N,T,V];
  // step_logits, when given, receives the raw per-step logits.
  Tensor<S> forward_teacher_forced(const HeadMemory<S>& memory, const std::vector<int>& targets, std::int64_t n,
                                   std::int64_t t_len, const Vocabulary& vocab,
                                   std::vector<Tensor<S>>* step_logits = nullptr) const {
    if (t_len > dims.max_len)
      throw std::invalid_argument("forward_teacher_forced: sequence length " + std::to_string(t_len) +
                                  " exceeds max_len " + std::to_string(dims.max_len));
    if (static_cast<std::int64_t>(targets.size()) != n * t_len)
      throw std::invalid_argument("forward_teacher_forced: targets size mismatch");
    DecodeState<S> state = initial_state(n, vocab.start());
    std::vector<Tensor<S>> logits;
    logits.reserve(static_cast<std::size_t>(t_len));
    for (std::int64_t t = 0; t < t_len; ++t) {
      logits.push_back(decode_step(state, memory));
      if (t + 1 < t_len)
        for (std::int64_t i = 0; i < n; ++i)
          state.prev[static_cast<std::size_t>(i)] = targets[static_cast<std::size_t>(i * t_len + t)];
    }
    if (step_logits) *step_logits = logits;
    return log_softmax(stack_steps(logits), 2);
  }

  // Greedy argmax decoding; lowest class index wins ties, the unk logit is
  // masked out, rows freeze once they emit the end token.
  GreedyResult<S> greedy_decode(const HeadMemory<S>& memory, std::int64_t max_len, const Vocabulary& vocab) const {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    NoGradGuard ng;
    const std::int64_t n = memory.values.dim(0);
    DecodeState<S> state = initial_state(n, vocab.start());
    GreedyResult<S> result;
    result.texts.resize(static_cast<std::size_t>(n));
    result.tokens.resize(static_cast<std::size_t>(n));
    result.attention.resize(static_cast<std::size_t>(n));
    result.steps.assign(static_cast<std::size_t>(n), 0);
    std::vector<bool> done(static_cast<std::size_t>(n), false);
    const std::int64_t p = dims.positions();

    for (std::int64_t t = 0; t < max_len; ++t) {
      Tensor<S> weights;
      Tensor<S> hidden_before = state.hidden;
      const std::vector<bool> done_before = done;
      Tensor<S> logits = decode_step(state, memory, &weights);
      bool all_done = true;
      for (std::int64_t i = 0; i < n; ++i) {
        if (done[static_cast<std::size_t>(i)]) continue;
        const S* row = logits.data() + i * dims.num_classes;
        int best = 0;
        S best_v = -std::numeric_limits<S>::infinity();
        for (int c = 0; c < dims.num_classes; ++c) {
          if (c == vocab.unk()) continue;  // unk is never emitted at inference
          if (row[c] > best_v) {
            best_v = row[c];
            best = c;
          }
        }
        result.steps[static_cast<std::size_t>(i)] += 1;
        const S* wrow = weights.data() + i * p;
        result.attention[static_cast<std::size_t>(i)].insert(result.attention[static_cast<std::size_t>(i)].end(),
                                                             wrow, wrow + p);
        if (best == vocab.end()) {
          done[static_cast<std::size_t>(i)] = true;
        } else {
          if (vocab.is_char(best)) result.tokens[static_cast<std::size_t>(i)].push_back(best);
          state.prev[static_cast<std::size_t>(i)] = best;
          all_done = false;
        }
      }
      // Freeze rows that terminated on an earlier step: their hidden state
      // stops evolving.
      for (std::int64_t i = 0; i < n; ++i)
        if (done_before[static_cast<std::size_t>(i)])
          std::copy(hidden_before.data() + i * dims.hidden, hidden_before.data() + (i + 1) * dims.hidden,
                    state.hidden.data() + i * dims.hidden);
      if (all_done) break;
    }
    for (std::int64_t i = 0; i < n; ++i) {
      std::string text;
      for (int tok : result.tokens[static_cast<std::size_t>(i)]) text.push_back(vocab.symbol(tok));
      result.texts[static_cast<std::size_t>(i)] = std::move(text);
    }
    return result;
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect(prefix + ".enc" + std::to_string(i), reg);
    reg.add(prefix + ".positional", positional);
    attn.collect(prefix + ".attn", reg);
    reg.add(prefix + ".embed", embed);
    gru.collect(prefix + ".gru", reg);
    out.collect(prefix + ".out", reg);
  }
};

}  // namespace ocr
