#pragma once

#include "ocr/linalg.hpp"
#include "ocr/params.hpp"
#include "ocr/tensor.hpp"

namespace ocr {

// Gate parameters of a single GRU cell. W_* act on the input, U_* on the
// hidden state.
template <class S>
struct GruParams {
  Tensor<S> wz, wr, wn;  // [Dh, Din]
  Tensor<S> uz, ur, un;  // [Dh, Dh]
  Tensor<S> bz, br, bn;  // [Dh]

  static GruParams init(std::int64_t din, std::int64_t dh, RandomStream& rng) {
    GruParams p;
    p.wz = init::xavier_uniform<S>({dh, din}, din, dh, rng);
    p.wr = init::xavier_uniform<S>({dh, din}, din, dh, rng);
    p.wn = init::xavier_uniform<S>({dh, din}, din, dh, rng);
    p.uz = init::xavier_uniform<S>({dh, dh}, dh, dh, rng);
    p.ur = init::xavier_uniform<S>({dh, dh}, dh, dh, rng);
    p.un = init::xavier_uniform<S>({dh, dh}, dh, dh, rng);
    p.bz = Tensor<S>::param_zeros({dh});
    p.br = Tensor<S>::param_zeros({dh});
    p.bn = Tensor<S>::param_zeros({dh});
    return p;
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    reg.add(prefix + ".wz", wz);
    reg.add(prefix + ".wr", wr);
    reg.add(prefix + ".wn", wn);
    reg.add(prefix + ".uz", uz);
    reg.add(prefix + ".ur", ur);
    reg.add(prefix + ".un", un);
    reg.add(prefix + ".bz", bz);
    reg.add(prefix + ".br", br);
    reg.add(prefix + ".bn", bn);
  }
};

// GRU update:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + r .* (Un h) + bn)
//   h' = (1 - z) .* n + z .* h
// The update keeps the literal convex-combination form so a saturated copy
// gate (z == 1) reproduces h bit for bit.
template <class S>
Tensor<S> gru_cell(const Tensor<S>& x, const Tensor<S>& h, const GruParams<S>& p) {
  if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0))
    throw std::invalid_argument("gru_cell: expected [N,Din] and [N,Dh], got " + shape_str(x.shape()) + " and " +
                                shape_str(h.shape()));
  Tensor<S> z = sigmoid(add(linear(x, p.wz, &p.bz), linear(h, p.uz)));
  Tensor<S> r = sigmoid(add(linear(x, p.wr, &p.br), linear(h, p.ur)));
  Tensor<S> n = tanh(add(linear(x, p.wn, &p.bn), mul(r, linear(h, p.un))));
  Tensor<S> one_minus_z = add_scalar(neg(z), S(1));
  return add(mul(one_minus_z, n), mul(z, h));
}

}  // namespace ocr
