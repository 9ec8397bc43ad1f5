#pragma once

#include <utility>

#include "charemb/tensor.hpp"

namespace charemb::ad {

/// One LSTM direction. Gate blocks are laid out [i | f | g | o] along the
/// 4H columns.
template <class T>
struct LstmParams {
  Tensor<T> w_ih;  // [in x 4H]
  Tensor<T> w_hh;  // [H x 4H]
  Tensor<T> bias;  // [1 x 4H]

  std::size_t input_dim() const { return w_ih.rows(); }
  std::size_t hidden() const { return w_hh.rows(); }
};

template <class T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
/// x is [B x in], h and c are [B x H].
template <class T>
LstmState<T> lstm_cell(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& h,
                       const Tensor<T>& c, const LstmParams<T>& p) {
  const auto H = p.hidden();
  if (p.w_hh.cols() != 4 * H || p.w_ih.cols() != 4 * H || p.bias.size() != 4 * H) {
    throw NumericError("lstm_cell: inconsistent parameter shapes");
  }
  if (x.cols() != p.input_dim() || h.cols() != H || c.cols() != H || h.rows() != x.rows() ||
      c.rows() != x.rows()) {
    throw NumericError("lstm_cell: input shape mismatch");
  }
  auto gates = tape.add_bias(tape.add(tape.matmul(x, p.w_ih), tape.matmul(h, p.w_hh)), p.bias);
  auto i = tape.sigmoid(tape.slice_cols(gates, 0, H));
  auto f = tape.sigmoid(tape.slice_cols(gates, H, H));
  auto g = tape.tanh(tape.slice_cols(gates, 2 * H, H));
  auto o = tape.sigmoid(tape.slice_cols(gates, 3 * H, H));
  auto c_next = tape.add(tape.mul(f, c), tape.mul(i, g));
  auto h_next = tape.mul(o, tape.tanh(c_next));
  return {h_next, c_next};
}

}  // namespace charemb::ad
