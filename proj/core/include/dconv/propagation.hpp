#pragma once

#include <optional>

#include "dconv/blocked.hpp"
#include "dconv/kernel_streams.hpp"
#include "dconv/planner.hpp"

namespace dconv {

enum class BackwardRoute { DUALITY_STRIDE1, DUALITY_1x1, GENERIC_GEMM };

// stride-1 layers reuse the forward engine on flipped/transposed weights;
// 1x1 strided layers scatter onto the stride lattice; everything else
// falls back to the small-GEMM loop nest
BackwardRoute choose_backward_route(const ConvLayerSpec& spec);

// W'[c_b'][k_b'][r'][s'][k][c] = W[k_b][c_b][R-1-r'][S-1-s'][c][k]:
// channel-block roles swapped, lanes transposed, spatial indices flipped
template <typename T>
BlockedWeightT<T> transform_weight_stride1(const BlockedWeightT<T>& w) {
  BlockedWeightT<T> out(w.c, w.k, w.r, w.s, w.vlen);
  out.scale = w.scale;
  const int v = w.vlen;
  for (int ko = 0; ko < w.k; ++ko)
    for (int ci = 0; ci < w.c; ++ci)
      for (int fr = 0; fr < w.r; ++fr)
        for (int fs = 0; fs < w.s; ++fs)
          out.at(ci / v, ko / v, fr, fs)[(ko % v) * v + ci % v] =
              w.at(ko / v, ci / v, w.r - 1 - fr, w.s - 1 - fs)[(ci % v) * v +
                                                               ko % v];
  return out;
}

template <typename T>
BlockedActivationT<T> copy_with_halo(const BlockedActivationT<T>& src,
                                     int halo_h, int halo_w) {
  BlockedActivationT<T> out(src.n, src.c, src.h, src.w, src.vlen, halo_h,
                            halo_w);
  out.scale = src.scale;
  for (int n = 0; n < src.n; ++n)
    for (int b = 0; b < src.cb(); ++b)
      for (int y = 0; y < src.h; ++y) {
        const T* s = src.at(n, b, y + src.halo_h, src.halo_w);
        T* d = out.at(n, b, y + halo_h, halo_w);
        std::copy(s, s + static_cast<int64_t>(src.w) * src.vlen, d);
      }
  return out;
}

// standard forward plan: loop order, register blocking and thread
// partition chosen from the layer spec, output materialized with the halo
ExecutionPlan make_forward_plan(const ConvLayerSpec& spec, int threads,
                                const std::optional<FusedOp>& fusion = {},
                                const EngineConfig& cfg = {},
                                KernelDType dtype = KernelDType::F32,
                                int out_halo_h = 0, int out_halo_w = 0);

// zeroes the output surface and replays the plan on all thread slots
void forward_into(const ExecutionPlan& plan, const BlockedActivation& in,
                  const BlockedWeight& wt, BlockedActivation& out);
BlockedActivation forward(const ConvLayerSpec& spec,
                          const BlockedActivation& in, const BlockedWeight& wt,
                          const ExecutionPlan& plan);

void forward_into_i16(const ExecutionPlan& plan,
                      const BlockedActivationI16& in,
                      const BlockedWeightI16& wt, BlockedActivationI32& out);
BlockedActivationI32 forward_i16(const ConvLayerSpec& spec,
                                 const BlockedActivationI16& in,
                                 const BlockedWeightI16& wt,
                                 const ExecutionPlan& plan);

// the un-streamed loop nest: same kernels, same order, offsets computed
// inline instead of replayed from streams
void forward_direct_loopnest(const ExecutionPlan& plan,
                             const BlockedActivation& in,
                             const BlockedWeight& wt, BlockedActivation& out);

// post-hoc fused op over the interior of a blocked activation
void apply_fused_op(BlockedActivation& act, const FusedOp& op);

struct BackwardContext {
  BackwardRoute route = BackwardRoute::GENERIC_GEMM;
  ConvLayerSpec spec;
  ConvLayerSpec dual;
  BlockedWeight wt;  // transformed
  std::optional<ExecutionPlan> plan;
  CompiledKernel row_kernel;  // GENERIC_GEMM
  int threads = 1;
};

BackwardContext prepare_backward(const ConvLayerSpec& spec,
                                 const BlockedWeight& wt, int threads,
                                 const EngineConfig& cfg = {});
BlockedActivation backward_with(const BackwardContext& ctx,
                                const BlockedActivation& grad_out);
BlockedActivation backward(const ConvLayerSpec& spec,
                           const BlockedActivation& grad_out,
                           const BlockedWeight& wt, int threads,
                           const EngineConfig& cfg = {});

struct WeightGradCopies {
  std::vector<BlockedWeight> copies;
  std::vector<int> owner;  // thread -> copy index
};

// elementwise sum in fixed copy-index order; each thread reduces a
// disjoint slice of dW
BlockedWeight reduce_weight_copies(const WeightGradCopies& copies,
                                   int threads);

BlockedWeight weight_update(const ConvLayerSpec& spec,
                            const BlockedActivation& in,
                            const BlockedActivation& grad_out,
                            const WeightUpdateStrategy& strategy, int b_p,
                            int b_q, const EngineConfig& cfg = {});

}  // namespace dconv
