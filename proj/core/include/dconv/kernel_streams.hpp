#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dconv/blocked.hpp"
#include "dconv/config.hpp"
#include "dconv/microkernel.hpp"
#include "dconv/planner.hpp"

namespace dconv {

enum class SegmentType { CONV_STREAK, APPLY };

// CONV_STREAK: info = streak length; APPLY: info = index into the
// thread's apply records
struct Segment {
  SegmentType type = SegmentType::CONV_STREAK;
  int64_t info = 0;

  bool operator==(const Segment&) const = default;
};

enum class FusedOpKind { RELU, BIAS_ADD, BIAS_RELU };

struct FusedOp {
  FusedOpKind kind = FusedOpKind::RELU;
  std::vector<float> bias;  // K entries for BIAS_*

  bool operator==(const FusedOp&) const = default;
};

// one APPLY invocation: the fused op on a rows x cols output tile
struct ApplyRecord {
  int32_t op = 0;  // FusedOpKind
  int64_t out_offset = 0;
  int32_t rows = 0;
  int32_t cols = 0;
  int32_t kb = 0;  // output block, selects the bias slice

  bool operator==(const ApplyRecord&) const = default;
};

// Per-thread offset streams. var/inp/wt/out advance one entry per CONV
// call; pf_* hold the chained prefetch offsets (compute offsets of the
// call `lookahead` positions ahead, self at the stream tail).
struct StreamBuffers {
  std::vector<int32_t> var;
  std::vector<int64_t> inp, wt, out;
  std::vector<int64_t> pf_inp, pf_wt, pf_out;
  std::vector<ApplyRecord> apply;

  bool operator==(const StreamBuffers&) const = default;
};

// physical surface an activation-side tensor must present to the plan
struct TensorView {
  int rows_phys = 0;
  int cols_phys = 0;
  int blocks = 0;
  int row0 = 0;       // physical position of logical pixel (0, 0)
  int col0 = 0;
  int pix_scale = 1;  // physical pixels advanced per logical output pixel

  bool operator==(const TensorView&) const = default;
};

TensorView activation_view(int extent_rows, int extent_cols, int blocks,
                           int halo_h, int halo_w);

// input surface: row0/col0 point at the receptive-field origin of output
// pixel (0, 0), i.e. halo - pad
TensorView input_view(const ConvLayerSpec& spec, int halo_h, int halo_w);

struct PlanGeometry {
  ConvLayerSpec spec;
  TensorView in;   // input surface; row0 = halo - pad
  TensorView out;  // output surface
  LoopOrder order;
  int threads = 1;
  int lookahead = 1;
  KernelDType dtype = KernelDType::F32;

  bool operator==(const PlanGeometry&) const = default;
};

struct ExecutionPlan {
  PlanGeometry geom;
  RegisterBlocking blocking;
  std::vector<MicrokernelDescriptor> kernel_descs;  // indexed by variant id
  std::vector<CompiledKernel> kernels;
  std::optional<FusedOp> fusion;
  std::vector<float> bias_lanes;  // K_b*vlen, tail zero
  std::vector<std::vector<Segment>> segments;  // per thread
  std::vector<StreamBuffers> streams;

  int64_t conv_calls() const;
};

// Walks the fused-forward loop nest per thread without touching tensor
// data, records variant ids, offsets and APPLY markers (after the last c_b
// pass over each output tile), then run-length-encodes the trace.
ExecutionPlan dryrun_forward(const ConvLayerSpec& spec, const LoopOrder& order,
                             const RegisterBlocking& blocking,
                             const ThreadPartition& partition,
                             const std::optional<FusedOp>& fusion,
                             const EngineConfig& cfg = {},
                             KernelDType dtype = KernelDType::F32);

// same, with explicit tensor surfaces (the backward duality passes place
// outputs on a scattered or re-haloed surface)
ExecutionPlan dryrun_forward_views(const ConvLayerSpec& spec,
                                   const LoopOrder& order,
                                   const RegisterBlocking& blocking,
                                   const ThreadPartition& partition,
                                   const std::optional<FusedOp>& fusion,
                                   const TensorView& in_view,
                                   const TensorView& out_view,
                                   const EngineConfig& cfg = {},
                                   KernelDType dtype = KernelDType::F32);

enum class CallKind { CONV, APPLY };

// maximal-run RLE of a call trace; APPLY segments keep their ordinal
std::vector<Segment> encode_segments(const std::vector<CallKind>& trace);
std::vector<CallKind> decode_segments(const std::vector<Segment>& segments);

// Executes one thread's segments: CONV_STREAK dispatches kernels with the
// recorded compute offsets and chained prefetch offsets, APPLY runs the
// fused op on its tile. The caller owns zero-initialization of O and the
// barrier across threads.
void replay(const ExecutionPlan& plan, const BlockedActivation& in,
            const BlockedWeight& wt, BlockedActivation& out, int tid);
void replay(const ExecutionPlan& plan, const BlockedActivationI16& in,
            const BlockedWeightI16& wt, BlockedActivationI32& out, int tid);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// checks stream-length consistency, offset decodability and bounds,
// coverage of every (n, k_b, ojb, oib, c_b) tuple exactly once across all
// threads, and the prefetch chaining rule
ValidationReport validate_plan(const ExecutionPlan& plan);

// versioned binary dump of geometry, segments and streams; kernels are
// rebuilt from their descriptors on load
void save_plan(const ExecutionPlan& plan, std::ostream& os);
ExecutionPlan load_plan(std::istream& is);

bool plan_streams_equal(const ExecutionPlan& a, const ExecutionPlan& b);

}  // namespace dconv
