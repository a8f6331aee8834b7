#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dconv/config.hpp"
#include "dconv/layer_table.hpp"
#include "dconv/norms.hpp"
#include "dconv/propagation.hpp"
#include "dconv/reference.hpp"

namespace dconv {

enum class PassKind { Forward, Backward, Update };
enum class ImplKind { Naive, Im2col, Direct };
enum class DataKind { F32, I16 };

struct BenchConfig {
  std::string layers = "resnet50";  // builtin name or CSV path
  int minibatch = 1;
  int iterations = 1;
  PassKind pass = PassKind::Forward;
  DataKind dtype = DataKind::F32;
  ImplKind impl = ImplKind::Direct;
  int threads = 1;
  bool check = false;
  std::optional<FusedOpKind> fuse;
  uint64_t seed = 42;
  int vlen = 16;
  EngineConfig engine;
  std::string dump_dir;  // CFT1 dumps of ref/result on check failure
};

struct LayerReport {
  int id = 0;
  ConvLayerSpec spec;
  int64_t flops = 0;
  double best_ms = 0.0;
  double avg_ms = 0.0;
  double gflops = 0.0;
  int samples = 0;
  bool checked = false;
  bool check_ok = true;
  ErrorNorms norms;
  // chosen planning metadata
  RegisterBlocking blocking;
  int b_p = 0, b_q = 0;
  std::optional<UpdateMode> strategy;
  int copies = 0;
  std::optional<BackwardRoute> route;
};

struct BenchReport {
  std::string layers_source;
  int minibatch = 0;
  int iterations = 0;
  PassKind pass = PassKind::Forward;
  DataKind dtype = DataKind::F32;
  ImplKind impl = ImplKind::Direct;
  int threads = 1;
  uint64_t seed = 0;
  std::vector<LayerReport> per_layer;
  bool all_ok = true;
};

// 2 * N * K * C * P * Q * R * S, the MAC-pair count of one pass
int64_t pass_flops(const ConvLayerSpec& spec);

// deterministic benchmark data: f32 uniform in [-0.5, 0.5],
// i16 uniform integers in [-256, 255]
TensorF random_f32(Rng& rng, int64_t d0, int64_t d1, int64_t d2, int64_t d3);
TensorI16 random_i16(Rng& rng, int64_t d0, int64_t d1, int64_t d2,
                     int64_t d3);

BenchReport run_benchmark(const BenchConfig& cfg);

void print_report(const BenchReport& report, std::ostream& os);
void write_report_json(const BenchReport& report, std::ostream& os);
void write_report_csv(const BenchReport& report, std::ostream& os);

struct ChainLayer {
  ConvLayerSpec spec;
  std::optional<FusedOp> fuse;
};

// Feeds each layer's blocked output (fused ops applied) to the next layer;
// intermediate activations carry the next layer's halo so no repacking
// happens between layers.
BlockedActivation run_chain(const std::vector<ChainLayer>& layers,
                            const TensorF& input,
                            const std::vector<TensorF>& weights, int threads,
                            const EngineConfig& cfg = {});

const char* to_string(PassKind p);
const char* to_string(ImplKind i);
const char* to_string(DataKind d);
const char* to_string(UpdateMode m);
const char* to_string(BackwardRoute r);

}  // namespace dconv
