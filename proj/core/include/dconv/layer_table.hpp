#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dconv/layer_spec.hpp"

namespace dconv {

struct LayerEntry {
  int id = 0;
  ConvLayerSpec spec;
};

// the 20 ResNet-50 layer shapes, ids 1..20
std::vector<LayerEntry> builtin_resnet50(int minibatch, int vlen = 16);

// CSV with header id,C,K,H,W,R,S,stride[,pad_h,pad_w]; omitted pads default
// to (R-1)/2 x (S-1)/2 for odd filters
std::vector<LayerEntry> parse_layer_csv(std::istream& is, int minibatch,
                                        int vlen = 16);
std::vector<LayerEntry> parse_layer_file(const std::string& path,
                                         int minibatch, int vlen = 16);

// "resnet50" or a CSV path
std::vector<LayerEntry> load_layers(const std::string& source, int minibatch,
                                    int vlen = 16);

}  // namespace dconv
