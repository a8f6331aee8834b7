#include "dconv/layer_table.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace dconv {

namespace {

// id, C, K, H, W, R, S, stride
constexpr std::array<std::array<int, 8>, 20> kResnet50 = {{
    {1, 3, 64, 224, 224, 7, 7, 2},
    {2, 64, 256, 56, 56, 1, 1, 1},
    {3, 64, 64, 56, 56, 1, 1, 1},
    {4, 64, 64, 56, 56, 3, 3, 1},
    {5, 256, 64, 56, 56, 1, 1, 1},
    {6, 256, 512, 56, 56, 1, 1, 2},
    {7, 256, 128, 56, 56, 1, 1, 2},
    {8, 128, 128, 28, 28, 3, 3, 1},
    {9, 128, 512, 28, 28, 1, 1, 1},
    {10, 512, 128, 28, 28, 1, 1, 1},
    {11, 512, 1024, 28, 28, 1, 1, 2},
    {12, 512, 256, 28, 28, 1, 1, 2},
    {13, 256, 256, 14, 14, 3, 3, 1},
    {14, 256, 1024, 14, 14, 1, 1, 1},
    {15, 1024, 256, 14, 14, 1, 1, 1},
    {16, 1024, 2048, 14, 14, 1, 1, 2},
    {17, 1024, 512, 14, 14, 1, 1, 2},
    {18, 512, 512, 7, 7, 3, 3, 1},
    {19, 512, 2048, 7, 7, 1, 1, 1},
    {20, 2048, 512, 7, 7, 1, 1, 1},
}};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? ""
                                            : field.substr(b, e - b + 1));
  }
  return fields;
}

int parse_int(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + what + " value '" + s + "'",
                     line_no);
  }
}

}  // namespace

std::vector<LayerEntry> builtin_resnet50(int minibatch, int vlen) {
  std::vector<LayerEntry> layers;
  layers.reserve(kResnet50.size());
  for (const auto& row : kResnet50) {
    LayerEntry e;
    e.id = row[0];
    e.spec = make_layer_spec(minibatch, row[1], row[2], row[3], row[4], row[5],
                             row[6], row[7], vlen);
    layers.push_back(e);
  }
  return layers;
}

std::vector<LayerEntry> parse_layer_csv(std::istream& is, int minibatch,
                                        int vlen) {
  std::vector<LayerEntry> layers;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line[line.find_first_not_of(" \t\r")] == '#') continue;
    const auto fields = split_csv(line);
    if (!have_header) {
      if (fields.empty() || fields[0] != "id")
        throw ParseError("expected header starting with 'id'", line_no);
      have_header = true;
      continue;
    }
    if (fields.size() != 8 && fields.size() != 10)
      throw ParseError("expected 8 or 10 fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    const int id = parse_int(fields[0], line_no, "id");
    const int c = parse_int(fields[1], line_no, "C");
    const int k = parse_int(fields[2], line_no, "K");
    const int h = parse_int(fields[3], line_no, "H");
    const int w = parse_int(fields[4], line_no, "W");
    const int r = parse_int(fields[5], line_no, "R");
    const int s = parse_int(fields[6], line_no, "S");
    const int stride = parse_int(fields[7], line_no, "stride");
    try {
      LayerEntry e;
      e.id = id;
      if (fields.size() == 10) {
        const int ph = parse_int(fields[8], line_no, "pad_h");
        const int pw = parse_int(fields[9], line_no, "pad_w");
        e.spec = make_layer_spec(minibatch, c, k, h, w, r, s, stride, ph, pw,
                                 vlen);
      } else {
        e.spec = make_layer_spec(minibatch, c, k, h, w, r, s, stride, vlen);
      }
      layers.push_back(e);
    } catch (const Error& err) {
      throw ParseError(err.what(), line_no);
    }
  }
  if (layers.empty())
    throw ParseError("no layer rows found", line_no == 0 ? 1 : line_no);
  return layers;
}

std::vector<LayerEntry> parse_layer_file(const std::string& path,
                                         int minibatch, int vlen) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open layer file: " + path);
  return parse_layer_csv(is, minibatch, vlen);
}

std::vector<LayerEntry> load_layers(const std::string& source, int minibatch,
                                    int vlen) {
  if (source == "resnet50") return builtin_resnet50(minibatch, vlen);
  return parse_layer_file(source, minibatch, vlen);
}

}  // namespace dconv
