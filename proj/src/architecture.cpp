#include "netsym/architecture.hpp"

#include <fstream>
#include <sstream>

namespace netsym {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "invalid_spec";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Format: return "format";
    case ErrorCode::Io: return "io";
    case ErrorCode::Numerical: return "numerical";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::Unsupported: return "unsupported";
  }
  return "unknown";
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << value;
  return os.str();
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm: return "batchnorm";
  }
  return "?";
}

const char* to_string(OutputActivation act) {
  switch (act) {
    case OutputActivation::Softmax: return "softmax";
    case OutputActivation::Sigmoid: return "sigmoid";
    case OutputActivation::None: return "none";
  }
  return "?";
}

LayerSpec LayerSpec::linear(int in, int out, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  return l;
}

LayerSpec LayerSpec::conv2d(int in, int out, int kh, int kw, int groups, int padding, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.in = in;
  l.out = out;
  l.kernel_h = kh;
  l.kernel_w = kw;
  l.groups = groups;
  l.padding = padding;
  l.has_bias = bias;
  return l;
}

LayerSpec LayerSpec::batchnorm(int features) {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm;
  l.in = features;
  l.out = features;
  l.has_bias = false;
  return l;
}

int LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::Linear: return in;
    case LayerKind::Conv2d: return in_per_group() * kernel_h * kernel_w;
    case LayerKind::BatchNorm: return 1;
  }
  return 0;
}

int ArchitectureSpec::output_dim() const { return shapes().back().size(); }

namespace {

std::string pair_name(std::size_t a, std::size_t b) {
  std::ostringstream os;
  os << "layers " << a << " -> " << b;
  return os.str();
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); }

}  // namespace

std::vector<Shape> ArchitectureSpec::shapes() const {
  std::vector<Shape> out;
  out.reserve(layers.size() + 1);
  Shape cur = input;
  out.push_back(cur);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& L = layers[l];
    switch (L.kind) {
      case LayerKind::Linear:
        cur = Shape{L.out, 1, 1};
        break;
      case LayerKind::Conv2d:
        cur = Shape{L.out, cur.height + 2 * L.padding - L.kernel_h + 1,
                    cur.width + 2 * L.padding - L.kernel_w + 1};
        break;
      case LayerKind::BatchNorm:
        break;
    }
    out.push_back(cur);
  }
  return out;
}

void ArchitectureSpec::validate() const {
  if (input.channels < 1 || input.height < 1 || input.width < 1)
    invalid("input shape must be positive");
  if (layers.empty()) invalid("network has no layers");
  if (!layers.back().has_weights()) invalid("last layer must be linear or conv2d");
  Shape cur = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& L = layers[l];
    const std::string where = l == 0 ? std::string("input -> layer 0") : pair_name(l - 1, l);
    if (L.in < 1 || L.out < 1) invalid("non-positive dimension at layer " + std::to_string(l));
    switch (L.kind) {
      case LayerKind::Linear:
        if (L.in != cur.size())
          invalid("dimension mismatch at " + where + ": expected in_features " +
                  std::to_string(cur.size()) + ", got " + std::to_string(L.in));
        if (L.kernel_h != 1 || L.kernel_w != 1 || L.groups != 1 || L.padding != 0)
          invalid("linear layer " + std::to_string(l) + " carries conv attributes");
        cur = Shape{L.out, 1, 1};
        break;
      case LayerKind::Conv2d: {
        if (L.in != cur.channels)
          invalid("channel mismatch at " + where + ": expected in_channels " +
                  std::to_string(cur.channels) + ", got " + std::to_string(L.in));
        if (L.kernel_h < 1 || L.kernel_w < 1) invalid("kernel size must be >= 1");
        if (L.groups < 1) invalid("groups must be >= 1");
        if (L.padding < 0) invalid("padding must be >= 0");
        if (L.in % L.groups != 0 || L.out % L.groups != 0)
          invalid("groups " + std::to_string(L.groups) + " must divide in and out channels at layer " +
                  std::to_string(l));
        const int h = cur.height + 2 * L.padding - L.kernel_h + 1;
        const int w = cur.width + 2 * L.padding - L.kernel_w + 1;
        if (h < 1 || w < 1) invalid("kernel larger than padded input at " + where);
        cur = Shape{L.out, h, w};
        break;
      }
      case LayerKind::BatchNorm:
        if (l == 0 || !layers[l - 1].has_weights())
          invalid("batchnorm must directly follow a linear or conv2d layer (" + where + ")");
        if (L.in != cur.channels || L.out != L.in)
          invalid("batchnorm feature mismatch at " + where);
        if (L.has_bias) invalid("batchnorm carries no bias flag");
        break;
    }
  }
}

ArchitectureSpec ArchitectureSpec::mlp(const std::vector<int>& widths, OutputActivation head,
                                       bool bias) {
  if (widths.size() < 2) invalid("mlp needs at least input and output widths");
  ArchitectureSpec spec;
  spec.input = Shape{widths.front(), 1, 1};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    spec.layers.push_back(LayerSpec::linear(widths[i], widths[i + 1], bias));
  spec.output_activation = head;
  return spec;
}

void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json::object();
  j["kind"] = to_string(l.kind);
  switch (l.kind) {
    case LayerKind::Linear:
      j["in_features"] = l.in;
      j["out_features"] = l.out;
      j["has_bias"] = l.has_bias;
      break;
    case LayerKind::Conv2d:
      j["in_channels"] = l.in;
      j["out_channels"] = l.out;
      j["kernel_h"] = l.kernel_h;
      j["kernel_w"] = l.kernel_w;
      j["groups"] = l.groups;
      j["padding"] = l.padding;
      j["has_bias"] = l.has_bias;
      break;
    case LayerKind::BatchNorm:
      j["features"] = l.in;
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& l) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    l = LayerSpec::linear(j.at("in_features").get<int>(), j.at("out_features").get<int>(),
                          j.value("has_bias", true));
  } else if (kind == "conv2d") {
    l = LayerSpec::conv2d(j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                          j.value("kernel_h", 1), j.value("kernel_w", 1), j.value("groups", 1),
                          j.value("padding", 0), j.value("has_bias", true));
  } else if (kind == "batchnorm") {
    l = LayerSpec::batchnorm(j.at("features").get<int>());
  } else if (kind == "residual") {
    throw Error(ErrorCode::Unsupported, "residual connections are unsupported");
  } else {
    throw Error(ErrorCode::InvalidSpec, "unknown layer kind '" + kind + "'");
  }
}

void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json::object();
  j["input_shape"] = {s.input.channels, s.input.height, s.input.width};
  j["output_activation"] = to_string(s.output_activation);
  j["layers"] = s.layers;
}

void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  try {
    if (j.contains("input_shape")) {
      const auto shape = j.at("input_shape").get<std::vector<int>>();
      if (shape.size() != 3) invalid("input_shape must be [channels, height, width]");
      s.input = Shape{shape[0], shape[1], shape[2]};
    } else {
      s.input = Shape{j.at("input_dim").get<int>(), 1, 1};
    }
    const std::string act = j.value("output_activation", "none");
    if (act == "softmax")
      s.output_activation = OutputActivation::Softmax;
    else if (act == "sigmoid")
      s.output_activation = OutputActivation::Sigmoid;
    else if (act == "none")
      s.output_activation = OutputActivation::None;
    else
      invalid("unknown output_activation '" + act + "'");
    s.layers = j.at("layers").get<std::vector<LayerSpec>>();
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("malformed architecture json: ") + e.what());
  }
  s.validate();
}

ArchitectureSpec load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open spec file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, "cannot parse spec file " + path + ": " + e.what());
  }
  return j.get<ArchitectureSpec>();
}

std::string spec_hash(const ArchitectureSpec& spec) {
  return hex64(fnv1a(nlohmann::json(spec).dump()));
}

std::vector<Interface> interfaces(const ArchitectureSpec& spec) {
  const auto shp = spec.shapes();
  std::vector<Interface> out;
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l)
    out.push_back(Interface{static_cast<int>(l), shp[l + 1].channels, shp[l + 1].spatial()});
  return out;
}

std::vector<HiddenInterface> hidden_interfaces(const ArchitectureSpec& spec) {
  std::vector<HiddenInterface> out;
  const int n = static_cast<int>(spec.layers.size());
  for (int l = 0; l < n; ++l) {
    if (!spec.layers[l].has_weights()) continue;
    int next = l + 1;
    std::optional<int> bn;
    if (next < n && spec.layers[next].kind == LayerKind::BatchNorm) bn = next++;
    if (next >= n) break;
    out.push_back(HiddenInterface{l, bn, next, spec.layers[l].out, spec.layers[next].groups});
  }
  return out;
}

}  // namespace netsym
