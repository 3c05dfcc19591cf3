#include "netsym/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace netsym {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::Format, msg); }

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

struct TensorRef {
  std::string name;
  double* data;
  Eigen::Index count;
  std::vector<Eigen::Index> shape;
};

std::vector<TensorRef> tensors(Network& net) {
  std::vector<TensorRef> out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    LayerParams& P = net.layers[l];
    const auto names = tensor_names(net, static_cast<int>(l));
    if (net.spec.layers[l].has_weights()) {
      out.push_back({names[0], P.weight.data(), P.weight.size(), {P.weight.rows(), P.weight.cols()}});
      if (P.bias.size()) out.push_back({names[1], P.bias.data(), P.bias.size(), {P.bias.size()}});
    } else {
      Vector* vs[] = {&P.gamma, &P.beta, &P.running_mean, &P.running_var};
      for (std::size_t k = 0; k < 4; ++k)
        out.push_back({names[k], vs[k]->data(), vs[k]->size(), {vs[k]->size()}});
    }
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const Network& net, const nlohmann::json& metadata) {
  net.validate();
  Network copy = net;
  nlohmann::json header;
  header["spec"] = net.spec;
  header["dtype"] = "f64";
  header["byte_order"] = "little";
  header["batchnorm_eps"] = kBatchNormEps;
  header["init"] = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))";
  header["metadata"] = metadata.is_null() ? nlohmann::json::object() : metadata;
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const TensorRef& t : tensors(copy)) {
    entries.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset", blob.size()},
                       {"count", t.count}});
    for (Eigen::Index i = 0; i < t.count; ++i) put_le<double>(blob, t.data[i]);
  }
  header["tensors"] = entries;
  const std::string text = header.dump();
  std::string out = "NNCK";
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += blob;
  return out;
}

Network decode_checkpoint(std::string_view bytes, nlohmann::json* metadata) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "NNCK") bad("bad magic");
  if (bytes.size() < 16) bad("truncated: incomplete preamble");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) bad("unsupported version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) bad("truncated: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("corrupt header: ") + e.what());
  }
  const std::string_view blob = bytes.substr(16 + header_len);
  if (header.value("dtype", "") != "f64") bad("unsupported dtype");

  Network net;
  try {
    net = Network::zeros(header.at("spec").get<ArchitectureSpec>());
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("corrupt spec in header: ") + e.what());
  } catch (const Error& e) {
    bad(std::string("corrupt spec in header: ") + e.what());
  }
  if (metadata) *metadata = header.value("metadata", nlohmann::json::object());

  const auto refs = tensors(net);
  if (!header.contains("tensors")) bad("corrupt header: no tensor table");
  const auto& entries = header["tensors"];
  if (!entries.is_array() || entries.size() != refs.size())
    bad("tensor table does not match spec");
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& e = entries[k];
    std::uint64_t offset = 0, count = 0;
    try {
      if (e.at("name").get<std::string>() != refs[k].name) bad("tensor order mismatch at " + refs[k].name);
      offset = e.at("offset").get<std::uint64_t>();
      count = e.at("count").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      bad(std::string("corrupt tensor entry: ") + ex.what());
    }
    if (count != static_cast<std::uint64_t>(refs[k].count))
      bad("tensor " + refs[k].name + " declares " + std::to_string(count) + " values, spec needs " +
          std::to_string(refs[k].count));
    if (offset % sizeof(double) != 0) bad("misaligned offset for " + refs[k].name);
    if (offset > blob.size() || count > (blob.size() - offset) / sizeof(double))
      bad("truncated: tensor " + refs[k].name + " runs past end of file");
    for (std::uint64_t i = 0; i < count; ++i)
      refs[k].data[i] = get_le<double>(blob, offset + i * sizeof(double));
  }
  net.validate();
  return net;
}

void save_checkpoint(const Network& net, const std::string& path, const nlohmann::json& metadata) {
  const std::string bytes = encode_checkpoint(net, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write on " + path);
}

Network load_checkpoint(const std::string& path, nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  try {
    return decode_checkpoint(bytes, metadata);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace netsym
