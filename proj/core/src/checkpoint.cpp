#include "vaeseg/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "vaeseg/rvol.hpp"

namespace vaeseg {

namespace {

constexpr const char* kMagic = "VSCKPT1";

struct Blob {
  std::vector<const Tensor*> tensors;
  std::int64_t bytes = 0;

  std::int64_t push(const Tensor& t) {
    const std::int64_t off = bytes;
    tensors.push_back(&t);
    bytes += t.numel() * 4;
    return off;
  }
};

Tensor slice_payload(const std::vector<float>& payload, std::int64_t offset, const Shape& shape) {
  if (offset < 0 || offset % 4 != 0) throw FormatError("misaligned checkpoint offset");
  const std::int64_t n = shape_numel(shape);
  const std::int64_t first = offset / 4;
  if (first + n > static_cast<std::int64_t>(payload.size())) throw FormatError("checkpoint tensor exceeds payload");
  return Tensor(shape, std::vector<float>(payload.begin() + first, payload.begin() + first + n));
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt, const SaveOptions& options) {
  nlohmann::ordered_json m;
  m["version"] = kCheckpointVersion;
  m["config"] = to_json(ckpt.config);
  m["epochs_completed"] = ckpt.epochs_completed;
  m["has_vae"] = options.include_vae;

  Blob blob;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ckpt.params) {
    if (!options.include_vae && is_vae_parameter(name)) continue;
    params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.push(t)}});
  }
  m["params"] = params;

  if (options.include_optimizer && ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    nlohmann::ordered_json adam;
    adam["beta1"] = a.hyper.beta1;
    adam["beta2"] = a.hyper.beta2;
    adam["eps"] = a.hyper.eps;
    adam["step"] = a.step;
    nlohmann::ordered_json moments = nlohmann::ordered_json::array();
    for (const auto& [name, mom] : a.moments) {
      if (!options.include_vae && is_vae_parameter(name)) continue;
      const auto m_off = blob.push(mom.m);
      const auto v_off = blob.push(mom.v);
      moments.push_back({{"name", name}, {"shape", mom.m.shape()}, {"m_offset", m_off}, {"v_offset", v_off}});
    }
    adam["moments"] = moments;
    m["adam"] = adam;
  }
  m["payload_bytes"] = blob.bytes;

  out << kMagic << '\n' << m.dump() << '\n';
  for (const Tensor* t : blob.tensors) write_f32le(out, t->raw(), t->data().size());
  if (!out) throw std::runtime_error("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, const SaveOptions& options) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    save_checkpoint(out, ckpt, options);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string magic, line;
  if (!std::getline(in, magic) || magic != kMagic) throw FormatError("not a checkpoint file");
  if (!std::getline(in, line)) throw FormatError("missing checkpoint manifest");

  Checkpoint ck;
  try {
    const auto m = nlohmann::json::parse(line);
    if (m.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    ck.config = run_config_from_json(m.at("config"));
    ck.epochs_completed = m.at("epochs_completed").get<std::int64_t>();
    const auto bytes = m.at("payload_bytes").get<std::int64_t>();
    if (bytes < 0 || bytes % 4 != 0) throw FormatError("bad payload size");
    std::vector<float> payload(static_cast<std::size_t>(bytes / 4));
    read_f32le(in, payload.data(), payload.size());

    for (const auto& p : m.at("params")) {
      ck.params.add(p.at("name").get<std::string>(),
                    slice_payload(payload, p.at("offset").get<std::int64_t>(), p.at("shape").get<Shape>()));
    }
    if (m.contains("adam")) {
      const auto& a = m.at("adam");
      AdamState st;
      st.hyper = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
      st.step = a.at("step").get<std::int64_t>();
      for (const auto& e : a.at("moments")) {
        const auto shape = e.at("shape").get<Shape>();
        st.moments[e.at("name").get<std::string>()] = {
            slice_payload(payload, e.at("m_offset").get<std::int64_t>(), shape),
            slice_payload(payload, e.at("v_offset").get<std::int64_t>(), shape)};
      }
      ck.adam = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }

  // Every stored parameter must belong to the configured architecture.
  std::set<std::string> expected;
  for (const auto& [name, shape] : parameter_shapes(ck.config.model)) {
    expected.insert(name);
    if (ck.params.contains(name) && ck.params.at(name).shape() != shape) {
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_to_string(ck.params.at(name).shape()));
    }
  }
  for (const auto& [name, t] : ck.params) {
    if (!expected.contains(name)) throw FormatError("checkpoint has unknown parameter " + name);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace vaeseg
