// Copyright 2026 The pstn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pstn/store.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "pstn/hash.hpp"

namespace pstn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

std::uint64_t file_hash(const std::string& path) { return fnv1a64(read_file(path)); }

// ---- checkpoint ---------------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void Checkpoint::put(const std::string& name, Tensor t) {
  for (auto& [n, existing] : tensors) {
    if (n == name) {
      existing = std::move(t);
      return;
    }
  }
  tensors.emplace_back(name, std::move(t));
}

namespace {

template <class T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : b_(bytes), end_(end) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt, DType dtype) {
  std::string out = "PSTN";
  put_raw<std::uint32_t>(out, kCheckpointVersion);
  put_raw<std::uint8_t>(out, 1);
  put_raw<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  const std::string meta = ckpt.meta.dump();
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> names;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!names.insert(name).second) throw CheckpointError("duplicate tensor '" + name + "'");
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_raw<std::uint64_t>(out, d);
    if (dtype == DType::f64) {
      out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    } else {
      for (double v : t.data) put_raw<float>(out, static_cast<float>(v));
    }
  }
  put_raw<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 2 + 4 + 4 + 8) throw CheckpointError("checkpoint too short");
  if (bytes.compare(0, 4, "PSTN") != 0) throw CheckpointError("bad checkpoint magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(std::string_view(bytes.data(), body))) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  Reader r(bytes, body);
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  if (r.get<std::uint8_t>() != 1) throw CheckpointError("checkpoint is not little-endian");
  const auto dtype = r.get<std::uint8_t>();
  if (dtype > 1) throw CheckpointError("unknown checkpoint dtype " + std::to_string(dtype));
  Checkpoint c;
  c.dtype = static_cast<DType>(dtype);
  const auto meta_len = r.get<std::uint32_t>();
  try {
    c.meta = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name = r.str(nlen);
    if (!names.insert(name).second) throw CheckpointError("duplicate tensor '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + name + "' has bad rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.get<std::uint64_t>());
      if (shape.back() == 0 || shape.back() > (1ull << 32)) {
        throw CheckpointError("tensor '" + name + "' has bad shape");
      }
      n *= shape.back();
    }
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      data[k] = c.dtype == DType::f64 ? r.get<double>() : static_cast<double>(r.get<float>());
    }
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt, DType dtype) {
  write_file(path, serialize_checkpoint(ckpt, dtype));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(bytes);
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},         {"heads", cfg.heads},
          {"width", cfg.width},           {"ff_width", cfg.ff_width},
          {"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
          {"tie_lm_head", cfg.tie_lm_head}, {"num_classes", cfg.num_classes},
          {"head_gates", cfg.head_gates}, {"init_std", cfg.init_std},
          {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.ff_width = j.at("ff_width").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.tie_lm_head = j.at("tie_lm_head").get<bool>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.head_gates = j.at("head_gates").get<std::vector<double>>();
  c.init_std = j.at("init_std").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

Checkpoint model_checkpoint(const TransformerLM& model) {
  Checkpoint c;
  c.meta["model"] = model_config_to_json(model.config());
  c.meta["frozen"] = std::vector<std::string>(model.frozen().begin(), model.frozen().end());
  c.meta["checksum"] = hex64(model.checksum());
  model.weights().visit([&](const std::string& name, const Tensor& t) { c.tensors.emplace_back(name, t); });
  return c;
}

TransformerLM model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw CheckpointError("checkpoint holds no model");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(ckpt.meta.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  // The classifier is created below from stored tensors.
  const std::size_t classes = cfg.num_classes;
  cfg.num_classes = 0;
  TransformerLM model(cfg);
  if (classes > 0) model.attach_classifier(classes, 0);
  std::size_t matched = 0;
  model.weights().visit([&](const std::string& name, Tensor& t) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (src->shape != t.shape) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_str(src->shape) +
                            ", expected " + shape_str(t.shape));
    }
    t = *src;
    ++matched;
  });
  std::set<std::string> frozen;
  if (ckpt.meta.contains("frozen")) {
    for (const auto& n : ckpt.meta.at("frozen")) frozen.insert(n.get<std::string>());
  }
  model.set_frozen(std::move(frozen));
  return model;
}

void put_noise(Checkpoint& ckpt, const NoiseState& noise) {
  for (std::size_t i = 0; i < noise.names.size(); ++i) {
    const std::size_t off = noise.offsets[i];
    const std::size_t end = i + 1 < noise.names.size() ? noise.offsets[i + 1] : noise.q.size();
    Shape s{end - off};
    ckpt.put("noise.q." + noise.names[i],
             Tensor(s, std::vector<double>(noise.q.begin() + off, noise.q.begin() + end)));
    ckpt.put("noise.p." + noise.names[i],
             Tensor(s, std::vector<double>(noise.p.begin() + off, noise.p.begin() + end)));
  }
  ckpt.meta["noise_lambda"] = noise.lambda;
}

NoiseState noise_from_checkpoint(const Checkpoint& ckpt, const TransformerLM& model) {
  NoiseState n = init_noise(model);
  for (std::size_t i = 0; i < n.names.size(); ++i) {
    const Tensor* q = ckpt.find("noise.q." + n.names[i]);
    const Tensor* p = ckpt.find("noise.p." + n.names[i]);
    const std::size_t off = n.offsets[i];
    const std::size_t len = (i + 1 < n.names.size() ? n.offsets[i + 1] : n.q.size()) - off;
    if (!q || !p || q->size() != len || p->size() != len) {
      throw CheckpointError("checkpoint lacks noise for '" + n.names[i] + "'");
    }
    std::copy(q->data.begin(), q->data.end(), n.q.begin() + static_cast<std::ptrdiff_t>(off));
    std::copy(p->data.begin(), p->data.end(), n.p.begin() + static_cast<std::ptrdiff_t>(off));
  }
  n.lambda = ckpt.meta.value("noise_lambda", 0.0);
  return n;
}

void put_importance(Checkpoint& ckpt, const ImportanceMatrix& imp) {
  ckpt.put("importance.heads", Tensor(Shape{imp.heads.layers, imp.heads.heads}, imp.heads.values));
  if (!imp.per_param.empty()) ckpt.put("importance.params", Tensor(Shape{imp.per_param.size()}, imp.per_param));
}

// ---- manifest -------------------------------------------------------------------

void RunManifest::record_output(const std::string& dir, const std::string& file) {
  outputs[file] = hex64(file_hash(dir + "/" + file));
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  return {{"command", m.command},   {"tool_version", m.tool_version},
          {"config", m.config},     {"seed", m.seed},
          {"inputs", m.inputs},     {"outputs", m.outputs},
          {"stage_seconds", m.stage_seconds}, {"warnings", m.warnings},
          {"extra", m.extra}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.stage_seconds = j.at("stage_seconds").get<std::map<std::string, double>>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    m.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const std::string& path, const RunManifest& m) {
  write_file(path, manifest_to_json(m).dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("manifest " + path + ": " + e.what());
  }
}

}  // namespace pstn
