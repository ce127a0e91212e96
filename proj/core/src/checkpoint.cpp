#include "ivl/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ivl/error.hpp"
#include "ivl/hash.hpp"

namespace ivl {

namespace {

const char* kFormatTag = "IVLCKPT v1";

struct ManifestEntry {
  std::string name;
  Shape shape;
  int64_t offset = 0;
};

// Header after the checksum line plus the raw payload; the checksum covers
// exactly these bytes.
std::string build_body(const std::string& kind, const std::string& config_line,
                       std::vector<std::pair<std::string, Tensor<float>*>> tensors) {
  std::ostringstream head;
  head << "kind " << kind << "\n";
  head << "config " << config_line << "\n";
  head << "tensors " << tensors.size() << "\n";
  std::string payload;
  int64_t offset = 0;
  for (auto& [name, t] : tensors) {
    head << name << " float32 " << t->ndim();
    for (int64_t d : t->shape()) head << " " << d;
    head << " " << offset << "\n";
    const auto& data = t->data();
    payload.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    offset += static_cast<int64_t>(data.size() * sizeof(float));
  }
  head << "DATA\n";
  return head.str() + payload;
}

void write_checkpoint(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot write " + path);
  f << kFormatTag << "\n";
  f << "checksum " << hex64(fnv1a64(body)) << "\n";
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
}

struct ParsedCheckpoint {
  std::string kind;
  std::string config_line;
  std::vector<ManifestEntry> manifest;
  std::string payload;

  std::vector<float> tensor_data(const ManifestEntry& e) const {
    size_t n = static_cast<size_t>(numel_of(e.shape));
    if (e.offset < 0 || e.offset + n * sizeof(float) > payload.size())
      throw IoError("checkpoint: tensor '" + e.name + "' payload out of bounds");
    std::vector<float> out(n);
    std::memcpy(out.data(), payload.data() + e.offset, n * sizeof(float));
    return out;
  }
};

ParsedCheckpoint parse_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot read " + path);
  std::ostringstream os;
  os << f.rdbuf();
  std::string all = os.str();

  size_t pos = all.find('\n');
  if (pos == std::string::npos || all.substr(0, pos) != kFormatTag)
    throw IoError("checkpoint: unknown version/format in " + path);
  size_t pos2 = all.find('\n', pos + 1);
  if (pos2 == std::string::npos) throw IoError("checkpoint: truncated header in " + path);
  std::istringstream cks(all.substr(pos + 1, pos2 - pos - 1));
  std::string kw, hexsum;
  cks >> kw >> hexsum;
  if (kw != "checksum") throw IoError("checkpoint: missing checksum line in " + path);
  std::string body = all.substr(pos2 + 1);
  if (hex64(fnv1a64(body)) != hexsum)
    throw IoError("checkpoint: checksum mismatch in " + path);

  ParsedCheckpoint out;
  std::istringstream head(body);
  std::string line;
  std::getline(head, line);
  if (line.rfind("kind ", 0) != 0) throw IoError("checkpoint: missing kind line");
  out.kind = line.substr(5);
  std::getline(head, line);
  if (line.rfind("config ", 0) != 0) throw IoError("checkpoint: missing config line");
  out.config_line = line.substr(7);
  std::getline(head, line);
  std::istringstream ts(line);
  int64_t count;
  ts >> kw >> count;
  if (kw != "tensors") throw IoError("checkpoint: missing tensors line");
  for (int64_t i = 0; i < count; ++i) {
    std::getline(head, line);
    std::istringstream ls(line);
    ManifestEntry e;
    std::string dtype;
    int64_t ndim;
    ls >> e.name >> dtype >> ndim;
    if (dtype != "float32") throw IoError("checkpoint: unsupported dtype " + dtype);
    e.shape.resize(ndim);
    for (auto& d : e.shape) ls >> d;
    ls >> e.offset;
    out.manifest.push_back(std::move(e));
  }
  std::getline(head, line);
  if (line != "DATA") throw IoError("checkpoint: missing DATA marker");
  out.payload = body.substr(static_cast<size_t>(head.tellg()));
  return out;
}

std::string transformer_config_line(const TransformerConfig& c) {
  std::ostringstream os;
  os << "d_model " << c.d_model << " n_layers " << c.n_layers << " n_heads " << c.n_heads
     << " d_ff " << c.d_ff << " vocab_size " << c.vocab_size << " max_seq_len " << c.max_seq_len
     << " tie_embeddings " << (c.tie_embeddings ? 1 : 0);
  return os.str();
}

TransformerConfig parse_transformer_config(const std::string& line) {
  std::istringstream is(line);
  TransformerConfig c;
  std::string key;
  int64_t tie = 0;
  while (is >> key) {
    if (key == "d_model") is >> c.d_model;
    else if (key == "n_layers") is >> c.n_layers;
    else if (key == "n_heads") is >> c.n_heads;
    else if (key == "d_ff") is >> c.d_ff;
    else if (key == "vocab_size") is >> c.vocab_size;
    else if (key == "max_seq_len") is >> c.max_seq_len;
    else if (key == "tie_embeddings") is >> tie;
    else throw IoError("checkpoint: unknown config key " + key);
  }
  c.tie_embeddings = tie != 0;
  return c;
}

template <class Model>
void fill_from_manifest(Model& model, const ParsedCheckpoint& p, const std::string& path) {
  auto named = model.named_parameters();
  if (named.size() != p.manifest.size())
    throw IoError("checkpoint: expected " + std::to_string(named.size()) + " tensors, found " +
                  std::to_string(p.manifest.size()) + " in " + path);
  std::string mismatches;
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& e = p.manifest[i];
    if (e.name != named[i].first) {
      mismatches += "  " + named[i].first + ": manifest has '" + e.name + "'\n";
      continue;
    }
    if (e.shape != named[i].second->shape()) {
      mismatches += "  " + e.name + ": expected " + shape_str(named[i].second->shape()) +
                    ", found " + shape_str(e.shape) + "\n";
      continue;
    }
  }
  if (!mismatches.empty())
    throw IoError("checkpoint: shape mismatches in " + path + ":\n" + mismatches);
  for (size_t i = 0; i < named.size(); ++i)
    *named[i].second = Tensor<float>(p.manifest[i].shape, p.tensor_data(p.manifest[i]));
}

}  // namespace

void save_checkpoint(Transformer<float>& model, const std::string& path) {
  write_checkpoint(path, build_body("transformer", transformer_config_line(model.config),
                                    model.named_parameters()));
}

Transformer<float> load_checkpoint(const std::string& path) {
  ParsedCheckpoint p = parse_checkpoint(path);
  if (p.kind != "transformer")
    throw IoError("checkpoint: expected transformer, found '" + p.kind + "' in " + path);
  TransformerConfig config = parse_transformer_config(p.config_line);
  config.validate();
  Transformer<float> model = make_transformer<float>(config, 0);
  fill_from_manifest(model, p, path);
  return model;
}

void save_probe_checkpoint(GatedProbe<float>& probe, const std::string& path) {
  std::ostringstream cfg;
  cfg << "d_in " << probe.config.d_in << " d_ff " << probe.config.d_ff << " vocab_size "
      << probe.config.vocab_size;
  write_checkpoint(path, build_body("probe", cfg.str(), probe.named_parameters()));
}

GatedProbe<float> load_probe_checkpoint(const std::string& path) {
  ParsedCheckpoint p = parse_checkpoint(path);
  if (p.kind != "probe")
    throw IoError("checkpoint: expected probe, found '" + p.kind + "' in " + path);
  std::istringstream is(p.config_line);
  ProbeConfig c;
  std::string key;
  while (is >> key) {
    if (key == "d_in") is >> c.d_in;
    else if (key == "d_ff") is >> c.d_ff;
    else if (key == "vocab_size") is >> c.vocab_size;
    else throw IoError("checkpoint: unknown probe config key " + key);
  }
  c.validate();
  GatedProbe<float> probe = make_probe<float>(c, 0);
  fill_from_manifest(probe, p, path);
  return probe;
}

std::string checkpoint_kind(const std::string& path) { return parse_checkpoint(path).kind; }

Transformer<float> init_value_network(ValueInit mode, const TransformerConfig& config,
                                      uint64_t seed, const std::string& checkpoint_path) {
  TransformerConfig c = config;
  c.tie_embeddings = false;  // a zeroed unembedding cannot be tied
  Transformer<float> model;
  if (mode == ValueInit::kPretrainedCheckpoint) {
    model = load_checkpoint(checkpoint_path);
    TransformerConfig loaded = model.config;
    loaded.tie_embeddings = false;
    if (!(loaded == c)) {
      throw IoError("init_value_network: checkpoint config " +
                    transformer_config_line(model.config) + " incompatible with requested " +
                    transformer_config_line(c));
    }
    model.config.tie_embeddings = false;
  } else {
    model = make_transformer<float>(c, seed);
  }
  model.unembed = Tensor<float>::zeros({c.d_model, c.vocab_size});
  return model;
}

}  // namespace ivl
