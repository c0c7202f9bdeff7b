#include "clinrisk/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "clinrisk/errors.hpp"

namespace clinrisk {
namespace {

constexpr char kMagic[] = "clinrisk-checkpoint v1";

std::string real_to_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* mode_name(AttentionMode m) {
  return m == AttentionMode::dense ? "dense" : "longformer";
}

AttentionMode mode_from(const std::string& s) {
  if (s == "dense") return AttentionMode::dense;
  if (s == "longformer") return AttentionMode::longformer;
  throw CheckpointError("unknown attention mode: " + s);
}

std::string getline_or_throw(std::istringstream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  return line;
}

}  // namespace

Checkpoint Checkpoint::from_model(const Model& model, const Vocabulary& vocab) {
  Checkpoint c;
  c.config = model.config();
  c.vocab = vocab;
  c.step = model.step;
  if (vocab.size() != c.config.vocab_size)
    throw CheckpointError("vocabulary size " + std::to_string(vocab.size()) +
                          " does not match config vocab_size " +
                          std::to_string(c.config.vocab_size));
  for (const auto& [name, t] : model.parameters()) c.params.emplace_back(name, t.clone());
  return c;
}

Model Checkpoint::to_model() const {
  Model m(config);
  const auto& dst = m.parameters();
  if (dst.size() != params.size())
    throw CheckpointError("parameter count mismatch: model wants " +
                          std::to_string(dst.size()) + ", checkpoint has " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != dst[i].first || params[i].second.shape() != dst[i].second.shape())
      throw CheckpointError("parameter mismatch at " + params[i].first);
    Tensor target = dst[i].second;  // shallow handle onto the model buffer
    std::memcpy(target.data(), params[i].second.data(),
                sizeof(real) * static_cast<std::size_t>(params[i].second.size()));
  }
  m.step = step;
  return m;
}

std::string Checkpoint::serialize() const {
  std::ostringstream out;
  out << kMagic << "\n";
  out << "step " << step << "\n";
  out << "config_begin\n";
  out << "vocab_size " << config.vocab_size << "\n";
  out << "hidden " << config.hidden << "\n";
  out << "layers " << config.layers << "\n";
  out << "heads " << config.heads << "\n";
  out << "ffn_mult " << config.ffn_mult << "\n";
  out << "max_positions_base " << config.max_positions_base << "\n";
  out << "extension_factor " << config.extension_factor << "\n";
  out << "window " << config.window << "\n";
  out << "dropout_rate " << real_to_text(static_cast<double>(config.dropout_rate)) << "\n";
  out << "seed " << config.seed << "\n";
  out << "attention " << mode_name(config.attention) << "\n";
  out << "has_gru " << (config.has_gru ? 1 : 0) << "\n";
  out << "config_end\n";
  out << "vocab " << vocab.size() << "\n";
  for (const auto& tok : vocab.tokens()) out << tok << "\n";
  out << "params " << params.size() << "\n";
  for (const auto& [name, t] : params) {
    out << name << " " << t.shape().size();
    for (auto d : t.shape()) out << " " << d;
    out << "\n";
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t.data()[i]);
      char bytes[sizeof(float)];
      std::memcpy(bytes, &f, sizeof(float));
      out.write(bytes, sizeof(float));
    }
  }
  return out.str();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  std::istringstream in(bytes);
  Checkpoint c;
  if (getline_or_throw(in, "magic") != kMagic)
    throw CheckpointError("not a recognised checkpoint (bad or missing format line)");

  auto read_kv = [&](const char* key) {
    std::string line = getline_or_throw(in, key);
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key)
      throw CheckpointError(std::string("expected `") + key + "` line, got: " + line);
    return line.substr(sp + 1);
  };

  c.step = std::stoull(read_kv("step"));
  if (getline_or_throw(in, "config_begin") != "config_begin")
    throw CheckpointError("missing config section");
  c.config.vocab_size = std::stoll(read_kv("vocab_size"));
  c.config.hidden = std::stoll(read_kv("hidden"));
  c.config.layers = std::stoll(read_kv("layers"));
  c.config.heads = std::stoll(read_kv("heads"));
  c.config.ffn_mult = std::stoll(read_kv("ffn_mult"));
  c.config.max_positions_base = std::stoll(read_kv("max_positions_base"));
  c.config.extension_factor = std::stoll(read_kv("extension_factor"));
  c.config.window = std::stoll(read_kv("window"));
  c.config.dropout_rate = static_cast<real>(std::stod(read_kv("dropout_rate")));
  c.config.seed = std::stoull(read_kv("seed"));
  c.config.attention = mode_from(read_kv("attention"));
  c.config.has_gru = std::stoi(read_kv("has_gru")) != 0;
  if (getline_or_throw(in, "config_end") != "config_end")
    throw CheckpointError("missing config_end");

  const auto vocab_n = std::stoll(read_kv("vocab"));
  std::vector<std::string> toks;
  toks.reserve(static_cast<std::size_t>(vocab_n));
  for (std::int64_t i = 0; i < vocab_n; ++i) toks.push_back(getline_or_throw(in, "vocab token"));
  c.vocab = Vocabulary::from_tokens(std::move(toks));
  if (c.vocab.size() != c.config.vocab_size)
    throw CheckpointError("vocabulary size does not match config");

  const auto param_n = std::stoll(read_kv("params"));
  for (std::int64_t pi = 0; pi < param_n; ++pi) {
    std::string header = getline_or_throw(in, "param header");
    std::istringstream hs(header);
    std::string name;
    std::size_t rank = 0;
    hs >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) hs >> d;
    if (!hs) throw CheckpointError("bad parameter header: " + header);
    const auto numel = shape_numel(shape);
    std::vector<real> vals(static_cast<std::size_t>(numel));
    for (std::int64_t i = 0; i < numel; ++i) {
      char bytes[sizeof(float)];
      in.read(bytes, sizeof(float));
      if (!in) throw CheckpointError("truncated parameter data in " + name);
      float f;
      std::memcpy(&f, bytes, sizeof(float));
      vals[static_cast<std::size_t>(i)] = static_cast<real>(f);
    }
    c.params.emplace_back(name, Tensor::from(std::move(shape), std::move(vals)));
  }
  for (std::size_t i = 0; i < c.params.size(); ++i)
    for (std::size_t j = i + 1; j < c.params.size(); ++j)
      if (c.params[i].first == c.params[j].first)
        throw CheckpointError("duplicate parameter name: " + c.params[i].first);
  return c;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError("cannot rename " + tmp + " to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::uint64_t Checkpoint::content_hash() const {
  const std::string bytes = serialize();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Checkpoint init_longformer_from_dense(const Checkpoint& ckpt, std::int64_t window,
                                      std::int64_t factor) {
  if (ckpt.config.attention != AttentionMode::dense)
    throw CheckpointError("conversion expects a dense-attention checkpoint");
  Checkpoint out;
  out.config = ckpt.config;
  out.config.attention = AttentionMode::longformer;
  out.config.window = window;
  out.config.extension_factor = factor;
  out.config.validate();
  out.vocab = ckpt.vocab;
  out.step = ckpt.step;
  for (const auto& [name, t] : ckpt.params) {
    if (name == "pos_emb") {
      if (t.dim(0) != ckpt.config.max_positions_base)
        throw CheckpointError("dense positional table has " + std::to_string(t.dim(0)) +
                              " rows, expected the base length " +
                              std::to_string(ckpt.config.max_positions_base));
      out.params.emplace_back(name, extend_positions(t, factor));
    } else {
      out.params.emplace_back(name, t.clone());
    }
  }
  return out;
}

Checkpoint restrict_to_base_dense(const Checkpoint& ckpt) {
  if (ckpt.config.attention != AttentionMode::longformer)
    throw CheckpointError("restriction expects a windowed checkpoint");
  Checkpoint out;
  out.config = ckpt.config;
  out.config.attention = AttentionMode::dense;
  out.vocab = ckpt.vocab;
  out.step = ckpt.step;
  const auto base = ckpt.config.max_positions_base;
  for (const auto& [name, t] : ckpt.params) {
    if (name == "pos_emb") {
      const auto cols = t.dim(1);
      Tensor head({base, cols});
      std::memcpy(head.data(), t.data(), sizeof(real) * static_cast<std::size_t>(base * cols));
      out.params.emplace_back(name, std::move(head));
    } else {
      out.params.emplace_back(name, t.clone());
    }
  }
  return out;
}

}  // namespace clinrisk
