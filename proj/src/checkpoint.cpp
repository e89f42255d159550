#include "omniseq/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace omniseq {

Json to_json(const ModelConfig& cfg) {
  return Json{{"dim", cfg.dim},
              {"attn_dim", cfg.attn_dim},
              {"blocks", cfg.blocks},
              {"heads", cfg.heads},
              {"ffn_dim", cfg.ffn_dim},
              {"max_seq_len", cfg.max_seq_len},
              {"dropout", cfg.dropout},
              {"ln_epsilon", cfg.ln_epsilon},
              {"catalog_size", cfg.catalog_size},
              {"encoder", to_string(cfg.encoder)}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig cfg;
  try {
    cfg.dim = j.value("dim", cfg.dim);
    cfg.attn_dim = j.value("attn_dim", cfg.attn_dim);
    cfg.blocks = j.value("blocks", cfg.blocks);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
    cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.ln_epsilon = j.value("ln_epsilon", cfg.ln_epsilon);
    cfg.catalog_size = j.value("catalog_size", cfg.catalog_size);
    cfg.encoder = parse_encoder_kind(j.value("encoder", std::string("attn")));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params, const std::string& variant, std::uint64_t seed) {
  Json shapes = Json::array();
  for (const Parameter* p : params.ordered()) {
    shapes.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  const Json header{{"format", "omniseq-checkpoint"},
                    {"format_version", kCheckpointFormatVersion},
                    {"config", to_json(cfg)},
                    {"catalog_size", cfg.catalog_size},
                    {"seed", seed},
                    {"variant", variant},
                    {"params", shapes}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  unsigned char buf[8];
  for (const Parameter* p : params.ordered()) {
    for (double v : p->value.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(buf), 8);
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint has no header: " + path.string());
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (header.value("format", std::string()) != "omniseq-checkpoint" ||
      header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format in " + path.string());
  }
  Checkpoint ck;
  ck.config = model_config_from_json(header.at("config"));
  ck.seed = header.value("seed", std::uint64_t{0});
  ck.variant = header.value("variant", std::string());
  ck.params = init_params(ck.config, 0);
  const auto& shapes = header.at("params");
  auto ordered = ck.params.ordered();
  if (shapes.size() != ordered.size()) throw DataError("checkpoint parameter count mismatch");
  unsigned char buf[8];
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    Parameter& p = *ordered[k];
    if (shapes[k].at("name").get<std::string>() != p.name ||
        shapes[k].at("rows").get<std::size_t>() != p.value.rows() ||
        shapes[k].at("cols").get<std::size_t>() != p.value.cols()) {
      throw DataError("checkpoint parameter " + p.name + " has an unexpected shape");
    }
    for (double& v : p.value.values()) {
      if (!in.read(reinterpret_cast<char*>(buf), 8)) {
        throw DataError("truncated checkpoint " + path.string());
      }
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
      std::memcpy(&v, &bits, sizeof(v));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes after checkpoint parameters");
  }
  return ck;
}

}  // namespace omniseq
