#include "mst/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mst/errors.hpp"

namespace mst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::array<double, 3> to_triple(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != 3) throw ConfigError("config: '" + key + "' expects three comma-separated numbers");
  return {to_double(key, items[0]), to_double(key, items[1]), to_double(key, items[2])};
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void set_config_value(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto size = [&] { return static_cast<std::size_t>(to_u64(key, v)); };
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  if (key == "c_d") m.c_d = size();
  else if (key == "heads") m.heads = size();
  else if (key == "encoder_layers") m.encoder_layers = size();
  else if (key == "decoder_layers") m.decoder_layers = size();
  else if (key == "mlp_hidden") m.mlp_hidden = size();
  else if (key == "head_hidden") m.head_hidden = size();
  else if (key == "dropout_p") m.dropout_p = to_double(key, v);
  else if (key == "n_scenes") {
    m.n_scenes = size();
    c.n_scenes_set = true;
  } else if (key == "input_hw") m.input_hw = size();
  else if (key == "backbone_channels") {
    m.backbone_channels.clear();
    for (const auto& item : split_list(v)) m.backbone_channels.push_back(static_cast<std::size_t>(to_u64(key, item)));
  } else if (key == "map_x_stride") m.map_x_stride = size();
  else if (key == "map_q_stride") m.map_q_stride = size();
  else if (key == "batch_size") t.batch_size = size();
  else if (key == "lr") t.lr = to_double(key, v);
  else if (key == "beta1") t.beta1 = to_double(key, v);
  else if (key == "beta2") t.beta2 = to_double(key, v);
  else if (key == "eps") t.eps = to_double(key, v);
  else if (key == "max_steps") t.max_steps = to_u64(key, v);
  else if (key == "eval_every") t.eval_every = to_u64(key, v);
  else if (key == "seed") t.seed = to_u64(key, v);
  else if (key == "s_x_init") t.s_x_init = to_double(key, v);
  else if (key == "s_q_init") t.s_q_init = to_double(key, v);
  else if (key == "grad_clip") t.grad_clip = to_double(key, v);
  else if (key == "lr_schedule") {
    if (v == "constant") t.lr_schedule = LrSchedule::constant;
    else if (v == "cosine") t.lr_schedule = LrSchedule::cosine;
    else throw ConfigError("config: lr_schedule must be 'constant' or 'cosine', got '" + v + "'");
  } else if (key == "lr_decay_start") t.lr_decay_start = to_u64(key, v);
  else if (key == "image_mean") c.stats.mean = to_triple(key, v);
  else if (key == "image_std") c.stats.stddev = to_triple(key, v);
  else if (key == "data") c.data = v;
  else if (key == "out") c.out = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
  set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    try {
      apply_override(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in);
}

std::string format_run_config(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  std::string channels;
  for (std::size_t i = 0; i < m.backbone_channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(m.backbone_channels[i]);
  auto triple = [](const std::array<double, 3>& a) { return fmt(a[0]) + "," + fmt(a[1]) + "," + fmt(a[2]); };
  std::ostringstream os;
  os << "c_d=" << m.c_d << "\n"
     << "heads=" << m.heads << "\n"
     << "encoder_layers=" << m.encoder_layers << "\n"
     << "decoder_layers=" << m.decoder_layers << "\n"
     << "mlp_hidden=" << m.mlp_hidden << "\n"
     << "head_hidden=" << m.head_hidden << "\n"
     << "dropout_p=" << fmt(m.dropout_p) << "\n"
     << "n_scenes=" << m.n_scenes << "\n"
     << "input_hw=" << m.input_hw << "\n"
     << "backbone_channels=" << channels << "\n"
     << "map_x_stride=" << m.map_x_stride << "\n"
     << "map_q_stride=" << m.map_q_stride << "\n"
     << "batch_size=" << t.batch_size << "\n"
     << "lr=" << fmt(t.lr) << "\n"
     << "beta1=" << fmt(t.beta1) << "\n"
     << "beta2=" << fmt(t.beta2) << "\n"
     << "eps=" << fmt(t.eps) << "\n"
     << "max_steps=" << t.max_steps << "\n"
     << "eval_every=" << t.eval_every << "\n"
     << "seed=" << t.seed << "\n"
     << "s_x_init=" << fmt(t.s_x_init) << "\n"
     << "s_q_init=" << fmt(t.s_q_init) << "\n"
     << "grad_clip=" << fmt(t.grad_clip) << "\n"
     << "lr_schedule=" << (t.lr_schedule == LrSchedule::cosine ? "cosine" : "constant") << "\n"
     << "lr_decay_start=" << t.lr_decay_start << "\n"
     << "image_mean=" << triple(c.stats.mean) << "\n"
     << "image_std=" << triple(c.stats.stddev) << "\n";
  return os.str();
}

}  // namespace mst
