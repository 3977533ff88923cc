#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmcaps/fusion.hpp"
#include "mmcaps/model.hpp"
#include "mmcaps/synthetic.hpp"

namespace mmcaps {

// Flat key=value experiment configuration. Every tunable the project fixes
// by decision appears here with its default, so a serialized config is a
// complete record of a run. Unknown keys are hard errors.
struct Config {
  // run
  uint64_t seed = 1;
  std::string conditioning = "routing";

  // optimization
  double lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_size = 8;
  int64_t max_steps = 2000;
  double margin_start = 0.2;
  double margin_end = 0.9;
  int64_t margin_steps = 0;  // 0 -> 80% of max_steps
  double lambda_initial = 0.5;
  double acc_saturation_threshold = 0.95;
  int64_t val_interval = 200;
  int64_t val_size = 64;

  // model
  int64_t frames = 4;
  int64_t height = 64;
  int64_t width = 64;
  std::vector<int64_t> encoder_channels = {16, 32, 48, 64};
  int64_t capsule_kernel = 5;
  int64_t video_types = 8;
  int64_t sentence_types = 8;
  int64_t classes = 3;
  int64_t embed_dim = 32;
  int64_t branch_width = 64;
  std::vector<int64_t> decoder_channels = {32, 24, 16};
  int64_t routing_iterations = 3;
  std::vector<double> inv_temp_schedule = {1.0, 2.0, 3.0};
  double variance_floor = 1e-4;
  double transform_init_noise = 0.1;

  // synthetic data
  int64_t min_actors = 1;
  int64_t max_actors = 3;
  double min_radius = 4.0;
  double max_radius = 9.0;
  double min_visible_fraction = 0.3;
  std::string gt_style = "mask";  // mask | bbox
  int64_t n_train = 2000;
  int64_t n_val = 200;
  int64_t n_test = 200;
  uint64_t data_seed = 100;

  int64_t effective_margin_steps() const {
    return margin_steps > 0 ? margin_steps : (max_steps * 8) / 10;
  }

  ModelConfig model_config(int64_t vocab_size) const {
    ModelConfig m;
    m.frames = frames;
    m.height = height;
    m.width = width;
    m.encoder_channels = encoder_channels;
    m.capsule_kernel = capsule_kernel;
    m.video_types = video_types;
    m.sentence_types = sentence_types;
    m.classes = classes;
    m.embed_dim = embed_dim;
    m.branch_width = branch_width;
    m.decoder_channels = decoder_channels;
    m.routing_iterations = static_cast<int>(routing_iterations);
    m.inv_temp_schedule = inv_temp_schedule;
    m.variance_floor = variance_floor;
    m.transform_init_noise = transform_init_noise;
    m.conditioning = conditioning_from_name(conditioning);
    m.vocab_size = vocab_size;
    return m;
  }

  SceneConfig scene_config() const {
    SceneConfig s;
    s.frames = frames;
    s.size = height;
    s.min_actors = static_cast<int>(min_actors);
    s.max_actors = static_cast<int>(max_actors);
    s.min_radius = min_radius;
    s.max_radius = max_radius;
    s.min_visible_fraction = min_visible_fraction;
    s.bbox_ground_truth = gt_style == "bbox";
    return s;
  }
};

namespace detail {

inline std::string join_i64(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join_f64(const std::vector<double>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<int64_t> split_i64(const std::string& s) {
  std::vector<int64_t> out;
  std::istringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stoll(part));
  return out;
}

inline std::vector<double> split_f64(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
  return out;
}

}  // namespace detail

inline std::string serialize_config(const Config& c) {
  std::ostringstream os;
  os << "seed=" << c.seed << "\n";
  os << "conditioning=" << c.conditioning << "\n";
  os << "lr=" << c.lr << "\n";
  os << "adam_beta1=" << c.adam_beta1 << "\n";
  os << "adam_beta2=" << c.adam_beta2 << "\n";
  os << "adam_eps=" << c.adam_eps << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "max_steps=" << c.max_steps << "\n";
  os << "margin_start=" << c.margin_start << "\n";
  os << "margin_end=" << c.margin_end << "\n";
  os << "margin_steps=" << c.margin_steps << "\n";
  os << "lambda_initial=" << c.lambda_initial << "\n";
  os << "acc_saturation_threshold=" << c.acc_saturation_threshold << "\n";
  os << "val_interval=" << c.val_interval << "\n";
  os << "val_size=" << c.val_size << "\n";
  os << "frames=" << c.frames << "\n";
  os << "height=" << c.height << "\n";
  os << "width=" << c.width << "\n";
  os << "encoder_channels=" << detail::join_i64(c.encoder_channels) << "\n";
  os << "capsule_kernel=" << c.capsule_kernel << "\n";
  os << "video_types=" << c.video_types << "\n";
  os << "sentence_types=" << c.sentence_types << "\n";
  os << "classes=" << c.classes << "\n";
  os << "embed_dim=" << c.embed_dim << "\n";
  os << "branch_width=" << c.branch_width << "\n";
  os << "decoder_channels=" << detail::join_i64(c.decoder_channels) << "\n";
  os << "routing_iterations=" << c.routing_iterations << "\n";
  os << "inv_temp_schedule=" << detail::join_f64(c.inv_temp_schedule) << "\n";
  os << "variance_floor=" << c.variance_floor << "\n";
  os << "transform_init_noise=" << c.transform_init_noise << "\n";
  os << "min_actors=" << c.min_actors << "\n";
  os << "max_actors=" << c.max_actors << "\n";
  os << "min_radius=" << c.min_radius << "\n";
  os << "max_radius=" << c.max_radius << "\n";
  os << "min_visible_fraction=" << c.min_visible_fraction << "\n";
  os << "gt_style=" << c.gt_style << "\n";
  os << "n_train=" << c.n_train << "\n";
  os << "n_val=" << c.n_val << "\n";
  os << "n_test=" << c.n_test << "\n";
  os << "data_seed=" << c.data_seed << "\n";
  return os.str();
}

inline void apply_config_line(Config& c, const std::string& key, const std::string& value) {
  if (key == "seed") c.seed = std::stoull(value);
  else if (key == "conditioning") c.conditioning = value;
  else if (key == "lr") c.lr = std::stod(value);
  else if (key == "adam_beta1") c.adam_beta1 = std::stod(value);
  else if (key == "adam_beta2") c.adam_beta2 = std::stod(value);
  else if (key == "adam_eps") c.adam_eps = std::stod(value);
  else if (key == "batch_size") c.batch_size = std::stoll(value);
  else if (key == "max_steps") c.max_steps = std::stoll(value);
  else if (key == "margin_start") c.margin_start = std::stod(value);
  else if (key == "margin_end") c.margin_end = std::stod(value);
  else if (key == "margin_steps") c.margin_steps = std::stoll(value);
  else if (key == "lambda_initial") c.lambda_initial = std::stod(value);
  else if (key == "acc_saturation_threshold") c.acc_saturation_threshold = std::stod(value);
  else if (key == "val_interval") c.val_interval = std::stoll(value);
  else if (key == "val_size") c.val_size = std::stoll(value);
  else if (key == "frames") c.frames = std::stoll(value);
  else if (key == "height") c.height = std::stoll(value);
  else if (key == "width") c.width = std::stoll(value);
  else if (key == "encoder_channels") c.encoder_channels = detail::split_i64(value);
  else if (key == "capsule_kernel") c.capsule_kernel = std::stoll(value);
  else if (key == "video_types") c.video_types = std::stoll(value);
  else if (key == "sentence_types") c.sentence_types = std::stoll(value);
  else if (key == "classes") c.classes = std::stoll(value);
  else if (key == "embed_dim") c.embed_dim = std::stoll(value);
  else if (key == "branch_width") c.branch_width = std::stoll(value);
  else if (key == "decoder_channels") c.decoder_channels = detail::split_i64(value);
  else if (key == "routing_iterations") c.routing_iterations = std::stoll(value);
  else if (key == "inv_temp_schedule") c.inv_temp_schedule = detail::split_f64(value);
  else if (key == "variance_floor") c.variance_floor = std::stod(value);
  else if (key == "transform_init_noise") c.transform_init_noise = std::stod(value);
  else if (key == "min_actors") c.min_actors = std::stoll(value);
  else if (key == "max_actors") c.max_actors = std::stoll(value);
  else if (key == "min_radius") c.min_radius = std::stod(value);
  else if (key == "max_radius") c.max_radius = std::stod(value);
  else if (key == "min_visible_fraction") c.min_visible_fraction = std::stod(value);
  else if (key == "gt_style") c.gt_style = value;
  else if (key == "n_train") c.n_train = std::stoll(value);
  else if (key == "n_val") c.n_val = std::stoll(value);
  else if (key == "n_test") c.n_test = std::stoll(value);
  else if (key == "data_seed") c.data_seed = std::stoull(value);
  else throw ContractError("unknown config key: " + key);
}

inline Config parse_config_text(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    apply_config_line(c, line.substr(0, eq), line.substr(eq + 1));
  }
  if (c.gt_style != "mask" && c.gt_style != "bbox")
    throw ContractError("gt_style must be mask or bbox");
  conditioning_from_name(c.conditioning);  // validates
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot read config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline void save_config(const Config& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot write config: " + path);
  os << serialize_config(c);
}

}  // namespace mmcaps
