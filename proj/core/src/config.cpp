#include "tridira/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tridira {

using nlohmann::json;

void TrainSchedule::validate() const {
  if (stage1_epochs < 0) throw ConfigError("stage1_epochs must be >= 0");
  if (stage2_epochs < 1) throw ConfigError("stage2_epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed required");
  if (grad_clip && !(*grad_clip > 0)) throw ConfigError("grad_clip must be positive");
}

void DatasetConfig::validate(bool check_paths) const {
  if (kind == Kind::synthetic) {
    synthetic.validate();
    if (train_count < 1 || val_count < 1 || test_count < 1) {
      throw ConfigError("synthetic split counts must be positive");
    }
    if (train_count + val_count + test_count > synthetic.num_samples) {
      throw ConfigError("synthetic split counts exceed num_samples");
    }
  } else {
    for (const auto& p : {train_manifest, val_manifest, test_manifest}) {
      if (p.empty()) throw ConfigError("manifest dataset requires train/val/test paths");
      if (check_paths && !std::filesystem::exists(p)) {
        throw ConfigError("manifest path does not exist: " + p.string());
      }
    }
  }
}

void ExperimentConfig::validate(bool check_paths) const {
  if (version != kConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(version));
  }
  dataset.validate(check_paths);
  encoder.validate();
  disentangler.validate(encoder.d_model);
  weights.validate();
  loss.validate();
  schedule.validate();
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

namespace {

void expect_keys(const json& j, const char* block, std::initializer_list<const char*> allowed) {
  std::set<std::string> ok;
  for (const char* k : allowed) ok.insert(k);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) {
      throw ConfigError(std::string("unknown key '") + it.key() + "' in " + block);
    }
  }
}

json tri_to_json(const std::array<int, 3>& a) {
  return json{{"text", a[0]}, {"audio", a[1]}, {"visual", a[2]}};
}

std::array<int, 3> tri_from_json(const json& j, const char* block) {
  expect_keys(j, block, {"text", "audio", "visual"});
  return {j.at("text").get<int>(), j.at("audio").get<int>(), j.at("visual").get<int>()};
}

json trid_to_json(const std::array<double, 3>& a) {
  return json{{"text", a[0]}, {"audio", a[1]}, {"visual", a[2]}};
}

std::array<double, 3> trid_from_json(const json& j, const char* block) {
  expect_keys(j, block, {"text", "audio", "visual"});
  return {j.at("text").get<double>(), j.at("audio").get<double>(),
          j.at("visual").get<double>()};
}

json synthetic_to_json(const SyntheticSpec& s) {
  json j;
  j["num_samples"] = s.num_samples;
  j["seq_lengths"] = tri_to_json(s.seq_lengths);
  j["feature_dims"] = tri_to_json(s.feature_dims);
  j["shared_dim"] = s.shared_dim;
  j["specific_dims"] = tri_to_json(s.specific_dims);
  j["nuisance_dims"] = tri_to_json(s.nuisance_dims);
  j["w_shared"] = s.w_shared;
  j["w_specific"] = trid_to_json(s.w_specific);
  j["noise_std"] = s.noise_std;
  j["nonlinear"] = s.nonlinear;
  j["seed"] = s.seed;
  return j;
}

SyntheticSpec synthetic_from_json(const json& j) {
  expect_keys(j, "dataset.synthetic",
              {"num_samples", "seq_lengths", "feature_dims", "shared_dim", "specific_dims",
               "nuisance_dims", "w_shared", "w_specific", "noise_std", "nonlinear", "seed"});
  SyntheticSpec s;
  s.num_samples = j.at("num_samples").get<int>();
  s.seq_lengths = tri_from_json(j.at("seq_lengths"), "dataset.synthetic.seq_lengths");
  s.feature_dims = tri_from_json(j.at("feature_dims"), "dataset.synthetic.feature_dims");
  s.shared_dim = j.at("shared_dim").get<int>();
  s.specific_dims = tri_from_json(j.at("specific_dims"), "dataset.synthetic.specific_dims");
  s.nuisance_dims = tri_from_json(j.at("nuisance_dims"), "dataset.synthetic.nuisance_dims");
  s.w_shared = j.at("w_shared").get<double>();
  s.w_specific = trid_from_json(j.at("w_specific"), "dataset.synthetic.w_specific");
  s.noise_std = j.at("noise_std").get<double>();
  s.nonlinear = j.at("nonlinear").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

json dataset_to_json(const DatasetConfig& d) {
  json j;
  if (d.kind == DatasetConfig::Kind::synthetic) {
    j["kind"] = "synthetic";
    j["synthetic"] = synthetic_to_json(d.synthetic);
    j["splits"] = json{{"train", d.train_count}, {"val", d.val_count}, {"test", d.test_count}};
  } else {
    j["kind"] = "manifest";
    j["train_manifest"] = d.train_manifest.generic_string();
    j["val_manifest"] = d.val_manifest.generic_string();
    j["test_manifest"] = d.test_manifest.generic_string();
  }
  return j;
}

DatasetConfig dataset_from_json(const json& j) {
  DatasetConfig d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "synthetic") {
    expect_keys(j, "dataset", {"kind", "synthetic", "splits"});
    d.kind = DatasetConfig::Kind::synthetic;
    d.synthetic = synthetic_from_json(j.at("synthetic"));
    const json& s = j.at("splits");
    expect_keys(s, "dataset.splits", {"train", "val", "test"});
    d.train_count = s.at("train").get<int>();
    d.val_count = s.at("val").get<int>();
    d.test_count = s.at("test").get<int>();
  } else if (kind == "manifest") {
    expect_keys(j, "dataset", {"kind", "train_manifest", "val_manifest", "test_manifest"});
    d.kind = DatasetConfig::Kind::manifest;
    d.train_manifest = j.at("train_manifest").get<std::string>();
    d.val_manifest = j.at("val_manifest").get<std::string>();
    d.test_manifest = j.at("test_manifest").get<std::string>();
  } else {
    throw ConfigError("dataset.kind must be 'synthetic' or 'manifest'");
  }
  return d;
}

json encoder_to_json(const EncoderConfig& e) {
  json j;
  j["d_model"] = e.d_model;
  j["layers"] = tri_to_json(e.layers);
  j["shared_layers"] = e.shared_layers;
  j["heads"] = tri_to_json(e.heads);
  j["shared_heads"] = e.shared_heads;
  j["ffn_mult"] = e.ffn_mult;
  j["dropout"] = e.dropout;
  j["pooling"] = e.pooling == Pooling::mean_masked ? "mean_masked" : "first_token";
  j["conv_kernel"] = e.conv_kernel;
  return j;
}

EncoderConfig encoder_from_json(const json& j) {
  expect_keys(j, "encoder",
              {"d_model", "layers", "shared_layers", "heads", "shared_heads", "ffn_mult",
               "dropout", "pooling", "conv_kernel"});
  EncoderConfig e;
  e.d_model = j.at("d_model").get<int>();
  e.layers = tri_from_json(j.at("layers"), "encoder.layers");
  e.shared_layers = j.at("shared_layers").get<int>();
  e.heads = tri_from_json(j.at("heads"), "encoder.heads");
  e.shared_heads = j.at("shared_heads").get<int>();
  e.ffn_mult = j.at("ffn_mult").get<int>();
  e.dropout = j.at("dropout").get<double>();
  const std::string pooling = j.at("pooling").get<std::string>();
  if (pooling == "mean_masked") {
    e.pooling = Pooling::mean_masked;
  } else if (pooling == "first_token") {
    e.pooling = Pooling::first_token;
  } else {
    throw ConfigError("encoder.pooling must be 'mean_masked' or 'first_token'");
  }
  e.conv_kernel = j.at("conv_kernel").get<int>();
  return e;
}

json loss_to_json(const LossWeights& w, const LossConfig& c) {
  json j;
  j["weights"] = json{{"task", w.task},     {"sim", w.sim},   {"ucorr", w.ucorr},
                      {"recon", w.recon},   {"modality", w.modality}, {"h", w.h}};
  j["ucorr_mode"] = c.ucorr_mode == UcorrMode::independence ? "independence" : "paper_literal";
  j["hsic_kernel"] = c.hsic_kernel == HsicKernel::rbf ? "rbf" : "paper_literal";
  j["hsic_sigma"] = c.hsic_sigma;
  j["cmd_order"] = c.cmd_order;
  j["cmd_bounds"] = c.cmd_bounds == CmdBoundsMode::tanh_fixed ? "tanh_fixed" : "empirical";
  return j;
}

void loss_from_json(const json& j, LossWeights& w, LossConfig& c) {
  expect_keys(j, "loss",
              {"weights", "ucorr_mode", "hsic_kernel", "hsic_sigma", "cmd_order", "cmd_bounds"});
  const json& jw = j.at("weights");
  expect_keys(jw, "loss.weights", {"task", "sim", "ucorr", "recon", "modality", "h"});
  w.task = jw.at("task").get<double>();
  w.sim = jw.at("sim").get<double>();
  w.ucorr = jw.at("ucorr").get<double>();
  w.recon = jw.at("recon").get<double>();
  w.modality = jw.at("modality").get<double>();
  w.h = jw.at("h").get<double>();
  const std::string mode = j.at("ucorr_mode").get<std::string>();
  if (mode == "independence") {
    c.ucorr_mode = UcorrMode::independence;
  } else if (mode == "paper_literal") {
    c.ucorr_mode = UcorrMode::paper_literal;
  } else {
    throw ConfigError("loss.ucorr_mode must be 'independence' or 'paper_literal'");
  }
  const std::string kernel = j.at("hsic_kernel").get<std::string>();
  if (kernel == "rbf") {
    c.hsic_kernel = HsicKernel::rbf;
  } else if (kernel == "paper_literal") {
    c.hsic_kernel = HsicKernel::paper_literal;
  } else {
    throw ConfigError("loss.hsic_kernel must be 'rbf' or 'paper_literal'");
  }
  c.hsic_sigma = j.at("hsic_sigma").get<double>();
  c.cmd_order = j.at("cmd_order").get<int>();
  const std::string bounds = j.at("cmd_bounds").get<std::string>();
  if (bounds == "tanh_fixed") {
    c.cmd_bounds = CmdBoundsMode::tanh_fixed;
  } else if (bounds == "empirical") {
    c.cmd_bounds = CmdBoundsMode::empirical;
  } else {
    throw ConfigError("loss.cmd_bounds must be 'tanh_fixed' or 'empirical'");
  }
}

json schedule_to_json(const TrainSchedule& s) {
  json j;
  j["stage1_epochs"] = s.stage1_epochs;
  j["stage2_epochs"] = s.stage2_epochs;
  j["learning_rate"] = s.learning_rate;
  j["weight_decay"] = s.weight_decay;
  j["batch_size"] = s.batch_size;
  j["seeds"] = s.seeds;
  if (s.grad_clip) {
    j["grad_clip"] = *s.grad_clip;
  } else {
    j["grad_clip"] = nullptr;
  }
  return j;
}

TrainSchedule schedule_from_json(const json& j) {
  expect_keys(j, "train",
              {"stage1_epochs", "stage2_epochs", "learning_rate", "weight_decay", "batch_size",
               "seeds", "grad_clip"});
  TrainSchedule s;
  s.stage1_epochs = j.at("stage1_epochs").get<int>();
  s.stage2_epochs = j.at("stage2_epochs").get<int>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.batch_size = j.at("batch_size").get<int>();
  s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (!j.at("grad_clip").is_null()) s.grad_clip = j.at("grad_clip").get<double>();
  return s;
}

json disentangler_to_json(const DisentanglerConfig& d) {
  return json{{"attention_tokens", d.attention_tokens}, {"decoder_hidden", d.decoder_hidden}};
}

DisentanglerConfig disentangler_from_json(const json& j) {
  expect_keys(j, "disentangler", {"attention_tokens", "decoder_hidden"});
  DisentanglerConfig d;
  d.attention_tokens = j.at("attention_tokens").get<int>();
  d.decoder_hidden = j.at("decoder_hidden").get<int>();
  return d;
}

}  // namespace

std::string ExperimentConfig::to_json_string() const {
  json j;
  j["version"] = version;
  j["dataset"] = dataset_to_json(dataset);
  j["encoder"] = encoder_to_json(encoder);
  j["disentangler"] = disentangler_to_json(disentangler);
  j["loss"] = loss_to_json(weights, loss);
  j["train"] = schedule_to_json(schedule);
  j["output_dir"] = output_dir.generic_string();
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  expect_keys(j, "config",
              {"version", "dataset", "encoder", "disentangler", "loss", "train", "output_dir"});
  ExperimentConfig c;
  c.version = j.at("version").get<int>();
  if (c.version != kConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(c.version));
  }
  c.dataset = dataset_from_json(j.at("dataset"));
  c.encoder = encoder_from_json(j.at("encoder"));
  c.disentangler = disentangler_from_json(j.at("disentangler"));
  loss_from_json(j.at("loss"), c.weights, c.loss);
  c.schedule = schedule_from_json(j.at("train"));
  c.output_dir = j.at("output_dir").get<std::string>();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_string(ss.str());
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write config: " + path.string());
  os << to_json_string() << "\n";
}

std::uint64_t ExperimentConfig::fingerprint() const {
  const std::string s = to_json_string();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path ExperimentConfig::resolved_output_dir(
    const std::optional<std::filesystem::path>& cli_override) const {
  std::filesystem::path dir = cli_override ? *cli_override : output_dir;
  if (const char* root = std::getenv("TRIDIRA_OUT")) {
    if (dir.is_relative()) dir = std::filesystem::path(root) / dir;
  }
  return dir;
}

}  // namespace tridira
