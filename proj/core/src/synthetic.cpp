#include "tridira/synthetic.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tridira/rng.hpp"

namespace tridira {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_samples < 1) throw ValidationError("num_samples must be positive");
  if (shared_dim < 1) throw ValidationError("shared_dim must be positive");
  if (noise_std < 0) throw ValidationError("noise_std must be nonnegative");
  for (auto m : kModalities) {
    const int i = index_of(m);
    if (seq_lengths[i] < 1 || feature_dims[i] < 1 || specific_dims[i] < 1 ||
        nuisance_dims[i] < 1) {
      throw ValidationError(std::string("nonpositive dims for modality ") + to_string(m));
    }
  }
}

double synthetic_label(const SyntheticSpec& spec, const SyntheticLatents& latents) {
  double y = spec.w_shared * latents.shared.mean();
  for (auto m : kModalities) {
    y += spec.w_specific[index_of(m)] * latents.specific[index_of(m)].mean();
  }
  return y;
}

namespace {

Vector draw_normal(rng::Stream& stream, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = stream.normal();
  return v;
}

Matrix draw_mixing(rng::Stream& stream, int rows, int cols) {
  Matrix m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * stream.normal();
  }
  return m;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t nuisance_stream) {
  spec.validate();

  // Fixed per-modality mixing maps, drawn once from the seed.
  std::array<Matrix, 3> mixing;
  std::array<Vector, 3> offsets;
  {
    rng::Stream mix(spec.seed, rng::streams::synthetic_mixing);
    for (auto m : kModalities) {
      const int i = index_of(m);
      const int latent = spec.shared_dim + spec.specific_dims[i] + spec.nuisance_dims[i];
      mixing[i] = draw_mixing(mix, spec.feature_dims[i], latent);
      offsets[i] = 0.3 * draw_normal(mix, spec.feature_dims[i]);
    }
  }

  SyntheticDataset out;
  out.records.reserve(static_cast<std::size_t>(spec.num_samples));
  out.latents.reserve(static_cast<std::size_t>(spec.num_samples));

  for (int s = 0; s < spec.num_samples; ++s) {
    const auto sid = static_cast<std::uint64_t>(s);
    rng::Stream shared(spec.seed, rng::streams::synthetic_shared + (sid << 12));
    rng::Stream nuisance(spec.seed,
                         rng::streams::synthetic_nuisance + (sid << 12) + nuisance_stream);
    rng::Stream noise(spec.seed, rng::streams::synthetic_noise + (sid << 12));

    SyntheticLatents latents;
    latents.shared = draw_normal(shared, spec.shared_dim);
    for (auto m : kModalities) {
      const int i = index_of(m);
      latents.specific[i] = draw_normal(shared, spec.specific_dims[i]);
      latents.nuisance[i] = draw_normal(nuisance, spec.nuisance_dims[i]);
    }

    UtteranceRecord rec;
    rec.id = "synth_" + std::to_string(s);
    rec.label = synthetic_label(spec, latents);

    for (auto m : kModalities) {
      const int i = index_of(m);
      Vector z(spec.shared_dim + spec.specific_dims[i] + spec.nuisance_dims[i]);
      z << latents.shared, latents.specific[i], latents.nuisance[i];
      Vector base = mixing[i] * z + offsets[i];
      if (spec.nonlinear) base = base.array().tanh().matrix();

      FeatureSequence seq;
      seq.modality = m;
      seq.values.resize(spec.seq_lengths[i], spec.feature_dims[i]);
      seq.mask.assign(static_cast<std::size_t>(spec.seq_lengths[i]), 1);
      for (int t = 0; t < spec.seq_lengths[i]; ++t) {
        for (int j = 0; j < spec.feature_dims[i]; ++j) {
          seq.values(t, j) = static_cast<float>(base(j) + spec.noise_std * noise.normal());
        }
      }
      rec.features[i] = std::move(seq);
    }

    out.records.push_back(std::move(rec));
    out.latents.push_back(std::move(latents));
  }
  return out;
}

void write_latent_log(const SyntheticDataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open latent log for write: " + path.string());
  for (std::size_t i = 0; i < dataset.latents.size(); ++i) {
    const auto& l = dataset.latents[i];
    json j;
    j["id"] = dataset.records[i].id;
    j["label"] = dataset.records[i].label;
    j["s"] = std::vector<double>(l.shared.data(), l.shared.data() + l.shared.size());
    for (auto m : kModalities) {
      const auto& p = l.specific[index_of(m)];
      const auto& n = l.nuisance[index_of(m)];
      j[std::string("p_") + to_string(m)] = std::vector<double>(p.data(), p.data() + p.size());
      j[std::string("n_") + to_string(m)] = std::vector<double>(n.data(), n.data() + n.size());
    }
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("latent log write failed: " + path.string());
}

std::vector<SyntheticLatents> read_latent_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open latent log: " + path.string());
  std::vector<SyntheticLatents> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    SyntheticLatents l;
    auto to_vec = [](const json& arr) {
      Vector v(arr.size());
      for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i];
      return v;
    };
    l.shared = to_vec(j.at("s"));
    for (auto m : kModalities) {
      l.specific[index_of(m)] = to_vec(j.at(std::string("p_") + to_string(m)));
      l.nuisance[index_of(m)] = to_vec(j.at(std::string("n_") + to_string(m)));
    }
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace tridira
