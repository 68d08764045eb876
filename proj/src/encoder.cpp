#include "seqrank/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "seqrank/errors.hpp"
#include "seqrank/rankloss.hpp"

namespace seqrank {

namespace {

constexpr char kMagic[5] = {'S', 'Q', 'R', 'K', '1'};

// Streams derived from TrainConfig::seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSamplerStream = 2;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

struct ForwardTrace {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  Matrix output;
};

ForwardTrace run_forward(const EncoderParams& params, const Matrix& x) {
  if (x.cols() != params.spec.input_dim) {
    throw shape_error("encoder expects " + std::to_string(params.spec.input_dim) +
                      " input columns, got " + std::to_string(x.cols()));
  }
  ForwardTrace trace;
  Matrix act = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix z = matmul(act, layer.weights);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias(0, j);
    }
    trace.inputs.push_back(std::move(act));
    trace.pre.push_back(z);
    if (l + 1 < params.layers.size()) {
      for (double& v : z.data()) v = swish(v);
      act = std::move(z);
    } else {
      trace.output = row_l2_normalize(z);
    }
  }
  return trace;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw io_error("truncated encoder file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

double swish(double t) { return t * sigmoid(t); }

double swish_grad(double t) {
  const double s = sigmoid(t);
  return s + t * s * (1.0 - s);
}

void EncoderSpec::validate() const {
  if (input_dim == 0 || embed_dim == 0) throw shape_error("encoder dims must be >= 1");
  for (auto h : hidden_dims) {
    if (h == 0) throw shape_error("hidden dims must be >= 1");
  }
}

std::vector<std::size_t> EncoderSpec::widths() const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
  w.push_back(embed_dim);
  return w;
}

void TrainConfig::validate() const {
  sgd.validate();
  if (min_sites_per_batch < 1) throw composition_error("min_sites_per_batch must be >= 1");
  if (sgd.batch_size < 2 * min_sites_per_batch) {
    throw composition_error("batch size " + std::to_string(sgd.batch_size) +
                            " must be at least 2 x min_sites_per_batch (" +
                            std::to_string(min_sites_per_batch) + ")");
  }
}

EncoderParams init_params(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  EncoderParams params{spec, {}};
  const auto widths = spec.widths();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
    for (double& w : layer.weights.data()) w = rng.uniform(-bound, bound);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Matrix forward(const EncoderParams& params, const Matrix& x) { return run_forward(params, x).output; }

std::vector<DenseLayer> backward(const EncoderParams& params, const Matrix& x,
                                 const Matrix& grad_embeddings) {
  ForwardTrace trace = run_forward(params, x);
  if (grad_embeddings.rows() != trace.output.rows() ||
      grad_embeddings.cols() != trace.output.cols()) {
    throw shape_error("backward: gradient shape does not match encoder output");
  }

  // Through y = z / |z| row-wise.
  const Matrix& z_last = trace.pre.back();
  Matrix dz(z_last.rows(), z_last.cols());
  for (std::size_t i = 0; i < dz.rows(); ++i) {
    const double n = l2_norm(z_last.row(i));
    if (n == 0.0) continue;
    auto y = trace.output.row(i);
    auto g = grad_embeddings.row(i);
    const double yg = dot(y, g);
    auto d = dz.row(i);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (g[k] - y[k] * yg) / n;
  }

  std::vector<DenseLayer> grads(params.layers.size());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Matrix& input = trace.inputs[l];
    DenseLayer& g = grads[l];
    g.weights = matmul(transpose(input), dz);
    g.bias = Matrix(1, dz.cols());
    for (std::size_t i = 0; i < dz.rows(); ++i)
      for (std::size_t j = 0; j < dz.cols(); ++j) g.bias(0, j) += dz(i, j);
    if (l == 0) break;
    Matrix da = matmul(dz, transpose(params.layers[l].weights));
    const Matrix& z_prev = trace.pre[l - 1];
    for (std::size_t k = 0; k < da.size(); ++k) da.data()[k] *= swish_grad(z_prev.data()[k]);
    dz = std::move(da);
  }
  return grads;
}

std::vector<Batch> sample_batches(const std::vector<CohortRecord>& records, const TrainConfig& cfg,
                                  std::size_t epoch, const Rng& rng) {
  cfg.validate();
  const std::size_t batch_size = cfg.sgd.batch_size;
  if (records.size() < batch_size) {
    throw composition_error("only " + std::to_string(records.size()) +
                            " records available for batch size " + std::to_string(batch_size));
  }
  const Rng epoch_rng = rng.split(epoch);
  Rng order_rng = epoch_rng.split(0);
  Rng view_rng = epoch_rng.split(1);

  std::vector<std::size_t> order;
  order.reserve(records.size());
  if (!cfg.sequester) {
    for (std::size_t i = 0; i < records.size(); ++i) order.push_back(i);
    order_rng.shuffle(order);
  } else {
    std::map<std::string, std::vector<std::size_t>> by_site;
    for (std::size_t i = 0; i < records.size(); ++i) by_site[records[i].site_id].push_back(i);
    if (by_site.size() < cfg.min_sites_per_batch) {
      throw composition_error("sequestered batches need at least " +
                              std::to_string(cfg.min_sites_per_batch) + " distinct sites, cohort has " +
                              std::to_string(by_site.size()));
    }
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [site, idx] : by_site) {
      order_rng.shuffle(idx);
      groups.push_back(std::move(idx));
    }
    order_rng.shuffle(groups);
    // Round-robin interleave so consecutive records come from different sites.
    for (std::size_t pos = 0; order.size() < records.size(); ++pos) {
      for (const auto& g : groups) {
        if (pos < g.size()) order.push_back(g[pos]);
      }
    }
  }

  std::vector<std::size_t> view_choice(records.size());
  for (auto& v : view_choice) v = view_rng.uniform_index(kViewsPerPatch);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
    Batch b;
    std::set<std::string> sites;
    for (std::size_t k = start; k < start + batch_size; ++k) {
      b.records.push_back(order[k]);
      b.views.push_back(view_choice[order[k]]);
      sites.insert(records[order[k]].site_id);
    }
    if (cfg.sequester && sites.size() < cfg.min_sites_per_batch) continue;
    batches.push_back(std::move(b));
  }
  if (batches.empty()) {
    throw composition_error("no batch of size " + std::to_string(batch_size) + " spans " +
                            std::to_string(cfg.min_sites_per_batch) + " sites");
  }
  return batches;
}

TrainLog train(const Cohort& cohort, const EncoderSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (cohort.records.empty()) throw composition_error("cannot train on an empty cohort");
  if (cohort.dim != spec.input_dim) {
    throw shape_error("cohort dim " + std::to_string(cohort.dim) + " != encoder input dim " +
                      std::to_string(spec.input_dim));
  }
  const Rng root(cfg.seed);
  Rng init_rng = root.split(kInitStream);
  const Rng sampler_rng = root.split(kSamplerStream);

  TrainLog log;
  log.params = init_params(spec, init_rng);
  for (std::size_t epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    const auto batches = sample_batches(cohort.records, cfg, epoch, sampler_rng);
    double total = 0.0;
    for (const auto& b : batches) {
      FeatureBatch fb;
      fb.num_classes = cohort.num_classes;
      Matrix x(b.records.size(), cohort.dim);
      for (std::size_t k = 0; k < b.records.size(); ++k) {
        const auto& rec = cohort.records[b.records[k]];
        auto src = rec.views.row(b.views[k]);
        std::copy(src.begin(), src.end(), x.row(k).begin());
        fb.labels.push_back(rec.class_id);
        fb.sites.push_back(rec.site_id);
      }
      fb.features = forward(log.params, x);
      const LossOutput out = ranking_loss(fb, cfg.sequester);
      total += out.loss;
      const auto grads = backward(log.params, x, out.grad_features);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto& layer = log.params.layers[l];
        layer.weights = sgd_step(layer.weights, grads[l].weights, cfg.sgd);
        layer.bias = sgd_step(layer.bias, grads[l].bias, cfg.sgd);
      }
    }
    log.epoch_losses.push_back(total / static_cast<double>(batches.size()));
  }
  return log;
}

void write_params(const EncoderParams& params, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  put_u64(out, params.spec.input_dim);
  put_u64(out, params.spec.hidden_dims.size());
  for (auto h : params.spec.hidden_dims) put_u64(out, h);
  put_u64(out, params.spec.embed_dim);
  for (const auto& layer : params.layers) {
    for (double w : layer.weights.data()) put_f64(out, w);
    for (double b : layer.bias.data()) put_f64(out, b);
  }
}

EncoderParams read_params(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw io_error("not an encoder file (bad magic)");
  }
  EncoderParams params;
  params.spec.input_dim = get_u64(in);
  const auto n_hidden = get_u64(in);
  if (n_hidden > 1024) throw io_error("implausible hidden layer count");
  params.spec.hidden_dims.resize(n_hidden);
  for (auto& h : params.spec.hidden_dims) h = get_u64(in);
  params.spec.embed_dim = get_u64(in);
  params.spec.validate();
  const auto widths = params.spec.widths();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Matrix(widths[l], widths[l + 1]), Matrix(1, widths[l + 1])};
    for (double& w : layer.weights.data()) w = get_f64(in);
    for (double& b : layer.bias.data()) b = get_f64(in);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void save_params(const EncoderParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path + " for writing");
  write_params(params, out);
  if (!out) throw io_error("write failed for " + path);
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  return read_params(in);
}

}  // namespace seqrank
