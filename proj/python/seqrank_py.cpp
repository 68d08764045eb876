#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "seqrank/cohort.hpp"
#include "seqrank/encoder.hpp"
#include "seqrank/errors.hpp"
#include "seqrank/metrics.hpp"
#include "seqrank/pipeline.hpp"
#include "seqrank/rankloss.hpp"
#include "seqrank/retrieval.hpp"

namespace py = pybind11;
namespace sp = seqrank::pipeline;
using seqrank::Matrix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw seqrank::shape_error("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

// Reports cross the boundary as JSON text; the Python package decodes them.
std::string dump(const sp::Json& j) { return j.dump(); }

seqrank::EncoderSpec encoder_spec(std::vector<std::size_t> hidden, std::size_t embed) {
  seqrank::EncoderSpec s;
  s.hidden_dims = std::move(hidden);
  s.embed_dim = embed;
  return s;
}

seqrank::TrainConfig train_config(std::size_t epochs, std::size_t batch, double lr, std::uint64_t seed,
                                  std::size_t min_sites, bool sequester) {
  seqrank::TrainConfig c;
  c.sgd = {lr, epochs, batch};
  c.seed = seed;
  c.min_sites_per_batch = min_sites;
  c.sequester = sequester;
  return c;
}

}  // namespace

PYBIND11_MODULE(_seqrank, m) {
  m.doc() = "Sequestered ranking-loss training, retrieval and bias probing.";

  auto base = py::register_exception<seqrank::error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<seqrank::composition_error>(m, "CompositionError", base.ptr());
  py::register_exception<seqrank::dimension_error>(m, "DimensionError", base.ptr());
  py::register_exception<seqrank::lookup_error>(m, "LookupError", base.ptr());
  py::register_exception<seqrank::parse_error>(m, "ParseError", base.ptr());
  py::register_exception<seqrank::io_error>(m, "IOError", base.ptr());

  m.def(
      "ranking_loss",
      [](const Array& features, std::vector<std::size_t> labels, std::vector<std::string> sites,
         std::size_t num_classes, bool sequester) {
        seqrank::FeatureBatch b{to_matrix(features), std::move(labels), std::move(sites), num_classes};
        const auto out = seqrank::ranking_loss(b, sequester);
        return py::make_tuple(out.loss, to_array(out.grad_features), to_array(out.prediction));
      },
      py::arg("features"), py::arg("labels"), py::arg("sites"), py::arg("num_classes"),
      py::arg("sequester") = false, "Returns (loss, grad_features, prediction).");

  m.def(
      "build_mask",
      [](const std::vector<std::string>& sites, bool sequester) {
        const auto mask = seqrank::build_mask(sites, sequester);
        py::array_t<bool> out({sites.size(), sites.size()});
        auto v = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < sites.size(); ++i)
          for (std::size_t j = 0; j < sites.size(); ++j) v(i, j) = mask.blocks(i, j);
        return out;
      },
      py::arg("sites"), py::arg("sequester"));

  m.def(
      "f1_scores",
      [](const seqrank::Confusion& confusion) {
        const auto s = seqrank::f1_scores(confusion);
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("confusion"), "Returns (precision, recall, f1) per class.");

  m.def(
      "site_probe",
      [](const Array& train_x, std::vector<std::string> train_sites, const Array& test_x,
         std::vector<std::string> test_sites, const std::string& kind, std::uint64_t seed) {
        auto rows = [](const Array& a, std::vector<std::string>& sites) {
          const Matrix x = to_matrix(a);
          if (x.rows() != sites.size()) throw seqrank::shape_error("one site per row required");
          std::vector<seqrank::LabeledVector> out;
          for (std::size_t i = 0; i < x.rows(); ++i)
            out.push_back({{x.row(i).begin(), x.row(i).end()}, std::move(sites[i])});
          return out;
        };
        const auto r = seqrank::site_probe(rows(train_x, train_sites), rows(test_x, test_sites),
                                           seqrank::probe_kind_from_string(kind), seed);
        return py::make_tuple(r.site_accuracy, r.chance_level);
      },
      py::arg("train_x"), py::arg("train_sites"), py::arg("test_x"), py::arg("test_sites"),
      py::arg("kind") = "rff", py::arg("seed") = 0, "Returns (site_accuracy, chance_level).");

  m.def(
      "gen",
      [](const std::string& out, std::size_t sites, std::size_t wsis, std::size_t patches, std::size_t classes,
         std::size_t dim, double class_signal, double site_signal, double noise, double jitter,
         std::uint64_t seed) {
        seqrank::GenSpec g{sites, wsis, patches, classes, dim, class_signal, site_signal, noise, jitter, seed};
        return dump(sp::run_gen({g, out}));
      },
      py::arg("out"), py::arg("sites") = 4, py::arg("wsis_per_site") = 8, py::arg("patches_per_wsi") = 10,
      py::arg("classes") = 2, py::arg("dim") = 64, py::arg("class_signal") = 2.0,
      py::arg("site_signal") = 2.0, py::arg("noise") = 0.5, py::arg("jitter") = 0.1, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& cohort, const std::string& out, bool sequester, std::size_t epochs,
         std::size_t batch, double lr, std::uint64_t seed, std::size_t min_sites,
         std::vector<std::size_t> hidden, std::size_t embed) {
        return dump(sp::run_train({cohort, encoder_spec(std::move(hidden), embed),
                                   train_config(epochs, batch, lr, seed, min_sites, sequester), out}));
      },
      py::arg("cohort"), py::arg("out"), py::arg("sequester") = false, py::arg("epochs") = 20,
      py::arg("batch") = 16, py::arg("lr") = 0.05, py::arg("seed") = 0, py::arg("min_sites") = 2,
      py::arg("hidden") = std::vector<std::size_t>{32}, py::arg("embed") = 16);

  m.def(
      "eval",
      [](const std::string& cohort, const std::string& model, std::size_t k, const std::string& metric,
         bool sequester_queries) {
        return dump(sp::run_eval({cohort, model, k, seqrank::metric_from_string(metric), sequester_queries, "", ""}));
      },
      py::arg("cohort"), py::arg("model"), py::arg("k") = 3, py::arg("metric") = "euclidean",
      py::arg("sequester_queries") = false);

  m.def(
      "search",
      [](const std::string& cohort, const std::string& model, const std::string& query, std::size_t k,
         const std::string& metric, bool exclude_site) {
        return dump(sp::run_search({cohort, model, query, k, seqrank::metric_from_string(metric), exclude_site}));
      },
      py::arg("cohort"), py::arg("model"), py::arg("query"), py::arg("k") = 3, py::arg("metric") = "euclidean",
      py::arg("exclude_site_of_query") = false);

  m.def(
      "probe",
      [](const std::string& cohort, const std::string& model, const std::string& kind, std::uint64_t seed,
         double test_fraction) {
        return dump(sp::run_probe({cohort, model, seqrank::probe_kind_from_string(kind), seed, test_fraction}));
      },
      py::arg("cohort"), py::arg("model") = "", py::arg("kind") = "rff", py::arg("seed") = 0,
      py::arg("test_fraction") = 0.5);

  m.def(
      "loho",
      [](const std::string& cohort, std::vector<std::string> holdouts, const std::string& sequester,
         std::size_t epochs, std::size_t batch, double lr, std::uint64_t seed, double test_fraction,
         std::size_t k, bool pool_singletons) {
        sp::LohoOptions o;
        o.cohort = cohort;
        o.holdouts = std::move(holdouts);
        o.mode = sp::sequester_mode_from_string(sequester);
        o.train = train_config(epochs, batch, lr, seed, 2, false);
        o.test_fraction = test_fraction;
        o.k = k;
        o.pool_singletons = pool_singletons;
        return dump(sp::run_loho(o));
      },
      py::arg("cohort"), py::arg("holdouts") = std::vector<std::string>{}, py::arg("sequester") = "both",
      py::arg("epochs") = 20, py::arg("batch") = 16, py::arg("lr") = 0.05, py::arg("seed") = 0,
      py::arg("test_fraction") = 0.25, py::arg("k") = 3, py::arg("pool_singletons") = false);

  m.def(
      "bias",
      [](std::uint64_t seed, std::size_t epochs) {
        sp::BiasOptions o;
        o.gen.seed = seed;
        o.train.seed = seed;
        o.train.sgd.epochs = epochs;
        return dump(sp::run_bias(o));
      },
      py::arg("seed") = 0, py::arg("epochs") = 20);

  m.def(
      "replay", [](const std::string& report) { return dump(sp::replay(sp::Json::parse(report))); },
      py::arg("report"));
}
