#include "seqrank/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqrank/errors.hpp"

namespace seqrank {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string site_name(std::size_t s) { return "H" + std::to_string(s); }

void Cohort::validate() const {
  std::set<std::string> site_set(sites.begin(), sites.end());
  std::map<std::string, std::string> wsi_site;
  std::set<std::string> patch_ids;
  for (const auto& r : records) {
    if (r.views.rows() != kViewsPerPatch) {
      throw schema_error("patch " + r.patch_id + " has " + std::to_string(r.views.rows()) +
                         " views, expected " + std::to_string(kViewsPerPatch));
    }
    if (r.views.cols() != dim) {
      throw schema_error("patch " + r.patch_id + " has view dim " + std::to_string(r.views.cols()) +
                         ", expected " + std::to_string(dim));
    }
    if (!r.views.all_finite()) throw schema_error("patch " + r.patch_id + " has non-finite views");
    if (r.class_id >= num_classes) {
      throw schema_error("patch " + r.patch_id + " class " + std::to_string(r.class_id) +
                         " outside [0," + std::to_string(num_classes) + ")");
    }
    if (!site_set.count(r.site_id)) {
      throw schema_error("patch " + r.patch_id + " has undeclared site " + r.site_id);
    }
    auto [it, inserted] = wsi_site.emplace(r.wsi_id, r.site_id);
    if (!inserted && it->second != r.site_id) {
      throw schema_error("wsi " + r.wsi_id + " belongs to both " + it->second + " and " + r.site_id);
    }
    if (!patch_ids.insert(r.patch_id).second) {
      throw schema_error("duplicate patch_id " + r.patch_id);
    }
  }
}

void GenSpec::validate() const {
  if (n_sites == 0 || wsis_per_site == 0 || patches_per_wsi == 0 || num_classes == 0) {
    throw dimension_error("sites, wsis, patches and classes must all be positive");
  }
  if (dim < num_classes + n_sites) {
    throw dimension_error("dim " + std::to_string(dim) + " < classes + sites (" +
                          std::to_string(num_classes + n_sites) + ")");
  }
  if (!(class_signal >= 0.0) || !(site_signal >= 0.0) || !(noise_sigma > 0.0) ||
      !(view_jitter >= 0.0)) {
    throw dimension_error("signals and jitter must be >= 0 and noise > 0");
  }
}

Cohort generate(const GenSpec& spec) {
  spec.validate();
  Cohort cohort;
  cohort.num_classes = spec.num_classes;
  cohort.dim = spec.dim;
  for (std::size_t s = 0; s < spec.n_sites; ++s) cohort.sites.push_back(site_name(s));

  Rng rng(spec.seed);
  std::size_t wsi_counter = 0;
  std::vector<double> base(spec.dim);
  for (std::size_t s = 0; s < spec.n_sites; ++s) {
    for (std::size_t w = 0; w < spec.wsis_per_site; ++w, ++wsi_counter) {
      const std::size_t cls = w % spec.num_classes;
      const std::string wsi_id = "W" + std::to_string(wsi_counter);
      for (std::size_t p = 0; p < spec.patches_per_wsi; ++p) {
        for (std::size_t k = 0; k < spec.dim; ++k) base[k] = spec.noise_sigma * rng.normal();
        base[cls] += spec.class_signal;
        base[spec.num_classes + s] += spec.site_signal;

        CohortRecord rec;
        rec.patch_id = wsi_id + "-P" + std::to_string(p);
        rec.wsi_id = wsi_id;
        rec.site_id = cohort.sites[s];
        rec.class_id = cls;
        rec.views = Matrix(kViewsPerPatch, spec.dim);
        for (std::size_t v = 0; v < kViewsPerPatch; ++v) {
          auto row = rec.views.row(v);
          for (std::size_t k = 0; k < spec.dim; ++k) {
            row[k] = spec.view_jitter == 0.0 ? base[k] : base[k] + spec.view_jitter * rng.normal();
          }
        }
        cohort.records.push_back(std::move(rec));
      }
    }
  }
  return cohort;
}

namespace {

void write_string(std::ostream& out, const std::string& s) { out << json(s).dump(); }

}  // namespace

void write_cohort(const Cohort& cohort, std::ostream& out) {
  out << "{\"C\":" << cohort.num_classes << ",\"d\":" << cohort.dim << ",\"sites\":[";
  for (std::size_t i = 0; i < cohort.sites.size(); ++i) {
    if (i) out << ',';
    write_string(out, cohort.sites[i]);
  }
  out << "]}\n";
  for (const auto& r : cohort.records) {
    out << "{\"patch_id\":";
    write_string(out, r.patch_id);
    out << ",\"wsi_id\":";
    write_string(out, r.wsi_id);
    out << ",\"site_id\":";
    write_string(out, r.site_id);
    out << ",\"class_id\":" << r.class_id << ",\"views\":[";
    for (std::size_t v = 0; v < r.views.rows(); ++v) {
      if (v) out << ',';
      out << '[';
      auto row = r.views.row(v);
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k) out << ',';
        out << format_double(row[k]);
      }
      out << ']';
    }
    out << "]}\n";
  }
}

Cohort read_cohort(std::istream& in) {
  Cohort cohort;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw parse_error(std::string("malformed JSON: ") + e.what(), line_no);
    }
    try {
      if (!have_header) {
        cohort.num_classes = j.at("C").get<std::size_t>();
        cohort.dim = j.at("d").get<std::size_t>();
        cohort.sites = j.at("sites").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      CohortRecord r;
      r.patch_id = j.at("patch_id").get<std::string>();
      r.wsi_id = j.at("wsi_id").get<std::string>();
      r.site_id = j.at("site_id").get<std::string>();
      r.class_id = j.at("class_id").get<std::size_t>();
      const auto& views = j.at("views");
      if (!views.is_array()) throw parse_error("views is not an array", line_no);
      if (views.size() != kViewsPerPatch) {
        throw schema_error("patch " + r.patch_id + " has " + std::to_string(views.size()) +
                           " views, expected " + std::to_string(kViewsPerPatch));
      }
      r.views = Matrix(kViewsPerPatch, cohort.dim);
      for (std::size_t v = 0; v < kViewsPerPatch; ++v) {
        const auto& row = views[v];
        if (!row.is_array() || row.size() != cohort.dim) {
          throw schema_error("patch " + r.patch_id + " view " + std::to_string(v) +
                             " does not have dim " + std::to_string(cohort.dim));
        }
        for (std::size_t k = 0; k < cohort.dim; ++k) r.views(v, k) = row[k].get<double>();
      }
      cohort.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw parse_error(std::string("bad field: ") + e.what(), line_no);
    }
  }
  if (!have_header) throw parse_error("missing header line", line_no + 1);
  cohort.validate();
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path + " for writing");
  write_cohort(cohort, out);
  if (!out) throw io_error("write failed for " + path);
}

Cohort load_cohort(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  return read_cohort(in);
}

CohortSplit split(const Cohort& cohort, const std::optional<std::string>& holdout_site,
                  double test_fraction, std::uint64_t seed) {
  if (holdout_site &&
      std::find(cohort.sites.begin(), cohort.sites.end(), *holdout_site) == cohort.sites.end()) {
    throw lookup_error("unknown site " + *holdout_site);
  }
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw error("test_fraction must lie in [0, 1]");
  }

  // Strata keyed by (site, class); WSIs listed in first-appearance order.
  std::map<std::pair<std::string, std::size_t>, std::vector<std::string>> strata;
  std::set<std::string> seen;
  for (const auto& r : cohort.records) {
    if (holdout_site && r.site_id == *holdout_site) continue;
    if (seen.insert(r.wsi_id).second) strata[{r.site_id, r.class_id}].push_back(r.wsi_id);
  }
  Rng rng = Rng(seed).split(0x5f17);
  std::set<std::string> test_wsis;
  for (auto& [key, wsis] : strata) {
    rng.shuffle(wsis);
    const auto n_test = static_cast<std::size_t>(
        std::floor(test_fraction * static_cast<double>(wsis.size()) + 0.5));
    for (std::size_t i = 0; i < n_test && i < wsis.size(); ++i) test_wsis.insert(wsis[i]);
  }

  CohortSplit out;
  for (Cohort* part : {&out.train, &out.test, &out.external}) {
    part->num_classes = cohort.num_classes;
    part->dim = cohort.dim;
    part->sites = cohort.sites;
  }
  for (const auto& r : cohort.records) {
    if (holdout_site && r.site_id == *holdout_site) {
      out.external.records.push_back(r);
    } else if (test_wsis.count(r.wsi_id)) {
      out.test.records.push_back(r);
    } else {
      out.train.records.push_back(r);
    }
  }
  return out;
}

Cohort pool_singleton_sites(const Cohort& cohort, const std::string& pooled_label) {
  std::map<std::string, std::set<std::string>> wsis_per_site;
  for (const auto& r : cohort.records) wsis_per_site[r.site_id].insert(r.wsi_id);
  Cohort out = cohort;
  bool any = false;
  for (auto& r : out.records) {
    if (wsis_per_site[r.site_id].size() == 1) {
      r.site_id = pooled_label;
      any = true;
    }
  }
  out.sites.clear();
  for (const auto& s : cohort.sites) {
    auto it = wsis_per_site.find(s);
    if (it == wsis_per_site.end() || it->second.size() != 1) out.sites.push_back(s);
  }
  if (any) out.sites.push_back(pooled_label);
  return out;
}

}  // namespace seqrank
