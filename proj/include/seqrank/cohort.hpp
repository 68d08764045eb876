#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqrank/numerics.hpp"

namespace seqrank {

inline constexpr std::size_t kViewsPerPatch = 25;

struct CohortRecord {
  std::string patch_id;
  std::string wsi_id;
  std::string site_id;
  std::size_t class_id = 0;
  Matrix views;  // kViewsPerPatch x dim

  friend bool operator==(const CohortRecord&, const CohortRecord&) = default;
};

struct Cohort {
  std::vector<CohortRecord> records;
  std::size_t num_classes = 0;
  std::vector<std::string> sites;
  std::size_t dim = 0;

  /// Throws schema_error on any broken invariant.
  void validate() const;

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

struct GenSpec {
  std::size_t n_sites = 4;
  std::size_t wsis_per_site = 8;
  std::size_t patches_per_wsi = 10;
  std::size_t num_classes = 2;
  std::size_t dim = 64;
  double class_signal = 2.0;
  double site_signal = 2.0;
  double noise_sigma = 0.5;
  double view_jitter = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class c lives on axis c, site s on axis num_classes + s. Patch base vectors
/// are class_signal * e_c + site_signal * e_{C+s} + N(0, noise^2); views add
/// N(0, jitter^2). WSI w of a site gets class w mod C.
Cohort generate(const GenSpec& spec);

std::string site_name(std::size_t s);

/// JSON lines: a header {"C","d","sites"} followed by one record per line.
void write_cohort(const Cohort& cohort, std::ostream& out);
Cohort read_cohort(std::istream& in);
void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

struct CohortSplit {
  Cohort train;
  Cohort test;
  Cohort external;
};

/// External gets every record of holdout_site. The remaining WSIs are split
/// within each (site, class) stratum; round(test_fraction * n) WSIs go to test.
CohortSplit split(const Cohort& cohort, const std::optional<std::string>& holdout_site,
                  double test_fraction, std::uint64_t seed);

/// Relabels every site owning exactly one WSI to `pooled_label`.
Cohort pool_singleton_sites(const Cohort& cohort, const std::string& pooled_label);

std::string format_double(double v);

}  // namespace seqrank
