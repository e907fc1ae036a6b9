#pragma once

// KL analysis of sink removal.

#include <string>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"
#include "attngeo/sinks.hpp"

namespace attngeo::infogeo {

enum class Reference { kUniform, kRowConditional };

struct KLConfig {
  std::vector<double> sink_percentiles{0.8, 0.9, 0.95};  // fractions in (0, 1)
  Reference reference = Reference::kUniform;
  double epsilon = 1e-12;

  void validate() const;
};

// Mean over rows of D_KL(a_i || uniform over the valid positions of row i).
double kl_to_uniform(const AttentionMatrix& a);

struct Removal {
  AttentionMatrix matrix;
  std::vector<bool> flagged;  // rows whose mass outside the removed set was < 1e-9
  std::size_t kept_rows() const;
};

// Sets the valid columns in `removed` to exactly epsilon and rescales the rest of each row to
// 1 - k epsilon. Flagged rows, and rows with nothing removed or nothing left, are copied as is.
// Throws std::invalid_argument when `removed` covers all columns.
Removal remove_sinks(const AttentionMatrix& a, const IndexSet& removed, double epsilon = 1e-12);

// Mean over unflagged rows of D_KL(r_i || uniform), where r_i is row i restricted to the
// valid positions outside `removed` and renormalized. 0 when every row is flagged.
double kl_without_sinks(const AttentionMatrix& a, const IndexSet& removed);

// Mean over unflagged rows of D_KL(a_i || remove_sinks(a_i)). Zero when no row has mass on
// `removed`.
double row_conditional_kl(const AttentionMatrix& a, const IndexSet& removed, double epsilon = 1e-12);

enum class Shape { kFlat, kConsistentlyNegative, kThreePhase, kUShaped, kOther };
std::string to_string(Shape s);

// Layer thirds: early = first ceil(L/3), late = last ceil(L/3), middle = the rest.
struct Bands {
  std::size_t early_end = 0;   // [0, early_end)
  std::size_t late_begin = 0;  // [late_begin, L)
};
Bands layer_bands(std::size_t num_layers);

// Majority sign (-1, 0, +1) of each band, then a label:
// all 0 -> flat; all - -> consistently_negative; (+, -, +) -> u_shaped;
// (+, -, not +) -> three_phase; anything else -> other.
Shape classify_shape(const std::vector<int>& signs);
std::vector<int> band_signs(const std::vector<int>& signs);
int sign_of(double v, double tol = 1e-9);

struct KLLayerRow {
  std::size_t layer = 0;
  double percentile = 0;
  double kl_original = 0;
  double kl_without = 0;
  double kl_reduction = 0;
  double row_conditional = 0;
  double sink_concentration = 0;
  std::size_t flagged_rows = 0;   // summed over (sample, head)
  std::size_t saturated = 0;      // (sample, head) cells whose sink set covered every column
};

struct KLProfile {
  std::vector<KLLayerRow> rows;  // layer-major, percentile-minor
  std::vector<double> percentiles;
  std::vector<Shape> shapes;        // parallel to percentiles
  std::vector<double> mean_reduction;  // parallel to percentiles
  Reference reference = Reference::kUniform;

  // Shape at the percentile closest to `p`.
  Shape shape_at(double p) const;
};

KLProfile kl_reduction_profile(const dumpio::ModelDump& dump, const KLConfig& cfg, const sinks::SinkConfig& sink_cfg,
                               unsigned threads = 0);

}  // namespace attngeo::infogeo
