#pragma once

#include <string>

#include "nmem/bootstrap.hpp"
#include "nmem/em.hpp"
#include "nmem/simulate.hpp"

namespace nmem {

// JSON round trip of a fit (everything needed to classify new data or to
// bootstrap: parameters, knots, scaling, posteriors, curves, trace).
void write_fit_report(const FitReport& report, const std::string& path);
FitReport read_fit_report(const std::string& path);

// JSON round trip of simulation ground truth. Group labels are stored
// 1-based ("group": 1 or 2).
void write_truth(const SimTruth& truth, const std::string& path);
SimTruth read_truth(const std::string& path);

// Bootstrap intervals as JSON (parameters plus pointwise curve bands).
void write_bootstrap(const BootstrapResult& result, const FitReport& fit,
                     const std::string& path);

// subject_id, assigned group (1-based), posterior of group 1.
void write_classifications_csv(const FitReport& report, const std::string& path);
// raw_time, scaled_time, fitted curve of each group.
void write_curves_csv(const FitReport& report, const std::string& path);
// One row per outer iteration.
void write_trace_csv(const FitReport& report, const std::string& path);
// raw_time, scaled_time, per group: fitted curve, band low, band high.
void write_curve_bands_csv(const BootstrapResult& result, const FitReport& fit,
                           const std::string& path);

}  // namespace nmem
