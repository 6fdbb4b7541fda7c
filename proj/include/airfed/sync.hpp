#pragma once

#include <optional>

#include "airfed/phy_config.hpp"
#include "airfed/signal.hpp"

namespace airfed {

/// Coarse correction plus sequential residual tracking for one link.
struct CfoEstimate {
  double coarse_hz = 0.0;     // coarse estimate from the initialization preamble
  double residual_hz = 0.0;   // running mean of the residual estimates
  double last_single_hz = 0.0;
  int p_count = 0;            // number of tracking updates folded into residual_hz
  double last_t_s = 0.0;
  std::optional<cvec> prev_pilot;  // received pilot carriers at last_t_s
};

/// angle(sum_m conj(r[m]) r[m + l_span]) / (2 pi Ts l_span) over m_cfo_init lag products.
/// Requires len(r) >= m_cfo_init + l_span.
double coarse_cfo_estimate(const SampleStream& r_init, const PhyConfig& config);

/// Largest magnitude the coarse estimator can resolve, 1 / (2 Ts l_span).
double coarse_cfo_range(const PhyConfig& config);

/// Fold one received copy of the repeated pilot into the running mean.
///
/// The first call only stores the pilot. Later calls compute
/// sum_n angle(r_p[n] / r_{p-1}[n]) / (2 pi N (t_p - t_{p-1})) over the used
/// carriers and update residual = ((p - 1) residual + estimate) / p.
CfoEstimate track_residual_cfo(const CfoEstimate& state, const OfdmSymbol& rx_pilot, double t_p,
                               const PhyConfig& config);

/// True when delta_t |residual| > 1/2, i.e. the next phase step is ambiguous.
bool needs_recorrection(const CfoEstimate& state, double delta_t_s);

/// ||est - truth||^2 / ||truth||^2.
double cfo_nmse(const vec& est, const vec& truth);

}  // namespace airfed
