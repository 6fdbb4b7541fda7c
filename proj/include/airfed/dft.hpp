#pragma once

#include "airfed/types.hpp"

namespace airfed {

// Forward transform is unscaled; the inverse carries the 1/N factor.
cvec fft(const cvec& x);
cvec ifft(const cvec& X);

/// Reorder natural DFT bins (0..N-1) into centered order (-N/2..N/2-1).
cvec bins_to_centered(const cvec& bins);
/// Inverse of bins_to_centered.
cvec centered_to_bins(const cvec& centered);

/// Centered carrier indices -N/2 .. N/2-1 as doubles.
vec centered_indices(int n);

}  // namespace airfed
