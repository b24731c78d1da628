#pragma once

// Mask compositing on channels-last tensors. The mask has a single channel
// that is broadcast over the foreground's channels.

#include "cftgan/autograd.hpp"

namespace cftgan {

/// m * f over a zero background.
inline ag::Var composite_over_zero(const ag::Var& mask, const ag::Var& foreground) {
    return ag::mul(ag::expand_last(mask, foreground.dim(-1)), foreground);
}

/// m * f + (1 - m) * b.
inline ag::Var composite(const ag::Var& mask, const ag::Var& foreground, const ag::Var& background) {
    const ag::Var m = ag::expand_last(mask, foreground.dim(-1));
    return ag::add(ag::mul(m, foreground), ag::mul(ag::one_minus(m), background));
}

}  // namespace cftgan
