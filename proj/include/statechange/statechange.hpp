// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#ifndef STATECHANGE_STATECHANGE_HPP
#define STATECHANGE_STATECHANGE_HPP

#include "statechange/core.hpp"
#include "statechange/decode.hpp"
#include "statechange/evalkit.hpp"
#include "statechange/io.hpp"
#include "statechange/model.hpp"
#include "statechange/parallel.hpp"
#include "statechange/pseudo.hpp"
#include "statechange/synth.hpp"
#include "statechange/train.hpp"

#endif  // STATECHANGE_STATECHANGE_HPP
