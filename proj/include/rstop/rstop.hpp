#pragma once

// Umbrella header: randomized-stopping Monte Carlo pricing toolkit.

#include "rstop/errors.hpp"
#include "rstop/estimate.hpp"
#include "rstop/experiment.hpp"
#include "rstop/fingerprint.hpp"
#include "rstop/market.hpp"
#include "rstop/optimize.hpp"
#include "rstop/oracle.hpp"
#include "rstop/parallel.hpp"
#include "rstop/payoff.hpp"
#include "rstop/policy.hpp"
#include "rstop/rng.hpp"
#include "rstop/stopping.hpp"
