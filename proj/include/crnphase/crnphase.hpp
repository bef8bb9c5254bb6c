#pragma once

#include "crnphase/error.hpp"
#include "crnphase/format.hpp"
#include "crnphase/network.hpp"
#include "crnphase/dsl.hpp"
#include "crnphase/interpolation.hpp"
#include "crnphase/ode.hpp"
#include "crnphase/limit_cycle.hpp"
#include "crnphase/floquet.hpp"
#include "crnphase/rng.hpp"
#include "crnphase/stochastic.hpp"
#include "crnphase/phase.hpp"
#include "crnphase/stats.hpp"
#include "crnphase/parallel.hpp"
#include "crnphase/experiments.hpp"
#include "crnphase/config.hpp"
#include "crnphase/cli.hpp"
