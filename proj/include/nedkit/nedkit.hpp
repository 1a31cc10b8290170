#pragma once

#include "nedkit/error.hpp"
#include "nedkit/parallel.hpp"
#include "nedkit/numerics.hpp"
#include "nedkit/perturbation.hpp"
#include "nedkit/evolution.hpp"
#include "nedkit/dichotomy.hpp"
#include "nedkit/adapted_norms.hpp"
#include "nedkit/admissibility.hpp"
#include "nedkit/robustness.hpp"
#include "nedkit/scenario.hpp"
