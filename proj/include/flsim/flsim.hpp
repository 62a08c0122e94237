#pragma once

// Umbrella header for the federated-learning fairness-attack simulator.

#include "flsim/attack.hpp"
#include "flsim/client_update.hpp"
#include "flsim/config.hpp"
#include "flsim/dataset.hpp"
#include "flsim/defense.hpp"
#include "flsim/experiment.hpp"
#include "flsim/federation.hpp"
#include "flsim/metrics.hpp"
#include "flsim/model.hpp"
#include "flsim/parameter_vector.hpp"
#include "flsim/rng.hpp"
#include "flsim/suite.hpp"
