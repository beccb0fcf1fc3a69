#pragma once

// Umbrella header for the lifted-network training library.

#include "lifted/core.hpp"
#include "lifted/network.hpp"
#include "lifted/potential.hpp"
#include "lifted/inference.hpp"
#include "lifted/objectives.hpp"
#include "lifted/diagnostics.hpp"
#include "lifted/data.hpp"
#include "lifted/trainer.hpp"
#include "lifted/config.hpp"
