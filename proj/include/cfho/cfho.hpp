#pragma once

#include "geometry.hpp"
#include "channel.hpp"
#include "pomdp_model.hpp"
#include "solver.hpp"
#include "policies.hpp"
#include "harness.hpp"
