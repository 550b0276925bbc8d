#pragma once

// Umbrella header.

#include "activeiter/errors.hpp"
#include "activeiter/hetnet.hpp"
#include "activeiter/meta_diagram.hpp"
#include "activeiter/counting.hpp"
#include "activeiter/solver.hpp"
#include "activeiter/active.hpp"
#include "activeiter/experiment.hpp"
#include "activeiter/bench.hpp"
#include "activeiter/label_server.hpp"
