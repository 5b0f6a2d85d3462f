#pragma once

#include "redund/call_syntax.hpp"
#include "redund/csv.hpp"
#include "redund/distributions.hpp"
#include "redund/engine.hpp"
#include "redund/error.hpp"
#include "redund/experiments.hpp"
#include "redund/fluid.hpp"
#include "redund/rng.hpp"
#include "redund/stability.hpp"
#include "redund/stats.hpp"
#include "redund/virtual_queues.hpp"
