#pragma once

#include "volterra/errors.hpp"
#include "volterra/expr.hpp"
#include "volterra/linalg.hpp"
#include "volterra/model.hpp"
#include "volterra/conditions.hpp"
#include "volterra/grid.hpp"
#include "volterra/stepper.hpp"
#include "volterra/charop.hpp"
#include "volterra/logpoly.hpp"
#include "volterra/quadrature.hpp"
#include "volterra/asympt.hpp"
#include "volterra/refine.hpp"
#include "volterra/report.hpp"
