#pragma once

#include "avsgd/analysis.hpp"
#include "avsgd/baselines.hpp"
#include "avsgd/error.hpp"
#include "avsgd/estimator.hpp"
#include "avsgd/experiment.hpp"
#include "avsgd/linalg.hpp"
#include "avsgd/problems.hpp"
#include "avsgd/random.hpp"
#include "avsgd/schedule.hpp"
