#pragma once

#include "rng.hpp"
#include "parallel.hpp"
#include "csv.hpp"
#include "facility.hpp"
#include "simulator.hpp"
#include "likelihood.hpp"
#include "summaries.hpp"
#include "density.hpp"
#include "inference.hpp"
#include "analysis.hpp"
#include "config.hpp"
#include "cli.hpp"
