#pragma once

#include "culturemap/error.hpp"
#include "culturemap/survey_core.hpp"
#include "culturemap/ivs_ingest.hpp"
#include "culturemap/benchmark.hpp"
#include "culturemap/projection.hpp"
#include "culturemap/gateway.hpp"
#include "culturemap/prompting.hpp"
#include "culturemap/metrics.hpp"
#include "culturemap/optimizer.hpp"
#include "culturemap/svg.hpp"
#include "culturemap/config.hpp"
