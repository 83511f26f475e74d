#pragma once

#include "emdtrade/backtest.hpp"
#include "emdtrade/common.hpp"
#include "emdtrade/config.hpp"
#include "emdtrade/csv.hpp"
#include "emdtrade/emd.hpp"
#include "emdtrade/features.hpp"
#include "emdtrade/gmm.hpp"
#include "emdtrade/learners.hpp"
#include "emdtrade/market_data.hpp"
#include "emdtrade/pipeline.hpp"
#include "emdtrade/synth.hpp"
