#pragma once

/// Convenience umbrella for the whole library.

#include "penqp/qp.hpp"
#include "penqp/qp_grad.hpp"
#include "penqp/l1_dual.hpp"
#include "penqp/penalty.hpp"
#include "penqp/prediction.hpp"
#include "penqp/trainer.hpp"
#include "penqp/backtest.hpp"
#include "penqp/io.hpp"
