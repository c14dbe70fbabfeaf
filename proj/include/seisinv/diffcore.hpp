#pragma once

#include "seisinv/diffcore/checkpoint.hpp"
#include "seisinv/diffcore/gradcheck.hpp"
#include "seisinv/diffcore/ops.hpp"
#include "seisinv/diffcore/optim.hpp"
#include "seisinv/diffcore/tape.hpp"
