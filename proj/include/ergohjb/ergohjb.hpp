#pragma once

#include "ergohjb/assumptions.hpp"
#include "ergohjb/coefficient.hpp"
#include "ergohjb/control_step.hpp"
#include "ergohjb/dual_lp.hpp"
#include "ergohjb/errors.hpp"
#include "ergohjb/generator.hpp"
#include "ergohjb/grid.hpp"
#include "ergohjb/io.hpp"
#include "ergohjb/lp_ipm.hpp"
#include "ergohjb/model.hpp"
#include "ergohjb/penalty.hpp"
#include "ergohjb/philox.hpp"
#include "ergohjb/pipeline.hpp"
#include "ergohjb/simulate.hpp"
#include "ergohjb/solver.hpp"
#include "ergohjb/verify.hpp"
