#pragma once

#include "tsnet/core.hpp"
#include "tsnet/data.hpp"
#include "tsnet/dpm.hpp"
#include "tsnet/dtb.hpp"
#include "tsnet/experiments.hpp"
#include "tsnet/gaussian.hpp"
#include "tsnet/gradcheck.hpp"
#include "tsnet/loss.hpp"
#include "tsnet/mlp.hpp"
#include "tsnet/model.hpp"
#include "tsnet/ncl.hpp"
#include "tsnet/tape.hpp"
#include "tsnet/train.hpp"
