#pragma once

#include "lemamba/bench.hpp"
#include "lemamba/blocks.hpp"
#include "lemamba/config.hpp"
#include "lemamba/data.hpp"
#include "lemamba/errors.hpp"
#include "lemamba/geometry.hpp"
#include "lemamba/grad_check.hpp"
#include "lemamba/metrics.hpp"
#include "lemamba/net.hpp"
#include "lemamba/op_registry.hpp"
#include "lemamba/ops.hpp"
#include "lemamba/optim.hpp"
#include "lemamba/parallel.hpp"
#include "lemamba/resample.hpp"
#include "lemamba/rng.hpp"
#include "lemamba/selftest.hpp"
#include "lemamba/ssm.hpp"
#include "lemamba/tensor.hpp"
#include "lemamba/tensor_io.hpp"
#include "lemamba/train.hpp"
