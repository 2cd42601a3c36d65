#pragma once

#include "selftrain/errors.hpp"
#include "selftrain/log.hpp"
#include "selftrain/numerics/adam.hpp"
#include "selftrain/numerics/autograd.hpp"
#include "selftrain/numerics/checkpoint.hpp"
#include "selftrain/numerics/gradcheck.hpp"
#include "selftrain/numerics/rng.hpp"
#include "selftrain/numerics/tensor.hpp"
#include "selftrain/nn/config.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/nn/mc_dropout.hpp"
#include "selftrain/nn/network.hpp"
#include "selftrain/data/augment.hpp"
#include "selftrain/data/benchmark.hpp"
#include "selftrain/data/dataset.hpp"
#include "selftrain/data/manifest.hpp"
#include "selftrain/data/mixup.hpp"
#include "selftrain/eval/bootstrap.hpp"
#include "selftrain/eval/metrics.hpp"
#include "selftrain/eval/report.hpp"
#include "selftrain/eval/suite.hpp"
#include "selftrain/train/config.hpp"
#include "selftrain/train/losses.hpp"
#include "selftrain/train/loop.hpp"
#include "selftrain/train/pseudo_labels.hpp"
#include "selftrain/train/run_log.hpp"
#include "selftrain/train/strategies.hpp"
#include "selftrain/train/temperature.hpp"
#include "selftrain/cli/experiment.hpp"
