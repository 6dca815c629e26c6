#pragma once

#include "stsc/adam.hpp"
#include "stsc/checkpoint.hpp"
#include "stsc/encoder.hpp"
#include "stsc/error.hpp"
#include "stsc/eval.hpp"
#include "stsc/grad_check.hpp"
#include "stsc/gradient_suite.hpp"
#include "stsc/image.hpp"
#include "stsc/inference.hpp"
#include "stsc/loss.hpp"
#include "stsc/ops.hpp"
#include "stsc/rng.hpp"
#include "stsc/synthetic.hpp"
#include "stsc/tape.hpp"
#include "stsc/tensor.hpp"
#include "stsc/trainer.hpp"
#include "stsc/transformer.hpp"
