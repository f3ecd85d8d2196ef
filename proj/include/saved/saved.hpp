#pragma once

// Umbrella header for the SAVeD table version discovery library.

#include "saved/augment.hpp"
#include "saved/benchgen.hpp"
#include "saved/cli.hpp"
#include "saved/config.hpp"
#include "saved/encoder.hpp"
#include "saved/evaluation.hpp"
#include "saved/loss.hpp"
#include "saved/rng.hpp"
#include "saved/table.hpp"
#include "saved/tensor.hpp"
#include "saved/tokenizer.hpp"
#include "saved/trainer.hpp"
