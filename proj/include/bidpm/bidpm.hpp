#pragma once

// Umbrella header: the whole library in one include.

#include "assignment.hpp"
#include "checkpoint.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "flow.hpp"
#include "losses.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "table_io.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "velocity_field.hpp"
