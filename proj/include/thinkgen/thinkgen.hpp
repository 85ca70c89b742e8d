#pragma once

#include "thinkgen/array.hpp"
#include "thinkgen/bridge.hpp"
#include "thinkgen/cli.hpp"
#include "thinkgen/config.hpp"
#include "thinkgen/eval.hpp"
#include "thinkgen/generator.hpp"
#include "thinkgen/gradcheck.hpp"
#include "thinkgen/grpo.hpp"
#include "thinkgen/io.hpp"
#include "thinkgen/planner.hpp"
#include "thinkgen/png.hpp"
#include "thinkgen/recipe.hpp"
#include "thinkgen/rewards.hpp"
#include "thinkgen/rng.hpp"
#include "thinkgen/tape.hpp"
#include "thinkgen/vocab.hpp"
#include "thinkgen/world.hpp"
