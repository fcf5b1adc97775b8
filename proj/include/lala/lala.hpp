#pragma once

#include "lala/rng.hpp"
#include "lala/matrix.hpp"
#include "lala/tape.hpp"
#include "lala/nn.hpp"
#include "lala/checkpoint.hpp"
#include "lala/env.hpp"
#include "lala/agent.hpp"
#include "lala/advisor.hpp"
#include "lala/discriminator.hpp"
#include "lala/variants.hpp"
#include "lala/metrics.hpp"
#include "lala/config.hpp"
#include "lala/harness.hpp"
