#pragma once

#include "brl/errors.hpp"
#include "brl/random.hpp"
#include "brl/mdp.hpp"
#include "brl/planning.hpp"
#include "brl/link.hpp"
#include "brl/preference.hpp"
#include "brl/labeling.hpp"
#include "brl/reward_model.hpp"
#include "brl/bellman.hpp"
#include "brl/offline_rl.hpp"
#include "brl/gradcheck.hpp"
#include "brl/theory.hpp"
#include "brl/experiment.hpp"
