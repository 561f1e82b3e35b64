#pragma once

#include "logre/evaluator.hpp"
#include "logre/kg_store.hpp"
#include "logre/path_sampler.hpp"
#include "logre/reasoner.hpp"
#include "logre/schema.hpp"
#include "logre/types.hpp"
