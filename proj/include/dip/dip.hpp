// dip.hpp
#pragma once

#include "agent.hpp"
#include "analysis.hpp"
#include "config.hpp"
#include "envs.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "golden.hpp"
#include "harness.hpp"
#include "io.hpp"
#include "moea.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "tensor.hpp"
