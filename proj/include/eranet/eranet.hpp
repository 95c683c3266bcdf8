#pragma once

#include "eranet/attention.hpp"
#include "eranet/autograd.hpp"
#include "eranet/degrade.hpp"
#include "eranet/eager.hpp"
#include "eranet/kirsch.hpp"
#include "eranet/log.hpp"
#include "eranet/losses.hpp"
#include "eranet/model.hpp"
#include "eranet/reparam.hpp"
#include "eranet/rng.hpp"
#include "eranet/serialize.hpp"
#include "eranet/tensor.hpp"
#include "eranet/tensor_core.hpp"
#include "eranet/trainer.hpp"
