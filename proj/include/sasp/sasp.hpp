#pragma once

#include "sasp/autograd.hpp"
#include "sasp/backbone.hpp"
#include "sasp/config.hpp"
#include "sasp/csw.hpp"
#include "sasp/data.hpp"
#include "sasp/epa.hpp"
#include "sasp/head.hpp"
#include "sasp/model.hpp"
#include "sasp/optim.hpp"
#include "sasp/train.hpp"
