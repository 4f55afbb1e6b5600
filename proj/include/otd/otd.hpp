#pragma once

#include "otd/random.hpp"
#include "otd/tensor.hpp"
#include "otd/factor_model.hpp"
#include "otd/admm.hpp"
#include "otd/certificate.hpp"
#include "otd/lasserre.hpp"
#include "otd/simplex.hpp"
#include "otd/experiment.hpp"
