#pragma once

#include "mlstm/bptt.hpp"
#include "mlstm/checkpoint.hpp"
#include "mlstm/cohort.hpp"
#include "mlstm/config.hpp"
#include "mlstm/errors.hpp"
#include "mlstm/eval.hpp"
#include "mlstm/gradient_check.hpp"
#include "mlstm/imputation.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/masked_data.hpp"
#include "mlstm/numeric_io.hpp"
#include "mlstm/optimizer.hpp"
#include "mlstm/pipeline.hpp"
