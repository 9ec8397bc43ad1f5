#pragma once

#include "charemb/adam.hpp"
#include "charemb/cbow.hpp"
#include "charemb/char_encoder.hpp"
#include "charemb/embedding_matrix.hpp"
#include "charemb/error.hpp"
#include "charemb/eval.hpp"
#include "charemb/grad_check.hpp"
#include "charemb/lstm.hpp"
#include "charemb/model_io.hpp"
#include "charemb/reconstruct.hpp"
#include "charemb/tensor.hpp"
#include "charemb/text_pipeline.hpp"
#include "charemb/trainer.hpp"
