#pragma once

#include "ddseq/autodiff.hpp"
#include "ddseq/checkpoint.hpp"
#include "ddseq/config.hpp"
#include "ddseq/denoiser.hpp"
#include "ddseq/diffusion.hpp"
#include "ddseq/eval.hpp"
#include "ddseq/fasta.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/guidance.hpp"
#include "ddseq/nn.hpp"
#include "ddseq/optim.hpp"
#include "ddseq/oracle.hpp"
#include "ddseq/rng.hpp"
#include "ddseq/sampling.hpp"
#include "ddseq/schedule.hpp"
#include "ddseq/training.hpp"
#include "ddseq/vocab.hpp"
