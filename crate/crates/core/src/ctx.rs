//! Evaluation budgets and seeds shared by the randomized lower-bound searches.

use crate::sdp::SolverOptions;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            restarts: 25,
            iterations: 200,
        }
    }
}

impl Budget {
    pub fn new(restarts: usize, iterations: usize) -> Self {
        Budget {
            restarts,
            iterations,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalCtx {
    pub budget: Budget,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for EvalCtx {
    fn default() -> Self {
        EvalCtx {
            budget: Budget::default(),
            seed: 0,
            solver: SolverOptions::from_env(),
        }
    }
}

impl EvalCtx {
    pub fn with_seed(seed: u64) -> Self {
        EvalCtx {
            seed,
            ..Self::default()
        }
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    /// A derived context for an independent sub-search.
    pub fn fork(&self, salt: u64) -> Self {
        let mut c = *self;
        c.seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .rotate_left(17);
        c
    }
}
