use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_space::{ModelError, ModelFamily};

/// Labels inputs by sampling from one member of the family, the true model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Oracle {
    true_model: usize,
    seed: u64,
}

impl Oracle {
    /// The true model must exist and carry positive prior weight.
    pub fn new(family: &ModelFamily, true_model: usize, seed: u64) -> Result<Self, ModelError> {
        match family.prior().get(true_model) {
            Some(&p) if p > 0.0 => Ok(Self { true_model, seed }),
            Some(_) => Err(ModelError::InvalidFamily(format!(
                "true model {true_model} has zero prior weight"
            ))),
            None => Err(ModelError::InvalidFamily(format!(
                "true model {true_model} is not in a family of {} models",
                family.num_models()
            ))),
        }
    }

    pub fn true_model(&self) -> usize {
        self.true_model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draws `y ~ Pr(· | θ_true, x)`; each query index has its own stream.
    pub fn label(&self, family: &ModelFamily, x: usize, query: u64) -> Result<usize, ModelError> {
        family.check_input(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(query);
        let u: f64 = rng.random();
        let row = family.row(self.true_model, x);
        let mut cumulative = 0.0;
        for (y, p) in row.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return Ok(y);
            }
        }
        // u fell in the rounding gap above the last cumulative sum
        Ok(row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1))
    }
}

/// Oracle paired with a running query counter.
#[derive(Debug, Clone)]
pub struct OracleSession {
    oracle: Oracle,
    queries: u64,
}

impl OracleSession {
    pub fn new(oracle: Oracle) -> Self {
        Self { oracle, queries: 0 }
    }

    pub fn label(&mut self, family: &ModelFamily, x: usize) -> Result<usize, ModelError> {
        let y = self.oracle.label(family, x, self.queries)?;
        self.queries += 1;
        Ok(y)
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }
}
