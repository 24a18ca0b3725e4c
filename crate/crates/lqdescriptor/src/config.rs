/// Numerical tolerances shared by every module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Rank threshold factor for input data: `max(rows, cols) * rank * sigma_max`.
    pub rank: f64,
    /// Rank threshold factor for computed quantities (Popov samples, pencils built
    /// from computed solutions, staircase blocks after rotations).
    pub rank_derived: f64,
    /// Relative band around the unit circle; scaled by `1 + ||pencil||`.
    pub circle: f64,
    /// Residual threshold used by certificates.
    pub residual: f64,
    /// Seed for every pseudo-random sample point.
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_150_811;

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank: f64::EPSILON,
            rank_derived: 1e-10,
            circle: 1e-8,
            residual: 1e-8,
            seed: DEFAULT_SEED,
        }
    }
}

impl Tolerances {
    /// Overrides both rank factors.
    pub fn with_rank(mut self, rank: f64) -> Self {
        self.rank = rank;
        self.rank_derived = self.rank_derived.max(rank);
        self
    }

    pub fn circle_band(&self, pencil_norm: f64) -> f64 {
        self.circle * (1.0 + pencil_norm)
    }

    pub fn rng(&self) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(self.seed)
    }
}
