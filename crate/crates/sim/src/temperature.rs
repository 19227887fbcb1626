use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BASELINE_C: f64 = 20.0;
pub const AMPLITUDE_C: f64 = 5.0;
pub const PERIOD_S: f64 = 600.0;
pub const DEFAULT_NOISE_C: f64 = 0.25;

/// Deterministic temperature signal: a ten-minute sine around 20 °C with
/// seeded uniform noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureModel {
    pub seed: u64,
    pub noise: f64,
}

impl TemperatureModel {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            noise: DEFAULT_NOISE_C,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// Value at `t_s` whole seconds after boot.
    pub fn at(&self, t_s: u64) -> f64 {
        let base = BASELINE_C + AMPLITUDE_C * (2.0 * PI * t_s as f64 / PERIOD_S).sin();
        if self.noise == 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t_s);
        base + rng.gen_range(-self.noise..=self.noise)
    }
}

/// Temperature at `t_s` with the default noise band.
pub fn temperature(t_s: u64, seed: u64) -> f64 {
    TemperatureModel::new(seed).at(t_s)
}
