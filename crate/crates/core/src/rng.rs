//! Seeded Gaussian matrix generation.
//!
//! Uniform bits come from ChaCha8 (`seed_from_u64`, with a selectable
//! stream), and normals from the Marsaglia polar method using the pure-Rust
//! `libm` logarithm. No platform `libm` calls are involved, so a given
//! `(seed, stream)` yields the same matrices on every target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::DenseMatrix;

pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// One standard-normal draw.
    pub fn next_standard(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let x = 2.0 * self.rng.random::<f64>() - 1.0;
            let y = 2.0 * self.rng.random::<f64>() - 1.0;
            let s = x * x + y * y;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * libm::log(s) / s).sqrt();
                self.spare = Some(y * factor);
                return x * factor;
            }
        }
    }

    /// `rows x cols` matrix with i.i.d. `N(0, std_dev²)` entries, row-major.
    pub fn matrix(&mut self, rows: usize, cols: usize, std_dev: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| std_dev * self.next_standard())
    }
}
