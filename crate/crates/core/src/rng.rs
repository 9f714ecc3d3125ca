//! SplitMix64, used wherever weights or synthetic tokens must be reproducible
//! bit-for-bit across implementations.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// `z / 2^64` in `[0, 1)` (may round to 1.0 for the very largest outputs).
    pub fn next_unit(&mut self) -> f64 {
        self.next_u64() as f64 / 18_446_744_073_709_551_616.0
    }

    /// Weight initializer: `unit * 0.2 - 0.1`.
    pub fn next_weight(&mut self) -> f64 {
        self.next_unit() * 0.2 - 0.1
    }

    /// Standard normal sample by Box-Muller, consuming two outputs.
    pub fn next_gaussian(&mut self) -> f64 {
        // shift into (0, 1] so ln never sees zero
        let u1 = 1.0 - self.next_unit().min(1.0 - f64::EPSILON);
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_in_range() {
        let mut g = SplitMix64::new(42);
        for _ in 0..10_000 {
            let w = g.next_weight();
            assert!((-0.1..=0.1).contains(&w));
        }
    }

    #[test]
    fn gaussian_moments_are_plausible() {
        let mut g = SplitMix64::new(7);
        let xs: Vec<f64> = (0..20_000).map(|_| g.next_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }
}
