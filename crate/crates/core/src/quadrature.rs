//! Gauss–Hermite rules for `∫ f(x) e^{-x²} dx`.

use alloc::vec;
use alloc::vec::Vec;

/// Nodes and weights of a `Q`-point Gauss–Hermite rule (physicists' weight `e^{-x²}`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `ln w_j + x_j²`, the log weight for integrating against Lebesgue measure.
    log_flat_weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the rule by Newton iteration on the orthonormal Hermite recurrence.
    ///
    /// # Panics
    /// When `order < 1`.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss–Hermite order must be positive");
        const PI_M4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let n = order;
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PI_M4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        // ascending node order
        x.reverse();
        w.reverse();
        let log_flat_weights = x.iter().zip(&w).map(|(x, w)| w.ln() + x * x).collect();
        Self {
            nodes: x,
            weights: w,
            log_flat_weights,
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_flat_weights(&self) -> &[f64] {
        &self.log_flat_weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_PI: f64 = 1.772_453_850_905_516;

    #[test]
    fn integrates_gaussian_moments() {
        for q in [2, 5, 20, 40, 80] {
            let gh = GaussHermite::new(q);
            let m0: f64 = gh.weights().iter().sum();
            let m2: f64 = gh
                .nodes()
                .iter()
                .zip(gh.weights())
                .map(|(x, w)| w * x * x)
                .sum();
            assert!((m0 - SQRT_PI).abs() < 1e-13, "q={q} m0={m0}");
            assert!((m2 - SQRT_PI / 2.0).abs() < 1e-13, "q={q} m2={m2}");
            assert!(gh.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        // ∫ x^8 e^{-x²} = 105 √π / 16
        let gh = GaussHermite::new(10);
        let m8: f64 = gh
            .nodes()
            .iter()
            .zip(gh.weights())
            .map(|(x, w)| w * x.powi(8))
            .sum();
        assert!((m8 - 105.0 * SQRT_PI / 16.0).abs() < 1e-11);
    }
}
