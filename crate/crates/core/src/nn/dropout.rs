use rand::Rng;

/// Inverted dropout: kept units are scaled by `1/(1-p)` so inference needs no rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} not in [0, 1)");
        Dropout { p }
    }

    /// Mask of scale factors (`0` or `1/(1-p)`).
    pub fn sample_mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        if self.p == 0.0 {
            return vec![1.0; n];
        }
        let keep = 1.0 / (1.0 - self.p);
        (0..n)
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect()
    }

    /// Training-time application; returns the output and the mask used.
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mask = self.sample_mask(x.len(), rng);
        let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
        (y, mask)
    }
}
