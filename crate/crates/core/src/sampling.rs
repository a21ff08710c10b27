//! Low-level variate generation shared by the samplers.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};

/// Multinomial draw by sequential conditional binomials.
///
/// Suffix sums are accumulated from the end, so a cell followed only by
/// zero-probability cells takes all remaining trials exactly and those
/// cells can never receive counts.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64], out: &mut [u64]) {
    debug_assert_eq!(probs.len(), out.len());
    let k = probs.len();
    let mut suffix = vec![0.0f64; k + 1];
    for i in (0..k).rev() {
        suffix[i] = suffix[i + 1] + probs[i];
    }
    let mut left = n;
    for i in 0..k {
        if left == 0 || probs[i] <= 0.0 {
            out[i] = 0;
            continue;
        }
        let q = (probs[i] / suffix[i]).min(1.0);
        let draw = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out[i] = draw;
        left -= draw;
    }
    debug_assert_eq!(left, 0);
}

/// Dirichlet draw via normalized gamma variates. Returns the raw weights'
/// normalization; shapes must be positive.
pub fn dirichlet3<R: Rng + ?Sized>(rng: &mut R, alpha: [f64; 3]) -> [f64; 3] {
    loop {
        let mut g = [0.0f64; 3];
        for (gi, &a) in g.iter_mut().zip(&alpha) {
            *gi = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
        }
        let s = g[0] + g[1] + g[2];
        // All three gammas can underflow to zero for vanishing shapes; redraw.
        if s > 0.0 && s.is_finite() {
            return [g[0] / s, g[1] / s, g[2] / s];
        }
    }
}
