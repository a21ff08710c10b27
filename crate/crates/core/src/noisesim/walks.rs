use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CountsBlock, StepProbs, WalkDistribution};
use crate::sampling::multinomial;
use crate::stream::RngStream;

/// Walk whose next step law depends on the previous step, so position
/// alone is not Markov. `after[k]` applies after a step of `k − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryWalk {
    pub first: StepProbs,
    pub after: [StepProbs; 3],
}

fn step<R: Rng + ?Sized>(rng: &mut R, th: &StepProbs) -> i64 {
    let u: f64 = rng.random();
    if u < th.p_minus() {
        -1
    } else if u < th.p_minus() + th.p_plus() {
        1
    } else {
        0
    }
}

/// Simulates `n` memory walkers and returns their endpoint counts after
/// `t` and after `t + 1` steps (same walkers).
pub fn simulate_memory_walk(walk: &MemoryWalk, t: usize, n: u64, stream: &RngStream) -> Result<(CountsBlock, CountsBlock)> {
    if n == 0 {
        return Err(Error::Data("n must be at least 1".into()));
    }
    let mut rng = stream.rng();
    let mut at_t = vec![0u64; 2 * t + 1];
    let mut at_t1 = vec![0u64; 2 * t + 3];
    for _ in 0..n {
        let mut x = 0i64;
        let mut last: Option<i64> = None;
        for s in 0..=t {
            if s == t {
                at_t[(x + t as i64) as usize] += 1;
            }
            let law = match last {
                None => &walk.first,
                Some(d) => &walk.after[(d + 1) as usize],
            };
            let d = step(&mut rng, law);
            x += d;
            last = Some(d);
        }
        at_t1[(x + t as i64 + 1) as usize] += 1;
    }
    Ok((CountsBlock::raw(t, at_t)?, CountsBlock::raw(t + 1, at_t1)?))
}

/// Endpoint law of a walk taking its `s`-th step with `thetas[s]`.
pub fn nonstationary_pmf(thetas: &[StepProbs]) -> WalkDistribution {
    let mut p = vec![1.0f64];
    for th in thetas {
        let mut next = vec![0.0; p.len() + 2];
        for (i, &v) in p.iter().enumerate() {
            next[i] += v * th.p_minus();
            next[i + 1] += v * th.p_zero();
            next[i + 2] += v * th.p_plus();
        }
        p = next;
    }
    WalkDistribution::new(thetas.len(), p).expect("convolution of step laws is a distribution")
}

/// `n` endpoints of the walk in [`nonstationary_pmf`], as a raw block.
pub fn sample_nonstationary(thetas: &[StepProbs], n: u64, stream: &RngStream) -> Result<CountsBlock> {
    let p = nonstationary_pmf(thetas);
    let mut z = vec![0u64; p.probs().len()];
    multinomial(&mut stream.rng(), n, p.probs(), &mut z);
    CountsBlock::raw(thetas.len(), z)
}
