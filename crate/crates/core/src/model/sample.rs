use crate::model::counts::CountsBlock;
use crate::model::pmf::walk_pmf;
use crate::model::probs::StepProbs;
use crate::sampling::multinomial;
use crate::stream::RngStream;
use crate::error::{Error, Result};

/// Draws `n_samples` i.i.d. endpoints of a `t`-step walk as a raw block.
pub fn sample_endpoints(theta: &StepProbs, t: usize, n_samples: u64, stream: &RngStream) -> Result<CountsBlock> {
    if n_samples == 0 {
        return Err(Error::Data("n_samples must be at least 1".into()));
    }
    let pmf = walk_pmf(theta, t);
    let mut counts = vec![0u64; 2 * t + 1];
    multinomial(&mut stream.rng(), n_samples, pmf.probs(), &mut counts);
    CountsBlock::raw(t, counts)
}
