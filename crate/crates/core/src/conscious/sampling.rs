use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::DescriptionPair;

/// Up to `b / 2` pairs scored above 0.5 and up to `b / 2` scored below,
/// drawn without replacement under `seed`. A short stratum is not topped up
/// from the other one, and pairs scored exactly 0.5 are never drawn.
/// Selected pairs keep their buffer order, high stratum first.
pub fn sample_balanced_subset(buffer: &[DescriptionPair], b: usize, seed: u64) -> Vec<DescriptionPair> {
    let half = b / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stratum = |keep: &dyn Fn(f64) -> bool| -> Vec<DescriptionPair> {
        let members: Vec<&DescriptionPair> = buffer.iter().filter(|p| keep(p.score.get())).collect();
        let take = half.min(members.len());
        let mut picked = index::sample(&mut rng, members.len(), take).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| members[i].clone()).collect()
    };
    let mut out = stratum(&|s| s > 0.5);
    out.extend(stratum(&|s| s < 0.5));
    out
}
