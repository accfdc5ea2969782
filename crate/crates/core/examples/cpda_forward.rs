//! Phase/dynamics attention over a random feature clip.

use echodyn::cpda::{cpda_forward_detailed, phase_track, CpdaShape, CpdaWeights, FeatureClip};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let shape = CpdaShape::default();
    let (t, h, w) = (8, 6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = (0..t * h * w * shape.channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clip = FeatureClip::from_vec(t, h, w, shape.channels, data)?;
    let pedg = DMatrix::from_fn(t - 1, shape.k2, |i, _| (i as f64 * 0.7).sin());
    let phase = phase_track(t, 0, 4)?;
    println!("phase {:?}", phase.phi);

    for (name, weights) in [("identity", CpdaWeights::identity(shape)), ("seeded", CpdaWeights::seeded(shape, 1))] {
        let out = cpda_forward_detailed(&clip, &phase, &pedg, &weights)?;
        let diff = clip.data.iter().zip(&out.enhanced.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / clip.data.len() as f64;
        let (lo, hi) = out.modulation.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        println!("{name}: mean |enhanced - x| {diff:.5}, gate in [{lo:.3}, {hi:.3}]");
        let a = &out.attention[0];
        println!("  head 0 attention from frame 0: {:.3?}", a.row(0).iter().collect::<Vec<_>>());
    }
    Ok(())
}
