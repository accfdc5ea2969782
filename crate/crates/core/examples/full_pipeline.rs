//! Phantom → flow → descriptors → dynamics → EDG → CPDA → metrics, writing
//! the same artifacts as the `echodyn` subcommands.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use std::path::PathBuf;

use echodyn::cpda::{cpda_forward, phase_track, CpdaShape, CpdaWeights, FeatureClip};
use echodyn::metrics::evaluate;
use echodyn::pipeline::{run_edg, write_edg_outputs, PipelineConfig};
use echodyn::seqio::{generate_phantom, save_masks, save_sequence, PhantomSpec};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into()));
    let (seq, masks) = generate_phantom(&PhantomSpec::default())?;
    save_sequence(&seq, &out.join("seq"))?;
    save_masks(&masks, &out.join("seq"))?;

    let cfg = PipelineConfig::default();
    let run = run_edg(&seq, &cfg)?;
    write_edg_outputs(&run, &seq, &out.join("edg"))?;
    println!("final training residual {:.4e}", run.model.final_residual());

    // the frames themselves as a one-channel clip, tiled up to the default width
    let shape = CpdaShape::default();
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let mut data = Vec::with_capacity(t * h * w * shape.channels);
    for f in seq.frames() {
        for &v in &f.data {
            data.extend(std::iter::repeat_n(v, shape.channels));
        }
    }
    let clip = FeatureClip::from_vec(t, h, w, shape.channels, data)?;
    let weights = CpdaWeights::seeded(shape, cfg.seed);
    let enhanced = cpda_forward(&clip, &phase_track(t, seq.ed_index(), seq.es_index())?, &run.pedg, &weights)?;
    let change = clip.data.iter().zip(&enhanced.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / clip.data.len() as f64;
    println!("cpda mean |enhanced - x| {change:.5}");

    println!("ground truth against itself: {}", evaluate(&masks, &masks)?.summary_line());
    println!("artifacts in {}", out.display());
    Ok(())
}
