//! Generates the synthetic beating-heart phantom and saves frames and masks.
//!
//! `cargo run --example phantom -- [out_dir]`

use echodyn::seqio::{generate_phantom, save_masks, save_sequence, PhantomSpec, LABEL_LA, LABEL_LV, LABEL_LVM};

fn main() -> echodyn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "phantom_out".into());
    let spec = PhantomSpec { t_count: 16, ..PhantomSpec::default() };
    let (seq, masks) = generate_phantom(&spec)?;
    save_sequence(&seq, out.as_ref())?;
    save_masks(&masks, out.as_ref())?;

    println!("{} frames of {}x{}, ed={} es={}", seq.len(), seq.width(), seq.height(), seq.ed_index(), seq.es_index());
    println!("  t  radius    LV   LVM    LA");
    for (t, m) in masks.masks().iter().enumerate() {
        println!(
            "{t:>3} {:>7.2} {:>5} {:>5} {:>5}",
            spec.radius_at(t),
            m.count(LABEL_LV),
            m.count(LABEL_LVM),
            m.count(LABEL_LA)
        );
    }
    println!("wrote {out}/");
    Ok(())
}
