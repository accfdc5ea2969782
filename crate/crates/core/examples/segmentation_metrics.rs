//! Dice, HD95 and TCD for perturbed phantom masks.

use echodyn::metrics::evaluate;
use echodyn::seqio::{generate_phantom, MaskSequence, PhantomSpec, LABEL_LV};
use echodyn::LabelMap;

/// Grows (or shrinks) the LV by one pixel with a 3×3 neighbourhood.
fn morph_lv(m: &LabelMap, grow: bool) -> LabelMap {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            let near = (y.saturating_sub(1)..=(y + 1).min(m.height - 1))
                .flat_map(|yy| (x.saturating_sub(1)..=(x + 1).min(m.width - 1)).map(move |xx| (xx, yy)));
            let mut hits = near.map(|(xx, yy)| m.get(xx, yy) == LABEL_LV);
            let here = m.get(x, y) == LABEL_LV;
            if grow && !here && hits.any(|h| h) {
                out.set(x, y, LABEL_LV);
            } else if !grow && here && !hits.all(|h| h) {
                out.set(x, y, 0);
            }
        }
    }
    out
}

fn main() -> echodyn::Result<()> {
    let (_, gt) = generate_phantom(&PhantomSpec::default())?;
    let cases: [(&str, Box<dyn Fn(usize, &LabelMap) -> LabelMap>); 3] = [
        ("exact", Box::new(|_, m| m.clone())),
        ("eroded every frame", Box::new(|_, m| morph_lv(m, false))),
        ("dilated odd frames", Box::new(|t, m| if t % 2 == 1 { morph_lv(m, true) } else { m.clone() })),
    ];
    for (name, f) in cases {
        let pred = MaskSequence::new(gt.masks().iter().enumerate().map(|(t, m)| f(t, m)).collect())?;
        let report = evaluate(&pred, &gt)?;
        println!("{name}: {}", report.summary_line());
        for l in &report.per_label {
            let hd = l.mean_hd95.map_or("missing".to_string(), |v| format!("{v:.2}"));
            println!("  {:<4} dice {:.4} hd95 {hd} tcd {:.4}", l.label, l.mean_dice, l.tcd);
        }
    }
    Ok(())
}
