//! Horn–Schunck flow on a translated blob, then on the phantom cycle.

use echodyn::flow::{compute_flow, flow_sequence, FlowParams};
use echodyn::seqio::{generate_phantom, PhantomSpec};
use echodyn::Plane;

fn blob(cx: f64, cy: f64) -> Plane {
    Plane::from_fn(96, 96, |x, y| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        0.1 + 0.8 * (-d2 / 72.0).exp()
    })
}

fn main() -> echodyn::Result<()> {
    let params = FlowParams::default();
    let f = compute_flow(&blob(48.0, 48.0), &blob(49.0, 48.5), &params)?;
    let (u, v) = (f.u.get(48, 48), f.v.get(48, 48));
    println!("blob moved by (1.0, 0.5); flow at its center = ({u:.3}, {v:.3})");

    let (seq, _) = generate_phantom(&PhantomSpec::default())?;
    let flows = flow_sequence(&seq, &params)?;
    println!("phantom: mean |uv| per transition (ed={}, es={})", seq.ed_index(), seq.es_index());
    for (t, f) in flows.iter().enumerate() {
        let m = f.mean_magnitude();
        println!("{t:>3} {m:.4} {}", "#".repeat((m * 200.0) as usize));
    }
    Ok(())
}
