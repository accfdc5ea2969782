//! RBF dynamics on a noisy circle, then the echo-dynamics graph of the phantom.

use echodyn::dynamics::{predict_delta, train_dynamics, FitMode, RbfConfig};
use echodyn::pipeline::{run_edg, PipelineConfig};
use echodyn::seqio::{generate_phantom, PhantomSpec};
use nalgebra::DMatrix;

fn main() -> echodyn::Result<()> {
    let w = std::f64::consts::TAU / 25.0;
    let z = DMatrix::from_fn(200, 2, |t, c| if c == 0 { (w * t as f64).cos() } else { (w * t as f64).sin() });
    for fit in [FitMode::Lms, FitMode::Ls] {
        let model = train_dynamics(&z, &RbfConfig { m_centers: 8, fit, ..RbfConfig::default() })?;
        let d = predict_delta(&model, &[1.0, 0.0])?;
        println!("{fit:?}: sigma {:.3}, final mse {:.3e}, delta at (1,0) = ({:.4}, {:.4})", model.sigma, model.final_residual(), d[0], d[1]);
    }

    let (seq, _) = generate_phantom(&PhantomSpec::default())?;
    let run = run_edg(&seq, &PipelineConfig::default())?;
    println!("phantom EDG total energy per frame (ed={}, es={}):", seq.ed_index(), seq.es_index());
    let e = run.total_energy();
    let top = e.iter().cloned().fold(0.0, f64::max);
    for (t, v) in e.iter().enumerate() {
        println!("{t:>3} {v:>9.4} {}", "#".repeat((40.0 * v / top) as usize));
    }
    println!("P_EDG: {} x {}", run.pedg.nrows(), run.pedg.ncols());
    Ok(())
}
