//! Sector pooling of flow into polar descriptors, standardization and PCA.

use echodyn::descriptor::{descriptor_sequence, SectorGrid, FEATURES_PER_SECTOR};
use echodyn::flow::{flow_sequence, FlowParams};
use echodyn::seqio::{generate_phantom, PhantomSpec};

fn main() -> echodyn::Result<()> {
    let (seq, _) = generate_phantom(&PhantomSpec::default())?;
    let flows = flow_sequence(&seq, &FlowParams::default())?;
    let grid = SectorGrid::for_image(seq.width(), seq.height(), 4, 12);
    println!(
        "grid: {} rings x {} angles around ({:.1}, {:.1}), r_max {:.1}; {} features per sector",
        grid.r_bins, grid.theta_bins, grid.center.0, grid.center.1, grid.r_max, FEATURES_PER_SECTOR
    );

    let fit = descriptor_sequence(&seq, &flows, &grid, None, None, 10)?;
    println!("raw descriptor: {} x {}", fit.raw.nrows(), fit.raw.ncols());
    println!("explained variance ratio with k=10: {:.3}", fit.pca.explained_ratio());
    for (i, ev) in fit.pca.explained_variance.iter().enumerate() {
        println!("  pc{i:<2} {ev:>9.3}");
    }
    println!("first two components per frame:");
    for t in 0..fit.z.nrows() {
        println!("{t:>3} {:>8.3} {:>8.3}", fit.z[(t, 0)], fit.z[(t, 1)]);
    }
    Ok(())
}
