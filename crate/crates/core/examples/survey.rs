//! Generates a forest, voxelizes it, flies a survey and reports the point
//! density per class next to the nodal (mesh vertex) baseline.
//!
//! ```sh
//! cargo run --release --example survey -- [seed] [extent_m]
//! ```

use sylva::dataset::extract_nodal;
use sylva::geom::Rect;
use sylva::labels::Semantic;
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::generate_forest;
use sylva::survey::{run_survey, SurveyConfig};
use sylva::voxel::{voxelize_scene, OpacityTable};

fn main() -> sylva::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(42);
    let size: f64 = args.next().map(|s| s.parse().expect("extent")).unwrap_or(50.0);

    let extent = Rect::from_size(size, size);
    let library = parametric_library()?;
    let scene = generate_forest(extent, &two_layer_generators(), &library, seed)?;
    let grid = voxelize_scene(&scene, &library, 0.1, &OpacityTable::default())?;
    println!("trees {}  occupied voxels {}", scene.instances.len(), grid.len());

    let cfg = SurveyConfig::default();
    let plan = cfg.plan(&extent)?;
    let (cloud, summary) = run_survey(&grid, &plan, &cfg.scanner(), seed)?;
    print!("{}", summary.to_toml());

    let mut counts = [0usize; Semantic::ALL.len()];
    for p in &cloud.points {
        counts[p.semantic.code() as usize] += 1;
    }
    for s in Semantic::ALL {
        let n = counts[s.code() as usize];
        if n > 0 {
            println!("{:<8} {:>10}  {:>8.1} pts/m2", s.name(), n, n as f64 / extent.area());
        }
    }

    let nodal = extract_nodal(&scene, &library)?;
    println!(
        "nodal    {:>10}  {:>8.1} pts/m2  (survey/nodal = {:.1})",
        nodal.len(),
        nodal.density(),
        cloud.density() / nodal.density()
    );
    Ok(())
}
