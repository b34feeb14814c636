//! Compares a simulated survey with the nodal cloud built from the same
//! scene's mesh vertices.
//!
//! ```sh
//! cargo run --release --example nodal_ablation -- [seed]
//! ```

use sylva::cloud_io::PointCloud;
use sylva::dataset::extract_nodal;
use sylva::geom::Rect;
use sylva::labels::Semantic;
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::generate_forest;
use sylva::survey::{run_survey, SurveyConfig};
use sylva::voxel::{voxelize_scene, OpacityTable};

fn lowest_decile_share(cloud: &PointCloud) -> f64 {
    let tree: Vec<f64> = cloud.points.iter().filter(|p| p.instance_id != 0).map(|p| p.position.z).collect();
    let top = tree.iter().copied().fold(0.0, f64::max);
    tree.iter().filter(|&&z| z < 0.1 * top).count() as f64 / tree.len().max(1) as f64
}

fn main() -> sylva::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(42, |s| s.parse().expect("seed"));
    let extent = Rect::from_size(50.0, 50.0);
    let library = parametric_library()?;
    let scene = generate_forest(extent, &two_layer_generators(), &library, seed)?;
    let grid = voxelize_scene(&scene, &library, 0.1, &OpacityTable::default())?;
    let survey = SurveyConfig::default();
    let (sim, _) = run_survey(&grid, &survey.plan(&extent)?, &survey.scanner(), seed)?;
    let nodal = extract_nodal(&scene, &library)?;

    println!("{:<10} {:>10} {:>10} {:>8} {:>12}", "cloud", "points", "pts/m2", "ground", "low-stem %");
    for (name, c) in [("simulated", &sim), ("nodal", &nodal)] {
        let ground = c.points.iter().filter(|p| p.semantic == Semantic::Ground).count();
        println!(
            "{name:<10} {:>10} {:>10.1} {ground:>8} {:>12.1}",
            c.len(),
            c.density(),
            100.0 * lowest_decile_share(c)
        );
    }
    println!("density ratio {:.1}", sim.density() / nodal.density());
    Ok(())
}
