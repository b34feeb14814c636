//! Cuts random and grid cylinders from a surveyed plot and mixes trees
//! between two of them.
//!
//! ```sh
//! cargo run --release --example cylinders_and_treemix
//! ```

use sylva::dataset::tile;
use sylva::geom::Rect;
use sylva::ml::{mix_count, sample_cylinders_grid, sample_cylinders_random, tree_mix};
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::generate_forest;
use sylva::survey::{run_survey, SurveyConfig};
use sylva::voxel::{voxelize_scene, OpacityTable};

fn main() -> sylva::Result<()> {
    let extent = Rect::from_size(50.0, 50.0);
    let library = parametric_library()?;
    let scene = generate_forest(extent, &two_layer_generators(), &library, 8)?;
    let grid = voxelize_scene(&scene, &library, 0.1, &OpacityTable::default())?;
    let survey = SurveyConfig {
        pulse_frequency: 20_000.0,
        ..SurveyConfig::default()
    };
    let (cloud, _) = run_survey(&grid, &survey.plan(&extent)?, &survey.scanner(), 8)?;
    let plot = tile(&cloud, 50.0)?.remove(0);

    let grid_samples = sample_cylinders_grid(&plot, "plot0", 8.0, 11.0)?;
    println!("grid sampling: {} cylinders", grid_samples.len());
    let samples = sample_cylinders_random(&plot, "plot0", 8.0, 6, 99)?;
    for s in &samples {
        println!(
            "  center ({:5.1}, {:5.1})  {:>7} points  {:>2} trees",
            s.center[0],
            s.center[1],
            s.points.len(),
            s.tree_ids().len()
        );
    }

    let (a, b) = (&samples[0], &samples[1]);
    let k = mix_count(a.tree_ids().len(), 0.3);
    match tree_mix(a, b, 0.3, 1) {
        Ok(mixed) => println!(
            "mixed: replaced {k} of {} trees, ids now {:?}",
            a.tree_ids().len(),
            mixed.tree_ids()
        ),
        Err(e) => println!("mix skipped: {e}"),
    }
    Ok(())
}
