//! Surveys a 150 m x 150 m forest at reduced pulse rate, tiles it into
//! 50 m plots, splits them and writes the dataset directory.
//!
//! ```sh
//! cargo run --release --example build_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use sylva::dataset::{build_dataset, write_dataset, DatasetOptions, SplitName};
use sylva::geom::Rect;
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::generate_forest;
use sylva::survey::{run_survey, SurveyConfig};
use sylva::voxel::{voxelize_scene, OpacityTable};

fn main() -> sylva::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("sylva_dataset"), PathBuf::from);
    let extent = Rect::from_size(150.0, 150.0);
    let library = parametric_library()?;
    let scene = generate_forest(extent, &two_layer_generators(), &library, 21)?;
    let grid = voxelize_scene(&scene, &library, 0.25, &OpacityTable::default())?;
    let survey = SurveyConfig {
        pulse_frequency: 10_000.0,
        ..SurveyConfig::default()
    };
    let (cloud, _) = run_survey(&grid, &survey.plan(&extent)?, &survey.scanner(), 21)?;

    let opts = DatasetOptions {
        split_seed: 21,
        density_threshold: 50.0,
        ..DatasetOptions::default()
    };
    let dataset = build_dataset(&[("forest".into(), cloud)], &opts)?;
    let manifest = write_dataset(&dataset, &out)?;
    print!("{}", dataset.density_report().format_table());
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let ids: Vec<&str> = dataset.manifest.plots_in(split).map(|p| p.id.as_str()).collect();
        println!("{split:?}: {}", ids.join(", "));
    }
    println!("{} -> {}", dataset.manifest.name, manifest.display());
    Ok(())
}
