//! Voxelizes a small forest and reports the occupied cells per class,
//! optionally dumping the grid.
//!
//! ```sh
//! cargo run --release --example voxelize_scene -- [voxel_size] [grid.svxg]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use sylva::geom::Rect;
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::generate_forest;
use sylva::voxel::{save_grid, voxelize_scene, OpacityTable};

fn main() -> sylva::Result<()> {
    let mut args = std::env::args().skip(1);
    let voxel_size: f64 = args.next().map_or(0.1, |s| s.parse().expect("voxel size"));
    let dump = args.next().map(PathBuf::from);

    let library = parametric_library()?;
    let scene = generate_forest(Rect::from_size(30.0, 30.0), &two_layer_generators(), &library, 5)?;
    let grid = voxelize_scene(&scene, &library, voxel_size, &OpacityTable::default())?;

    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, attr) in grid.tree_cells() {
        *per_class.entry(attr.semantic.name()).or_default() += 1;
    }
    let dims = grid.dims();
    println!("{} trees, voxel size {voxel_size} m, lattice {} x {} x {}", scene.instances.len(), dims[0], dims[1], dims[2]);
    println!("occupied {}", grid.len());
    for (class, n) in per_class {
        println!("  {class:<6} {n}");
    }

    if let Some(path) = dump {
        save_grid(&grid, &path)?;
        println!("grid written to {}", path.display());
    }
    Ok(())
}
