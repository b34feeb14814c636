//! Grows a two-layer forest and prints its composition.
//!
//! ```sh
//! cargo run --release --example generate_forest -- [seed] [extent_m] [scene.txt]
//! ```

use std::path::PathBuf;

use sylva::geom::Rect;
use sylva::presets::{parametric_library, two_layer_generators};
use sylva::procgen::{format_composition, generate_forest, scene_composition, write_scene};

fn main() -> sylva::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let size: f64 = args.next().map_or(250.0, |s| s.parse().expect("extent"));
    let out = args.next().map(PathBuf::from);

    let library = parametric_library()?;
    let generators = two_layer_generators();
    for g in &generators {
        println!(
            "{:<10} {} initial seeds over {size} m x {size} m",
            g.name,
            g.initial_seed_count(size * size)
        );
    }
    let scene = generate_forest(Rect::from_size(size, size), &generators, &library, seed)?;
    println!("{} trees, {:.0} trees/ha\n", scene.instances.len(), scene.stem_density());
    print!("{}", format_composition(&scene_composition(&scene)));

    if let Some(path) = out {
        write_scene(&scene, &path)?;
        println!("\nscene written to {}", path.display());
    }
    Ok(())
}
