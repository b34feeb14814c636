//! Ready-made assets and generator parameter sets.
//!
//! The two-layer generator set models a coniferous forest: canopy trees
//! over saplings and shrubs. Radius ranges are collapsed to their midpoints.
//!
//! Leaf panels cover a fraction of the crown shell, so the default survey
//! lands near 1600 pts/m2 and the nodal cloud about 8x sparser.

use crate::assets::{make_parametric_tree, AssetLibrary, CanopyLevel, CrownShape, ParametricTreeSpec};
use crate::error::Result;
use crate::procgen::{FoliageGeneratorParams, WeightedAsset};

pub const OVERSTORY_ASSETS: [&str; 3] = ["pine_large", "birch_large", "pine_medium"];
pub const UNDERSTORY_ASSETS: [&str; 2] = ["pine_sapling", "hazel_sapling"];

/// Specs of the built-in parametric assets, keyed by asset id.
pub fn parametric_specs() -> Vec<(&'static str, ParametricTreeSpec)> {
    let spec = |species: &str,
                canopy_level,
                height,
                crown_shape,
                crown_radius,
                crown_base_fraction,
                leaf_panel_count,
                rng_seed| ParametricTreeSpec {
        species: species.to_string(),
        canopy_level,
        height,
        crown_shape,
        crown_radius,
        crown_base_fraction,
        leaf_panel_count,
        rng_seed,
    };
    use CanopyLevel::*;
    use CrownShape::*;
    vec![
        ("pine_large", spec("pine", Large, 22.0, Cone, 3.5, 0.45, 3000, 101)),
        ("birch_large", spec("birch", Large, 19.0, Ellipsoid, 3.8, 0.4, 3600, 102)),
        ("pine_medium", spec("pine", Medium, 14.0, Cone, 2.6, 0.4, 2000, 103)),
        ("pine_sapling", spec("pine", Sapling, 4.0, Cone, 1.0, 0.25, 400, 104)),
        ("hazel_sapling", spec("hazel", Sapling, 3.0, Ellipsoid, 1.2, 0.2, 500, 105)),
    ]
}

pub fn parametric_library() -> Result<AssetLibrary> {
    let assets = parametric_specs()
        .into_iter()
        .map(|(id, spec)| make_parametric_tree(id, &spec))
        .collect::<Result<Vec<_>>>()?;
    AssetLibrary::new(assets)
}

fn weighted(ids: &[&str]) -> Vec<WeightedAsset> {
    ids.iter()
        .map(|id| WeightedAsset {
            asset_id: id.to_string(),
            weight: 1.0,
        })
        .collect()
}

/// Canopy trees: density 3.0, collision 2.5-3.0 m, shade 4-5 m, scale
/// 0.8-1.2, spread 15 +- 5 m, 2 steps, max age 3.
pub fn overstory(assets: Vec<WeightedAsset>) -> FoliageGeneratorParams {
    FoliageGeneratorParams {
        name: "overstory".into(),
        assets,
        initial_seed_density: 3.0,
        collision_radius: 2.75,
        shade_radius: 4.5,
        procedural_scale: [0.8, 1.2],
        average_spread_distance: 15.0,
        spread_variance: 5.0,
        num_steps: 2,
        max_age: 3,
        can_grow_in_shade: false,
    }
}

/// Saplings and shrubs: density 2.0, collision 0.5-1.0 m, shade 0.5 m,
/// scale 0.5-1.0, spread 8 +- 3 m, 2 steps, max age 2.
pub fn understory(assets: Vec<WeightedAsset>) -> FoliageGeneratorParams {
    FoliageGeneratorParams {
        name: "understory".into(),
        assets,
        initial_seed_density: 2.0,
        collision_radius: 0.75,
        shade_radius: 0.5,
        procedural_scale: [0.5, 1.0],
        average_spread_distance: 8.0,
        spread_variance: 3.0,
        num_steps: 2,
        max_age: 2,
        can_grow_in_shade: true,
    }
}

/// Overstory and understory generators over the built-in parametric assets.
pub fn two_layer_generators() -> Vec<FoliageGeneratorParams> {
    vec![
        overstory(weighted(&OVERSTORY_ASSETS)),
        understory(weighted(&UNDERSTORY_ASSETS)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        let lib = parametric_library().unwrap();
        for g in two_layer_generators() {
            g.validate().unwrap();
            for a in &g.assets {
                assert!(lib.get(&a.asset_id).is_some());
            }
        }
    }
}
