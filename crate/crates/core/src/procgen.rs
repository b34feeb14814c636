//! Procedural foliage generation.
//!
//! Each generator (overstory, understory, ...) seeds its assets over the
//! extent and then, step by step, lets survivors disperse offspring while
//! shade, collision and age rules thin the stand. The process is fully
//! determined by the scene seed: every draw comes from a counter-based
//! stream keyed by `(seed, purpose, step, ordinal)`.
//!
//! Per step, for all generators with `step < num_steps`:
//!
//! 1. spawn (initial seeding at step 0, one offspring per survivor later),
//! 2. assign scale, yaw and asset to each newborn in creation order,
//! 3. shade pruning of shade-intolerant newborns,
//! 4. collision pruning in priority order,
//! 5. ageing and age-out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::assets::AssetLibrary;
use crate::error::{Error, Result};
use crate::geom::{Heightfield, Rect, Terrain, Vec3};
use crate::rng::{purpose, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedAsset {
    pub asset_id: String,
    pub weight: f64,
}

/// One foliage layer. Lengths are meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoliageGeneratorParams {
    pub name: String,
    pub assets: Vec<WeightedAsset>,
    /// Seeds per 10 m line; squared it gives seeds per 10 m x 10 m cell.
    pub initial_seed_density: f64,
    pub collision_radius: f64,
    pub shade_radius: f64,
    pub procedural_scale: [f64; 2],
    pub average_spread_distance: f64,
    /// Standard deviation of the dispersal distance.
    pub spread_variance: f64,
    pub num_steps: u32,
    pub max_age: u32,
    pub can_grow_in_shade: bool,
}

impl FoliageGeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.procedural_scale;
        let problems = [
            (self.initial_seed_density >= 0.0, "initial_seed_density must be >= 0"),
            (self.collision_radius > 0.0, "collision_radius must be > 0"),
            (self.shade_radius >= 0.0, "shade_radius must be >= 0"),
            (lo > 0.0 && lo <= hi, "procedural_scale needs 0 < min <= max"),
            (self.num_steps >= 1, "num_steps must be >= 1"),
            (self.max_age >= 1, "max_age must be >= 1"),
            (self.spread_variance >= 0.0, "spread_variance must be >= 0"),
            (self.average_spread_distance.is_finite(), "average_spread_distance must be finite"),
        ];
        if let Some((_, msg)) = problems.iter().find(|(ok, _)| !ok) {
            return Err(Error::Validation(format!("generator '{}': {msg}", self.name)));
        }
        if self.assets.is_empty() && self.initial_seed_density > 0.0 {
            return Err(Error::Config(format!(
                "generator '{}' seeds trees but lists no assets",
                self.name
            )));
        }
        if self.assets.iter().any(|a| !(a.weight >= 0.0) || !a.weight.is_finite())
            || (!self.assets.is_empty() && self.assets.iter().all(|a| a.weight == 0.0))
        {
            return Err(Error::Validation(format!(
                "generator '{}': asset weights must be finite, non-negative and not all zero",
                self.name
            )));
        }
        Ok(())
    }

    /// Number of seeds placed over `area` square meters at step 0.
    pub fn initial_seed_count(&self, area: f64) -> usize {
        (self.initial_seed_density * self.initial_seed_density * area / 100.0).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeInstance {
    /// Unique per scene; 0 is reserved for ground.
    pub instance_id: u32,
    pub asset_id: String,
    pub position: Vec3,
    pub scale: f64,
    pub yaw: f64,
    pub age: u32,
    /// Index into [`ForestScene::generators`].
    pub generator: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestScene {
    pub extent: Rect,
    pub terrain: Terrain,
    pub generators: Vec<FoliageGeneratorParams>,
    pub instances: Vec<TreeInstance>,
    pub rng_seed: u64,
}

impl ForestScene {
    pub fn empty(extent: Rect) -> Self {
        ForestScene {
            extent,
            terrain: Terrain::Flat,
            generators: Vec::new(),
            instances: Vec::new(),
            rng_seed: 0,
        }
    }

    pub fn scaled_collision_radius(&self, inst: &TreeInstance) -> f64 {
        self.generators[inst.generator].collision_radius * inst.scale
    }

    pub fn scaled_shade_radius(&self, inst: &TreeInstance) -> f64 {
        self.generators[inst.generator].shade_radius * inst.scale
    }

    /// Trees per hectare.
    pub fn stem_density(&self) -> f64 {
        self.instances.len() as f64 / (self.extent.area() / 10_000.0)
    }
}

/// Uniform hash grid over 2D points for radius queries.
struct PointHash {
    cell: f64,
    buckets: FxHashMap<(i64, i64), Vec<usize>>,
}

impl PointHash {
    fn new(cell: f64) -> Self {
        PointHash {
            cell: cell.max(1e-6),
            buckets: FxHashMap::default(),
        }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    fn insert(&mut self, x: f64, y: f64, item: usize) {
        let k = self.key(x, y);
        self.buckets.entry(k).or_default().push(item);
    }

    /// Items in cells overlapping the square of half-width `r` around `(x, y)`.
    fn near(&self, x: f64, y: f64, r: f64, mut f: impl FnMut(usize) -> bool) -> bool {
        let (x0, y0) = self.key(x - r, y - r);
        let (x1, y1) = self.key(x + r, y + r);
        for i in x0..=x1 {
            for j in y0..=y1 {
                if let Some(items) = self.buckets.get(&(i, j)) {
                    for &it in items {
                        if f(it) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn dist_xy(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Runs the foliage simulation over a flat extent.
pub fn generate_forest(
    extent: Rect,
    generators: &[FoliageGeneratorParams],
    library: &AssetLibrary,
    rng_seed: u64,
) -> Result<ForestScene> {
    generate_forest_on(extent, Terrain::Flat, generators, library, rng_seed)
}

pub fn generate_forest_on(
    extent: Rect,
    terrain: Terrain,
    generators: &[FoliageGeneratorParams],
    library: &AssetLibrary,
    rng_seed: u64,
) -> Result<ForestScene> {
    extent.validate()?;
    if let Terrain::Heightfield(h) = &terrain {
        h.validate()?;
    }
    for g in generators {
        g.validate()?;
        for a in &g.assets {
            library.require(&a.asset_id).map_err(|_| {
                Error::Config(format!(
                    "generator '{}' references unknown asset '{}'",
                    g.name, a.asset_id
                ))
            })?;
        }
    }
    let pickers: Vec<Option<WeightedIndex<f64>>> = generators
        .iter()
        .map(|g| WeightedIndex::new(g.assets.iter().map(|a| a.weight)).ok())
        .collect();

    let steps = generators.iter().map(|g| g.num_steps).max().unwrap_or(0);
    let mut alive: Vec<TreeInstance> = Vec::new();
    let mut next_id: u32 = 1;

    for step in 0..steps {
        let active = |g: usize| step < generators[g].num_steps;

        // SPAWN: positions only; ids are handed out in creation order below.
        let mut spawned: Vec<(usize, f64, f64)> = Vec::new();
        for (gi, g) in generators.iter().enumerate() {
            if !active(gi) {
                continue;
            }
            if step == 0 {
                let n = g.initial_seed_count(extent.area());
                let mut s = Stream::new(rng_seed, &[purpose::SPAWN, step as u64, gi as u64]);
                for _ in 0..n {
                    let x = s.uniform(extent.min_x, extent.max_x);
                    let y = s.uniform(extent.min_y, extent.max_y);
                    spawned.push((gi, x, y));
                }
            } else {
                for parent in alive.iter().filter(|p| p.generator == gi) {
                    let mut s = Stream::new(
                        rng_seed,
                        &[purpose::DISPERSE, step as u64, parent.instance_id as u64],
                    );
                    let d = (g.average_spread_distance + g.spread_variance * s.standard_normal())
                        .max(0.0);
                    let theta = s.uniform(0.0, std::f64::consts::TAU);
                    let x = parent.position.x + d * theta.cos();
                    let y = parent.position.y + d * theta.sin();
                    if extent.contains(x, y) {
                        spawned.push((gi, x, y));
                    }
                }
            }
        }

        // ASSIGN
        let mut newborn = Vec::with_capacity(spawned.len());
        for (gi, x, y) in spawned {
            let g = &generators[gi];
            let id = next_id;
            next_id += 1;
            let mut s = Stream::new(rng_seed, &[purpose::ASSIGN, id as u64]);
            let scale = s.uniform(g.procedural_scale[0], g.procedural_scale[1]);
            let yaw = s.uniform(0.0, std::f64::consts::TAU);
            let pick = pickers[gi]
                .as_ref()
                .map(|w| w.sample(&mut s))
                .ok_or_else(|| Error::Config(format!("generator '{}' has no assets", g.name)))?;
            newborn.push(TreeInstance {
                instance_id: id,
                asset_id: g.assets[pick].asset_id.clone(),
                position: Vec3::new(x, y, terrain.height_at(x, y)),
                scale,
                yaw,
                age: 0,
                generator: gi,
            });
        }

        // PRUNE-SHADE: elders are everything that survived a previous step.
        let newborn = prune_shade(newborn, &alive, generators);

        // PRUNE-COLLISION
        let mut all = alive;
        all.extend(newborn);
        let mut kept = prune_collisions(all, generators);

        // AGE
        for t in kept.iter_mut() {
            if active(t.generator) {
                t.age += 1;
            }
        }
        kept.retain(|t| t.age <= generators[t.generator].max_age);
        kept.sort_by_key(|t| t.instance_id);
        alive = kept;
    }

    Ok(ForestScene {
        extent,
        terrain,
        generators: generators.to_vec(),
        instances: alive,
        rng_seed,
    })
}

/// Removes shade-intolerant newborns standing within the scaled shade radius
/// of any elder.
pub(crate) fn prune_shade(
    mut newborn: Vec<TreeInstance>,
    elders: &[TreeInstance],
    generators: &[FoliageGeneratorParams],
) -> Vec<TreeInstance> {
    let shade = |t: &TreeInstance| generators[t.generator].shade_radius * t.scale;
    let max_shade = elders.iter().map(shade).fold(0.0, f64::max);
    if max_shade <= 0.0 {
        return newborn;
    }
    let mut hash = PointHash::new(max_shade);
    for (i, e) in elders.iter().enumerate() {
        hash.insert(e.position.x, e.position.y, i);
    }
    newborn.retain(|n| {
        generators[n.generator].can_grow_in_shade
            || !hash.near(n.position.x, n.position.y, max_shade, |i| {
                dist_xy(&elders[i].position, &n.position) < shade(&elders[i])
            })
    });
    newborn
}

/// Keeps instances in priority order (larger scaled collision radius, then
/// older, then smaller id), skipping any that overlap an already kept one.
pub(crate) fn prune_collisions(
    mut all: Vec<TreeInstance>,
    generators: &[FoliageGeneratorParams],
) -> Vec<TreeInstance> {
    let scaled_cr = |t: &TreeInstance| generators[t.generator].collision_radius * t.scale;
    all.sort_by(|a, b| {
        scaled_cr(b)
            .total_cmp(&scaled_cr(a))
            .then(b.age.cmp(&a.age))
            .then(a.instance_id.cmp(&b.instance_id))
    });
    let max_cr = all.iter().map(scaled_cr).fold(0.0, f64::max);
    let mut kept: Vec<TreeInstance> = Vec::with_capacity(all.len());
    let mut hash = PointHash::new(2.0 * max_cr);
    for cand in all {
        let r = scaled_cr(&cand);
        let blocked = hash.near(cand.position.x, cand.position.y, r + max_cr, |i| {
            let k = &kept[i];
            dist_xy(&k.position, &cand.position) < r + scaled_cr(k)
        });
        if !blocked {
            hash.insert(cand.position.x, cand.position.y, kept.len());
            kept.push(cand);
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompositionRow {
    pub asset_id: String,
    pub count: usize,
    pub percent: f64,
}

/// Instance counts per asset, largest first.
pub fn scene_composition(scene: &ForestScene) -> Vec<CompositionRow> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &scene.instances {
        *counts.entry(t.asset_id.as_str()).or_default() += 1;
    }
    let total = scene.instances.len() as f64;
    let mut rows: Vec<CompositionRow> = counts
        .into_iter()
        .map(|(asset_id, count)| CompositionRow {
            asset_id: asset_id.to_string(),
            count,
            percent: 100.0 * count as f64 / total,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.asset_id.cmp(&b.asset_id)));
    rows
}

/// Formats a composition table (asset, count, percent) with a total row.
pub fn format_composition(rows: &[CompositionRow]) -> String {
    let mut out = String::from("asset\tcount\tpercent\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.2}", r.asset_id, r.count, r.percent);
    }
    let total: usize = rows.iter().map(|r| r.count).sum();
    let _ = writeln!(out, "total\t{total}\t{:.2}", if total > 0 { 100.0 } else { 0.0 });
    out
}

const SCENE_HEADER: &str = "# sylva-scene v1";

/// Serializes a scene: header, generator blocks, one instance per line
/// (`id asset x y z scale yaw age generator`). Floats use Rust's shortest
/// round-trip formatting, so [`parse_scene`] restores them exactly.
pub fn format_scene(scene: &ForestScene) -> String {
    let mut out = String::new();
    let e = &scene.extent;
    let _ = writeln!(out, "{SCENE_HEADER}");
    let _ = writeln!(out, "seed {}", scene.rng_seed);
    let _ = writeln!(out, "extent {:?} {:?} {:?} {:?}", e.min_x, e.min_y, e.max_x, e.max_y);
    match &scene.terrain {
        Terrain::Flat => {
            let _ = writeln!(out, "terrain flat");
        }
        Terrain::Heightfield(h) => {
            let _ = writeln!(
                out,
                "terrain heightfield {} {} {:?} {:?} {:?}",
                h.nx, h.ny, h.cell_size, h.origin[0], h.origin[1]
            );
            let hs: Vec<String> = h.heights.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "heights {}", hs.join(" "));
        }
    }
    for g in &scene.generators {
        let _ = writeln!(out, "generator {}", g.name);
        let assets: Vec<String> = g
            .assets
            .iter()
            .map(|a| format!("{}:{:?}", a.asset_id, a.weight))
            .collect();
        let _ = writeln!(out, "  assets {}", assets.join(","));
        let _ = writeln!(out, "  initial_seed_density {:?}", g.initial_seed_density);
        let _ = writeln!(out, "  collision_radius {:?}", g.collision_radius);
        let _ = writeln!(out, "  shade_radius {:?}", g.shade_radius);
        let _ = writeln!(
            out,
            "  procedural_scale {:?} {:?}",
            g.procedural_scale[0], g.procedural_scale[1]
        );
        let _ = writeln!(out, "  average_spread_distance {:?}", g.average_spread_distance);
        let _ = writeln!(out, "  spread_variance {:?}", g.spread_variance);
        let _ = writeln!(out, "  num_steps {}", g.num_steps);
        let _ = writeln!(out, "  max_age {}", g.max_age);
        let _ = writeln!(out, "  can_grow_in_shade {}", g.can_grow_in_shade);
        let _ = writeln!(out, "end");
    }
    let _ = writeln!(out, "instances {}", scene.instances.len());
    for t in &scene.instances {
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {:?} {} {}",
            t.instance_id,
            t.asset_id,
            t.position.x,
            t.position.y,
            t.position.z,
            t.scale,
            t.yaw,
            t.age,
            scene.generators[t.generator].name
        );
    }
    out
}

pub fn parse_scene(text: &str, source_name: &str) -> Result<ForestScene> {
    let err = |line: usize, message: String| Error::ParseText {
        source_name: source_name.to_string(),
        line,
        message,
    };
    fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str, err: &dyn Fn(usize, String) -> Error) -> Result<T> {
        let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
        tok.parse::<T>()
            .map_err(|_| err(line, format!("bad {what} '{tok}'")))
    }

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, SCENE_HEADER)) => {}
        _ => return Err(err(1, format!("missing header '{SCENE_HEADER}'"))),
    }
    let mut scene = ForestScene::empty(Rect::from_size(1.0, 1.0));
    let mut have_extent = false;
    let mut expected_instances: Option<usize> = None;
    let mut gen_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut current: Option<FoliageGeneratorParams> = None;

    for (ln, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split_whitespace();
        let tag = f.next().unwrap_or_default();
        if let Some(g) = current.as_mut() {
            match tag {
                "end" => {
                    let g = current.take().unwrap();
                    gen_index.insert(g.name.clone(), scene.generators.len());
                    scene.generators.push(g);
                }
                "assets" => {
                    g.assets.clear();
                    for item in f.next().unwrap_or_default().split(',').filter(|s| !s.is_empty()) {
                        let (id, w) = item
                            .rsplit_once(':')
                            .ok_or_else(|| err(ln, format!("asset entry '{item}' needs id:weight")))?;
                        g.assets.push(WeightedAsset {
                            asset_id: id.to_string(),
                            weight: num(Some(w), ln, "weight", &err)?,
                        });
                    }
                }
                "initial_seed_density" => g.initial_seed_density = num(f.next(), ln, tag, &err)?,
                "collision_radius" => g.collision_radius = num(f.next(), ln, tag, &err)?,
                "shade_radius" => g.shade_radius = num(f.next(), ln, tag, &err)?,
                "procedural_scale" => {
                    g.procedural_scale = [num(f.next(), ln, tag, &err)?, num(f.next(), ln, tag, &err)?]
                }
                "average_spread_distance" => g.average_spread_distance = num(f.next(), ln, tag, &err)?,
                "spread_variance" => g.spread_variance = num(f.next(), ln, tag, &err)?,
                "num_steps" => g.num_steps = num(f.next(), ln, tag, &err)?,
                "max_age" => g.max_age = num(f.next(), ln, tag, &err)?,
                "can_grow_in_shade" => g.can_grow_in_shade = num(f.next(), ln, tag, &err)?,
                other => return Err(err(ln, format!("unknown generator field '{other}'"))),
            }
            continue;
        }
        if expected_instances.is_some() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 9 {
                return Err(err(ln, format!("instance record needs 9 fields, got {}", fields.len())));
            }
            let generator = *gen_index
                .get(fields[8])
                .ok_or_else(|| err(ln, format!("unknown generator '{}'", fields[8])))?;
            scene.instances.push(TreeInstance {
                instance_id: num(Some(fields[0]), ln, "instance id", &err)?,
                asset_id: fields[1].to_string(),
                position: Vec3::new(
                    num(Some(fields[2]), ln, "x", &err)?,
                    num(Some(fields[3]), ln, "y", &err)?,
                    num(Some(fields[4]), ln, "z", &err)?,
                ),
                scale: num(Some(fields[5]), ln, "scale", &err)?,
                yaw: num(Some(fields[6]), ln, "yaw", &err)?,
                age: num(Some(fields[7]), ln, "age", &err)?,
                generator,
            });
            continue;
        }
        match tag {
            "seed" => scene.rng_seed = num(f.next(), ln, "seed", &err)?,
            "extent" => {
                let v: Vec<f64> = (0..4)
                    .map(|_| num(f.next(), ln, "extent value", &err))
                    .collect::<Result<_>>()?;
                scene.extent = Rect::new(v[0], v[1], v[2], v[3]);
                have_extent = true;
            }
            "terrain" => match f.next() {
                Some("flat") => scene.terrain = Terrain::Flat,
                Some("heightfield") => {
                    scene.terrain = Terrain::Heightfield(Heightfield {
                        nx: num(f.next(), ln, "nx", &err)?,
                        ny: num(f.next(), ln, "ny", &err)?,
                        cell_size: num(f.next(), ln, "cell size", &err)?,
                        origin: [num(f.next(), ln, "origin x", &err)?, num(f.next(), ln, "origin y", &err)?],
                        heights: Vec::new(),
                    })
                }
                other => return Err(err(ln, format!("unknown terrain {other:?}"))),
            },
            "heights" => match &mut scene.terrain {
                Terrain::Heightfield(h) => {
                    h.heights = f
                        .map(|t| num(Some(t), ln, "height", &err))
                        .collect::<Result<_>>()?
                }
                Terrain::Flat => return Err(err(ln, "heights given for flat terrain".into())),
            },
            "generator" => {
                let name = f.next().ok_or_else(|| err(ln, "generator without a name".into()))?;
                current = Some(FoliageGeneratorParams {
                    name: name.to_string(),
                    assets: Vec::new(),
                    initial_seed_density: 0.0,
                    collision_radius: 1.0,
                    shade_radius: 0.0,
                    procedural_scale: [1.0, 1.0],
                    average_spread_distance: 0.0,
                    spread_variance: 0.0,
                    num_steps: 1,
                    max_age: 1,
                    can_grow_in_shade: true,
                });
            }
            "instances" => expected_instances = Some(num(f.next(), ln, "instance count", &err)?),
            other => return Err(err(ln, format!("unknown record '{other}'"))),
        }
    }
    if current.is_some() {
        return Err(err(text.lines().count(), "unterminated generator block".into()));
    }
    if !have_extent {
        return Err(err(1, "scene has no extent".into()));
    }
    let expected = expected_instances.unwrap_or(0);
    if scene.instances.len() != expected {
        return Err(err(
            text.lines().count(),
            format!("expected {expected} instances, found {}", scene.instances.len()),
        ));
    }
    if let Terrain::Heightfield(h) = &scene.terrain {
        h.validate()?;
    }
    Ok(scene)
}

pub fn write_scene(scene: &ForestScene, path: &Path) -> Result<()> {
    std::fs::write(path, format_scene(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<ForestScene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, &path.display().to_string())
}
