//! Dataset assembly: label remapping, tiling into plots, train/val/test
//! splits, density statistics, nodal baselines and the manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::assets::{AssetLibrary, Material};
use crate::cloud_io::{read_cloud, write_cloud, CloudFormat, LidarPoint, PointCloud, Provenance};
use crate::error::{Error, Result};
use crate::geom::{snap_ceil, Rect, Vec3};
use crate::labels::SemanticMapping;
use crate::procgen::ForestScene;
use crate::rng::{purpose, Stream};

pub const DEFAULT_TILE_SIZE: f64 = 50.0;
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 1000.0;
const NODAL_MERGE_EPS: f64 = 1e-6;

/// Rewrites every semantic label; positions are untouched.
pub fn remap_semantics(cloud: &PointCloud, mapping: &SemanticMapping) -> Result<PointCloud> {
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.semantic = mapping.apply(p.semantic)?;
    }
    Ok(out)
}

/// Concatenates clouds; the extent covers all inputs.
pub fn merge_clouds(clouds: &[PointCloud]) -> PointCloud {
    let extent = Rect::bounding(clouds.iter().flat_map(|c| {
        [[c.extent.min_x, c.extent.min_y], [c.extent.max_x, c.extent.max_y]]
    }))
    .unwrap_or_else(|| Rect::new(0.0, 0.0, 0.0, 0.0));
    let provenance = clouds.first().map_or(Provenance::Simulated, |c| c.provenance);
    let points = clouds.iter().flat_map(|c| c.points.iter().copied()).collect();
    PointCloud::new(points, extent, provenance)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub tile_index: [u32; 2],
    pub bounds: Rect,
    pub cloud: PointCloud,
    /// Narrower than the tile size on at least one axis.
    pub edge: bool,
}

impl Plot {
    pub fn density(&self) -> f64 {
        self.cloud.points.len() as f64 / self.bounds.area()
    }
}

fn tiles_along(len: f64, tile: f64) -> u32 {
    (snap_ceil(len / tile) as u32).max(1)
}

/// Cuts the cloud into square tiles aligned to its extent's min corner.
///
/// Tiles are half-open `[lo, hi)`, except that points on the extent's far
/// boundary go to the last tile. Empty tiles are dropped; tiles clipped by
/// the extent are kept and flagged as edge tiles. Plots come back in
/// `(j, i)` row-major order.
pub fn tile(cloud: &PointCloud, tile_size: f64) -> Result<Vec<Plot>> {
    if !(tile_size > 0.0) {
        return Err(Error::Validation(format!("tile_size must be > 0, got {tile_size}")));
    }
    if cloud.points.is_empty() {
        return Ok(Vec::new());
    }
    let e = cloud.extent;
    let nx = tiles_along(e.width(), tile_size);
    let ny = tiles_along(e.height(), tile_size);
    let index = |v: f64, lo: f64, n: u32| -> u32 { (((v - lo) / tile_size).floor().max(0.0) as u32).min(n - 1) };

    let mut buckets: FxHashMap<[u32; 2], Vec<LidarPoint>> = FxHashMap::default();
    for p in &cloud.points {
        let key = [index(p.position.x, e.min_x, nx), index(p.position.y, e.min_y, ny)];
        buckets.entry(key).or_default().push(*p);
    }
    let mut keys: Vec<[u32; 2]> = buckets.keys().copied().collect();
    keys.sort_by_key(|k| (k[1], k[0]));
    Ok(keys
        .into_iter()
        .map(|k| {
            let min_x = e.min_x + k[0] as f64 * tile_size;
            let min_y = e.min_y + k[1] as f64 * tile_size;
            let bounds = Rect::new(
                min_x,
                min_y,
                (min_x + tile_size).min(e.max_x),
                (min_y + tile_size).min(e.max_y),
            );
            let edge = bounds.width() < tile_size - 1e-9 || bounds.height() < tile_size - 1e-9;
            let points = buckets.remove(&k).unwrap_or_default();
            Plot {
                tile_index: k,
                bounds,
                cloud: PointCloud {
                    points,
                    extent: bounds,
                    provenance: cloud.provenance,
                },
                edge,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train|val|test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for `n` plots. Validation and test take
    /// `round(n * f)` each (at least one when their fraction is positive);
    /// training gets the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(Error::Validation(format!("need at least 3 plots to split, got {n}")));
        }
        let part = |f: f64| {
            let c = (n as f64 * f).round() as usize;
            if f > 0.0 { c.max(1) } else { c }
        };
        let (val, test) = (part(self.val), part(self.test));
        if val + test >= n && self.train > 0.0 {
            return Err(Error::Validation(format!("fractions leave no training plots out of {n}")));
        }
        Ok((n - val - test, val, test))
    }
}

/// Split assignment for `n` plots of one scene: plot positions are shuffled
/// by `(seed, scene_index)`, then the first block goes to train, the next to
/// val and the rest to test.
pub fn split(n: usize, fractions: &SplitFractions, seed: u64, scene_index: u64) -> Result<Vec<SplitName>> {
    let (train, val, _) = fractions.counts(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Stream::new(seed, &[purpose::SPLIT, scene_index]));
    let mut out = vec![SplitName::Test; n];
    for (rank, &plot) in order.iter().enumerate() {
        out[plot] = if rank < train {
            SplitName::Train
        } else if rank < train + val {
            SplitName::Val
        } else {
            SplitName::Test
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotDensity {
    pub plot_id: String,
    pub scene: String,
    pub point_count: u64,
    pub area: f64,
    pub density: f64,
    pub below_threshold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDensity {
    pub scene: String,
    pub plots: usize,
    pub mean_density: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub threshold: f64,
    pub plots: Vec<PlotDensity>,
    pub scenes: Vec<SceneDensity>,
}

/// Per-plot densities and the per-scene arithmetic mean of them.
pub fn density_report<'a>(plots: impl IntoIterator<Item = (&'a str, &'a str, &'a Plot)>, threshold: f64) -> DensityReport {
    let mut rows = Vec::new();
    for (scene, id, plot) in plots {
        let density = plot.density();
        rows.push(PlotDensity {
            plot_id: id.to_string(),
            scene: scene.to_string(),
            point_count: plot.cloud.points.len() as u64,
            area: plot.bounds.area(),
            density,
            below_threshold: density < threshold,
        });
    }
    DensityReport {
        threshold,
        scenes: scene_means(&rows),
        plots: rows,
    }
}

fn scene_means(rows: &[PlotDensity]) -> Vec<SceneDensity> {
    let mut scenes: Vec<SceneDensity> = Vec::new();
    for r in rows {
        match scenes.iter_mut().find(|s| s.scene == r.scene) {
            Some(s) => {
                s.mean_density += r.density;
                s.plots += 1;
            }
            None => scenes.push(SceneDensity {
                scene: r.scene.clone(),
                plots: 1,
                mean_density: r.density,
            }),
        }
    }
    for s in &mut scenes {
        s.mean_density /= s.plots as f64;
    }
    scenes
}

impl DensityReport {
    pub fn format_table(&self) -> String {
        let mut out = String::from("scene\tplot\tpoints\tarea_m2\tpts_per_m2\tflag\n");
        for r in &self.plots {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.1}\t{:.3}\t{}\n",
                r.scene,
                r.plot_id,
                r.point_count,
                r.area,
                r.density,
                if r.below_threshold { "LOW" } else { "" }
            ));
        }
        for s in &self.scenes {
            out.push_str(&format!("{}\t(mean of {})\t\t\t{:.3}\t\n", s.scene, s.plots, s.mean_density));
        }
        out
    }
}

/// One point per distinct world-space mesh vertex of every instance,
/// labeled with the instance and the majority material of the triangles
/// around it (wood on ties). Points outside the scene extent are dropped.
pub fn extract_nodal(scene: &ForestScene, library: &AssetLibrary) -> Result<PointCloud> {
    let mut points = Vec::new();
    for inst in &scene.instances {
        let asset = library.require(&inst.asset_id)?;
        let (sin, cos) = inst.yaw.sin_cos();
        let mut votes = vec![(0u32, 0u32); asset.mesh.vertices.len()];
        for (tri, m) in asset.mesh.triangles.iter().zip(&asset.mesh.materials) {
            for &v in tri {
                match m {
                    Material::Wood => votes[v as usize].0 += 1,
                    Material::Leaf => votes[v as usize].1 += 1,
                }
            }
        }

        let mut merged: Vec<(Vec3, u32, u32)> = Vec::new();
        let mut cells: FxHashMap<[i64; 3], Vec<usize>> = FxHashMap::default();
        for (v, &(wood, leaf)) in asset.mesh.vertices.iter().zip(&votes) {
            let p = v * inst.scale;
            let w = Vec3::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y, p.z) + inst.position;
            let key = [0, 1, 2].map(|a| (w[a] / NODAL_MERGE_EPS).floor() as i64);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = cells.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) {
                            if let Some(&i) = list.iter().find(|&&i| (merged[i].0 - w).norm() <= NODAL_MERGE_EPS) {
                                found = Some(i);
                                break 'search;
                            }
                        }
                    }
                }
            }
            match found {
                Some(i) => {
                    merged[i].1 += wood;
                    merged[i].2 += leaf;
                }
                None => {
                    cells.entry(key).or_default().push(merged.len());
                    merged.push((w, wood, leaf));
                }
            }
        }
        for (w, wood, leaf) in merged {
            if !scene.extent.contains(w.x, w.y) {
                continue;
            }
            let mat = if wood >= leaf { Material::Wood } else { Material::Leaf };
            points.push(LidarPoint::nodal(w, inst.instance_id, mat.semantic()));
        }
    }
    Ok(PointCloud {
        points,
        extent: scene.extent,
        provenance: Provenance::Nodal,
    })
}

/// Dataset name: `Sim_<scenes>_<plots>`, `Nodal_...` for nodal clouds.
pub fn dataset_name(provenance: Provenance, scenes: usize, plots: usize) -> String {
    let prefix = match provenance {
        Provenance::Simulated => "Sim",
        Provenance::Nodal => "Nodal",
    };
    format!("{prefix}_{scenes}_{plots}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub name: String,
    pub plot_count: usize,
    pub point_count: u64,
    pub mean_density: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPlot {
    pub id: String,
    pub scene: String,
    pub tile: [u32; 2],
    /// `[min_x, min_y, max_x, max_y]`.
    pub bounds: [f64; 4],
    pub edge: bool,
    pub split: SplitName,
    pub point_count: u64,
    pub density: f64,
    /// Relative to the manifest's directory.
    pub file: String,
}

impl ManifestPlot {
    pub fn rect(&self) -> Rect {
        Rect::new(self.bounds[0], self.bounds[1], self.bounds[2], self.bounds[3])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub provenance: Provenance,
    pub format: CloudFormat,
    pub tile_size: f64,
    pub split_seed: u64,
    pub fractions: SplitFractions,
    pub density_threshold: f64,
    /// Sorted semantic codes present in the plots.
    pub labels: Vec<u8>,
    pub scenes: Vec<ManifestScene>,
    pub plots: Vec<ManifestPlot>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data(format!("{source_name}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.plots.iter().filter(|p| p.split == s).count();
        (count(SplitName::Train), count(SplitName::Val), count(SplitName::Test))
    }

    pub fn plots_in(&self, split: SplitName) -> impl Iterator<Item = &ManifestPlot> {
        self.plots.iter().filter(move |p| p.split == split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub tile_size: f64,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub density_threshold: f64,
    pub format: CloudFormat,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            tile_size: DEFAULT_TILE_SIZE,
            fractions: SplitFractions::default(),
            split_seed: 0,
            density_threshold: DEFAULT_DENSITY_THRESHOLD,
            format: CloudFormat::Binary,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Aligned with `manifest.plots`.
    pub plots: Vec<Plot>,
}

impl Dataset {
    pub fn density_report(&self) -> DensityReport {
        density_report(
            self.manifest
                .plots
                .iter()
                .zip(&self.plots)
                .map(|(m, p)| (m.scene.as_str(), m.id.as_str(), p)),
            self.manifest.density_threshold,
        )
    }
}

/// Tiles and splits each named scene cloud independently.
pub fn build_dataset(scenes: &[(String, PointCloud)], opts: &DatasetOptions) -> Result<Dataset> {
    opts.fractions.validate()?;
    let provenance = scenes.first().map_or(Provenance::Simulated, |s| s.1.provenance);
    let mut manifest_scenes = Vec::new();
    let mut manifest_plots = Vec::new();
    let mut all_plots = Vec::new();
    let mut labels = std::collections::BTreeSet::new();

    for (si, (name, cloud)) in scenes.iter().enumerate() {
        let plots = tile(cloud, opts.tile_size)?;
        // Too few plots to populate every split: keep them all for training.
        let splits = if plots.len() < 3 {
            log::warn!("scene '{name}' has {} plot(s); all assigned to train", plots.len());
            vec![SplitName::Train; plots.len()]
        } else {
            split(plots.len(), &opts.fractions, opts.split_seed, si as u64)?
        };
        let mut counts = [0usize; 3];
        let mut density_sum = 0.0;
        for (plot, s) in plots.into_iter().zip(splits) {
            counts[s as usize] += 1;
            density_sum += plot.density();
            labels.extend(plot.cloud.points.iter().map(|p| p.semantic.code()));
            let id = format!("{name}_t{:02}_{:02}", plot.tile_index[0], plot.tile_index[1]);
            let b = plot.bounds;
            manifest_plots.push(ManifestPlot {
                file: format!("plots/{id}.{}", opts.format.extension()),
                id,
                scene: name.clone(),
                tile: plot.tile_index,
                bounds: [b.min_x, b.min_y, b.max_x, b.max_y],
                edge: plot.edge,
                split: s,
                point_count: plot.cloud.points.len() as u64,
                density: plot.density(),
            });
            all_plots.push(plot);
        }
        let n = counts.iter().sum::<usize>();
        manifest_scenes.push(ManifestScene {
            name: name.clone(),
            plot_count: n,
            point_count: cloud.points.len() as u64,
            mean_density: if n > 0 { density_sum / n as f64 } else { 0.0 },
            train: counts[0],
            val: counts[1],
            test: counts[2],
        });
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            name: dataset_name(provenance, scenes.len(), manifest_plots.len()),
            provenance,
            format: opts.format,
            tile_size: opts.tile_size,
            split_seed: opts.split_seed,
            fractions: opts.fractions,
            density_threshold: opts.density_threshold,
            labels: labels.into_iter().collect(),
            scenes: manifest_scenes,
            plots: manifest_plots,
        },
        plots: all_plots,
    })
}

/// Reassigns splits of an existing manifest with a new seed or fractions.
pub fn resplit_manifest(manifest: &DatasetManifest, fractions: &SplitFractions, seed: u64) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    out.fractions = *fractions;
    out.split_seed = seed;
    for (si, scene) in out.scenes.iter_mut().enumerate() {
        let idx: Vec<usize> = (0..out.plots.len()).filter(|&i| out.plots[i].scene == scene.name).collect();
        let splits = split(idx.len(), fractions, seed, si as u64)?;
        let mut counts = [0usize; 3];
        for (&i, s) in idx.iter().zip(splits) {
            out.plots[i].split = s;
            counts[s as usize] += 1;
        }
        (scene.train, scene.val, scene.test) = (counts[0], counts[1], counts[2]);
    }
    Ok(out)
}

/// Writes `manifest.toml` and one cloud file per plot under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let plots_dir = dir.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;
    for (m, plot) in dataset.manifest.plots.iter().zip(&dataset.plots) {
        write_cloud(&plot.cloud, &dir.join(&m.file), dataset.manifest.format)?;
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, dataset.manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads one plot listed in a manifest stored at `manifest_path`.
pub fn load_plot(manifest_path: &Path, plot: &ManifestPlot) -> Result<Plot> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cloud = read_cloud(&base.join(&plot.file))?;
    cloud.extent = plot.rect();
    Ok(Plot {
        tile_index: plot.tile,
        bounds: plot.rect(),
        cloud,
        edge: plot.edge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{CanopyLevel, TreeAsset, TriMesh};
    use crate::labels::Semantic;
    use crate::procgen::TreeInstance;

    fn pt(x: f64, y: f64, sem: Semantic) -> LidarPoint {
        LidarPoint {
            position: Vec3::new(x, y, 1.0),
            instance_id: 1,
            semantic: sem,
            return_number: 1,
            pulse_index: 0,
            time: 0.0,
        }
    }

    fn cloud(points: Vec<LidarPoint>, extent: Rect) -> PointCloud {
        PointCloud::new(points, extent, Provenance::Simulated)
    }

    #[test]
    fn remap_default_binary() {
        let c = cloud(
            [Semantic::Stem, Semantic::WoodyBranches, Semantic::LiveBranches, Semantic::LowVegetation, Semantic::Ground]
                .iter()
                .enumerate()
                .map(|(i, s)| pt(i as f64, 0.0, *s))
                .collect(),
            Rect::from_size(10.0, 10.0),
        );
        let out = remap_semantics(&c, &SemanticMapping::five_class_to_binary()).unwrap();
        let labels: std::collections::BTreeSet<_> = out.points.iter().map(|p| p.semantic).collect();
        assert_eq!(labels.len(), 2);
        assert_eq!(remap_semantics(&c, &SemanticMapping::identity()).unwrap(), c);

        let mut partial = SemanticMapping::five_class_to_binary();
        partial.map.remove(&Semantic::Ground);
        let err = remap_semantics(&c, &partial).unwrap_err();
        assert!(err.to_string().contains("ground"), "{err}");
    }

    #[test]
    fn tiling_counts_and_half_open() {
        let mut pts = Vec::new();
        for i in 0..25 {
            pts.push(pt(25.0 + 50.0 * (i % 5) as f64, 25.0 + 50.0 * (i / 5) as f64, Semantic::Leaf));
        }
        pts.push(pt(50.0, 10.0, Semantic::Ground));
        pts.push(pt(250.0, 250.0, Semantic::Ground));
        let c = cloud(pts, Rect::from_size(250.0, 250.0));
        let plots = tile(&c, 50.0).unwrap();
        assert_eq!(plots.len(), 25);
        assert!(plots.iter().all(|p| !p.edge));
        let total: usize = plots.iter().map(|p| p.cloud.points.len()).sum();
        assert_eq!(total, 27);
        let t10 = plots.iter().find(|p| p.tile_index == [1, 0]).unwrap();
        assert!(t10.cloud.points.iter().any(|p| p.position.x == 50.0));
        let t44 = plots.iter().find(|p| p.tile_index == [4, 4]).unwrap();
        assert_eq!(t44.cloud.points.len(), 2);
        assert!(tile(&cloud(vec![], Rect::from_size(1.0, 1.0)), 50.0).unwrap().is_empty());
    }

    #[test]
    fn edge_tiles_flagged() {
        let c = cloud(vec![pt(10.0, 10.0, Semantic::Leaf), pt(60.0, 10.0, Semantic::Leaf)], Rect::from_size(70.0, 50.0));
        let plots = tile(&c, 50.0).unwrap();
        assert_eq!(plots.len(), 2);
        assert!(!plots[0].edge);
        assert!(plots[1].edge);
        assert_eq!(plots[1].bounds.width(), 20.0);
    }

    #[test]
    fn split_counts_rule() {
        let f = SplitFractions::default();
        assert_eq!(f.counts(25).unwrap(), (17, 4, 4));
        assert_eq!(f.counts(20).unwrap(), (14, 3, 3));
        assert_eq!(f.counts(3).unwrap(), (1, 1, 1));
        assert!(f.counts(2).is_err());
        let a = split(25, &f, 7, 0).unwrap();
        assert_eq!(a, split(25, &f, 7, 0).unwrap());
        assert_ne!(a, split(25, &f, 8, 0).unwrap());
        assert_eq!(a.iter().filter(|s| **s == SplitName::Train).count(), 17);
        let bad = SplitFractions { train: 0.5, val: 0.1, test: 0.1 };
        assert!(bad.counts(25).is_err());
    }

    #[test]
    fn density_arithmetic() {
        let bounds = Rect::from_size(50.0, 50.0);
        let plot = Plot {
            tile_index: [0, 0],
            bounds,
            cloud: PointCloud {
                points: vec![pt(1.0, 1.0, Semantic::Leaf); 2_500_000],
                extent: bounds,
                provenance: Provenance::Simulated,
            },
            edge: false,
        };
        let r = density_report([("s", "p", &plot)], 1000.0);
        assert_eq!(r.plots[0].density, 1000.0);
        assert!(!r.plots[0].below_threshold);
        assert_eq!(r.scenes[0].mean_density, 1000.0);
        let empty = density_report(std::iter::empty(), 1000.0);
        assert!(empty.plots.is_empty() && empty.scenes.is_empty());
    }

    fn box_asset() -> TreeAsset {
        let v: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let tris = vec![
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
            [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ];
        let (mesh, _) = TriMesh::from_parts(v, tris, vec![Material::Wood; 12]).unwrap();
        TreeAsset {
            asset_id: "box".into(),
            species: "box".into(),
            canopy_level: CanopyLevel::Sapling,
            mesh,
            base_height: 1.0,
            crown_radius: 0.5,
            trunk_radius: 0.5,
        }
    }

    #[test]
    fn nodal_box() {
        let lib = AssetLibrary::new(vec![box_asset()]).unwrap();
        let mut scene = ForestScene::empty(Rect::from_size(10.0, 10.0));
        scene.instances.push(TreeInstance {
            instance_id: 4,
            asset_id: "box".into(),
            position: Vec3::new(5.0, 5.0, 0.0),
            scale: 1.0,
            yaw: 0.4,
            age: 1,
            generator: 0,
        });
        let c = extract_nodal(&scene, &lib).unwrap();
        assert_eq!(c.points.len(), 8);
        assert!(c.points.iter().all(|p| p.instance_id == 4 && p.semantic == Semantic::Wood));
        assert_eq!(c.provenance, Provenance::Nodal);
        assert_eq!(extract_nodal(&scene, &lib).unwrap(), c);

        let empty = extract_nodal(&ForestScene::empty(Rect::from_size(10.0, 10.0)), &lib).unwrap();
        assert!(empty.points.is_empty());
    }

    #[test]
    fn dataset_manifest_round_trip() {
        let mut pts = Vec::new();
        for i in 0..25 {
            for k in 0..4 {
                pts.push(pt(5.0 + 50.0 * (i % 5) as f64 + k as f64, 5.0 + 50.0 * (i / 5) as f64, Semantic::Leaf));
            }
        }
        let c = cloud(pts, Rect::from_size(250.0, 250.0));
        let ds = build_dataset(&[("scene0".into(), c)], &DatasetOptions { split_seed: 7, ..Default::default() }).unwrap();
        assert_eq!(ds.manifest.name, "Sim_1_25");
        assert_eq!(ds.manifest.split_counts(), (17, 4, 4));
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(&ds, dir.path()).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back, ds.manifest);
        let p = load_plot(&path, &back.plots[3]).unwrap();
        assert_eq!(p.cloud.points, ds.plots[3].cloud.points);
    }
}
