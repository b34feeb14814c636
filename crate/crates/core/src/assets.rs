//! Tree geometry: triangle meshes with per-triangle wood/leaf material.
//!
//! Assets come from two places. [`load_asset`] reads the ASCII mesh
//! interchange format (`v`/`g`/`f` lines) together with a TOML descriptor
//! that maps mesh groups to materials. [`make_parametric_tree`] builds a
//! trunk cylinder plus a panelized cone or ellipsoid crown so the pipeline
//! runs without any external files.
//!
//! Every asset is normalized the same way: root at the origin, lowest vertex
//! at `z = 0`, trunk axis on `x = y = 0`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::labels::Semantic;
use crate::rng::{purpose, Stream};

/// Triangles with an area below this are treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Wood,
    Leaf,
}

impl Material {
    pub fn semantic(self) -> Semantic {
        match self {
            Material::Wood => Semantic::Wood,
            Material::Leaf => Semantic::Leaf,
        }
    }
}

impl FromStr for Material {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wood" => Ok(Material::Wood),
            "leaf" => Ok(Material::Leaf),
            other => Err(Error::Config(format!(
                "unknown material '{other}' (expected wood or leaf)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanopyLevel {
    Large,
    Medium,
    Sapling,
}

impl fmt::Display for CanopyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CanopyLevel::Large => "large",
            CanopyLevel::Medium => "medium",
            CanopyLevel::Sapling => "sapling",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub materials: Vec<Material>,
}

impl TriMesh {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn material_counts(&self) -> (usize, usize) {
        let wood = self
            .materials
            .iter()
            .filter(|m| **m == Material::Wood)
            .count();
        (wood, self.materials.len() - wood)
    }

    /// Builds a mesh, dropping degenerate triangles and unreferenced vertices.
    /// Returns the mesh and the number of triangles dropped.
    pub fn from_parts(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        materials: Vec<Material>,
    ) -> Result<(TriMesh, usize)> {
        if triangles.len() != materials.len() {
            return Err(Error::Validation(
                "every triangle needs exactly one material".into(),
            ));
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation(format!("non-finite vertex {v:?}")));
        }
        let n = vertices.len() as u32;
        let mut kept_tris = Vec::with_capacity(triangles.len());
        let mut kept_mats = Vec::with_capacity(triangles.len());
        let mut dropped = 0;
        for (tri, mat) in triangles.into_iter().zip(materials) {
            if let Some(bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!(
                    "triangle index {bad} out of range ({n} vertices)"
                )));
            }
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() < DEGENERATE_AREA {
                dropped += 1;
                continue;
            }
            kept_tris.push(tri);
            kept_mats.push(mat);
        }

        let mut remap = vec![u32::MAX; vertices.len()];
        let mut compact = Vec::new();
        for tri in kept_tris.iter_mut() {
            for i in tri.iter_mut() {
                let slot = &mut remap[*i as usize];
                if *slot == u32::MAX {
                    *slot = compact.len() as u32;
                    compact.push(vertices[*i as usize]);
                }
                *i = *slot;
            }
        }
        if kept_tris.is_empty() {
            return Err(Error::Validation("mesh has no non-degenerate triangles".into()));
        }
        Ok((
            TriMesh {
                vertices: compact,
                triangles: kept_tris,
                materials: kept_mats,
            },
            dropped,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeAsset {
    pub asset_id: String,
    pub species: String,
    pub canopy_level: CanopyLevel,
    pub mesh: TriMesh,
    pub base_height: f64,
    pub crown_radius: f64,
    pub trunk_radius: f64,
}

/// Fallback for radii that measure as zero on thin test geometry.
const MIN_RADIUS: f64 = 0.01;

impl TreeAsset {
    /// Normalizes `mesh` and measures height and radii from its geometry.
    ///
    /// The trunk axis is the xy centroid of the wood vertices in the lowest
    /// tenth of the tree (all vertices in that band when there is no wood).
    pub fn from_mesh(
        asset_id: impl Into<String>,
        species: impl Into<String>,
        canopy_level: CanopyLevel,
        mut mesh: TriMesh,
    ) -> Result<TreeAsset> {
        let min_z = mesh
            .vertices
            .iter()
            .map(|v| v.z)
            .fold(f64::INFINITY, f64::min);
        let max_z = mesh
            .vertices
            .iter()
            .map(|v| v.z)
            .fold(f64::NEG_INFINITY, f64::max);
        let height = max_z - min_z;
        if !(height > 0.0) {
            return Err(Error::Validation("asset mesh has zero height".into()));
        }

        let mut wood_vertex = vec![false; mesh.vertices.len()];
        for (tri, mat) in mesh.triangles.iter().zip(&mesh.materials) {
            if *mat == Material::Wood {
                for &i in tri {
                    wood_vertex[i as usize] = true;
                }
            }
        }
        let band_top = min_z + 0.1 * height;
        let band: Vec<usize> = (0..mesh.vertices.len())
            .filter(|&i| mesh.vertices[i].z <= band_top)
            .collect();
        let wood_band: Vec<usize> = band.iter().copied().filter(|&i| wood_vertex[i]).collect();
        let axis_set = if wood_band.is_empty() { &band } else { &wood_band };
        let (sx, sy) = axis_set.iter().fold((0.0, 0.0), |(sx, sy), &i| {
            (sx + mesh.vertices[i].x, sy + mesh.vertices[i].y)
        });
        let k = axis_set.len() as f64;
        let shift = Vec3::new(sx / k, sy / k, min_z);
        for v in mesh.vertices.iter_mut() {
            *v -= shift;
            // Keep the root plane exact.
            if v.z.abs() < 1e-12 {
                v.z = 0.0;
            }
        }

        let radial = |i: usize| mesh.vertices[i].xy().norm();
        let trunk_radius = axis_set
            .iter()
            .map(|&i| radial(i))
            .fold(0.0, f64::max)
            .max(MIN_RADIUS);
        let crown_radius = (0..mesh.vertices.len())
            .map(radial)
            .fold(0.0, f64::max)
            .max(MIN_RADIUS);

        Ok(TreeAsset {
            asset_id: asset_id.into(),
            species: species.into(),
            canopy_level,
            base_height: height,
            crown_radius,
            trunk_radius,
            mesh,
        })
    }
}

/// Sidecar descriptor for a mesh file.
///
/// ```toml
/// asset_id = "ash_large"
/// species = "ash"
/// canopy_level = "large"
///
/// [materials]
/// Trunk = "wood"
/// LeafCards = "leaf"
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetDescriptor {
    pub asset_id: String,
    pub species: String,
    pub canopy_level: CanopyLevel,
    #[serde(default)]
    pub materials: BTreeMap<String, Material>,
}

impl AssetDescriptor {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("asset descriptor: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Mesh text before material assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_group: Vec<usize>,
    pub groups: Vec<String>,
}

/// Faces that appear before any `g` line belong to this group.
pub const DEFAULT_GROUP: &str = "default";

/// Parses the line-oriented mesh format: `v x y z`, `g name`, `f i j k`
/// (1-based), `#` comments.
pub fn parse_mesh_text(text: &str, source_name: &str) -> Result<RawMesh> {
    let err = |line: usize, message: String| Error::ParseText {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut mesh = RawMesh::default();
    let mut current: Option<usize> = None;
    let mut group_index: HashMap<String, usize> = HashMap::new();
    let mut intern = |mesh: &mut RawMesh, name: &str| -> usize {
        *group_index.entry(name.to_string()).or_insert_with(|| {
            mesh.groups.push(name.to_string());
            mesh.groups.len() - 1
        })
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let tag = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();
        match tag {
            "v" => {
                if rest.len() != 3 {
                    return Err(err(lineno, format!("vertex needs 3 coordinates, got {}", rest.len())));
                }
                let mut c = [0.0; 3];
                for (slot, tok) in c.iter_mut().zip(&rest) {
                    *slot = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(lineno, format!("bad coordinate '{tok}'")))?;
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "g" => {
                if rest.is_empty() {
                    return Err(err(lineno, "group line without a name".into()));
                }
                current = Some(intern(&mut mesh, &rest.join(" ")));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(lineno, format!("face needs 3 indices, got {}", rest.len())));
                }
                let mut idx = [0u32; 3];
                for (slot, tok) in idx.iter_mut().zip(&rest) {
                    let i: u32 = tok
                        .parse()
                        .map_err(|_| err(lineno, format!("bad face index '{tok}'")))?;
                    if i == 0 || i as usize > mesh.vertices.len() {
                        return Err(err(
                            lineno,
                            format!("face index {i} out of range (1..={})", mesh.vertices.len()),
                        ));
                    }
                    *slot = i - 1;
                }
                let g = match current {
                    Some(g) => g,
                    None => {
                        let g = intern(&mut mesh, DEFAULT_GROUP);
                        current = Some(g);
                        g
                    }
                };
                mesh.faces.push(idx);
                mesh.face_group.push(g);
            }
            other => return Err(err(lineno, format!("unknown record '{other}'"))),
        }
    }
    Ok(mesh)
}

/// A loaded asset plus load diagnostics.
#[derive(Clone, Debug)]
pub struct LoadedAsset {
    pub asset: TreeAsset,
    pub degenerate_dropped: usize,
}

/// Builds an asset from mesh text and its descriptor.
pub fn asset_from_text(text: &str, source_name: &str, meta: &AssetDescriptor) -> Result<LoadedAsset> {
    let raw = parse_mesh_text(text, source_name)?;
    let mut group_material = Vec::with_capacity(raw.groups.len());
    for (gi, name) in raw.groups.iter().enumerate() {
        let used = raw.face_group.iter().any(|&g| g == gi);
        match meta.materials.get(name) {
            Some(m) => group_material.push(*m),
            None if used => {
                return Err(Error::Config(format!(
                    "{source_name}: mesh group '{name}' has no material mapping"
                )))
            }
            None => group_material.push(Material::Wood),
        }
    }
    let materials = raw.face_group.iter().map(|&g| group_material[g]).collect();
    let (mesh, dropped) = TriMesh::from_parts(raw.vertices, raw.faces, materials)?;
    if dropped > 0 {
        log::warn!("{source_name}: dropped {dropped} degenerate triangle(s)");
    }
    let asset = TreeAsset::from_mesh(&meta.asset_id, &meta.species, meta.canopy_level, mesh)?;
    Ok(LoadedAsset {
        asset,
        degenerate_dropped: dropped,
    })
}

pub fn load_asset(path: &Path, meta: &AssetDescriptor) -> Result<LoadedAsset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    asset_from_text(&text, &path.display().to_string(), meta)
}

/// Writes a mesh in the interchange format, one group per material.
pub fn write_mesh_text(mesh: &TriMesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for (name, mat) in [("wood", Material::Wood), ("leaf", Material::Leaf)] {
        let faces: Vec<_> = mesh
            .triangles
            .iter()
            .zip(&mesh.materials)
            .filter(|(_, m)| **m == mat)
            .collect();
        if faces.is_empty() {
            continue;
        }
        let _ = writeln!(out, "g {name}");
        for ([a, b, c], _) in faces {
            let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrownShape {
    Cone,
    Ellipsoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricTreeSpec {
    pub species: String,
    pub canopy_level: CanopyLevel,
    pub height: f64,
    pub crown_shape: CrownShape,
    pub crown_radius: f64,
    pub crown_base_fraction: f64,
    pub leaf_panel_count: u32,
    pub rng_seed: u64,
}

const TRUNK_SEGMENTS: usize = 12;
/// Panel rows stop short of the crown apex/poles so no panel collapses.
const CROWN_POLE_MARGIN: f64 = 0.04;
/// Leaf panels are pulled toward the crown center by up to this fraction.
const PANEL_JITTER: f64 = 0.15;
/// Linear fraction of its shell cell each leaf panel covers.
const PANEL_FILL: f64 = 0.1;

impl ParametricTreeSpec {
    pub fn trunk_radius(&self) -> f64 {
        (0.015 * self.height).max(0.03)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.height.is_finite()
            && self.height > 0.0
            && self.crown_radius.is_finite()
            && self.crown_radius > 0.0
            && self.crown_base_fraction > 0.0
            && self.crown_base_fraction < 1.0;
        if !ok {
            return Err(Error::Validation(format!(
                "parametric tree needs height > 0, crown_radius > 0 and 0 < crown_base_fraction < 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Generates a tree: closed wood cylinder from the ground to `height`, plus
/// `leaf_panel_count` leaf quads on a cone or ellipsoid crown shell.
pub fn make_parametric_tree(asset_id: &str, spec: &ParametricTreeSpec) -> Result<TreeAsset> {
    spec.validate()?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut materials = Vec::new();

    let r = spec.trunk_radius();
    let h = spec.height;
    for z in [0.0, h] {
        for s in 0..TRUNK_SEGMENTS {
            let a = std::f64::consts::TAU * s as f64 / TRUNK_SEGMENTS as f64;
            vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
        }
    }
    let bottom_center = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, 0.0));
    let top_center = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, h));
    let n = TRUNK_SEGMENTS as u32;
    for s in 0..n {
        let s1 = (s + 1) % n;
        triangles.push([s, s1, n + s1]);
        triangles.push([s, n + s1, n + s]);
        triangles.push([bottom_center, s1, s]);
        triangles.push([top_center, n + s, n + s1]);
    }
    materials.resize(triangles.len(), Material::Wood);

    let count = spec.leaf_panel_count as usize;
    if count > 0 {
        let mut jitter = Stream::new(spec.rng_seed, &[purpose::PANEL_JITTER]);
        let crown_base = spec.crown_base_fraction * h;
        let rows = ((count as f64 / 2.0).sqrt().round() as usize).clamp(1, count);
        for row in 0..rows {
            let per_row = count / rows + usize::from(row < count % rows);
            let v0 = CROWN_POLE_MARGIN + (1.0 - 2.0 * CROWN_POLE_MARGIN) * row as f64 / rows as f64;
            let v1 = CROWN_POLE_MARGIN
                + (1.0 - 2.0 * CROWN_POLE_MARGIN) * (row + 1) as f64 / rows as f64;
            for col in 0..per_row {
                let u0 = col as f64 / per_row as f64;
                let u1 = (col + 1) as f64 / per_row as f64;
                let (pu0, pu1) = inset(u0, u1);
                let (pv0, pv1) = inset(v0, v1);
                let base = vertices.len() as u32;
                let shrink = 1.0 - PANEL_JITTER * jitter.next_f64();
                for (u, v) in [(pu0, pv0), (pu1, pv0), (pu1, pv1), (pu0, pv1)] {
                    vertices.push(crown_point(spec, crown_base, u, v, shrink));
                }
                triangles.push([base, base + 1, base + 2]);
                triangles.push([base, base + 2, base + 3]);
                materials.push(Material::Leaf);
                materials.push(Material::Leaf);
            }
        }
    }

    let (mesh, dropped) = TriMesh::from_parts(vertices, triangles, materials)?;
    debug_assert_eq!(dropped, 0);
    Ok(TreeAsset {
        asset_id: asset_id.to_string(),
        species: spec.species.clone(),
        canopy_level: spec.canopy_level,
        mesh,
        base_height: h,
        crown_radius: spec.crown_radius,
        trunk_radius: r,
    })
}

fn inset(a: f64, b: f64) -> (f64, f64) {
    let pad = 0.5 * (1.0 - PANEL_FILL) * (b - a);
    (a + pad, b - pad)
}

/// Point on the crown surface at azimuth fraction `u` and height fraction
/// `v` (0 at the crown base, 1 at the apex), pulled toward the crown axis
/// (cone) or center (ellipsoid) by `shrink`.
fn crown_point(spec: &ParametricTreeSpec, crown_base: f64, u: f64, v: f64, shrink: f64) -> Vec3 {
    let phi = std::f64::consts::TAU * u;
    let depth = spec.height - crown_base;
    match spec.crown_shape {
        CrownShape::Cone => {
            let radius = spec.crown_radius * (1.0 - v) * shrink;
            Vec3::new(radius * phi.cos(), radius * phi.sin(), crown_base + v * depth)
        }
        CrownShape::Ellipsoid => {
            let center_z = crown_base + 0.5 * depth;
            let theta = std::f64::consts::PI * (1.0 - v);
            let (st, ct) = theta.sin_cos();
            Vec3::new(
                shrink * spec.crown_radius * st * phi.cos(),
                shrink * spec.crown_radius * st * phi.sin(),
                center_z + shrink * 0.5 * depth * ct,
            )
        }
    }
}

/// Assets indexed by id and by `(species, canopy_level)`.
#[derive(Clone, Debug, Default)]
pub struct AssetLibrary {
    assets: Vec<TreeAsset>,
    by_id: HashMap<String, usize>,
}

impl AssetLibrary {
    pub fn new(assets: Vec<TreeAsset>) -> Result<Self> {
        let mut lib = AssetLibrary::default();
        for a in assets {
            lib.insert(a)?;
        }
        Ok(lib)
    }

    pub fn insert(&mut self, asset: TreeAsset) -> Result<()> {
        if self.by_id.contains_key(&asset.asset_id) {
            return Err(Error::Config(format!(
                "duplicate asset id '{}'",
                asset.asset_id
            )));
        }
        self.by_id.insert(asset.asset_id.clone(), self.assets.len());
        self.assets.push(asset);
        Ok(())
    }

    pub fn get(&self, asset_id: &str) -> Option<&TreeAsset> {
        self.by_id.get(asset_id).map(|&i| &self.assets[i])
    }

    pub fn require(&self, asset_id: &str) -> Result<&TreeAsset> {
        self.get(asset_id)
            .ok_or_else(|| Error::Config(format!("unknown asset id '{asset_id}'")))
    }

    pub fn by_class(&self, species: &str, level: CanopyLevel) -> Vec<&TreeAsset> {
        self.assets
            .iter()
            .filter(|a| a.species == species && a.canopy_level == level)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TreeAsset> {
        self.assets.iter()
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(groups: &[(&str, Material)]) -> AssetDescriptor {
        AssetDescriptor {
            asset_id: "t".into(),
            species: "oak".into(),
            canopy_level: CanopyLevel::Medium,
            materials: groups.iter().map(|(g, m)| (g.to_string(), *m)).collect(),
        }
    }

    fn spec(shape: CrownShape, height: f64, radius: f64, base: f64, panels: u32) -> ParametricTreeSpec {
        ParametricTreeSpec {
            species: "test".into(),
            canopy_level: CanopyLevel::Large,
            height,
            crown_shape: shape,
            crown_radius: radius,
            crown_base_fraction: base,
            leaf_panel_count: panels,
            rng_seed: 11,
        }
    }

    #[test]
    fn wedge_reads_height_from_bounding_box() {
        let text = "g Trunk\nv 0 0 2\nv 1 0 2\nv 0 0 7\nv 1 0 7\nf 1 2 3\nf 2 4 3\n";
        let loaded = asset_from_text(text, "wedge", &meta(&[("Trunk", Material::Wood)])).unwrap();
        let a = loaded.asset;
        assert_eq!(a.base_height, 5.0);
        assert_eq!(a.mesh.material_counts(), (2, 0));
        let min_z = a.mesh.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        assert_eq!(min_z, 0.0);
        assert_eq!(loaded.degenerate_dropped, 0);
    }

    #[test]
    fn degenerate_triangle_dropped_with_count() {
        let mut text = String::from("g Trunk\n");
        for i in 0..=100 {
            text.push_str(&format!("v {} 0 {}\nv {} 1 {}\n", i, i % 3, i, i % 3));
        }
        let mut faces = 0;
        for i in 0..99 {
            let a = 2 * i + 1;
            text.push_str(&format!("f {} {} {}\n", a, a + 1, a + 2));
            faces += 1;
        }
        // Collinear triangle.
        text.push_str("f 1 1 2\n");
        faces += 1;
        assert_eq!(faces, 100);
        let loaded = asset_from_text(&text, "many", &meta(&[("Trunk", Material::Wood)])).unwrap();
        assert_eq!(loaded.asset.mesh.triangles.len(), 99);
        assert_eq!(loaded.degenerate_dropped, 1);
    }

    #[test]
    fn unmapped_group_names_the_group() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 0 1\ng LeafCards\nf 1 2 3\n";
        let err = asset_from_text(text, "m", &meta(&[("Trunk", Material::Wood)])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("LeafCards"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_mesh_text("v 0 0 0\nv 1 x 0\n", "bad").unwrap_err();
        assert!(matches!(err, Error::ParseText { line: 2, .. }), "{err}");
        let err = parse_mesh_text("v 0 0 0\nf 1 2 3\n", "bad").unwrap_err();
        assert!(matches!(err, Error::ParseText { line: 2, .. }), "{err}");
        let err = parse_mesh_text("q 1\n", "bad").unwrap_err();
        assert!(matches!(err, Error::ParseText { line: 1, .. }));
    }

    #[test]
    fn load_centers_on_trunk_axis() {
        let text = "g Trunk\nv 10 10 3\nv 12 10 3\nv 11 12 3\nv 11 11 9\nf 1 2 4\nf 2 3 4\nf 3 1 4\n";
        let a = asset_from_text(text, "m", &meta(&[("Trunk", Material::Wood)]))
            .unwrap()
            .asset;
        let (sx, sy) = a
            .mesh
            .vertices
            .iter()
            .filter(|v| v.z == 0.0)
            .fold((0.0, 0.0), |(x, y), v| (x + v.x, y + v.y));
        assert!(sx.abs() < 1e-12 && sy.abs() < 1e-12);
        assert!(a.trunk_radius > 0.0 && a.crown_radius > 0.0);
    }

    #[test]
    fn zero_panel_tree_is_wood_only() {
        let a = make_parametric_tree("t", &spec(CrownShape::Cone, 20.0, 4.0, 0.4, 0)).unwrap();
        assert_eq!(a.base_height, 20.0);
        let (wood, leaf) = a.mesh.material_counts();
        assert_eq!(leaf, 0);
        assert_eq!(wood, a.mesh.triangles.len());
        let max_z = a.mesh.vertices.iter().map(|v| v.z).fold(0.0, f64::max);
        assert_eq!(max_z, 20.0);
    }

    #[test]
    fn parametric_tree_is_deterministic() {
        let s = spec(CrownShape::Cone, 20.0, 4.0, 0.4, 300);
        let a = make_parametric_tree("t", &s).unwrap();
        let b = make_parametric_tree("t", &s).unwrap();
        let bits = |m: &TriMesh| -> Vec<u64> {
            m.vertices
                .iter()
                .flat_map(|v| [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()])
                .collect()
        };
        assert_eq!(bits(&a.mesh), bits(&b.mesh));
        assert_eq!(a.mesh.triangles, b.mesh.triangles);
        let mut other = s.clone();
        other.rng_seed += 1;
        let c = make_parametric_tree("t", &other).unwrap();
        assert_ne!(bits(&a.mesh), bits(&c.mesh));
    }

    #[test]
    fn ellipsoid_leaves_inside_analytic_ellipsoid() {
        let a = make_parametric_tree("t", &spec(CrownShape::Ellipsoid, 10.0, 3.0, 0.5, 250)).unwrap();
        let mut leaf_vertices = std::collections::BTreeSet::new();
        for (tri, m) in a.mesh.triangles.iter().zip(&a.mesh.materials) {
            if *m == Material::Leaf {
                leaf_vertices.extend(tri.iter().copied());
            }
        }
        assert!(!leaf_vertices.is_empty());
        for i in leaf_vertices {
            let v = a.mesh.vertices[i as usize];
            let q = (v.x / 3.0).powi(2) + (v.y / 3.0).powi(2) + ((v.z - 7.5) / 2.5).powi(2);
            assert!(q <= 1.0 + 1e-6, "vertex {v:?} outside ellipsoid (q = {q})");
        }
    }

    #[test]
    fn panel_count_is_exact() {
        for panels in [1, 7, 50, 333] {
            let a = make_parametric_tree("t", &spec(CrownShape::Ellipsoid, 12.0, 3.0, 0.3, panels)).unwrap();
            let (_, leaf) = a.mesh.material_counts();
            assert_eq!(leaf, 2 * panels as usize);
        }
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(make_parametric_tree("t", &spec(CrownShape::Cone, 0.0, 4.0, 0.4, 0)).is_err());
        assert!(make_parametric_tree("t", &spec(CrownShape::Cone, 10.0, -1.0, 0.4, 0)).is_err());
        assert!(make_parametric_tree("t", &spec(CrownShape::Cone, 10.0, 1.0, 1.0, 0)).is_err());
    }

    #[test]
    fn library_rejects_duplicates() {
        let a = make_parametric_tree("x", &spec(CrownShape::Cone, 5.0, 1.0, 0.4, 0)).unwrap();
        assert!(AssetLibrary::new(vec![a.clone(), a.clone()]).is_err());
        let lib = AssetLibrary::new(vec![a]).unwrap();
        assert_eq!(lib.by_class("test", CanopyLevel::Large).len(), 1);
        assert!(lib.require("missing").is_err());
    }

    #[test]
    fn mesh_text_round_trips_geometry() {
        let a = make_parametric_tree("t", &spec(CrownShape::Cone, 8.0, 2.0, 0.3, 20)).unwrap();
        let text = write_mesh_text(&a.mesh);
        let m = meta(&[("wood", Material::Wood), ("leaf", Material::Leaf)]);
        let b = asset_from_text(&text, "rt", &m).unwrap().asset;
        assert_eq!(a.mesh.triangles.len(), b.mesh.triangles.len());
        assert_eq!(a.mesh.material_counts(), b.mesh.material_counts());
        assert!((a.base_height - b.base_height).abs() < 1e-9);
    }
}
