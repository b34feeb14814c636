//! Scene voxelization.
//!
//! Voxel `(i, j, k)` covers `[i*s, (i+1)*s) x [j*s, (j+1)*s) x [k*s, (k+1)*s)`
//! in world coordinates, so indices are global lattice coordinates and may
//! be negative. The ground layer is the voxel directly below the terrain
//! surface (`k = -1` on flat terrain), so pulses that reach the ground
//! return exactly at `z = 0`.
//!
//! Storage is sparse: tree voxels live in a hash map, the one-voxel-thick
//! ground layer in a dense per-column array, and a coarse brick bitmap lets
//! the ray walker skip empty space without touching either.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::assets::{AssetLibrary, Material, TreeAsset};
use crate::cloud_io::ByteCursor;
use crate::error::{Error, Result};
use crate::geom::{snap_ceil, snap_floor, Vec3};
use crate::labels::Semantic;
use crate::procgen::{ForestScene, TreeInstance};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.1;

/// Brick edge length in voxels (log2).
const BRICK_SHIFT: u32 = 3;
/// Slack on the box half-width in the overlap test, in voxel units.
const OVERLAP_SLACK: f64 = 1e-9;
const NO_GROUND: i32 = i32::MIN;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelAttr {
    /// 0 means ground / no instance.
    pub instance_id: u32,
    pub semantic: Semantic,
    /// Probability that a pulse crossing the voxel returns from it.
    pub opacity: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpacityTable {
    pub ground: f32,
    pub wood: f32,
    pub leaf: f32,
}

impl Default for OpacityTable {
    fn default() -> Self {
        OpacityTable {
            ground: 1.0,
            wood: 1.0,
            leaf: 0.35,
        }
    }
}

impl OpacityTable {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ground", self.ground), ("wood", self.wood), ("leaf", self.leaf)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} opacity {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn for_material(&self, m: Material) -> f32 {
        match m {
            Material::Wood => self.wood,
            Material::Leaf => self.leaf,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VoxelGrid {
    voxel_size: f64,
    min: [i32; 3],
    dims: [u32; 3],
    /// Ground voxel `k` per column, `NO_GROUND` when absent.
    ground: Vec<i32>,
    ground_attr: VoxelAttr,
    cells: FxHashMap<[i32; 3], VoxelAttr>,
    brick_dims: [u32; 3],
    bricks: Vec<u64>,
}

impl VoxelGrid {
    /// Empty grid over `dims` voxels starting at lattice index `min`.
    pub fn new(voxel_size: f64, min: [i32; 3], dims: [u32; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::Validation(format!("voxel_size must be > 0, got {voxel_size}")));
        }
        let brick_dims = dims.map(|d| (d + (1 << BRICK_SHIFT) - 1) >> BRICK_SHIFT);
        let n_bricks = brick_dims.iter().map(|&d| d as usize).product::<usize>();
        Ok(VoxelGrid {
            voxel_size,
            min,
            dims,
            ground: vec![NO_GROUND; dims[0] as usize * dims[1] as usize],
            ground_attr: VoxelAttr {
                instance_id: 0,
                semantic: Semantic::Ground,
                opacity: 1.0,
            },
            cells: FxHashMap::default(),
            brick_dims,
            bricks: vec![0; n_bricks.div_ceil(64)],
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn min_index(&self) -> [i32; 3] {
        self.min
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    /// World position of the grid's minimum corner.
    pub fn origin(&self) -> Vec3 {
        Vec3::new(
            self.min[0] as f64 * self.voxel_size,
            self.min[1] as f64 * self.voxel_size,
            self.min[2] as f64 * self.voxel_size,
        )
    }

    /// World-space bounding box of the whole grid.
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        let lo = self.origin();
        let hi = lo + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size;
        (lo, hi)
    }

    #[inline]
    fn relative(&self, c: [i32; 3]) -> Option<[usize; 3]> {
        let mut rel = [0usize; 3];
        for a in 0..3 {
            let r = c[a] as i64 - self.min[a] as i64;
            if r < 0 || r >= self.dims[a] as i64 {
                return None;
            }
            rel[a] = r as usize;
        }
        Some(rel)
    }

    pub fn in_bounds(&self, c: [i32; 3]) -> bool {
        self.relative(c).is_some()
    }

    #[inline]
    fn brick_bit(&self, rel: [usize; 3]) -> usize {
        let b = rel.map(|r| r >> BRICK_SHIFT);
        (b[2] * self.brick_dims[1] as usize + b[1]) * self.brick_dims[0] as usize + b[0]
    }

    fn mark_brick(&mut self, rel: [usize; 3]) {
        let bit = self.brick_bit(rel);
        self.bricks[bit / 64] |= 1 << (bit % 64);
    }

    /// Inserts or replaces a non-ground voxel.
    pub fn set(&mut self, c: [i32; 3], attr: VoxelAttr) -> Result<()> {
        let rel = self
            .relative(c)
            .ok_or_else(|| Error::Validation(format!("voxel {c:?} outside grid")))?;
        self.mark_brick(rel);
        self.cells.insert(c, attr);
        Ok(())
    }

    /// Puts the ground voxel of column `(i, j)` at height index `k`.
    pub fn set_ground(&mut self, i: i32, j: i32, k: i32) -> Result<()> {
        let rel = self
            .relative([i, j, k])
            .ok_or_else(|| Error::Validation(format!("ground voxel {:?} outside grid", [i, j, k])))?;
        self.mark_brick(rel);
        self.ground[rel[1] * self.dims[0] as usize + rel[0]] = k;
        Ok(())
    }

    pub fn ground_attr(&self) -> VoxelAttr {
        self.ground_attr
    }

    pub fn set_ground_opacity(&mut self, opacity: f32) {
        self.ground_attr.opacity = opacity;
    }

    #[inline]
    pub fn get(&self, c: [i32; 3]) -> Option<VoxelAttr> {
        let rel = self.relative(c)?;
        let bit = self.brick_bit(rel);
        if self.bricks[bit / 64] & (1 << (bit % 64)) == 0 {
            return None;
        }
        if let Some(a) = self.cells.get(&c) {
            return Some(*a);
        }
        if self.ground[rel[1] * self.dims[0] as usize + rel[0]] == c[2] {
            return Some(self.ground_attr);
        }
        None
    }

    /// Occupied voxel count (ground included).
    pub fn len(&self) -> usize {
        let ground = self
            .ground_voxels()
            .filter(|c| !self.cells.contains_key(c))
            .count();
        self.cells.len() + ground
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ground_voxels(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        let nx = self.dims[0] as usize;
        self.ground.iter().enumerate().filter(|(_, &k)| k != NO_GROUND).map(move |(idx, &k)| {
            [self.min[0] + (idx % nx) as i32, self.min[1] + (idx / nx) as i32, k]
        })
    }

    /// Non-ground voxels in unspecified order.
    pub fn tree_cells(&self) -> impl Iterator<Item = (&[i32; 3], &VoxelAttr)> {
        self.cells.iter()
    }

    /// Every occupied voxel, sorted by `(x, y, z)`.
    pub fn sorted_cells(&self) -> Vec<([i32; 3], VoxelAttr)> {
        let mut out: Vec<([i32; 3], VoxelAttr)> = self.cells.iter().map(|(c, a)| (*c, *a)).collect();
        out.extend(
            self.ground_voxels()
                .filter(|c| !self.cells.contains_key(c))
                .map(|c| (c, self.ground_attr)),
        );
        out.sort_unstable_by_key(|(c, _)| *c);
        out
    }

    /// Index of the voxel containing `p`, using half-open cells.
    pub fn voxel_of(&self, p: &Vec3) -> [i32; 3] {
        [
            (p.x / self.voxel_size).floor() as i32,
            (p.y / self.voxel_size).floor() as i32,
            (p.z / self.voxel_size).floor() as i32,
        ]
    }

    /// World-space closed box of voxel `c`.
    pub fn voxel_bounds(&self, c: [i32; 3]) -> (Vec3, Vec3) {
        let s = self.voxel_size;
        let lo = Vec3::new(c[0] as f64 * s, c[1] as f64 * s, c[2] as f64 * s);
        (lo, lo + Vec3::new(s, s, s))
    }
}

/// World-space triangles of one placed instance: `R_yaw(v * scale) + position`.
pub fn transform_instance(asset: &TreeAsset, instance: &TreeInstance) -> Vec<([Vec3; 3], Material)> {
    let (sin, cos) = instance.yaw.sin_cos();
    let world: Vec<Vec3> = asset
        .mesh
        .vertices
        .iter()
        .map(|v| {
            let p = v * instance.scale;
            Vec3::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y, p.z) + instance.position
        })
        .collect();
    asset
        .mesh
        .triangles
        .iter()
        .zip(&asset.mesh.materials)
        .map(|(t, m)| (t.map(|i| world[i as usize]), *m))
        .collect()
}

/// Separating-axis triangle/box test (Akenine-Moller) for an axis-aligned
/// cube of half-width `half` centered at `center`.
pub fn tri_box_overlap(center: Vec3, half: f64, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];

    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half || hi < -half {
            return false;
        }
    }

    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let normal = edges[0].cross(&edges[1]);
    let r = half * (normal.x.abs() + normal.y.abs() + normal.z.abs());
    if normal.dot(&v[0]).abs() > r {
        return false;
    }

    let units = [Vec3::x(), Vec3::y(), Vec3::z()];
    for e in &edges {
        for u in &units {
            let axis = u.cross(e);
            let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
            let r = half * (axis.x.abs() + axis.y.abs() + axis.z.abs());
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

/// Calls `emit` for every voxel (lattice units) a triangle overlaps, with
/// x/y restricted to `[xy_min, xy_max)`.
pub fn rasterize_triangle(
    tri: &[Vec3; 3],
    voxel_size: f64,
    xy_min: [i32; 2],
    xy_max: [i32; 2],
    mut emit: impl FnMut([i32; 3]),
) {
    let lat = tri.map(|p| p / voxel_size);
    let mut lo = [0i32; 3];
    let mut hi = [0i32; 3];
    for a in 0..3 {
        let mn = lat[0][a].min(lat[1][a]).min(lat[2][a]);
        let mx = lat[0][a].max(lat[1][a]).max(lat[2][a]);
        lo[a] = snap_floor(mn) as i32;
        hi[a] = snap_floor(mx) as i32;
    }
    for a in 0..2 {
        lo[a] = lo[a].max(xy_min[a]);
        hi[a] = hi[a].min(xy_max[a] - 1);
    }
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let center = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5);
                if tri_box_overlap(center, 0.5 + OVERLAP_SLACK, &lat) {
                    emit([i, j, k]);
                }
            }
        }
    }
}

/// Per-voxel claim; the smallest claim wins.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Claim {
    /// 0 for wood, 1 for leaf.
    rank: u8,
    dist2: f64,
    instance_id: u32,
    opacity: f32,
}

impl Claim {
    fn beats(&self, other: &Claim) -> bool {
        (self.rank, self.instance_id) != (other.rank, other.instance_id)
            && self
                .rank
                .cmp(&other.rank)
                .then(self.dist2.total_cmp(&other.dist2))
                .then(self.instance_id.cmp(&other.instance_id))
                .is_lt()
    }
}

/// Rasterizes every instance of `scene` and lays the ground layer.
///
/// Conflicts within a voxel resolve wood over leaf, then the instance whose
/// triangle centroid is nearest the voxel center, then the smaller id. The
/// rule is a total order, so the result does not depend on scheduling.
pub fn voxelize_scene(
    scene: &ForestScene,
    library: &AssetLibrary,
    voxel_size: f64,
    opacity: &OpacityTable,
) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) {
        return Err(Error::Validation(format!("voxel_size must be > 0, got {voxel_size}")));
    }
    opacity.validate()?;
    scene.extent.validate()?;
    for inst in &scene.instances {
        library.require(&inst.asset_id)?;
    }

    let e = &scene.extent;
    let xy_min = [snap_floor(e.min_x / voxel_size) as i32, snap_floor(e.min_y / voxel_size) as i32];
    let xy_max = [snap_ceil(e.max_x / voxel_size) as i32, snap_ceil(e.max_y / voxel_size) as i32];

    let per_instance: Vec<Vec<([i32; 3], Claim)>> = scene
        .instances
        .par_iter()
        .map(|inst| {
            let asset = library.get(&inst.asset_id).expect("checked above");
            let mut local: FxHashMap<[i32; 3], Claim> = FxHashMap::default();
            for (tri, mat) in transform_instance(asset, inst) {
                let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
                let rank = match mat {
                    Material::Wood => 0,
                    Material::Leaf => 1,
                };
                rasterize_triangle(&tri, voxel_size, xy_min, xy_max, |c| {
                    let vc = Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * voxel_size;
                    let claim = Claim {
                        rank,
                        dist2: (vc - centroid).norm_squared(),
                        instance_id: inst.instance_id,
                        opacity: opacity.for_material(mat),
                    };
                    local
                        .entry(c)
                        .and_modify(|cur| {
                            if claim.rank < cur.rank || (claim.rank == cur.rank && claim.dist2 < cur.dist2) {
                                *cur = claim;
                            }
                        })
                        .or_insert(claim);
                });
            }
            let mut v: Vec<_> = local.into_iter().collect();
            v.sort_unstable_by_key(|(c, _)| *c);
            v
        })
        .collect();

    let mut merged: FxHashMap<[i32; 3], Claim> = FxHashMap::default();
    for claims in per_instance {
        for (c, claim) in claims {
            merged
                .entry(c)
                .and_modify(|cur| {
                    if claim.beats(cur) {
                        *cur = claim;
                    }
                })
                .or_insert(claim);
        }
    }

    let nx = (xy_max[0] - xy_min[0]) as usize;
    let ny = (xy_max[1] - xy_min[1]) as usize;
    let mut ground = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (xy_min[0] as f64 + i as f64 + 0.5) * voxel_size;
            let y = (xy_min[1] as f64 + j as f64 + 0.5) * voxel_size;
            let h = scene.terrain.height_at(x, y);
            ground.push(snap_ceil(h / voxel_size) as i32 - 1);
        }
    }
    let z_lo = merged
        .keys()
        .map(|c| c[2])
        .chain(ground.iter().copied())
        .min()
        .unwrap_or(0);
    let z_hi = merged
        .keys()
        .map(|c| c[2])
        .chain(ground.iter().copied())
        .max()
        .unwrap_or(0);

    let mut grid = VoxelGrid::new(
        voxel_size,
        [xy_min[0], xy_min[1], z_lo],
        [nx as u32, ny as u32, (z_hi - z_lo + 1) as u32],
    )?;
    grid.set_ground_opacity(opacity.ground);
    for (idx, &k) in ground.iter().enumerate() {
        grid.set_ground(xy_min[0] + (idx % nx) as i32, xy_min[1] + (idx / nx) as i32, k)?;
    }
    for (c, claim) in merged {
        grid.set(
            c,
            VoxelAttr {
                instance_id: claim.instance_id,
                semantic: if claim.rank == 0 { Semantic::Wood } else { Semantic::Leaf },
                opacity: claim.opacity,
            },
        )?;
    }
    Ok(grid)
}

const GRID_MAGIC: &[u8; 4] = b"SVXG";

/// Binary grid dump, little-endian: magic, voxel size, origin, dims, cell
/// count, then `{i32 x, y, z; u32 instance; u8 semantic; f32 opacity}` per
/// occupied voxel in `(x, y, z)` order.
pub fn write_grid<W: Write>(grid: &VoxelGrid, mut w: W) -> std::io::Result<()> {
    let cells = grid.sorted_cells();
    w.write_all(GRID_MAGIC)?;
    w.write_all(&grid.voxel_size.to_le_bytes())?;
    for v in grid.origin().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for d in grid.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(cells.len() as u64).to_le_bytes())?;
    for (c, a) in cells {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&a.instance_id.to_le_bytes())?;
        w.write_all(&[a.semantic.code()])?;
        w.write_all(&a.opacity.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_bytes(bytes: &[u8], source_name: &str) -> Result<VoxelGrid> {
    let mut cur = ByteCursor::new(bytes, source_name);
    let magic = cur.take(4)?;
    if magic != GRID_MAGIC {
        return Err(cur.error_at(0, "bad magic, expected SVXG"));
    }
    let voxel_size = cur.f64()?;
    let origin = [cur.f64()?, cur.f64()?, cur.f64()?];
    let dims = [cur.u32()?, cur.u32()?, cur.u32()?];
    let count = cur.u64()?;
    let min = origin.map(|o| (o / voxel_size).round() as i32);
    let mut grid = VoxelGrid::new(voxel_size, min, dims)?;
    let mut ground_opacity = None;
    for _ in 0..count {
        let at = cur.offset();
        let c = [cur.i32()?, cur.i32()?, cur.i32()?];
        let instance_id = cur.u32()?;
        let code = cur.u8()?;
        let opacity = cur.f32()?;
        let semantic = Semantic::from_code(code)
            .ok_or_else(|| cur.error_at(at, &format!("unknown semantic code {code}")))?;
        let attr = VoxelAttr {
            instance_id,
            semantic,
            opacity,
        };
        let placed = if semantic == Semantic::Ground && instance_id == 0 {
            ground_opacity.get_or_insert(opacity);
            grid.set_ground(c[0], c[1], c[2])
        } else {
            grid.set(c, attr)
        };
        placed.map_err(|_| cur.error_at(at, &format!("voxel {c:?} outside grid dims")))?;
    }
    if let Some(o) = ground_opacity {
        grid.set_ground_opacity(o);
    }
    cur.expect_end()?;
    Ok(grid)
}

pub fn save_grid(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_grid(grid, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_grid_bytes(&bytes, &path.display().to_string())
}
