//! Small geometric primitives shared across stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Relative slack used when snapping lattice coordinates to integers.
const SNAP_EPS: f64 = 1e-9;

/// `floor` that treats values within `1e-9` of an integer as that integer.
#[inline]
pub fn snap_floor(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.floor()
    }
}

/// `ceil` that treats values within `1e-9` of an integer as that integer.
#[inline]
pub fn snap_ceil(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.ceil()
    }
}

/// Axis-aligned rectangle in ground coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn from_size(width: f64, height: f64) -> Self {
        Rect::new(0.0, 0.0, width, height)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        ]
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::Validation(format!(
                "extent must have positive area, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Smallest rectangle containing every `(x, y)`; `None` when empty.
    pub fn bounding<I: IntoIterator<Item = [f64; 2]>>(points: I) -> Option<Rect> {
        let mut it = points.into_iter();
        let [x0, y0] = it.next()?;
        let mut r = Rect::new(x0, y0, x0, y0);
        for [x, y] in it {
            r.min_x = r.min_x.min(x);
            r.min_y = r.min_y.min(y);
            r.max_x = r.max_x.max(x);
            r.max_y = r.max_y.max(y);
        }
        Some(r)
    }
}

/// Regular grid of terrain heights, bilinearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `heights[j * nx + i]` sits at `origin + (i, j) * cell_size`.
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.cell_size <= 0.0 {
            return Err(Error::Validation(
                "heightfield needs at least 2x2 samples and a positive cell size".into(),
            ));
        }
        if self.heights.len() != self.nx * self.ny {
            return Err(Error::Validation(format!(
                "heightfield expects {} samples, got {}",
                self.nx * self.ny,
                self.heights.len()
            )));
        }
        if self.heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Validation("heightfield contains non-finite heights".into()));
        }
        Ok(())
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin[1]) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let h = |i: usize, j: usize| self.heights[j * self.nx + i];
        let a = h(i, j) * (1.0 - tx) + h(i + 1, j) * tx;
        let b = h(i, j + 1) * (1.0 - tx) + h(i + 1, j + 1) * tx;
        a * (1.0 - ty) + b * ty
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum Terrain {
    /// The plane `z = 0`.
    #[default]
    Flat,
    Heightfield(Heightfield),
}

impl Terrain {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        match self {
            Terrain::Flat => 0.0,
            Terrain::Heightfield(h) => h.height_at(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapping() {
        assert_eq!(snap_floor(9.999_999_999_99), 10.0);
        assert_eq!(snap_floor(9.99), 9.0);
        assert_eq!(snap_ceil(100.000_000_000_01), 100.0);
        assert_eq!(snap_ceil(100.01), 101.0);
        assert_eq!(snap_floor(-0.5), -1.0);
    }

    #[test]
    fn rect_validation() {
        assert!(Rect::from_size(10.0, 10.0).validate().is_ok());
        assert!(Rect::from_size(0.0, 10.0).validate().is_err());
        assert!(Rect::new(0.0, 0.0, f64::NAN, 1.0).validate().is_err());
    }

    #[test]
    fn heightfield_bilinear() {
        let hf = Heightfield {
            origin: [0.0, 0.0],
            cell_size: 10.0,
            nx: 2,
            ny: 2,
            heights: vec![0.0, 10.0, 0.0, 10.0],
        };
        assert!((hf.height_at(5.0, 3.0) - 5.0).abs() < 1e-12);
        assert!((hf.height_at(-5.0, 3.0) - 0.0).abs() < 1e-12);
        assert!((hf.height_at(20.0, 3.0) - 10.0).abs() < 1e-12);
    }
}
