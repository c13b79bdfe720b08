use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Placement of a row-major `height x width` grid in the world frame.
///
/// Rows index `y`, columns index `x`. A world point belongs to the cell
/// `floor((p - origin) / cell_size)`, so points on a shared edge fall into
/// the higher-index cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl GridGeometry {
    pub fn new(height: usize, width: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        let geom = Self {
            height,
            width,
            cell_size,
            origin,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Geometry("grid must have at least one cell".into()));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::Geometry(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::Geometry("origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of the cell containing `(x, y)`, or `None` outside the grid.
    #[inline]
    pub fn index_of(&self, x: f64, y: f64) -> Option<usize> {
        let col = ((x - self.origin[0]) / self.cell_size).floor();
        let row = ((y - self.origin[1]) / self.cell_size).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some(row as usize * self.width + col as usize)
        } else {
            None
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        self.index_of(x, y).map(|i| (i / self.width, i % self.width))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.index_of(x, y).is_some()
    }

    pub fn same_as(&self, other: &GridGeometry) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.cell_size == other.cell_size
            && self.origin == other.origin
    }

    pub fn ensure_same(&self, other: &GridGeometry) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "grid mismatch: {}x{} @ {} vs {}x{} @ {}",
                self.height, self.width, self.cell_size, other.height, other.width, other.cell_size
            )))
        }
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoolGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl BoolGrid {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}
