//! Regular 2-D cell grid shared by the world, the topic model and the analyses.

use serde::{Deserialize, Serialize};

/// Linear cell index, row-major (`iy * nx + ix`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub usize);

/// Axis-aligned grid anchored at the origin. Cell `(ix, iy)` covers
/// `[ix*s, (ix+1)*s) x [iy*s, (iy+1)*s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, cell_size: f64) -> Self {
        Self { nx, ny, cell_size }
    }

    /// Grid covering a `width x height` rectangle; partial cells at the far
    /// edges are rounded up so the whole rectangle is covered.
    pub fn covering(width: f64, height: f64, cell_size: f64) -> Self {
        let nx = ((width / cell_size) - 1e-9).ceil().max(1.0) as usize;
        let ny = ((height / cell_size) - 1e-9).ceil().max(1.0) as usize;
        Self::new(nx, ny, cell_size)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.cell_size
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.cell_size
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width() && y < self.height()
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellId> {
        if !(x.is_finite() && y.is_finite()) || !self.contains(x, y) {
            return None;
        }
        let ix = ((x / self.cell_size) as usize).min(self.nx - 1);
        let iy = ((y / self.cell_size) as usize).min(self.ny - 1);
        Some(self.id(ix, iy))
    }

    pub fn id(&self, ix: usize, iy: usize) -> CellId {
        CellId(iy * self.nx + ix)
    }

    pub fn coords(&self, cell: CellId) -> (usize, usize) {
        (cell.0 % self.nx, cell.0 / self.nx)
    }

    pub fn center(&self, cell: CellId) -> (f64, f64) {
        let (ix, iy) = self.coords(cell);
        (
            (ix as f64 + 0.5) * self.cell_size,
            (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// The cell itself followed by its in-grid 4-neighbours.
    pub fn neighborhood(&self, cell: CellId) -> impl Iterator<Item = CellId> + '_ {
        let (ix, iy) = self.coords(cell);
        let (ix, iy) = (ix as isize, iy as isize);
        [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (jx, jy) = (ix + dx, iy + dy);
                (jx >= 0 && jy >= 0 && (jx as usize) < self.nx && (jy as usize) < self.ny)
                    .then(|| self.id(jx as usize, jy as usize))
            })
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> {
        (0..self.len()).map(CellId)
    }
}
