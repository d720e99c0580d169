use crate::error::{Error, Result};

/// Rectangular grid segmentation with row-major segment ids; cells on the
/// bottom and right edges may be smaller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    pub height: usize,
    pub width: usize,
    pub cell_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Segment id of every pixel, row-major.
    pub ids: Vec<usize>,
}

impl SegmentGrid {
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn segment_of(&self, y: usize, x: usize) -> usize {
        self.ids[y * self.width + x]
    }
}

pub fn segment_grid(height: usize, width: usize, cell_size: usize) -> Result<SegmentGrid> {
    if cell_size == 0 || cell_size > height.max(width) {
        return Err(Error::invalid(format!(
            "cell size {cell_size} outside [1, {}]",
            height.max(width)
        )));
    }
    let rows = height.div_ceil(cell_size);
    let cols = width.div_ceil(cell_size);
    let ids = (0..height)
        .flat_map(|y| (0..width).map(move |x| (y / cell_size) * cols + x / cell_size))
        .collect();
    Ok(SegmentGrid {
        height,
        width,
        cell_size,
        rows,
        cols,
        ids,
    })
}
