use crate::error::{Error, Result};

/// Rectangular `height x width` pixel grid with a mask marking the imaging
/// region. In-mask pixels are enumerated in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    // row-major grid slot of the k-th in-mask pixel
    slots: Vec<usize>,
    // inverse of `slots`; usize::MAX for void pixels
    lookup: Vec<usize>,
}

const VOID: usize = usize::MAX;

impl PixelGrid {
    /// Builds a grid from a row-major mask.
    pub fn from_mask(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be non-empty, got {height}x{width}"
            )));
        }
        if mask.len() != height * width {
            return Err(Error::shape("PixelGrid::from_mask", height * width, mask.len()));
        }
        let mut slots = Vec::new();
        let mut lookup = vec![VOID; mask.len()];
        for (p, &inside) in mask.iter().enumerate() {
            if inside {
                lookup[p] = slots.len();
                slots.push(p);
            }
        }
        Ok(Self {
            height,
            width,
            mask,
            slots,
            lookup,
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::from_mask(height, width, vec![true; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of grid slots, `H·W`.
    #[inline]
    pub fn slot_count(&self) -> usize {
        self.height * self.width
    }

    /// Number of in-mask pixels `N`.
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.slots.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    /// Row-major grid slots of the in-mask pixels, in pixel-index order.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Pixel index of the grid slot, or `None` for a void slot.
    #[inline]
    pub fn pixel_at_slot(&self, slot: usize) -> Option<usize> {
        match self.lookup[slot] {
            VOID => None,
            k => Some(k),
        }
    }

    /// `(row, col)` of pixel `k`.
    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        let p = self.slots[k];
        (p / self.width, p % self.width)
    }
}

/// Disc inscribed in an `height x width` rectangle: a pixel is inside when
/// its center `(r + 0.5, c + 0.5)` lies within `min(H, W) / 2` of the grid
/// center.
pub fn build_circular_mask(height: usize, width: usize) -> Result<PixelGrid> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!(
            "circular mask needs at least 2x2 pixels, got {height}x{width}"
        )));
    }
    let cy = height as f64 / 2.0;
    let cx = width as f64 / 2.0;
    let radius = height.min(width) as f64 / 2.0;
    let mut mask = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let dy = r as f64 + 0.5 - cy;
            let dx = c as f64 + 0.5 - cx;
            mask.push(dx * dx + dy * dy <= radius * radius);
        }
    }
    PixelGrid::from_mask(height, width, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_is_full() {
        let g = build_circular_mask(2, 2).unwrap();
        assert_eq!(g.pixel_count(), 4);
        assert!(g.mask().iter().all(|&m| m));
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_circular_mask(1, 5).is_err());
        assert!(build_circular_mask(5, 1).is_err());
    }

    #[test]
    fn sixty_four_matches_enumeration() {
        // Brute-force count with integer arithmetic: (2r+1-64)^2 + (2c+1-64)^2 <= 64^2.
        let expected = (0..64i64)
            .flat_map(|r| (0..64i64).map(move |c| (r, c)))
            .filter(|&(r, c)| (2 * r + 1 - 64).pow(2) + (2 * c + 1 - 64).pow(2) <= 64 * 64)
            .count();
        let g = build_circular_mask(64, 64).unwrap();
        assert_eq!(g.pixel_count(), expected);
        assert_eq!(expected, 3228);
    }

    #[test]
    fn index_is_row_major_bijection() {
        let g = build_circular_mask(9, 7).unwrap();
        let mut prev = None;
        for k in 0..g.pixel_count() {
            let slot = g.slots()[k];
            assert_eq!(g.pixel_at_slot(slot), Some(k));
            let (r, c) = g.coords(k);
            assert!(g.contains(r, c));
            if let Some(p) = prev {
                assert!(slot > p);
            }
            prev = Some(slot);
        }
        let void = (0..g.slot_count()).filter(|&p| g.pixel_at_slot(p).is_none()).count();
        assert_eq!(void + g.pixel_count(), g.slot_count());
    }
}
