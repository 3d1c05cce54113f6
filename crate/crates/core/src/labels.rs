//! Dual pseudo-labels built from RECIST annotations.
//!
//! For a slice with several lesions, Q and C are the unions of the
//! per-lesion masks and the regions are derived from those unions.

use serde::Serialize;

use crate::error::Result;
use crate::geometry::{self, Circle, Ellipse, Quadrilateral, RecistPair};
use crate::grid::BinaryMask;
use crate::raster::{self, Regions};

/// Masks for one lesion.
#[derive(Clone, Debug)]
pub struct LesionMasks {
    pub quad: Quadrilateral,
    pub circle: Circle,
    pub q: BinaryMask,
    pub c: BinaryMask,
}

impl LesionMasks {
    pub fn from_recist(r: &RecistPair, width: usize, height: usize) -> Result<Self> {
        let quad = geometry::quad_from_recist(r)?;
        let circle = geometry::min_enclosing_circle(&r.endpoints())?;
        Ok(Self {
            q: raster::fill_quad(&quad, width, height),
            c: raster::fill_disc(&circle, width, height),
            quad,
            circle,
        })
    }
}

/// Training targets for one slice.
#[derive(Clone, Debug)]
pub struct SliceLabels {
    /// Union of quadrilaterals, clamped to `c`.
    pub q: BinaryMask,
    /// Union of enclosing discs.
    pub c: BinaryMask,
    pub ambiguous: BinaryMask,
    pub agreement: BinaryMask,
    /// Pixels of the raw Q union that fell outside C.
    pub clamped: usize,
}

/// Pixel counts written alongside generated labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub q: usize,
    pub c: usize,
    pub ambiguous: usize,
    pub agreement: usize,
}

impl SliceLabels {
    pub fn from_recists(recists: &[RecistPair], width: usize, height: usize) -> Result<Self> {
        let lesions = recists
            .iter()
            .map(|r| LesionMasks::from_recist(r, width, height))
            .collect::<Result<Vec<_>>>()?;
        Self::from_lesions(&lesions, width, height)
    }

    pub fn from_lesions(lesions: &[LesionMasks], width: usize, height: usize) -> Result<Self> {
        let mut q = BinaryMask::filled(width, height, false);
        let mut c = BinaryMask::filled(width, height, false);
        for l in lesions {
            q = q.or(&l.q)?;
            c = c.or(&l.c)?;
        }
        let Regions {
            ambiguous,
            agreement,
            q_clamped,
            clamped,
        } = raster::region_algebra(&q, &c)?;
        Ok(Self {
            q: q_clamped,
            c,
            ambiguous,
            agreement,
            clamped,
        })
    }

    pub fn counts(&self) -> LabelCounts {
        LabelCounts {
            q: self.q.count(),
            c: self.c.count(),
            ambiguous: self.ambiguous.count(),
            agreement: self.agreement.count(),
        }
    }

    /// Same labels under a horizontal and/or vertical mirror.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Self {
        let f = |m: &BinaryMask| {
            let m = if horizontal { m.flip_horizontal() } else { m.clone() };
            if vertical {
                m.flip_vertical()
            } else {
                m
            }
        };
        Self {
            q: f(&self.q),
            c: f(&self.c),
            ambiguous: f(&self.ambiguous),
            agreement: f(&self.agreement),
            clamped: self.clamped,
        }
    }
}

/// Union of the ellipses fitted to each RECIST pair (comparison baseline).
pub fn ellipse_union(recists: &[RecistPair], width: usize, height: usize) -> Result<BinaryMask> {
    let mut out = BinaryMask::filled(width, height, false);
    for r in recists {
        let e: Ellipse = geometry::ellipse_from_recist(r)?;
        out = out.or(&raster::fill_ellipse(&e, width, height))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    #[test]
    fn cross_on_small_canvas() {
        let r = RecistPair::new(
            Point2::new(0., 0.),
            Point2::new(4., 0.),
            Point2::new(2., -2.),
            Point2::new(2., 2.),
        );
        let labels = SliceLabels::from_recists(&[r], 8, 8).unwrap();
        let counts = labels.counts();
        assert_eq!(counts.q, 6);
        assert_eq!(counts.ambiguous + counts.agreement, 64);
        assert_eq!(counts.c - counts.q, counts.ambiguous);
        assert_eq!(labels.clamped, 0);
    }

    #[test]
    fn no_lesions_gives_empty_labels() {
        let labels = SliceLabels::from_recists(&[], 5, 5).unwrap();
        assert_eq!(labels.counts(), LabelCounts { q: 0, c: 0, ambiguous: 0, agreement: 25 });
    }
}
