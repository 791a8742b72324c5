//! Imaging grid geometry and push description.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default imaging grid: 250 x 600 px over 20 x 33 mm (depth x lateral).
pub const DEFAULT_DEPTH_PX: usize = 250;
pub const DEFAULT_LATERAL_PX: usize = 600;
pub const DEFAULT_DEPTH_EXTENT: f64 = 0.020;
pub const DEFAULT_LATERAL_EXTENT: f64 = 0.033;

/// Transducer element pitch of the linear array (m).
pub const ELEMENT_PITCH: f64 = 0.29e-3;
/// Number of contiguous elements used for the push.
pub const PUSH_ELEMENTS: usize = 11;

/// Pixel grid over the imaging plane.
///
/// Pixel `(d, l)` sits at `(d * depth_pitch, l * lateral_pitch)` relative to
/// the top-left corner of the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeom {
    pub depth_px: usize,
    pub lateral_px: usize,
    pub depth_extent: f64,
    pub lateral_extent: f64,
}

impl Default for GridGeom {
    fn default() -> Self {
        Self {
            depth_px: DEFAULT_DEPTH_PX,
            lateral_px: DEFAULT_LATERAL_PX,
            depth_extent: DEFAULT_DEPTH_EXTENT,
            lateral_extent: DEFAULT_LATERAL_EXTENT,
        }
    }
}

impl GridGeom {
    pub fn new(depth_px: usize, lateral_px: usize, depth_extent: f64, lateral_extent: f64) -> Result<Self> {
        let g = Self {
            depth_px,
            lateral_px,
            depth_extent,
            lateral_extent,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the default pixel pitch but a different pixel count.
    pub fn with_default_pitch(depth_px: usize, lateral_px: usize) -> Result<Self> {
        let d = Self::default();
        Self::new(
            depth_px,
            lateral_px,
            d.depth_pitch() * depth_px as f64,
            d.lateral_pitch() * lateral_px as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_px == 0 || self.lateral_px == 0 {
            return Err(Error::invalid("geom", "pixel counts must be >= 1"));
        }
        if !(self.depth_extent > 0.0 && self.depth_extent.is_finite())
            || !(self.lateral_extent > 0.0 && self.lateral_extent.is_finite())
        {
            return Err(Error::invalid("geom", "extents must be finite and > 0"));
        }
        Ok(())
    }

    pub fn depth_pitch(&self) -> f64 {
        self.depth_extent / self.depth_px as f64
    }

    pub fn lateral_pitch(&self) -> f64 {
        self.lateral_extent / self.lateral_px as f64
    }

    pub fn pixels(&self) -> usize {
        self.depth_px * self.lateral_px
    }

    #[inline]
    pub fn index(&self, px: Pixel) -> usize {
        px.depth * self.lateral_px + px.lateral
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.depth < self.depth_px && px.lateral < self.lateral_px
    }

    pub fn ensure_same(&self, other: &GridGeom) -> Result<()> {
        if self != other {
            return Err(Error::GeometryMismatch(format!(
                "{}x{} px / {:.4}x{:.4} m vs {}x{} px / {:.4}x{:.4} m",
                self.depth_px,
                self.lateral_px,
                self.depth_extent,
                self.lateral_extent,
                other.depth_px,
                other.lateral_px,
                other.depth_extent,
                other.lateral_extent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub depth: usize,
    pub lateral: usize,
}

impl Pixel {
    pub const fn new(depth: usize, lateral: usize) -> Self {
        Self { depth, lateral }
    }
}

/// Rectangular pixel region `[depth_start, depth_start + depth_len) x
/// [lateral_start, lateral_start + lateral_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub depth_start: usize,
    pub lateral_start: usize,
    pub depth_len: usize,
    pub lateral_len: usize,
}

/// Training region size: 121 x 181 px (about 10 x 10 mm at default pitch).
pub const ROI_DEPTH_PX: usize = 121;
pub const ROI_LATERAL_PX: usize = 181;
/// Rows skipped below the transducer by the default region.
pub const ROI_DEPTH_OFFSET: usize = 20;

impl Roi {
    pub fn full(geom: &GridGeom) -> Self {
        Self {
            depth_start: 0,
            lateral_start: 0,
            depth_len: geom.depth_px,
            lateral_len: geom.lateral_px,
        }
    }

    /// Laterally centered region of the given size starting `depth_start`
    /// rows down, clipped to the grid.
    pub fn centered(geom: &GridGeom, depth_start: usize, depth_len: usize, lateral_len: usize) -> Self {
        let depth_len = depth_len.min(geom.depth_px);
        let depth_start = depth_start.min(geom.depth_px - depth_len);
        let lateral_len = lateral_len.min(geom.lateral_px);
        Self {
            depth_start,
            lateral_start: (geom.lateral_px - lateral_len) / 2,
            depth_len,
            lateral_len,
        }
    }

    /// The default 121 x 181 px region.
    pub fn default_for(geom: &GridGeom) -> Self {
        Self::centered(geom, ROI_DEPTH_OFFSET, ROI_DEPTH_PX, ROI_LATERAL_PX)
    }

    pub fn contains(&self, px: Pixel) -> bool {
        (self.depth_start..self.depth_start + self.depth_len).contains(&px.depth)
            && (self.lateral_start..self.lateral_start + self.lateral_len).contains(&px.lateral)
    }

    pub fn validate(&self, geom: &GridGeom) -> Result<()> {
        if self.depth_len == 0
            || self.lateral_len == 0
            || self.depth_start + self.depth_len > geom.depth_px
            || self.lateral_start + self.lateral_len > geom.lateral_px
        {
            return Err(Error::invalid("roi", format!("{self:?} does not fit the grid")));
        }
        Ok(())
    }

    /// Row-major mask over the grid.
    pub fn mask(&self, geom: &GridGeom) -> Vec<bool> {
        (0..geom.depth_px)
            .flat_map(|d| (0..geom.lateral_px).map(move |l| Pixel::new(d, l)))
            .map(|px| self.contains(px))
            .collect()
    }

    /// Centers whose `window x window` support lies inside the region.
    pub fn window_centers(&self, window: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        if window > self.depth_len || window > self.lateral_len {
            return Err(Error::WindowExceedsRoi {
                window,
                roi_depth: self.depth_len,
                roi_lateral: self.lateral_len,
            });
        }
        let h = window / 2;
        Ok((
            self.depth_start + h..self.depth_start + self.depth_len - h,
            self.lateral_start + h..self.lateral_start + self.lateral_len - h,
        ))
    }
}

/// Location and timing of the acoustic push that launches the shear wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushDescriptor {
    /// Lateral pixel of the center element.
    pub lateral_center_px: usize,
    /// Lateral half-width of the pushing aperture in pixels.
    pub element_halfwidth_px: usize,
    /// Depth reached by the push (m).
    pub depth_extent: f64,
    /// Delay between push and the first recorded frame (s).
    pub start_delay: f64,
}

impl PushDescriptor {
    /// Push at `lateral_center_px` with the default 11-element aperture,
    /// 10 mm depth and 0.13 ms recording delay.
    pub fn at(geom: &GridGeom, lateral_center_px: usize) -> Self {
        let half_aperture = 0.5 * PUSH_ELEMENTS as f64 * ELEMENT_PITCH;
        Self {
            lateral_center_px,
            element_halfwidth_px: (half_aperture / geom.lateral_pitch()).round().max(1.0) as usize,
            depth_extent: 0.010,
            start_delay: 0.13e-3,
        }
    }

    /// Push centered on the field of view.
    pub fn centered(geom: &GridGeom) -> Self {
        Self::at(geom, geom.lateral_px / 2)
    }

    pub fn validate(&self, geom: &GridGeom) -> Result<()> {
        if self.lateral_center_px >= geom.lateral_px {
            return Err(Error::invalid(
                "push.lateral_center_px",
                format!(
                    "{} outside grid of {} lateral px",
                    self.lateral_center_px, geom.lateral_px
                ),
            ));
        }
        if self.element_halfwidth_px == 0 {
            return Err(Error::invalid("push.element_halfwidth_px", "must be >= 1"));
        }
        if !(self.depth_extent > 0.0 && self.depth_extent.is_finite()) {
            return Err(Error::invalid("push.depth_extent", "must be finite and > 0"));
        }
        if !(self.start_delay >= 0.0 && self.start_delay.is_finite()) {
            return Err(Error::invalid("push.start_delay", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_pitch() {
        let g = GridGeom::default();
        assert!((g.depth_pitch() - 0.08e-3).abs() < 1e-15);
        assert!((g.lateral_pitch() - 0.055e-3).abs() < 1e-15);
        assert_eq!(g.pixels(), 150_000);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(GridGeom::new(0, 10, 1.0, 1.0).is_err());
        assert!(GridGeom::new(10, 10, 0.0, 1.0).is_err());
        assert!(GridGeom::new(10, 10, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn default_push_mirrors_eleven_elements() {
        let g = GridGeom::default();
        let p = PushDescriptor::centered(&g);
        assert_eq!(p.lateral_center_px, 300);
        // 5.5 elements * 0.29 mm = 1.595 mm at 0.055 mm/px
        assert_eq!(p.element_halfwidth_px, 29);
        assert!(p.validate(&g).is_ok());
        let bad = PushDescriptor {
            lateral_center_px: 600,
            ..p
        };
        assert!(bad.validate(&g).is_err());
    }
    #[test]
    fn roi_default_and_centers() {
        let g = GridGeom::default();
        let r = Roi::default_for(&g);
        assert_eq!(
            (r.depth_start, r.lateral_start, r.depth_len, r.lateral_len),
            (20, 209, 121, 181)
        );
        assert!(r.validate(&g).is_ok());
        assert_eq!(r.mask(&g).iter().filter(|&&m| m).count(), 121 * 181);
        let (d, l) = r.window_centers(17).unwrap();
        assert_eq!((d.start, d.end, l.start, l.end), (28, 133, 217, 382));
        assert!(matches!(r.window_centers(123), Err(Error::WindowExceedsRoi { .. })));
        let small = GridGeom::with_default_pitch(60, 100).unwrap();
        let r = Roi::default_for(&small);
        assert_eq!(
            (r.depth_start, r.lateral_start, r.depth_len, r.lateral_len),
            (0, 0, 60, 100)
        );
    }
}
