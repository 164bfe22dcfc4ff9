//! Channel-inversion precoding and the shared transmit gain `alpha`.

use num_complex::Complex64;

use crate::csi::ChannelEstimate;
use crate::error::{dim, Error, Result};
use crate::grid::ResourceGrid;

/// Peak transmit power of a UE, 23 dBm.
pub const DEFAULT_PEAK_POWER_W: f64 = 0.199_526_231_496_887_9;

/// How the inversion floor is chosen for deep fades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FloorRule {
    /// Fraction of the median estimated gain magnitude of each UE.
    RelativeMedian(f64),
    Absolute(f64),
}

impl FloorRule {
    pub fn resolve(&self, est: &ChannelEstimate) -> f64 {
        match *self {
            FloorRule::Absolute(f) => f,
            FloorRule::RelativeMedian(r) => r * median_gain(est),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecodeConfig {
    pub peak_power: f64,
    pub floor: FloorRule,
    pub margin: f64,
}

impl Default for PrecodeConfig {
    fn default() -> Self {
        Self {
            peak_power: DEFAULT_PEAK_POWER_W,
            floor: FloorRule::RelativeMedian(0.05),
            margin: 0.9,
        }
    }
}

impl PrecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_power.is_finite() && self.peak_power > 0.0) {
            return Err(Error::Config("peak power must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::Config("margin must lie in (0, 1]".into()));
        }
        let f = match self.floor {
            FloorRule::RelativeMedian(f) | FloorRule::Absolute(f) => f,
        };
        if !(f.is_finite() && f >= 0.0) {
            return Err(Error::Config("inversion floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Power-control state shared by all UEs in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecodeParams {
    pub alpha: f64,
    pub peak_power: f64,
    pub inversion_floor: f64,
    pub margin: f64,
}

/// Median of `|H|` over the estimated grid.
pub fn median_gain(est: &ChannelEstimate) -> f64 {
    let mut mags: Vec<f64> = est.full_grid.as_slice().iter().map(|z| z.norm()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

/// Divisor used for one resource element: the estimate itself, or the
/// estimate's phase at magnitude `floor` when `|h| < floor`.
pub fn clamped_divisor(h: Complex64, floor: f64) -> Result<Complex64> {
    let mag = h.norm();
    if mag >= floor && mag > 0.0 {
        Ok(h)
    } else if mag > 0.0 {
        Ok(h / mag * floor)
    } else if floor > 0.0 {
        Ok(Complex64::new(floor, 0.0))
    } else {
        Err(Error::Precondition(
            "cannot invert a zero channel estimate without a floor".into(),
        ))
    }
}

/// `W / H_hat` elementwise on every slot grid.
pub fn channel_invert(grids: &[ResourceGrid], est: &ChannelEstimate, floor: f64) -> Result<Vec<ResourceGrid>> {
    let h = &est.full_grid;
    grids
        .iter()
        .map(|g| {
            if g.dims() != h.dims() {
                return Err(dim(format!("{:?}", h.dims()), format!("{:?}", g.dims())));
            }
            let mut out = g.clone();
            for (w, hv) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
                *w /= clamped_divisor(*hv, floor)?;
            }
            Ok(out)
        })
        .collect()
}

/// `alpha = margin * min_i sqrt(P / max |precoded_i|^2)`.
///
/// UEs whose precoded signal is identically zero impose no constraint.
pub fn compute_alpha(precoded: &[Vec<ResourceGrid>], peak_power: f64, margin: f64) -> Result<f64> {
    if precoded.is_empty() {
        return Err(Error::Precondition("no precoded signals".into()));
    }
    let bound = precoded
        .iter()
        .map(|grids| grids.iter().map(ResourceGrid::max_power).fold(0.0, f64::max))
        .filter(|&peak| peak > 0.0)
        .map(|peak| (peak_power / peak).sqrt())
        .fold(f64::INFINITY, f64::min);
    if bound.is_infinite() {
        return Err(Error::Precondition("all precoded signals are zero".into()));
    }
    Ok(margin * bound)
}
