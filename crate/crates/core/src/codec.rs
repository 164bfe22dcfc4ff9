//! Model-update codec: I/Q peak scaling, pairing of real weights into
//! complex symbols, and row-major placement into slot grids.
//!
//! Parameter `2k` (0-based) rides on the in-phase part of symbol `k` and
//! parameter `2k + 1` on the quadrature part. The same fill order is used at
//! both ends of the link, so the receiver inverts it exactly.

use num_complex::Complex64;

use crate::error::{dim, Error, Result};
use crate::grid::{GridConfig, ResourceGrid};

/// Flat real parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Peak magnitudes used to normalize the in-phase and quadrature streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqScale {
    pub i: f64,
    pub q: f64,
}

impl IqScale {
    pub const UNIT: IqScale = IqScale { i: 1.0, q: 1.0 };

    /// Raw per-stream peaks of `values` (zero when a stream is empty or
    /// all zero).
    pub fn peaks(values: &[f64]) -> Self {
        let mut s = IqScale { i: 0.0, q: 0.0 };
        for (idx, v) in values.iter().enumerate() {
            if idx % 2 == 0 {
                s.i = s.i.max(v.abs());
            } else {
                s.q = s.q.max(v.abs());
            }
        }
        s
    }

    /// Replaces zero peaks by 1 so the scale can divide.
    pub fn guarded(self) -> Self {
        IqScale {
            i: if self.i > 0.0 { self.i } else { 1.0 },
            q: if self.q > 0.0 { self.q } else { 1.0 },
        }
    }

    /// Elementwise maximum over reported peaks, guarded. This is the scale
    /// every UE uses in common-scale mode.
    pub fn common<'a>(peaks: impl IntoIterator<Item = &'a IqScale>) -> Self {
        peaks
            .into_iter()
            .fold(IqScale { i: 0.0, q: 0.0 }, |acc, p| IqScale {
                i: acc.i.max(p.i),
                q: acc.q.max(p.q),
            })
            .guarded()
    }
}

/// Peak-normalized update with the scales needed to undo the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledUpdate {
    pub values: Vec<f64>,
    pub scale: IqScale,
}

pub fn scale_updates(delta: &WeightVector, shared: Option<IqScale>) -> Result<ScaledUpdate> {
    if delta.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("update contains non-finite values".into()));
    }
    let scale = match shared {
        Some(s) => {
            if !(s.i > 0.0 && s.q > 0.0 && s.i.is_finite() && s.q.is_finite()) {
                return Err(Error::Config("shared scale must be positive".into()));
            }
            s
        }
        None => IqScale::peaks(&delta.0).guarded(),
    };
    let values = delta
        .0
        .iter()
        .enumerate()
        .map(|(idx, v)| if idx % 2 == 0 { v / scale.i } else { v / scale.q })
        .collect();
    Ok(ScaledUpdate { values, scale })
}

pub fn unscale(update: &ScaledUpdate) -> WeightVector {
    apply_scale(&update.values, update.scale)
}

fn apply_scale(values: &[f64], scale: IqScale) -> WeightVector {
    WeightVector(
        values
            .iter()
            .enumerate()
            .map(|(idx, v)| if idx % 2 == 0 { v * scale.i } else { v * scale.q })
            .collect(),
    )
}

/// Pairs consecutive reals into `u[2k] + j u[2k+1]`; an odd tail is padded
/// with a zero quadrature part.
pub fn pack_complex(u: &[f64]) -> Vec<Complex64> {
    u.chunks(2)
        .map(|pair| Complex64::new(pair[0], pair.get(1).copied().unwrap_or(0.0)))
        .collect()
}

/// Inverse of [`pack_complex`] for `p` original values.
pub fn unpack_complex(symbols: &[Complex64], p: usize) -> Result<Vec<f64>> {
    if symbols.len() * 2 < p {
        return Err(dim(p.div_ceil(2), symbols.len()));
    }
    Ok(symbols.iter().flat_map(|z| [z.re, z.im]).take(p).collect())
}

/// Number of slots needed for `P` parameters and the count of zero-filled
/// parameter positions in the last slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotPlan {
    pub slots: usize,
    pub pad: usize,
}

impl SlotPlan {
    /// Parameters represented by the plan.
    pub fn params(&self, cfg: &GridConfig) -> usize {
        2 * cfg.res_per_slot() * self.slots - self.pad
    }
}

/// `rho = ceil(P / (2 T N_sc))`.
pub fn slot_plan(p: usize, cfg: &GridConfig) -> Result<SlotPlan> {
    if p == 0 {
        return Err(Error::Precondition("model must have at least one parameter".into()));
    }
    let per_slot = 2 * cfg.res_per_slot();
    let slots = p.div_ceil(per_slot);
    Ok(SlotPlan {
        slots,
        pad: per_slot * slots - p,
    })
}

/// Fills slot grids row by row (symbol, then subcarrier), zero-padding
/// the tail.
pub fn map_to_grids(symbols: &[Complex64], plan: &SlotPlan, cfg: &GridConfig) -> Result<Vec<ResourceGrid>> {
    let per_slot = cfg.res_per_slot();
    if symbols.len() > per_slot * plan.slots {
        return Err(Error::Bounds(format!(
            "{} symbols exceed the capacity of {} slots",
            symbols.len(),
            plan.slots
        )));
    }
    let mut grids = Vec::with_capacity(plan.slots);
    for s in 0..plan.slots {
        let mut g = ResourceGrid::zeros(cfg.symbols_per_slot, cfg.subcarriers);
        let lo = (s * per_slot).min(symbols.len());
        let hi = ((s + 1) * per_slot).min(symbols.len());
        g.as_mut_slice()[..hi - lo].copy_from_slice(&symbols[lo..hi]);
        grids.push(g);
    }
    Ok(grids)
}

/// Reads the symbols back in fill order, drops the padding, de-interleaves
/// real and imaginary parts and multiplies by `scale`.
pub fn unmap_from_grids(
    grids: &[ResourceGrid],
    plan: &SlotPlan,
    scale: IqScale,
    cfg: &GridConfig,
) -> Result<WeightVector> {
    if grids.len() != plan.slots {
        return Err(dim(format!("{} slots", plan.slots), grids.len()));
    }
    let p = plan.params(cfg);
    let mut symbols = Vec::with_capacity(p.div_ceil(2));
    for g in grids {
        g.check_config(cfg)?;
        symbols.extend_from_slice(g.as_slice());
    }
    symbols.truncate(p.div_ceil(2));
    Ok(apply_scale(&unpack_complex(&symbols, p)?, scale))
}

/// Full transmit-side encoding: scale, pack and map.
pub fn encode(delta: &WeightVector, scale: IqScale, cfg: &GridConfig) -> Result<(Vec<ResourceGrid>, SlotPlan)> {
    let plan = slot_plan(delta.len(), cfg)?;
    let scaled = scale_updates(delta, Some(scale))?;
    let grids = map_to_grids(&pack_complex(&scaled.values), &plan, cfg)?;
    Ok((grids, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, standard_normal};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_cfg() -> GridConfig {
        GridConfig {
            subcarriers: 8,
            symbols_per_slot: 3,
            fft_size: 8,
            cp_len: 2,
            ..Default::default()
        }
    }

    #[test]
    fn peak_scaling() {
        let d = WeightVector(vec![0.5, -0.2, -0.25, 0.1]);
        let s = scale_updates(&d, None).unwrap();
        assert_eq!(s.scale, IqScale { i: 0.5, q: 0.2 });
        assert_eq!(s.values[0], 1.0);
        assert_eq!(s.values[1], -1.0);
        let zero = WeightVector(vec![0.0; 5]);
        let s = scale_updates(&zero, None).unwrap();
        assert_eq!(s.scale, IqScale::UNIT);
        assert_eq!(s.values, zero.0);
        assert!(scale_updates(&d, Some(IqScale { i: 0.0, q: 1.0 })).is_err());
        assert!(scale_updates(&WeightVector(vec![f64::NAN]), None).is_err());
    }

    #[test]
    fn scale_round_trip() {
        let mut rng = rng_from(1);
        let d = WeightVector((0..1001).map(|_| standard_normal(&mut rng) * 1e-3).collect());
        let back = unscale(&scale_updates(&d, None).unwrap());
        for (a, b) in back.0.iter().zip(&d.0) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn common_scale_takes_elementwise_max() {
        let s = IqScale::common(&[IqScale { i: 0.1, q: 0.0 }, IqScale { i: 0.05, q: 0.0 }]);
        assert_eq!(s, IqScale { i: 0.1, q: 1.0 });
    }

    #[test]
    fn packing() {
        assert_eq!(pack_complex(&[1.0, 2.0, 3.0, 4.0]), vec![c(1.0, 2.0), c(3.0, 4.0)]);
        assert_eq!(pack_complex(&[5.0]), vec![c(5.0, 0.0)]);
        assert_eq!(pack_complex(&vec![0.0; 71666]).len(), 35833);
        assert_eq!(unpack_complex(&[c(5.0, 0.0)], 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn slot_plans() {
        let cfg = GridConfig::default();
        assert_eq!(slot_plan(71666, &cfg).unwrap(), SlotPlan { slots: 10, pad: 14 });
        assert_eq!(slot_plan(7168, &cfg).unwrap(), SlotPlan { slots: 1, pad: 0 });
        assert_eq!(slot_plan(2, &cfg).unwrap(), SlotPlan { slots: 1, pad: 7166 });
        assert!(slot_plan(0, &cfg).is_err());
    }

    #[test]
    fn reference_size_fills_nine_slots_and_part_of_the_tenth() {
        let cfg = GridConfig::default();
        let w: Vec<f64> = (0..71666).map(|i| 1.0 + i as f64).collect();
        let plan = slot_plan(w.len(), &cfg).unwrap();
        let grids = map_to_grids(&pack_complex(&w), &plan, &cfg).unwrap();
        for g in &grids[..9] {
            assert!(g.as_slice().iter().all(|z| z.re != 0.0 && z.im != 0.0));
        }
        let last = grids[9].as_slice();
        assert!(last[..3577].iter().all(|z| z.re != 0.0));
        assert!(last[3577..].iter().all(|z| *z == c(0.0, 0.0)));
        assert_eq!(last.len() - 3577, 7);
    }

    #[test]
    fn map_errors_and_zero_case() {
        let cfg = small_cfg();
        let plan = slot_plan(10, &cfg).unwrap();
        assert!(map_to_grids(&vec![c(1.0, 0.0); 25], &plan, &cfg).is_err());
        let g = map_to_grids(&[c(0.0, 0.0); 5], &plan, &cfg).unwrap();
        assert!(g.iter().all(|g| g.energy() == 0.0));
        assert!(unmap_from_grids(&[], &plan, IqScale::UNIT, &cfg).is_err());
    }

    #[test]
    fn round_trip_reference_sizes() {
        let cfg = GridConfig::default();
        let mut rng = rng_from(7);
        for p in [1usize, 2, 7168, 71666] {
            let w = WeightVector((0..p).map(|_| standard_normal(&mut rng)).collect());
            let scale = IqScale::peaks(&w.0).guarded();
            let (grids, plan) = encode(&w, scale, &cfg).unwrap();
            let back = unmap_from_grids(&grids, &plan, scale, &cfg).unwrap();
            for (a, b) in back.0.iter().zip(&w.0) {
                assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0), "P = {p}");
            }
            assert_eq!(back.len(), p);
        }
    }

    proptest! {
        #[test]
        fn map_unmap_is_bijective(values in prop::collection::vec(-1e3f64..1e3, 1..600)) {
            let cfg = small_cfg();
            let plan = slot_plan(values.len(), &cfg).unwrap();
            let grids = map_to_grids(&pack_complex(&values), &plan, &cfg).unwrap();
            let back = unmap_from_grids(&grids, &plan, IqScale::UNIT, &cfg).unwrap();
            prop_assert_eq!(back.0, values);
        }

        #[test]
        fn codec_is_linear_under_a_common_scale(
            pair in (1usize..200).prop_flat_map(|p| (
                prop::collection::vec(-1.0f64..1.0, p),
                prop::collection::vec(-1.0f64..1.0, p),
            )),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let (w1, w2) = pair;
            let cfg = small_cfg();
            let scale = IqScale { i: 0.7, q: 1.3 };
            let combo = WeightVector(w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect());
            let (g1, _) = encode(&WeightVector(w1), scale, &cfg).unwrap();
            let (g2, _) = encode(&WeightVector(w2), scale, &cfg).unwrap();
            let (gc, _) = encode(&combo, scale, &cfg).unwrap();
            for ((x, y), z) in g1.iter().zip(&g2).zip(&gc) {
                for ((u, v), w) in x.as_slice().iter().zip(y.as_slice()).zip(z.as_slice()) {
                    prop_assert!((u * a + v * b - w).norm() <= 1e-12);
                }
            }
        }

        #[test]
        fn scaled_values_stay_within_unit(values in prop::collection::vec(-1e6f64..1e6, 1..300)) {
            let s = scale_updates(&WeightVector(values), None).unwrap();
            prop_assert!(s.values.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
