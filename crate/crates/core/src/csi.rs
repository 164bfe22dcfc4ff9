//! Least-squares channel estimation at pilot positions, interpolation over
//! the resource grid, and the NMSE figure of merit.

use num_complex::Complex64;

use crate::error::{dim, Error, Result};
use crate::grid::{GridConfig, ResourceGrid};

/// NMSE reported for an exact estimate.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Channel estimate for one UE: LS values at the pilots and the
/// interpolated `T x N_sc` grid used for precoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub pilot_estimates: Vec<Complex64>,
    pub full_grid: ResourceGrid,
    pub ue_id: usize,
}

/// `H[i] = Y[i] / X[i]`.
pub fn ls_estimate(received: &[Complex64], known: &[Complex64]) -> Result<Vec<Complex64>> {
    if received.len() != known.len() {
        return Err(dim(known.len(), received.len()));
    }
    received
        .iter()
        .zip(known)
        .map(|(y, x)| {
            if x.norm_sqr() == 0.0 {
                Err(Error::Precondition("pilot symbol with zero magnitude".into()))
            } else {
                Ok(y / x)
            }
        })
        .collect()
}

/// Linear interpolation of `values` sampled at sorted integer `positions`
/// onto `0..len`, extending the end segments linearly.
fn interp_line(positions: &[usize], values: &[Complex64], len: usize) -> Vec<Complex64> {
    if positions.len() == 1 {
        return vec![values[0]; len];
    }
    let mut out = Vec::with_capacity(len);
    let mut seg = 0;
    for x in 0..len {
        while seg + 2 < positions.len() && x > positions[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (positions[seg] as f64, positions[seg + 1] as f64);
        let t = (x as f64 - x0) / (x1 - x0);
        out.push(values[seg] * (1.0 - t) + values[seg + 1] * t);
    }
    out
}

/// Spreads pilot estimates at `(symbol, subcarrier)` positions over the
/// whole `T x N_sc` grid: linear across frequency within each pilot symbol,
/// then linear across time between pilot symbols, replicated beyond the
/// first and last pilot symbol.
pub fn interpolate(
    pilot_estimates: &[Complex64],
    pilot_positions: &[(usize, usize)],
    cfg: &GridConfig,
) -> Result<ResourceGrid> {
    if pilot_positions.is_empty() {
        return Err(Error::Precondition("no pilot positions".into()));
    }
    if pilot_positions.len() != pilot_estimates.len() {
        return Err(dim(pilot_positions.len(), pilot_estimates.len()));
    }
    let (t, n_sc) = (cfg.symbols_per_slot, cfg.subcarriers);
    if let Some(&(r, c)) = pilot_positions.iter().find(|(r, c)| *r >= t || *c >= n_sc) {
        return Err(Error::Bounds(format!("pilot at ({r}, {c}) outside {t}x{n_sc} grid")));
    }

    let mut by_symbol: Vec<(usize, Vec<(usize, Complex64)>)> = Vec::new();
    let mut order: Vec<usize> = (0..pilot_positions.len()).collect();
    order.sort_by_key(|&i| pilot_positions[i]);
    for i in order {
        let (r, c) = pilot_positions[i];
        match by_symbol.last_mut() {
            Some((row, pts)) if *row == r => {
                if pts.last().is_some_and(|(pc, _)| *pc == c) {
                    return Err(Error::Precondition(format!("duplicate pilot at ({r}, {c})")));
                }
                pts.push((c, pilot_estimates[i]));
            }
            _ => by_symbol.push((r, vec![(c, pilot_estimates[i])])),
        }
    }

    let rows: Vec<(usize, Vec<Complex64>)> = by_symbol
        .into_iter()
        .map(|(r, pts)| {
            let (pos, vals): (Vec<usize>, Vec<Complex64>) = pts.into_iter().unzip();
            (r, interp_line(&pos, &vals, n_sc))
        })
        .collect();

    let mut grid = ResourceGrid::zeros(t, n_sc);
    for m in 0..t {
        let after = rows.iter().position(|(r, _)| *r >= m);
        let row: Vec<Complex64> = match after {
            None => rows.last().unwrap().1.clone(),
            Some(0) => rows[0].1.clone(),
            Some(j) if rows[j].0 == m => rows[j].1.clone(),
            Some(j) => {
                let (r0, v0) = &rows[j - 1];
                let (r1, v1) = &rows[j];
                let w = (m - r0) as f64 / (r1 - r0) as f64;
                v0.iter().zip(v1).map(|(a, b)| a * (1.0 - w) + b * w).collect()
            }
        };
        grid.row_mut(m).copy_from_slice(&row);
    }
    Ok(grid)
}

/// LS estimate from one full pilot symbol, replicated over the slot.
pub fn estimate_from_pilot_symbol(
    received: &[Complex64],
    pilots: &[Complex64],
    cfg: &GridConfig,
    ue_id: usize,
) -> Result<ChannelEstimate> {
    let pilot_estimates = ls_estimate(received, pilots)?;
    let positions: Vec<(usize, usize)> = (0..cfg.subcarriers).map(|n| (0, n)).collect();
    let full_grid = interpolate(&pilot_estimates, &positions, cfg)?;
    Ok(ChannelEstimate {
        pilot_estimates,
        full_grid,
        ue_id,
    })
}

fn error_ratio(est: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(dim(truth.len(), est.len()));
    }
    let denom: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::Precondition("NMSE reference has zero norm".into()));
    }
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / denom)
}

fn to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// `10 log10(sum |est - truth|^2 / sum |truth|^2)`, floored at -300 dB.
pub fn nmse(est: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    Ok(to_db(error_ratio(est, truth)?))
}

pub fn nmse_grid(est: &ResourceGrid, truth: &ResourceGrid) -> Result<f64> {
    if est.dims() != truth.dims() {
        return Err(dim(format!("{:?}", truth.dims()), format!("{:?}", est.dims())));
    }
    nmse(est.as_slice(), truth.as_slice())
}

/// NMSE of real vectors, same convention as [`nmse`].
pub fn nmse_real(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(dim(truth.len(), est.len()));
    }
    let denom: f64 = truth.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::Precondition("NMSE reference has zero norm".into()));
    }
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(to_db(num / denom))
}

/// Dataset NMSE: the mean over samples of each sample's error ratio,
/// expressed in dB.
pub fn mean_nmse(samples: &[(&ResourceGrid, &ResourceGrid)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Precondition("no samples".into()));
    }
    let mut acc = 0.0;
    for (est, truth) in samples {
        if est.dims() != truth.dims() {
            return Err(dim(format!("{:?}", truth.dims()), format!("{:?}", est.dims())));
        }
        acc += error_ratio(est.as_slice(), truth.as_slice())?;
    }
    Ok(to_db(acc / samples.len() as f64))
}

/// Uniform mid-rise quantization of real and imaginary parts to `bits`
/// bits over the estimate's own peak range. Models a finite-precision
/// feedback link.
pub fn quantize_feedback(est: &ChannelEstimate, bits: u32) -> Result<ChannelEstimate> {
    if !(1..=30).contains(&bits) {
        return Err(Error::Config("feedback bits must be in 1..=30".into()));
    }
    let peak = est
        .full_grid
        .as_slice()
        .iter()
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(est.clone());
    }
    let levels = (1u64 << bits) as f64;
    let step = 2.0 * peak / levels;
    let q = |x: f64| {
        let idx = ((x + peak) / step).floor().clamp(0.0, levels - 1.0);
        -peak + (idx + 0.5) * step
    };
    let qz = |z: &Complex64| Complex64::new(q(z.re), q(z.im));
    let data = est.full_grid.as_slice().iter().map(qz).collect();
    let (r, c) = est.full_grid.dims();
    Ok(ChannelEstimate {
        pilot_estimates: est.pilot_estimates.iter().map(qz).collect(),
        full_grid: ResourceGrid::from_vec(r, c, data)?,
        ue_id: est.ue_id,
    })
}
