//! Model evaluation against the reference solver: percentage-error metrics
//! on absolute temperature, timing comparisons, image/CSV slice export, and
//! a deterministic family of block-pattern test power maps.

use crate::config::{
    tile_to_grid, BoundaryCondition, ChipConfig, Mesh, PowerMap, Surface, SurfaceField,
};
use crate::error::{Error, Result};
use crate::fdm::{self, TemperatureField};
use crate::numfmt::format_f64;
use crate::operator::{EncodingSpec, PackagedModel, Predictor};
use crate::tensor::Tensor;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

/// Mean and peak absolute percentage errors on absolute temperatures:
/// 100·mean(|pred − ref|/ref) and 100·max(|pred − ref|/ref). The reference
/// must be strictly positive (Kelvin values are).
pub fn mape_pape(pred: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != reference.len() {
        return Err(Error::Eval(format!(
            "prediction has {} points but the reference has {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Eval("cannot evaluate an empty field".into()));
    }
    let mut sum = 0.0;
    let mut peak: f64 = 0.0;
    for (i, (&p, &r)) in pred.iter().zip(reference).enumerate() {
        if !(r > 0.0) {
            return Err(Error::Eval(format!(
                "reference temperature at point {i} is {r}; percentage errors need positive \
                 absolute temperatures"
            )));
        }
        let e = (p - r).abs() / r;
        sum += e;
        peak = peak.max(e);
    }
    Ok((100.0 * sum / pred.len() as f64, 100.0 * peak))
}

/// Accuracy and single-shot timing of a model against the reference solver
/// on one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mape: f64,
    pub pape: f64,
    pub n_points: usize,
    pub pred_time_s: f64,
    pub oracle_time_s: f64,
    pub speedup: f64,
}

/// Mesh node coordinates in storage order (x fastest, then y, then z) —
/// the same order as [`TemperatureField::values`].
pub fn mesh_coords(mesh: &Mesh) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = mesh.counts;
    let mut pts = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                pts.push(mesh.node_coord(i, j, k));
            }
        }
    }
    pts
}

/// Reads the model's branch inputs out of a configuration, per its
/// encoding: the unit-power map grid, or the two z-face convection
/// coefficients.
pub fn branch_inputs_from_config(
    packaged: &PackagedModel,
    config: &ChipConfig,
) -> Result<Vec<Tensor>> {
    match &packaged.encoding {
        EncodingSpec::PowerMap2D { m, surface } => {
            let surface = Surface::from_key(surface)
                .ok_or_else(|| Error::Eval(format!("unknown surface '{surface}' in encoding")))?;
            let sp = config.surface_power(surface).ok_or_else(|| {
                Error::Eval(format!("config has no power map on {}", surface.key()))
            })?;
            if sp.grid.rows != *m || sp.grid.cols != *m {
                return Err(Error::Eval(format!(
                    "model expects a {m}×{m} power map, config has {}×{}",
                    sp.grid.cols, sp.grid.rows
                )));
            }
            packaged.encoding.encode_power_maps(std::slice::from_ref(&sp.grid))
        }
        EncodingSpec::HtcDual { .. } => {
            let h_of = |s: Surface| -> Result<f64> {
                match config.bc(s) {
                    BoundaryCondition::Convection { h: SurfaceField::Uniform(h), .. } => Ok(*h),
                    _ => Err(Error::Eval(format!(
                        "model expects uniform convection on {}, config disagrees",
                        s.key()
                    ))),
                }
            };
            packaged
                .encoding
                .encode_htc_pairs(&[(h_of(Surface::ZMax)?, h_of(Surface::ZMin)?)])
        }
    }
}

/// Full-mesh temperature prediction from a packaged model, in Kelvin.
pub fn predict_field(packaged: &PackagedModel, config: &ChipConfig) -> Result<TemperatureField> {
    let inputs = branch_inputs_from_config(packaged, config)?;
    let coords = packaged.scaling.normalize_coords(&mesh_coords(&config.mesh));
    let tau = packaged.model.predict_tau(&inputs, &coords);
    let values: Vec<f64> = tau.data.iter().map(|&t| packaged.scaling.tau_to_kelvin(t)).collect();
    Ok(TemperatureField { mesh: config.mesh.clone(), values })
}

/// Runs the model and the reference solver on one configuration and
/// compares them. Times are single-shot wall clock (the model's includes
/// its trunk pass); use [`benchmark`] for amortized per-map costs.
pub fn evaluate_config(packaged: &PackagedModel, config: &ChipConfig) -> Result<EvalReport> {
    let t0 = Instant::now();
    let pred = predict_field(packaged, config)?;
    let pred_time_s = t0.elapsed().as_secs_f64().max(1e-9);
    let t1 = Instant::now();
    let oracle = fdm::solve_config(config)?;
    let oracle_time_s = t1.elapsed().as_secs_f64().max(1e-9);
    let (mape, pape) = mape_pape(&pred.values, &oracle.values)?;
    Ok(EvalReport {
        mape,
        pape,
        n_points: pred.values.len(),
        pred_time_s,
        oracle_time_s,
        speedup: oracle_time_s / pred_time_s,
    })
}

/// Median per-map wall-clock costs of the model versus the reference
/// solver.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    /// Median per-map model cost: branch forward + combine against a trunk
    /// precomputed once for the mesh (it does not depend on the map).
    pub pred_time_s: f64,
    /// Median per-map solver cost: assembly + iterative solve, which a new
    /// map always pays.
    pub oracle_time_s: f64,
    pub speedup: f64,
    pub runs: usize,
    pub maps: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times the marginal cost of handling one more input map for both paths,
/// as medians over `runs` repetitions (at least 5) across all `configs`.
/// Every config must share one mesh so the model's trunk amortizes.
pub fn benchmark(
    packaged: &PackagedModel,
    configs: &[ChipConfig],
    runs: usize,
) -> Result<BenchReport> {
    if runs < 5 {
        return Err(Error::Eval(format!("benchmark needs at least 5 runs, got {runs}")));
    }
    if configs.is_empty() {
        return Err(Error::Eval("benchmark needs at least one configuration".into()));
    }
    if configs.iter().any(|c| c.mesh != configs[0].mesh) {
        return Err(Error::Eval("benchmark configurations must share one mesh".into()));
    }
    let coords = packaged.scaling.normalize_coords(&mesh_coords(&configs[0].mesh));
    let predictor = Predictor::new(packaged.model.clone(), &coords);

    let mut pred_runs = Vec::with_capacity(runs);
    let mut oracle_runs = Vec::with_capacity(runs);
    let mut checksum = 0.0;
    for _ in 0..runs {
        let t0 = Instant::now();
        for config in configs {
            let inputs = branch_inputs_from_config(packaged, config)?;
            let tau = predictor.predict(&inputs);
            // Fold the Kelvin conversion in and keep a checksum so the work
            // cannot be optimized away.
            checksum += packaged.scaling.tau_to_kelvin(tau.data[0]);
        }
        pred_runs.push(t0.elapsed().as_secs_f64().max(1e-9));

        let t1 = Instant::now();
        for config in configs {
            let field = fdm::solve_config(config)?;
            checksum += field.values[0];
        }
        oracle_runs.push(t1.elapsed().as_secs_f64().max(1e-9));
    }
    assert!(checksum.is_finite(), "benchmark fields must stay finite");
    let n = configs.len() as f64;
    let pred_time_s = median(pred_runs) / n;
    let oracle_time_s = median(oracle_runs) / n;
    Ok(BenchReport {
        pred_time_s,
        oracle_time_s,
        speedup: oracle_time_s / pred_time_s,
        runs,
        maps: configs.len(),
    })
}

/// Copy of `config` with its surface power map's grid replaced (same
/// surface, units, and unit power).
pub fn with_power_map(config: &ChipConfig, map: Tensor) -> Result<ChipConfig> {
    let mut out = config.clone();
    for p in out.power.iter_mut() {
        if let PowerMap::Surface2D(sp) = p {
            if map.rows != sp.grid.rows || map.cols != sp.grid.cols {
                return Err(Error::Eval(format!(
                    "replacement map is {}×{}, surface grid is {}×{}",
                    map.cols, map.rows, sp.grid.cols, sp.grid.rows
                )));
            }
            sp.grid = map;
            return Ok(out);
        }
    }
    Err(Error::Eval("config has no surface power map to replace".into()))
}

/// Copy of `config` with the z-face convection coefficients replaced.
pub fn with_htc(config: &ChipConfig, top: f64, bottom: f64) -> Result<ChipConfig> {
    let mut out = config.clone();
    for (surface, h_new) in [(Surface::ZMax, top), (Surface::ZMin, bottom)] {
        match &mut out.bcs[surface.array_index()] {
            BoundaryCondition::Convection { h, .. } => *h = SurfaceField::Uniform(h_new),
            _ => {
                return Err(Error::Eval(format!(
                    "config has no convection BC on {} to replace",
                    surface.key()
                )))
            }
        }
    }
    Ok(out)
}

/// Extracts one axis-aligned slice of a temperature field as a
/// (values, width, height) grid: `width` along the lower of the two
/// in-plane axes, rows ordered by the higher one ascending.
fn slice_values(field: &TemperatureField, axis: usize, index: usize) -> Result<(Vec<f64>, usize, usize)> {
    assert!(axis < 3, "axis must be 0 (x), 1 (y), or 2 (z)");
    let counts = field.mesh.counts;
    if index >= counts[axis] {
        return Err(Error::Eval(format!(
            "slice index {index} out of range for axis {axis} with {} planes",
            counts[axis]
        )));
    }
    let (ua, va) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (w, h) = (counts[ua], counts[va]);
    let mut vals = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let mut ijk = [0usize; 3];
            ijk[axis] = index;
            ijk[ua] = u;
            ijk[va] = v;
            vals.push(field.values[field.mesh.node_index(ijk[0], ijk[1], ijk[2])]);
        }
    }
    Ok((vals, w, h))
}

/// Renders one slice as an 8-bit binary PGM, min–max normalized over the
/// slice (a constant slice maps to mid-gray). Byte-for-byte deterministic.
pub fn slice_to_pgm(field: &TemperatureField, axis: usize, index: usize) -> Result<Vec<u8>> {
    let (vals, w, h) = slice_values(field, axis, index)?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for v in vals {
        let px = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
        out.push(px);
    }
    Ok(out)
}

/// Raw slice values as CSV rows (no header), one row per in-plane line.
pub fn slice_to_csv(field: &TemperatureField, axis: usize, index: usize) -> Result<String> {
    let (vals, w, h) = slice_values(field, axis, index)?;
    let mut out = String::new();
    for row in 0..h {
        let line: Vec<String> = (0..w).map(|c| format_f64(vals[row * w + c])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Writes `<stem>.pgm` and `<stem>.csv` for one slice.
pub fn export_slice(
    field: &TemperatureField,
    axis: usize,
    index: usize,
    stem: &Path,
) -> Result<()> {
    let mut pgm = stem.to_path_buf();
    pgm.set_extension("pgm");
    let mut csv = stem.to_path_buf();
    csv.set_extension("csv");
    std::fs::write(pgm, slice_to_pgm(field, axis, index)?)?;
    std::fs::write(csv, slice_to_csv(field, axis, index)?)?;
    Ok(())
}

/// Ten deterministic m×m test power maps in [0, p_max] units: maps 1–9
/// carry that many separated rectangular blocks (placed center, then
/// corners, then edge midpoints of a 3×3 arrangement, alternating between
/// full and half intensity), and the tenth scatters many single-tile
/// sources. Maps are authored at tile resolution — (m−1)×(m−1) cells —
/// and pushed through [`tile_to_grid`], the same interpolation
/// tile-resolution power inputs go through, so block edges carry the
/// one-node linear skirt real inputs have while staying far sharper than
/// anything a smooth random-field sampler produces.
///
/// The 3-blocks-plus-2-gaps tile layout needs m − 1 divisible by 5 and at
/// least 10, i.e. m ∈ {11, 16, 21, …}.
pub fn block_pattern_maps(m: usize, p_max: f64) -> Vec<Tensor> {
    let tiles_per_side = m.checked_sub(1).unwrap_or(0);
    assert!(
        tiles_per_side >= 10 && tiles_per_side % 5 == 0,
        "block patterns need m − 1 ≥ 10 and divisible by 5 (got m = {m})"
    );
    assert!(p_max > 0.0, "p_max must be positive");
    let t = tiles_per_side;
    let w = t / 5; // block width in tiles; gaps are 2w tiles wide
    let span = |c: usize| (2 * w * c, 2 * w * c + w);
    // 3×3 cell order: center, corners, edge midpoints.
    const CELL_ORDER: [(usize, usize); 9] =
        [(1, 1), (0, 0), (2, 2), (0, 2), (2, 0), (0, 1), (2, 1), (1, 0), (1, 2)];
    let mut maps = Vec::with_capacity(10);
    for blocks in 1..=9 {
        let mut tile_map = Tensor::zeros(t, t);
        for (place, &(cr, cc)) in CELL_ORDER.iter().take(blocks).enumerate() {
            let value = if place % 2 == 0 { p_max } else { 0.5 * p_max };
            let (r0, r1) = span(cr);
            let (c0, c1) = span(cc);
            for r in r0..r1 {
                for c in c0..c1 {
                    *tile_map.at_mut(r, c) = value;
                }
            }
        }
        maps.push(tile_to_grid(&tile_map).expect("non-empty tile map"));
    }
    let mut dotted = Tensor::zeros(t, t);
    for r in (1..t).step_by(3) {
        for c in (1..t).step_by(3) {
            *dotted.at_mut(r, c) = p_max;
        }
    }
    maps.push(tile_to_grid(&dotted).expect("non-empty tile map"));
    maps
}
