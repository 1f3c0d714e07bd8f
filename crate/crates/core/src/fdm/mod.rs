//! Finite-difference/finite-volume reference solver for steady heat
//! conduction `k·∇²T + q_V = 0` on the structured chip mesh.
//!
//! Discretization: node-centered control volumes. Each node's equation is
//! the flux balance over its dual cell: face conductances `k_f·A_f/h` with
//! harmonic-mean face conductivity, boundary patches carrying Neumann flux
//! (`q·A` on the rhs), convection (`h·A` on the diagonal, `h·A·ΔT_amb` on
//! the rhs), or Dirichlet pins (eliminated symmetrically). Dividing a row by
//! its cell volume recovers the familiar ghost-node stencil — e.g.
//! `(−6, +1×6)·k/h²` interior, `q·2/h` on a flux surface — so this assembly
//! is the same second-order scheme, scaled to keep the matrix exactly
//! symmetric positive definite for conjugate gradients.
//!
//! The system is solved in the shifted variable θ = T − ambient, which keeps
//! the rhs at the scale of the heat sources; temperatures near the ambient
//! then satisfy the solver's relative tolerance in absolute kelvin.
//!
//! Volumetric slab sources are integrated exactly over each control volume
//! (partial overlaps included), so slab boundaries need not align with mesh
//! planes.

mod csr;
mod pcg;

pub use csr::CsrMatrix;
pub use pcg::{solve_pcg, PcgSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

use crate::config::{
    BoundaryCondition, ChipConfig, Mesh, PowerUnits, Surface, SurfaceField,
};
use crate::config::unit_power_to_flux;
use crate::error::{Error, Result};
use crate::numfmt::{format_f64, scale_pow10};

/// Assembled SPD system over mesh nodes, in θ = T − ambient.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub ambient: f64,
    pub mesh: Mesh,
}

/// Nodal temperature solution, kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    pub mesh: Mesh,
    pub values: Vec<f64>,
}

/// Effective control-volume width of node `i` along an axis with `n` nodes
/// and spacing `d`: boundary cells are half-width.
#[inline]
fn cell_width(i: usize, n: usize, d: f64) -> f64 {
    if i == 0 || i == n - 1 {
        0.5 * d
    } else {
        d
    }
}

/// Overlap length of the z control volume of node k with the interval
/// [z0, z1].
fn z_overlap(k: usize, mesh: &Mesh, z0: f64, z1: f64) -> f64 {
    let dz = mesh.spacing()[2];
    let zk = mesh.origin[2] + k as f64 * dz;
    let lo = (zk - 0.5 * dz).max(mesh.origin[2]);
    let hi = (zk + 0.5 * dz).min(mesh.origin[2] + mesh.extent[2]);
    (hi.min(z1) - lo.max(z0)).max(0.0)
}

/// Per-surface nodal flux (W/m², positive into the domain) from the BC and
/// any attached surface power map.
fn surface_flux(config: &ChipConfig, surface: Surface) -> Result<Option<SurfaceField>> {
    let bc_flux = match config.bc(surface) {
        BoundaryCondition::Neumann { flux } => Some(flux.clone()),
        _ => None,
    };
    let map_flux = match config.surface_power(surface) {
        Some(sp) => {
            let flux = if sp.units == PowerUnits::UnitPower {
                unit_power_to_flux(sp, config.surface_tile_area(surface))?.grid
            } else {
                sp.grid.clone()
            };
            Some(flux)
        }
        None => None,
    };
    Ok(match (bc_flux, map_flux) {
        (None, None) => None,
        (Some(f), None) => Some(f),
        (None, Some(g)) => Some(SurfaceField::Grid(g)),
        (Some(f), Some(g)) => {
            // Declared base flux and power map superpose.
            let mut sum = g;
            for r in 0..sum.rows {
                for c in 0..sum.cols {
                    *sum.at_mut(r, c) += f.at(c, r);
                }
            }
            Some(SurfaceField::Grid(sum))
        }
    })
}

/// Builds the SPD system for a validated config.
///
/// Fails fast when no surface fixes the temperature scale (no Dirichlet and
/// no convection anywhere): the pure-Neumann problem is singular.
pub fn assemble(config: &ChipConfig) -> Result<LinearSystem> {
    config.validate()?;
    let anchored = Surface::ALL.iter().any(|&s| {
        matches!(
            config.bc(s),
            BoundaryCondition::Dirichlet { .. } | BoundaryCondition::Convection { .. }
        )
    });
    if !anchored {
        return Err(Error::Solver(
            "singular system: every surface is adiabatic/neumann, so temperature is only \
             defined up to a constant (add a convection or dirichlet BC)"
            .into(),
        ));
    }

    let mesh = &config.mesh;
    let [nx, ny, nz] = mesh.counts;
    let d = mesh.spacing();
    let n = mesh.node_count();
    let ambient = config.ambient;

    let fluxes: Vec<Option<SurfaceField>> = {
        let mut v = Vec::with_capacity(6);
        for s in Surface::ALL {
            v.push(surface_flux(config, s)?);
        }
        v
    };

    let slab = config.volumetric_slab();
    let slab_q_v = match slab {
        Some((z0, z1, total)) => {
            let e = config.geometry.total_extent();
            total / (e[0] * e[1] * (z1 - z0))
        }
        None => 0.0,
    };

    let k_at = |i: usize, j: usize, k: usize| config.conductivity.at(i, j, k);
    let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::with_capacity(7); n];
    let mut rhs = vec![0.0; n];
    // Dirichlet pins: node → θ value. Canonical surface order decides ties
    // at edges where two Dirichlet surfaces meet.
    let mut pinned: Vec<Option<f64>> = vec![None; n];

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = mesh.node_index(i, j, k);
                let w = [
                    cell_width(i, nx, d[0]),
                    cell_width(j, ny, d[1]),
                    cell_width(k, nz, d[2]),
                ];
                let mut diag = 0.0;
                let pos = [i, j, k];
                let counts = [nx, ny, nz];
                for axis in 0..3 {
                    let trans_area = match axis {
                        0 => w[1] * w[2],
                        1 => w[0] * w[2],
                        _ => w[0] * w[1],
                    };
                    for dir in [-1isize, 1isize] {
                        let p = pos[axis] as isize + dir;
                        if p >= 0 && (p as usize) < counts[axis] {
                            let mut q = pos;
                            q[axis] = p as usize;
                            let k_face =
                                harmonic(k_at(i, j, k), k_at(q[0], q[1], q[2]));
                            let cond = k_face * trans_area / d[axis];
                            diag += cond;
                            rows[idx].push((mesh.node_index(q[0], q[1], q[2]) as u32, -cond));
                        } else {
                            let surface = match (axis, dir) {
                                (0, -1) => Surface::XMin,
                                (0, 1) => Surface::XMax,
                                (1, -1) => Surface::YMin,
                                (1, 1) => Surface::YMax,
                                (2, -1) => Surface::ZMin,
                                _ => Surface::ZMax,
                            };
                            let (u_axis, v_axis) = surface.plane_axes();
                            let (uc, vc) = (pos[u_axis], pos[v_axis]);
                            match config.bc(surface) {
                                BoundaryCondition::Dirichlet { temp } => {
                                    if pinned[idx].is_none() {
                                        pinned[idx] = Some(temp.at(uc, vc) - ambient);
                                    }
                                }
                                BoundaryCondition::Convection { h, t_amb } => {
                                    let hv = h.at(uc, vc);
                                    diag += hv * trans_area;
                                    rhs[idx] += hv * trans_area * (t_amb - ambient);
                                }
                                BoundaryCondition::Adiabatic
                                | BoundaryCondition::Neumann { .. } => {}
                            }
                            if let Some(flux) = &fluxes[surface.array_index()] {
                                rhs[idx] += flux.at(uc, vc) * trans_area;
                            }
                        }
                    }
                }
                if let Some((z0, z1, _)) = slab {
                    let overlap = z_overlap(k, mesh, z0, z1);
                    if overlap > 0.0 {
                        rhs[idx] += slab_q_v * w[0] * w[1] * overlap;
                    }
                }
                rows[idx].push((idx as u32, diag));
            }
        }
    }

    // Symmetric Dirichlet elimination: move pinned columns to the rhs, then
    // replace pinned rows with a scaled identity so row count stays n and
    // the matrix stays SPD.
    for p in 0..n {
        let Some(theta) = pinned[p] else { continue };
        let entries = std::mem::take(&mut rows[p]);
        let mut diag_p = 0.0;
        for (c, v) in entries {
            let c = c as usize;
            if c == p {
                diag_p = v;
                continue;
            }
            if pinned[c].is_some() {
                continue;
            }
            // Symmetric structure: row c holds the mirror entry for p.
            let row_c = &mut rows[c];
            if let Some(e) = row_c.iter().position(|&(cc, _)| cc as usize == p) {
                rhs[c] -= row_c[e].1 * theta;
                row_c.swap_remove(e);
            }
        }
        assert!(diag_p > 0.0, "assembled diagonal must be positive");
        rows[p] = vec![(p as u32, diag_p)];
        rhs[p] = diag_p * theta;
    }

    Ok(LinearSystem { matrix: CsrMatrix::from_rows(rows), rhs, ambient, mesh: mesh.clone() })
}

/// Solves an assembled system to `tol` relative residual.
pub fn solve(system: &LinearSystem, tol: f64, max_iter: usize) -> Result<TemperatureField> {
    let sol = solve_pcg(&system.matrix, &system.rhs, tol, max_iter)?;
    let values: Vec<f64> = sol.x.iter().map(|&theta| system.ambient + theta).collect();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Solver(format!("non-finite temperature in solution: {bad}")));
    }
    Ok(TemperatureField { mesh: system.mesh.clone(), values })
}

/// Assembles and solves in one step with default tolerances.
pub fn solve_config(config: &ChipConfig) -> Result<TemperatureField> {
    solve(&assemble(config)?, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

impl TemperatureField {
    /// Trilinear interpolation at arbitrary points (SI metres) inside the
    /// mesh; errors if any point lies outside (beyond a 1e-9·extent slack).
    pub fn sample(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let d = mesh.spacing();
        let [nx, ny, nz] = mesh.counts;
        let mut out = Vec::with_capacity(points.len());
        for (pn, p) in points.iter().enumerate() {
            let mut cell = [0usize; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..3 {
                let tol = 1e-9 * mesh.extent[a].max(f64::MIN_POSITIVE);
                let local = p[a] - mesh.origin[a];
                if local < -tol || local > mesh.extent[a] + tol {
                    return Err(Error::Solver(format!(
                        "sample point {pn} lies outside the domain on axis {a}: {}",
                        p[a]
                    )));
                }
                let u = (local / d[a]).clamp(0.0, (mesh.counts[a] - 1) as f64);
                let c = (u.floor() as usize).min(mesh.counts[a] - 2);
                cell[a] = c;
                frac[a] = u - c as f64;
            }
            let mut acc = 0.0;
            for corner in 0..8usize {
                let mut weight = 1.0;
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        weight *= frac[a];
                        idx[a] = cell[a] + 1;
                    } else {
                        weight *= 1.0 - frac[a];
                        idx[a] = cell[a];
                    }
                }
                let _ = (nx, ny, nz);
                acc += weight * self.values[mesh.node_index(idx[0], idx[1], idx[2])];
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// CSV export: header `x_mm,y_mm,z_mm,T_K`, one row per node, z-major
    /// (k, then j, then i — i fastest), coordinates in millimetres.
    pub fn to_csv(&self) -> String {
        let mesh = &self.mesh;
        let mut out = String::with_capacity(self.values.len() * 32 + 20);
        out.push_str("x_mm,y_mm,z_mm,T_K\n");
        for (idx, v) in self.values.iter().enumerate() {
            let (i, j, k) = mesh.node_ijk(idx);
            let c = mesh.node_coord(i, j, k);
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_f64(scale_pow10(c[0], 3)),
                format_f64(scale_pow10(c[1], 3)),
                format_f64(scale_pow10(c[2], 3)),
                format_f64(*v)
            ));
        }
        out
    }

    /// Parses the CSV format written by [`TemperatureField::to_csv`],
    /// reconstructing the mesh from the node coordinates.
    pub fn from_csv(text: &str) -> Result<TemperatureField> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Eval("field CSV is empty".into()))?;
        if header.trim() != "x_mm,y_mm,z_mm,T_K" {
            return Err(Error::Eval(format!("unexpected field CSV header '{header}'")));
        }
        let mut points: Vec<[f64; 3]> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Eval(format!("field CSV line {}: need 4 columns", ln + 2)));
            }
            let nums: Vec<f64> = cols
                .iter()
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Eval(format!("field CSV line {}: bad number", ln + 2)))
                })
                .collect::<Result<_>>()?;
            points.push([
                scale_pow10(nums[0], -3),
                scale_pow10(nums[1], -3),
                scale_pow10(nums[2], -3),
            ]);
            values.push(nums[3]);
        }
        if points.is_empty() {
            return Err(Error::Eval("field CSV has no data rows".into()));
        }
        let mut axes: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for p in &points {
            for a in 0..3 {
                if !axes[a].iter().any(|&v| v == p[a]) {
                    axes[a].push(p[a]);
                }
            }
        }
        for ax in axes.iter_mut() {
            ax.sort_by(f64::total_cmp);
        }
        let counts = [axes[0].len(), axes[1].len(), axes[2].len()];
        if counts.iter().product::<usize>() != points.len() {
            return Err(Error::Eval(format!(
                "field CSV rows ({}) do not form a {}×{}×{} grid",
                points.len(),
                counts[0],
                counts[1],
                counts[2]
            )));
        }
        let origin = [axes[0][0], axes[1][0], axes[2][0]];
        let extent = [
            axes[0][counts[0] - 1] - origin[0],
            axes[1][counts[1] - 1] - origin[1],
            axes[2][counts[2] - 1] - origin[2],
        ];
        let mesh = Mesh { counts, origin, extent };
        // Rows must arrive in canonical (k, j, i) order.
        for (idx, p) in points.iter().enumerate() {
            let (i, j, k) = mesh.node_ijk(idx);
            let want = [axes[0][i], axes[1][j], axes[2][k]];
            for a in 0..3 {
                let tol = 1e-9 * (extent[a].abs() + 1e-30);
                if (p[a] - want[a]).abs() > tol {
                    return Err(Error::Eval(format!(
                        "field CSV row {idx} is out of (k,j,i) node order"
                    )));
                }
            }
        }
        Ok(TemperatureField { mesh, values })
    }
}

/// Total heat entering the domain (surface flux plus volumetric sources)
/// and leaving through convection surfaces, in watts. These agree to solver
/// tolerance for convection-anchored configs: the discretization conserves
/// energy exactly.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBalance {
    pub injected_w: f64,
    pub convected_w: f64,
}

impl EnergyBalance {
    pub fn relative_mismatch(&self) -> f64 {
        let scale = self.injected_w.abs().max(self.convected_w.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.injected_w - self.convected_w).abs() / scale
        }
    }
}

pub fn energy_balance(config: &ChipConfig, field: &TemperatureField) -> Result<EnergyBalance> {
    let mesh = &config.mesh;
    let [nx, ny, nz] = mesh.counts;
    let d = mesh.spacing();
    let mut injected = 0.0;
    let mut convected = 0.0;
    for surface in Surface::ALL {
        let flux = surface_flux(config, surface)?;
        let conv = match config.bc(surface) {
            BoundaryCondition::Convection { h, t_amb } => Some((h.clone(), *t_amb)),
            _ => None,
        };
        if flux.is_none() && conv.is_none() {
            continue;
        }
        let (u_axis, v_axis) = surface.plane_axes();
        let axis = surface.axis();
        let fixed = if surface.is_max() { mesh.counts[axis] - 1 } else { 0 };
        for vc in 0..mesh.counts[v_axis] {
            for uc in 0..mesh.counts[u_axis] {
                let mut pos = [0usize; 3];
                pos[axis] = fixed;
                pos[u_axis] = uc;
                pos[v_axis] = vc;
                let patch = cell_width(uc, mesh.counts[u_axis], d[u_axis])
                    * cell_width(vc, mesh.counts[v_axis], d[v_axis]);
                if let Some(f) = &flux {
                    injected += f.at(uc, vc) * patch;
                }
                if let Some((h, t_amb)) = &conv {
                    let t = field.values[mesh.node_index(pos[0], pos[1], pos[2])];
                    convected += h.at(uc, vc) * patch * (t - t_amb);
                }
            }
        }
    }
    if let Some((z0, z1, total)) = config.volumetric_slab() {
        let e = config.geometry.total_extent();
        let q_v = total / (e[0] * e[1] * (z1 - z0));
        let mut vol = 0.0;
        for k in 0..nz {
            let oz = z_overlap(k, mesh, z0, z1);
            if oz == 0.0 {
                continue;
            }
            for j in 0..ny {
                for i in 0..nx {
                    vol += cell_width(i, nx, d[0]) * cell_width(j, ny, d[1]) * oz;
                }
            }
        }
        injected += q_v * vol;
    }
    Ok(EnergyBalance { injected_w: injected, convected_w: convected })
}
