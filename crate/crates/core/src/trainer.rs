//! Physics-informed training: region-tagged collocation points, normalized
//! PDE/BC residual losses over the operator network's spatial jets, and an
//! Adam loop with a stepped learning-rate schedule.
//!
//! Everything is computed in network units: coordinates in the unit cube,
//! temperature as τ = (T − T_amb)/T_scale, and each residual divided by
//! k·T_scale/(length scale) so every term is O(1) regardless of SI
//! magnitudes. With l = L_z as the reference length the residuals are
//!
//! - interior:    Σₐ (l/Lₐ)²·τ_ŷₐŷₐ + q_V·l²/(k·T_scale)
//! - flux face:   s·τ_ŷₐ − q·Lₐ/(k·T_scale)      (s = outward sign, q into
//!   the domain; adiabatic is q = 0)
//! - convection:  −s·τ_ŷₐ − (h·Lₐ/k)·(τ − τ_amb)
//! - Dirichlet:   τ − (T_d − T_amb)/T_scale
//!
//! each squared and averaged per region across all sampled input functions.
//! All terms vanish at the exact solution.

use crate::autodiff::{JetBatch, JetComp, NodeId, Tape};
use crate::config::{
    unit_power_to_flux, BoundaryCondition, ChipConfig, Surface, SurfaceField, SurfacePower,
};
use crate::error::{Error, Result};
use crate::grf::{sample_htc_pairs, GrfSampler};
use crate::numfmt::format_f64;
use crate::operator::{EncodingSpec, OperatorModel, PackagedModel, ScalingMap};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Collocation points in physical coordinates, partitioned by region: every
/// point belongs to exactly one tag. Surface membership wins over the
/// interior; the volumetric-source slab is split out of the interior so the
/// PDE residual can carry its q_V.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub interior: Vec<[f64; 3]>,
    pub slab: Vec<[f64; 3]>,
    pub surfaces: [Vec<[f64; 3]>; 6],
}

impl CollocationSet {
    pub fn total_points(&self) -> usize {
        self.interior.len()
            + self.slab.len()
            + self.surfaces.iter().map(Vec::len).sum::<usize>()
    }
}

/// How collocation points are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CollocationMode {
    /// Every mesh node exactly once; fixed across iterations.
    Mesh,
    /// `n` uniform points, redrawn every iteration: 40% interior, 12% slab,
    /// 8% per surface (the slab share folds into the interior when the
    /// config has no slab). Counts by largest remainder, so they sum to `n`.
    Random { n: usize },
}

/// Surface priority for classifying mesh nodes on edges/corners: z faces
/// first, then x, then y.
const SURFACE_PRIORITY: [Surface; 6] = [
    Surface::ZMax,
    Surface::ZMin,
    Surface::XMin,
    Surface::XMax,
    Surface::YMin,
    Surface::YMax,
];

pub fn build_collocation(
    config: &ChipConfig,
    mode: CollocationMode,
    rng: &mut ChaCha8Rng,
) -> Result<CollocationSet> {
    let origin = config.geometry.origin();
    let extent = config.geometry.total_extent();
    // Mesh nodes meant to sit exactly on a slab boundary can land an ulp
    // outside it; classification (not sampling) allows a relative slack.
    let slab_eps = 1e-9 * extent[2];
    let slab_range = config.volumetric_slab().map(|(z0, z1, _)| (z0, z1));
    let mut set = CollocationSet {
        interior: Vec::new(),
        slab: Vec::new(),
        surfaces: Default::default(),
    };
    match mode {
        CollocationMode::Mesh => {
            let mesh = &config.mesh;
            let [nx, ny, nz] = mesh.counts;
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = mesh.node_coord(i, j, k);
                        let on = |s: Surface| -> bool {
                            let idx = [i, j, k][s.axis()];
                            if s.is_max() {
                                idx == mesh.counts[s.axis()] - 1
                            } else {
                                idx == 0
                            }
                        };
                        match SURFACE_PRIORITY.iter().find(|&&s| on(s)) {
                            Some(&s) => set.surfaces[s.array_index()].push(p),
                            None => match slab_range {
                                Some((z0, z1)) if p[2] >= z0 - slab_eps && p[2] <= z1 + slab_eps => {
                                    set.slab.push(p)
                                }
                                _ => set.interior.push(p),
                            },
                        }
                    }
                }
            }
        }
        CollocationMode::Random { n } => {
            // Region shares; the slab share exists only when a slab does.
            let mut shares: Vec<(usize, f64)> = Vec::new(); // (region id, share)
            let has_slab = slab_range.is_some();
            shares.push((0, if has_slab { 0.40 } else { 0.52 }));
            if has_slab {
                shares.push((1, 0.12));
            }
            for s in 0..6 {
                shares.push((2 + s, 0.08));
            }
            // Largest-remainder apportionment.
            let mut counts: Vec<usize> =
                shares.iter().map(|&(_, f)| (n as f64 * f).floor() as usize).collect();
            let mut rema: Vec<(f64, usize)> = shares
                .iter()
                .enumerate()
                .map(|(pos, &(_, f))| (n as f64 * f - counts[pos] as f64, pos))
                .collect();
            rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let assigned: usize = counts.iter().sum();
            for e in 0..n - assigned {
                counts[rema[e % rema.len()].1] += 1;
            }
            for (pos, &(region, _)) in shares.iter().enumerate() {
                let count = counts[pos];
                if count == 0 {
                    return Err(Error::Training(format!(
                        "random collocation with n={n} leaves region {} empty",
                        region_name(region)
                    )));
                }
                for _ in 0..count {
                    let u: [f64; 3] = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                    let p = match region {
                        0 => {
                            let z = match slab_range {
                                // Interior z avoids the slab: pick one of the
                                // two gaps with length-proportional odds.
                                Some((z0, z1)) => {
                                    let below = z0 - origin[2];
                                    let above = origin[2] + extent[2] - z1;
                                    let pick = rng.gen::<f64>() * (below + above);
                                    if pick < below {
                                        origin[2] + u[2] * below
                                    } else {
                                        z1 + u[2] * above
                                    }
                                }
                                None => origin[2] + u[2] * extent[2],
                            };
                            [origin[0] + u[0] * extent[0], origin[1] + u[1] * extent[1], z]
                        }
                        1 => {
                            let (z0, z1) = slab_range.expect("slab region implies a slab");
                            [
                                origin[0] + u[0] * extent[0],
                                origin[1] + u[1] * extent[1],
                                z0 + u[2] * (z1 - z0),
                            ]
                        }
                        s => {
                            let surface = Surface::ALL[s - 2];
                            let mut p = [
                                origin[0] + u[0] * extent[0],
                                origin[1] + u[1] * extent[1],
                                origin[2] + u[2] * extent[2],
                            ];
                            let a = surface.axis();
                            p[a] = if surface.is_max() { origin[a] + extent[a] } else { origin[a] };
                            p
                        }
                    };
                    match region {
                        0 => set.interior.push(p),
                        1 => set.slab.push(p),
                        s => set.surfaces[s - 2].push(p),
                    }
                }
            }
        }
    }
    if set.interior.is_empty() {
        return Err(Error::Training(
            "collocation has no interior points (mesh too coarse?)".into(),
        ));
    }
    for s in Surface::ALL {
        if set.surfaces[s.array_index()].is_empty() {
            return Err(Error::Training(format!(
                "collocation surface region {} is empty",
                s.key()
            )));
        }
    }
    Ok(set)
}

fn region_name(region: usize) -> &'static str {
    match region {
        0 => "interior",
        1 => "slab",
        s => Surface::ALL[s - 2].key(),
    }
}

/// Per-iteration batch of sampled input functions with their physical
/// meaning (what varies between samples).
#[derive(Debug, Clone)]
pub enum SampleSet {
    /// Unit-power node grids applied to one surface.
    PowerMaps { surface: Surface, maps: Vec<Tensor>, unit_power_w: f64 },
    /// (top h, bottom h) convection coefficients on zmax/zmin.
    HtcPairs { pairs: Vec<(f64, f64)> },
}

impl SampleSet {
    pub fn len(&self) -> usize {
        match self {
            SampleSet::PowerMaps { maps, .. } => maps.len(),
            SampleSet::HtcPairs { pairs } => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn branch_inputs(&self, encoding: &EncodingSpec) -> Result<Vec<Tensor>> {
        match self {
            SampleSet::PowerMaps { maps, .. } => encoding.encode_power_maps(maps),
            SampleSet::HtcPairs { pairs } => encoding.encode_htc_pairs(pairs),
        }
    }
}

/// Loss values for one iteration. `total` is the exact left-to-right sum of
/// the stored terms (weighted only when non-default term weights are set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub total: f64,
    pub l_r: f64,
    /// Per-surface BC terms in canonical surface order.
    pub l_surface: [f64; 6],
}

impl LossReport {
    pub fn terms(&self) -> [f64; 7] {
        [
            self.l_r,
            self.l_surface[0],
            self.l_surface[1],
            self.l_surface[2],
            self.l_surface[3],
            self.l_surface[4],
            self.l_surface[5],
        ]
    }
}

/// Loss history CSV: one row per iteration, surface terms in canonical
/// order.
pub fn history_to_csv(history: &[LossReport]) -> String {
    let mut out = String::from("iter,total,L_r,L_xmin,L_xmax,L_ymin,L_ymax,L_zmin,L_zmax\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            format_f64(r.total),
            format_f64(r.l_r),
            format_f64(r.l_surface[0]),
            format_f64(r.l_surface[1]),
            format_f64(r.l_surface[2]),
            format_f64(r.l_surface[3]),
            format_f64(r.l_surface[4]),
            format_f64(r.l_surface[5])
        ));
    }
    out
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub iterations: usize,
    pub functions_per_iter: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub t_scale: f64,
    /// Ablation-only weights (L_r, then surfaces in canonical order);
    /// all-ones by default so the total is the plain unweighted sum.
    pub term_weights: [f64; 7],
    pub checkpoint_every: usize,
    pub collocation: CollocationMode,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.functions_per_iter == 0 {
            return Err(Error::Training("functions_per_iter must be ≥ 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Training(format!("learning rate must be > 0, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Training(format!(
                "lr decay factor must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Training("lr decay interval must be ≥ 1".into()));
        }
        if !(self.t_scale > 0.0) {
            return Err(Error::Training(format!(
                "temperature scale must be > 0, got {}",
                self.t_scale
            )));
        }
        if self.term_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Training("term weights must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// Stepped schedule: lr = lr₀ · decay^⌊iter/every⌋ for 0-based `iter`.
    pub fn learning_rate(&self, iter0: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((iter0 / self.lr_decay_every) as i32)
    }
}

/// What the sampled functions are drawn from each iteration.
#[derive(Debug, Clone)]
pub enum FunctionSource {
    PowerMaps { grid_size: usize, length_scale: f64, p_max: f64, rescale: bool },
    HtcPairs { lo: f64, hi: f64 },
}

/// Logical tiled branch-batch shape for F function samples against a
/// collocation set: every sample is evaluated at every point, so the branch
/// input repeats to (F·points) × input_dim rows even though the
/// implementation never materializes the tile.
pub fn logical_branch_batch(
    functions: usize,
    colloc: &CollocationSet,
    input_dim: usize,
) -> (usize, usize) {
    (functions * colloc.total_points(), input_dim)
}

/// Physical residual data for one region batch, in network units.
enum SurfacePhysics {
    /// r = s·τ_ŷₐ − q̂, one q̂ row per function sample.
    Flux { sign: f64, q_hat: Tensor },
    /// r = −s·τ_ŷₐ − ĥ·(τ − τ_amb_hat).
    Convection { sign: f64, h_hat: Tensor, tau_amb: f64 },
    /// r = τ − τ̂_d.
    Dirichlet { tau_d: Tensor },
}

struct ResidualPhysics {
    /// Second-derivative prefactors (l_ref/Lₐ)².
    c: [f64; 3],
    /// q_V·l²/(k·T_scale) per PDE point (columns) and sample (rows).
    q_hat_pde: Tensor,
    surfaces: [SurfacePhysics; 6],
}

/// Bilinear sample of a surface field at fractional in-plane coordinates
/// (u, v ∈ [0, 1]); grids are nodal with row 0 at the v-min edge.
fn surface_field_at(field: &SurfaceField, dims: (usize, usize), u: f64, v: f64) -> f64 {
    match field {
        SurfaceField::Uniform(val) => *val,
        SurfaceField::Grid(g) => {
            let (nu, nv) = dims;
            let pos_u = (u.clamp(0.0, 1.0)) * (nu - 1) as f64;
            let pos_v = (v.clamp(0.0, 1.0)) * (nv - 1) as f64;
            let iu = (pos_u.floor() as usize).min(nu - 2);
            let iv = (pos_v.floor() as usize).min(nv - 2);
            let fu = pos_u - iu as f64;
            let fv = pos_v - iv as f64;
            let at = |cu: usize, cv: usize| g.at(cv, cu);
            (1.0 - fu) * (1.0 - fv) * at(iu, iv)
                + fu * (1.0 - fv) * at(iu + 1, iv)
                + (1.0 - fu) * fv * at(iu, iv + 1)
                + fu * fv * at(iu + 1, iv + 1)
        }
    }
}

/// In-plane fractional coordinates of a surface point.
fn surface_uv(p: [f64; 3], surface: Surface, scaling: &ScalingMap) -> (f64, f64) {
    let (ua, va) = surface.plane_axes();
    (
        (p[ua] - scaling.origin_m[ua]) / scaling.lengths_m[ua],
        (p[va] - scaling.origin_m[va]) / scaling.lengths_m[va],
    )
}

fn build_physics(
    config: &ChipConfig,
    scaling: &ScalingMap,
    samples: &SampleSet,
    colloc: &CollocationSet,
) -> Result<ResidualPhysics> {
    let k = config.conductivity.uniform().ok_or_else(|| {
        Error::Training(
            "physics-informed training requires uniform conductivity (grids are only \
             supported by the reference solver)"
            .into(),
        )
    })?;
    let f = samples.len();
    if f == 0 {
        return Err(Error::Training("no function samples in this iteration".into()));
    }
    let l_ref = scaling.lengths_m[2];
    let c = [
        (l_ref / scaling.lengths_m[0]).powi(2),
        (l_ref / scaling.lengths_m[1]).powi(2),
        (l_ref / scaling.lengths_m[2]).powi(2),
    ];

    // PDE points: interior (q_V = 0) then slab points.
    let n_pde = colloc.interior.len() + colloc.slab.len();
    let mut q_hat_pde = Tensor::zeros(f, n_pde);
    if let Some((z0, z1, total)) = config.volumetric_slab() {
        let e = config.geometry.total_extent();
        let q_v = total / (e[0] * e[1] * (z1 - z0));
        let q_hat = q_v * l_ref * l_ref / (k * scaling.t_scale);
        for col in colloc.interior.len()..n_pde {
            for row in 0..f {
                *q_hat_pde.at_mut(row, col) = q_hat;
            }
        }
    }

    let surfaces = Surface::ALL.map(|surface| {
        let pts = &colloc.surfaces[surface.array_index()];
        let n_s = pts.len();
        let axis = surface.axis();
        let sign = surface.outward_sign();
        let l_a = scaling.lengths_m[axis];
        let dims = config.mesh.surface_dims(surface);
        let flux_scale = l_a / (k * scaling.t_scale);

        // Per-sample power-map flux on this surface, if the samples target it.
        let sample_maps: Option<(&Vec<Tensor>, f64)> = match samples {
            SampleSet::PowerMaps { surface: ps, maps, unit_power_w } if *ps == surface => {
                Some((maps, *unit_power_w))
            }
            _ => None,
        };
        // Per-sample convection overrides for the z faces.
        let sample_htc: Option<Vec<f64>> = match samples {
            SampleSet::HtcPairs { pairs } if surface == Surface::ZMax => {
                Some(pairs.iter().map(|p| p.0).collect())
            }
            SampleSet::HtcPairs { pairs } if surface == Surface::ZMin => {
                Some(pairs.iter().map(|p| p.1).collect())
            }
            _ => None,
        };

        match config.bc(surface) {
            BoundaryCondition::Dirichlet { temp } => {
                let mut tau_d = Tensor::zeros(f, n_s);
                for (col, &p) in pts.iter().enumerate() {
                    let (u, v) = surface_uv(p, surface, scaling);
                    let tau = scaling.kelvin_to_tau(surface_field_at(temp, dims, u, v));
                    for row in 0..f {
                        *tau_d.at_mut(row, col) = tau;
                    }
                }
                SurfacePhysics::Dirichlet { tau_d }
            }
            BoundaryCondition::Convection { h, t_amb } => {
                let mut h_hat = Tensor::zeros(f, n_s);
                for (col, &p) in pts.iter().enumerate() {
                    let (u, v) = surface_uv(p, surface, scaling);
                    let base = surface_field_at(h, dims, u, v);
                    for row in 0..f {
                        let hv = match &sample_htc {
                            Some(per) => per[row],
                            None => base,
                        };
                        *h_hat.at_mut(row, col) = hv * l_a / k;
                    }
                }
                let tau_amb = scaling.kelvin_to_tau(*t_amb);
                SurfacePhysics::Convection { sign, h_hat, tau_amb }
            }
            BoundaryCondition::Adiabatic | BoundaryCondition::Neumann { .. } => {
                let base = match config.bc(surface) {
                    BoundaryCondition::Neumann { flux } => Some(flux.clone()),
                    _ => None,
                };
                // Config-attached power map (fixed across samples) applies
                // when the samples do not already supply this surface's map.
                let fixed_map = if sample_maps.is_none() {
                    config.surface_power(surface)
                } else {
                    None
                };
                let tile_area = config.surface_tile_area(surface);
                let mut q_hat = Tensor::zeros(f, n_s);
                for (col, &p) in pts.iter().enumerate() {
                    let (u, v) = surface_uv(p, surface, scaling);
                    let base_q = base.as_ref().map_or(0.0, |b| surface_field_at(b, dims, u, v));
                    for row in 0..f {
                        let mut q = base_q;
                        if let Some((maps, unit_w)) = sample_maps {
                            let units =
                                surface_field_at(&SurfaceField::Grid(maps[row].clone()), dims, u, v);
                            q += units * unit_w / tile_area;
                        }
                        if let Some(sp) = fixed_map {
                            q += fixed_surface_flux(sp, tile_area, dims, u, v);
                        }
                        *q_hat.at_mut(row, col) = q * flux_scale;
                    }
                }
                SurfacePhysics::Flux { sign, q_hat }
            }
        }
    });

    Ok(ResidualPhysics { c, q_hat_pde, surfaces })
}

fn fixed_surface_flux(
    sp: &SurfacePower,
    tile_area: f64,
    dims: (usize, usize),
    u: f64,
    v: f64,
) -> f64 {
    use crate::config::PowerUnits;
    match sp.units {
        PowerUnits::FluxWm2 => surface_field_at(&SurfaceField::Grid(sp.grid.clone()), dims, u, v),
        PowerUnits::UnitPower => {
            let flux = unit_power_to_flux(sp, tile_area).expect("validated unit-power map");
            surface_field_at(&SurfaceField::Grid(flux.grid), dims, u, v)
        }
    }
}

/// Jet outputs of the model per region, as tape nodes.
struct RegionOuts {
    pde: NodeId,
    surfaces: [NodeId; 6],
}

/// Records the squared-residual losses on the tape. Returns the total-loss
/// node plus each term's node in (L_r, surfaces...) order.
fn loss_graph(
    tape: &mut Tape,
    outs: &RegionOuts,
    phys: &ResidualPhysics,
    weights: &[f64; 7],
) -> (NodeId, [NodeId; 7]) {
    // Interior PDE residual: Σₐ cₐ·ddₐ + q̂.
    let mut r = None;
    for a in 0..3 {
        let dd = tape.component(outs.pde, JetComp::DD(a));
        let scaled = tape.scale(dd, phys.c[a]);
        r = Some(match r {
            None => scaled,
            Some(acc) => tape.add(acc, scaled),
        });
    }
    let mut r = r.expect("three axes");
    if phys.q_hat_pde.data.iter().any(|&q| q != 0.0) {
        let q = tape.constant(phys.q_hat_pde.clone());
        r = tape.add(r, q);
    }
    let sq = tape.square(r);
    let l_r = tape.mean_all(sq);

    let mut term_nodes = [l_r; 7];
    for (s, phys_s) in phys.surfaces.iter().enumerate() {
        let out = outs.surfaces[s];
        let axis = Surface::ALL[s].axis();
        let term = match phys_s {
            SurfacePhysics::Flux { sign, q_hat } => {
                let d = tape.component(out, JetComp::D(axis));
                let signed = tape.scale(d, *sign);
                let r = if q_hat.data.iter().any(|&q| q != 0.0) {
                    let q = tape.constant(q_hat.clone());
                    tape.sub(signed, q)
                } else {
                    signed
                };
                let sq = tape.square(r);
                tape.mean_all(sq)
            }
            SurfacePhysics::Convection { sign, h_hat, tau_amb } => {
                let d = tape.component(out, JetComp::D(axis));
                let neg = tape.scale(d, -sign);
                let tau = tape.component(out, JetComp::Value);
                let excess = if *tau_amb != 0.0 {
                    let amb = tape.constant(Tensor::filled(h_hat.rows, h_hat.cols, *tau_amb));
                    tape.sub(tau, amb)
                } else {
                    tau
                };
                let h = tape.constant(h_hat.clone());
                let conv = tape.mul(h, excess);
                let r = tape.sub(neg, conv);
                let sq = tape.square(r);
                tape.mean_all(sq)
            }
            SurfacePhysics::Dirichlet { tau_d } => {
                let tau = tape.component(out, JetComp::Value);
                let d = tape.constant(tau_d.clone());
                let r = tape.sub(tau, d);
                let sq = tape.square(r);
                tape.mean_all(sq)
            }
        };
        term_nodes[1 + s] = term;
    }

    let mut total = None;
    for (t, &node) in term_nodes.iter().enumerate() {
        let weighted = if weights[t] == 1.0 { node } else { tape.scale(node, weights[t]) };
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted),
        });
    }
    (total.expect("seven terms"), term_nodes)
}

/// Builds the full forward + loss tape for one iteration.
fn iteration_graph(
    model: &OperatorModel,
    encoding: &EncodingSpec,
    config: &ChipConfig,
    scaling: &ScalingMap,
    samples: &SampleSet,
    colloc: &CollocationSet,
    weights: &[f64; 7],
) -> Result<(Tape, Vec<NodeId>, NodeId, [NodeId; 7])> {
    let phys = build_physics(config, scaling, samples, colloc)?;
    let branch_inputs = samples.branch_inputs(encoding)?;

    let mut tape = Tape::new();
    let param_ids: Vec<NodeId> = model.params.iter().map(|t| tape.param(t.clone())).collect();

    // Branch product is shared by every region.
    let mut product = None;
    for (b, input) in branch_inputs.iter().enumerate() {
        let x = tape.constant(input.clone());
        let out = model.tape_branch(&mut tape, &param_ids, b, x);
        product = Some(match product {
            None => out,
            Some(p) => tape.mul(p, out),
        });
    }
    let product = product.ok_or_else(|| Error::Training("model has no branches".into()))?;

    let region_out = |tape: &mut Tape, pts: &[[f64; 3]]| -> NodeId {
        let coords = scaling.normalize_coords(pts);
        let trunk = model.tape_trunk(tape, &param_ids, model.fourier_jet(&coords));
        model.tape_combine(tape, &param_ids, product, trunk)
    };

    let pde_pts: Vec<[f64; 3]> =
        colloc.interior.iter().chain(colloc.slab.iter()).copied().collect();
    let pde = region_out(&mut tape, &pde_pts);
    let surfaces = [
        region_out(&mut tape, &colloc.surfaces[0]),
        region_out(&mut tape, &colloc.surfaces[1]),
        region_out(&mut tape, &colloc.surfaces[2]),
        region_out(&mut tape, &colloc.surfaces[3]),
        region_out(&mut tape, &colloc.surfaces[4]),
        region_out(&mut tape, &colloc.surfaces[5]),
    ];
    let outs = RegionOuts { pde, surfaces };
    let (total, terms) = loss_graph(&mut tape, &outs, &phys, weights);
    Ok((tape, param_ids, total, terms))
}

fn report_from_nodes(
    tape: &Tape,
    total: NodeId,
    terms: &[NodeId; 7],
    iteration: usize,
) -> Result<LossReport> {
    let names = ["L_r", "L_xmin", "L_xmax", "L_ymin", "L_ymax", "L_zmin", "L_zmax"];
    let mut vals = [0.0; 7];
    for (t, &node) in terms.iter().enumerate() {
        vals[t] = tape.value(node).data[0];
        if !vals[t].is_finite() {
            return Err(Error::Training(format!(
                "loss term {} is non-finite at iteration {iteration}",
                names[t]
            )));
        }
    }
    Ok(LossReport {
        iteration,
        total: tape.value(total).data[0],
        l_r: vals[0],
        l_surface: [vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]],
    })
}

/// Loss evaluation without an optimizer step (no backward pass).
pub fn residual_losses(
    model: &OperatorModel,
    encoding: &EncodingSpec,
    config: &ChipConfig,
    scaling: &ScalingMap,
    samples: &SampleSet,
    colloc: &CollocationSet,
) -> Result<LossReport> {
    let weights = [1.0; 7];
    let (tape, _, total, terms) =
        iteration_graph(model, encoding, config, scaling, samples, colloc, &weights)?;
    report_from_nodes(&tape, total, &terms, 0)
}

/// Loss plus parameter gradients for one batch: the exact training
/// objective and backward pass, exposed so gradients can be verified
/// against finite differences.
pub fn loss_and_grad(
    model: &OperatorModel,
    encoding: &EncodingSpec,
    config: &ChipConfig,
    scaling: &ScalingMap,
    samples: &SampleSet,
    colloc: &CollocationSet,
) -> Result<(LossReport, Vec<Tensor>)> {
    let weights = [1.0; 7];
    let (mut tape, param_ids, total, terms) =
        iteration_graph(model, encoding, config, scaling, samples, colloc, &weights)?;
    let report = report_from_nodes(&tape, total, &terms, 0)?;
    tape.backward(total);
    let grads = param_ids
        .iter()
        .zip(&model.params)
        .map(|(&id, p)| tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.rows, p.cols)))
        .collect();
    Ok((report, grads))
}

/// Test/diagnostic path: the same residual graph, but over caller-supplied
/// jet outputs instead of the network's. Lets exact analytic solutions be
/// injected to verify each loss term vanishes at the true solution.
pub fn losses_from_jets(
    config: &ChipConfig,
    scaling: &ScalingMap,
    samples: &SampleSet,
    colloc: &CollocationSet,
    pde_jet: JetBatch,
    surface_jets: [JetBatch; 6],
) -> Result<LossReport> {
    let phys = build_physics(config, scaling, samples, colloc)?;
    let mut tape = Tape::new();
    let pde = tape.jet_const(pde_jet);
    let surfaces = surface_jets.map(|j| tape.jet_const(j));
    let outs = RegionOuts { pde, surfaces };
    let (total, terms) = loss_graph(&mut tape, &outs, &phys, &[1.0; 7]);
    report_from_nodes(&tape, total, &terms, 0)
}

/// Hand-rolled Adam with bias correction.
struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &[Tensor]) -> Adam {
        Adam {
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            for e in 0..p.len() {
                let ge = g.data[e];
                self.m[i].data[e] = self.beta1 * self.m[i].data[e] + (1.0 - self.beta1) * ge;
                self.v[i].data[e] = self.beta2 * self.v[i].data[e] + (1.0 - self.beta2) * ge * ge;
                let m_hat = self.m[i].data[e] / bc1;
                let v_hat = self.v[i].data[e] / bc2;
                p.data[e] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub packaged: PackagedModel,
    pub history: Vec<LossReport>,
}

/// Scaling map for a config at a given temperature scale.
pub fn scaling_for(config: &ChipConfig, t_scale: f64) -> ScalingMap {
    ScalingMap {
        lengths_m: config.geometry.total_extent(),
        origin_m: config.geometry.origin(),
        t_amb: config.ambient,
        t_scale,
    }
}

/// Derives the branch-input encoding implied by a function source and
/// config.
pub fn encoding_for(config: &ChipConfig, source: &FunctionSource) -> Result<EncodingSpec> {
    match source {
        FunctionSource::PowerMaps { grid_size, .. } => {
            let sp = Surface::ALL
                .iter()
                .find_map(|&s| config.surface_power(s))
                .ok_or_else(|| {
                    Error::Training("power-map training needs a surface power map in the config".into())
                })?;
            let dims = config.mesh.surface_dims(sp.surface);
            if dims.0 != dims.1 {
                return Err(Error::Training(format!(
                    "power-map surface must be square, got {}×{}",
                    dims.0, dims.1
                )));
            }
            if *grid_size != dims.0 {
                return Err(Error::Training(format!(
                    "sampler grid {}×{} does not match the {}×{} power surface",
                    grid_size, grid_size, dims.0, dims.1
                )));
            }
            Ok(EncodingSpec::PowerMap2D { m: dims.0, surface: sp.surface.key().into() })
        }
        FunctionSource::HtcPairs { lo, hi } => {
            for s in [Surface::ZMax, Surface::ZMin] {
                if !matches!(config.bc(s), BoundaryCondition::Convection { .. }) {
                    return Err(Error::Training(format!(
                        "convection-pair training needs convection BCs on both z faces \
                         (bc.{} is not convection)",
                        s.key()
                    )));
                }
            }
            if !(*lo > 0.0 && hi > lo) {
                return Err(Error::Training(format!("bad convection range [{lo}, {hi}]")));
            }
            Ok(EncodingSpec::HtcDual { lo: *lo, hi: *hi })
        }
    }
}

fn draw_samples(
    source: &FunctionSource,
    config: &ChipConfig,
    sampler: Option<&GrfSampler>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleSet> {
    match source {
        FunctionSource::PowerMaps { p_max, rescale, .. } => {
            let sampler = sampler.expect("power-map source builds a sampler");
            let sp = Surface::ALL
                .iter()
                .find_map(|&s| config.surface_power(s))
                .expect("validated in encoding_for");
            let maps: Vec<Tensor> =
                (0..count).map(|_| sampler.sample_power_map(*p_max, *rescale, rng)).collect();
            Ok(SampleSet::PowerMaps {
                surface: sp.surface,
                maps,
                unit_power_w: sp.unit_power_w,
            })
        }
        FunctionSource::HtcPairs { lo, hi } => {
            Ok(SampleSet::HtcPairs { pairs: sample_htc_pairs(*lo, *hi, count, rng)? })
        }
    }
}

/// Physics-informed training loop. Per iteration: draw
/// `functions_per_iter` input functions (and fresh collocation points in
/// random mode), build the loss graph, backpropagate, and take one Adam
/// step. Fully reproducible per seed. With `out_dir` set, writes periodic
/// checkpoints, a final `model.ckpt`, and `loss_history.csv`.
pub fn train(
    mut model: OperatorModel,
    config: &ChipConfig,
    source: &FunctionSource,
    spec: &TrainSpec,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    spec.validate()?;
    config.validate()?;
    let scaling = scaling_for(config, spec.t_scale);
    let encoding = encoding_for(config, source)?;
    // Branch widths must match what the encoding will feed them.
    match &encoding {
        EncodingSpec::PowerMap2D { m, .. } => {
            if model.spec.branches.len() != 1 || model.spec.branches[0].input_dim != m * m {
                return Err(Error::Training(format!(
                    "power-map model needs one branch of input width {}",
                    m * m
                )));
            }
        }
        EncodingSpec::HtcDual { .. } => {
            if model.spec.branches.len() != 2
                || model.spec.branches.iter().any(|b| b.input_dim != 1)
            {
                return Err(Error::Training(
                    "convection-pair model needs two branches of input width 1".into(),
                ));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grf = match source {
        FunctionSource::PowerMaps { grid_size, length_scale, .. } => {
            Some(GrfSampler::new(*grid_size, *length_scale)?)
        }
        FunctionSource::HtcPairs { .. } => None,
    };
    let mesh_colloc = match spec.collocation {
        CollocationMode::Mesh => Some(build_collocation(config, CollocationMode::Mesh, &mut rng)?),
        CollocationMode::Random { .. } => None,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut adam = Adam::new(&model.params);
    let mut history = Vec::with_capacity(spec.iterations);
    for iter in 1..=spec.iterations {
        let samples = draw_samples(source, config, grf.as_ref(), spec.functions_per_iter, &mut rng)?;
        let colloc = match &mesh_colloc {
            Some(c) => c.clone(),
            None => build_collocation(config, spec.collocation, &mut rng)?,
        };
        let (mut tape, param_ids, total, terms) =
            iteration_graph(&model, &encoding, config, &scaling, &samples, &colloc, &spec.term_weights)?;
        let report = report_from_nodes(&tape, total, &terms, iter)?;
        tape.backward(total);
        let grads: Vec<Tensor> = param_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| match tape.grad(id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(model.params[i].rows, model.params[i].cols),
            })
            .collect();
        let lr = spec.learning_rate(iter - 1);
        adam.step(&mut model.params, &grads, lr);
        history.push(report);

        if let Some(dir) = out_dir {
            if spec.checkpoint_every > 0 && iter % spec.checkpoint_every == 0 {
                let packaged = PackagedModel {
                    model: model.clone(),
                    scaling: scaling.clone(),
                    encoding: encoding.clone(),
                };
                packaged.save(&dir.join(format!("ckpt_{iter:05}.ckpt")))?;
            }
        }
    }

    let packaged = PackagedModel { model, scaling, encoding };
    if let Some(dir) = out_dir {
        packaged.save(&dir.join("model.ckpt"))?;
        std::fs::write(dir.join("loss_history.csv"), history_to_csv(&history))?;
    }
    Ok(TrainOutput { packaged, history })
}
