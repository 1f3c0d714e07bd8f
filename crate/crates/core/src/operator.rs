//! Multi-input operator network: one MLP branch per input function, a
//! Fourier-featurized MLP trunk over query coordinates, combined by an
//! elementwise product and a dot over the latent width,
//!
//! `τ(u₁…u_k, ŷ) = b₀ + Σ_p (Π_i branch_i(u_i)_p) · trunk(ŷ)_p`.
//!
//! The first trunk layer is a frozen random-Fourier embedding
//! `[sin(2π·B·ŷ), cos(2π·B·ŷ)]` with `B ~ N(0, σ_ff²)`; its weights never
//! train, which keeps coordinates out of the gradient tape. Hidden layers
//! use swish; every final projection is linear. The network predicts the
//! dimensionless temperature τ; [`ScalingMap`] carries the affine transforms
//! between physical coordinates/kelvin and network units.

use crate::autodiff::{swish, swish_derivs, JetBatch, NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// One branch MLP: `input_dim → layers[0] → … → layers.last()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub name: String,
    pub input_dim: usize,
    pub layers: Vec<usize>,
}

/// Full architecture. `trunk_layers` are the trainable widths after the
/// Fourier embedding; the last entry of every `layers` list is the shared
/// latent width p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub branches: Vec<BranchSpec>,
    pub trunk_layers: Vec<usize>,
    pub fourier_features: usize,
    pub sigma_ff: f64,
    pub head_bias: bool,
}

impl ModelSpec {
    pub fn latent_width(&self) -> usize {
        *self.trunk_layers.last().expect("validated spec has trunk layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Model("model needs at least one branch".into()));
        }
        if self.trunk_layers.is_empty() {
            return Err(Error::Model("model needs at least one trunk layer".into()));
        }
        if self.fourier_features == 0 {
            return Err(Error::Model("fourier feature count must be ≥ 1".into()));
        }
        if !(self.sigma_ff > 0.0 && self.sigma_ff.is_finite()) {
            return Err(Error::Model(format!(
                "fourier σ must be positive and finite, got {}",
                self.sigma_ff
            )));
        }
        let p = *self.trunk_layers.last().unwrap();
        for b in &self.branches {
            if b.input_dim == 0 || b.layers.is_empty() || b.layers.iter().any(|&w| w == 0) {
                return Err(Error::Model(format!("branch '{}' has a zero dimension", b.name)));
            }
            if *b.layers.last().unwrap() != p {
                return Err(Error::Model(format!(
                    "branch '{}' ends in width {} but the trunk's latent width is {p}",
                    b.name,
                    b.layers.last().unwrap()
                )));
            }
        }
        if self.trunk_layers.iter().any(|&w| w == 0) {
            return Err(Error::Model("trunk has a zero-width layer".into()));
        }
        Ok(())
    }
}

/// Index of each parameter tensor inside [`OperatorModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    /// Per branch, per layer: (weight index, bias index).
    pub branch_wb: Vec<Vec<(usize, usize)>>,
    /// Per trunk layer: (weight index, bias index).
    pub trunk_wb: Vec<(usize, usize)>,
    pub head_bias: Option<usize>,
}

/// Trained weights plus the frozen Fourier matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorModel {
    pub spec: ModelSpec,
    /// Frozen embedding matrix, (fourier_features × 3).
    pub fourier_b: Tensor,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
}

impl OperatorModel {
    /// Deterministic initialization: the Fourier matrix is drawn first
    /// (N(0, σ_ff²)), then branch layers in declaration order, then trunk
    /// layers, then the head bias. Weights are Glorot-uniform
    /// ±√(6/(fan_in + fan_out)); all biases start at zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<OperatorModel> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.sigma_ff)
            .map_err(|e| Error::Model(format!("fourier σ: {e}")))?;
        let mut fourier_b = Tensor::zeros(spec.fourier_features, 3);
        for e in fourier_b.data.iter_mut() {
            *e = normal.sample(&mut rng);
        }
        let mut params = Vec::new();
        let mut names = Vec::new();
        let glorot = |rng: &mut ChaCha8Rng, out: usize, inp: usize| -> Tensor {
            let a = (6.0 / (inp + out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            let mut w = Tensor::zeros(out, inp);
            for e in w.data.iter_mut() {
                *e = dist.sample(rng);
            }
            w
        };
        for b in &spec.branches {
            let mut inp = b.input_dim;
            for (l, &out) in b.layers.iter().enumerate() {
                params.push(glorot(&mut rng, out, inp));
                names.push(format!("branch.{}.w{l}", b.name));
                params.push(Tensor::zeros(1, out));
                names.push(format!("branch.{}.b{l}", b.name));
                inp = out;
            }
        }
        let mut inp = 2 * spec.fourier_features;
        for (l, &out) in spec.trunk_layers.iter().enumerate() {
            params.push(glorot(&mut rng, out, inp));
            names.push(format!("trunk.w{l}"));
            params.push(Tensor::zeros(1, out));
            names.push(format!("trunk.b{l}"));
            inp = out;
        }
        if spec.head_bias {
            params.push(Tensor::zeros(1, 1));
            names.push("head.bias".into());
        }
        Ok(OperatorModel { spec, fourier_b, params, names })
    }

    pub fn layout(&self) -> ParamLayout {
        let mut idx = 0;
        let mut branch_wb = Vec::with_capacity(self.spec.branches.len());
        for b in &self.spec.branches {
            let mut wb = Vec::with_capacity(b.layers.len());
            for _ in &b.layers {
                wb.push((idx, idx + 1));
                idx += 2;
            }
            branch_wb.push(wb);
        }
        let mut trunk_wb = Vec::with_capacity(self.spec.trunk_layers.len());
        for _ in &self.spec.trunk_layers {
            trunk_wb.push((idx, idx + 1));
            idx += 2;
        }
        let head_bias = if self.spec.head_bias {
            let h = Some(idx);
            idx += 1;
            h
        } else {
            None
        };
        assert_eq!(idx, self.params.len(), "layout must cover every parameter");
        ParamLayout { branch_wb, trunk_wb, head_bias }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Fourier embedding of unit-cube coordinates (n×3) → (n × 2q_f).
    pub fn fourier_features(&self, coords: &Tensor) -> Tensor {
        assert_eq!(coords.cols, 3, "coordinates are (n × 3)");
        let q = self.spec.fourier_features;
        let z = coords.matmul_nt(&self.fourier_b).scale(2.0 * std::f64::consts::PI);
        let mut out = Tensor::zeros(coords.rows, 2 * q);
        for r in 0..coords.rows {
            for f in 0..q {
                let zv = z.at(r, f);
                *out.at_mut(r, f) = zv.sin();
                *out.at_mut(r, q + f) = zv.cos();
            }
        }
        out
    }

    /// Fourier embedding carrying first and pure second derivatives with
    /// respect to the unit-cube coordinates. Because the embedding is the
    /// only place coordinates enter, this jet seeds the whole trunk.
    pub fn fourier_jet(&self, coords: &Tensor) -> JetBatch {
        assert_eq!(coords.cols, 3, "coordinates are (n × 3)");
        let q = self.spec.fourier_features;
        let two_pi = 2.0 * std::f64::consts::PI;
        let z = coords.matmul_nt(&self.fourier_b).scale(two_pi);
        let mut jet = JetBatch::constant(Tensor::zeros(coords.rows, 2 * q));
        for r in 0..coords.rows {
            for f in 0..q {
                let zv = z.at(r, f);
                let (s, c) = (zv.sin(), zv.cos());
                *jet.v.at_mut(r, f) = s;
                *jet.v.at_mut(r, q + f) = c;
                for a in 0..3 {
                    let k = two_pi * self.fourier_b.at(f, a);
                    *jet.d[a].at_mut(r, f) = c * k;
                    *jet.d[a].at_mut(r, q + f) = -s * k;
                    *jet.dd[a].at_mut(r, f) = -s * k * k;
                    *jet.dd[a].at_mut(r, q + f) = -c * k * k;
                }
            }
        }
        jet
    }

    /// Branch MLP values for a batch of inputs (F × input_dim) → (F × p).
    pub fn branch_values(&self, branch: usize, inputs: &Tensor) -> Tensor {
        let layout = self.layout();
        let wb = &layout.branch_wb[branch];
        assert_eq!(
            inputs.cols, self.spec.branches[branch].input_dim,
            "branch '{}' input width mismatch",
            self.spec.branches[branch].name
        );
        let mut h = inputs.clone();
        for (l, &(wi, bi)) in wb.iter().enumerate() {
            let mut y = h.matmul_nt(&self.params[wi]);
            y.add_row_broadcast(&self.params[bi]);
            h = if l + 1 < wb.len() { y.map(swish) } else { y };
        }
        h
    }

    /// Product over all branches' outputs, (F × p). Branch inputs must share
    /// the same batch size F.
    pub fn branch_product(&self, branch_inputs: &[Tensor]) -> Tensor {
        assert_eq!(branch_inputs.len(), self.spec.branches.len(), "one input batch per branch");
        let mut prod: Option<Tensor> = None;
        for (i, x) in branch_inputs.iter().enumerate() {
            let v = self.branch_values(i, x);
            prod = Some(match prod {
                None => v,
                Some(p) => p.mul(&v),
            });
        }
        prod.expect("at least one branch")
    }

    /// Trunk values on unit-cube coordinates (n×3) → (n × p).
    pub fn trunk_values(&self, coords: &Tensor) -> Tensor {
        let layout = self.layout();
        let mut h = self.fourier_features(coords);
        for (l, &(wi, bi)) in layout.trunk_wb.iter().enumerate() {
            let mut y = h.matmul_nt(&self.params[wi]);
            y.add_row_broadcast(&self.params[bi]);
            h = if l + 1 < layout.trunk_wb.len() { y.map(swish) } else { y };
        }
        h
    }

    /// Trunk forward carrying spatial jets, without a gradient tape.
    /// Identical arithmetic to the tape path (same kernels in the same
    /// order), so the two agree bit-for-bit.
    pub fn trunk_jets(&self, coords: &Tensor) -> JetBatch {
        let layout = self.layout();
        let mut jet = self.fourier_jet(coords);
        let n_layers = layout.trunk_wb.len();
        for (l, &(wi, bi)) in layout.trunk_wb.iter().enumerate() {
            let w = &self.params[wi];
            let mut v = jet.v.matmul_nt(w);
            v.add_row_broadcast(&self.params[bi]);
            let d = [
                jet.d[0].matmul_nt(w),
                jet.d[1].matmul_nt(w),
                jet.d[2].matmul_nt(w),
            ];
            let dd = [
                jet.dd[0].matmul_nt(w),
                jet.dd[1].matmul_nt(w),
                jet.dd[2].matmul_nt(w),
            ];
            jet = JetBatch { v, d, dd };
            if l + 1 < n_layers {
                let mut out = jet.clone();
                for e in 0..jet.v.len() {
                    let (f, f1, f2, _) = swish_derivs(jet.v.data[e]);
                    out.v.data[e] = f;
                    for a in 0..3 {
                        let dv = jet.d[a].data[e];
                        let ddv = jet.dd[a].data[e];
                        out.d[a].data[e] = f1 * dv;
                        out.dd[a].data[e] = f2 * dv * dv + f1 * ddv;
                    }
                }
                jet = out;
            }
        }
        jet
    }

    /// Head bias value (0 when the model trains without one).
    pub fn head_bias_value(&self) -> f64 {
        self.layout().head_bias.map(|i| self.params[i].data[0]).unwrap_or(0.0)
    }

    /// Plain prediction: τ values, (F × n) for F function samples on n
    /// coordinates.
    pub fn predict_tau(&self, branch_inputs: &[Tensor], coords: &Tensor) -> Tensor {
        let p = self.branch_product(branch_inputs);
        let t = self.trunk_values(coords);
        let mut out = p.matmul_nt(&t);
        let b0 = self.head_bias_value();
        if b0 != 0.0 {
            for e in out.data.iter_mut() {
                *e += b0;
            }
        }
        out
    }

    /// Prediction with spatial jets, (F × n) per component.
    pub fn predict_jets(&self, branch_inputs: &[Tensor], coords: &Tensor) -> JetBatch {
        let p = self.branch_product(branch_inputs);
        let t = self.trunk_jets(coords);
        let mut v = p.matmul_nt(&t.v);
        let b0 = self.head_bias_value();
        if b0 != 0.0 {
            for e in v.data.iter_mut() {
                *e += b0;
            }
        }
        JetBatch {
            v,
            d: [
                p.matmul_nt(&t.d[0]),
                p.matmul_nt(&t.d[1]),
                p.matmul_nt(&t.d[2]),
            ],
            dd: [
                p.matmul_nt(&t.dd[0]),
                p.matmul_nt(&t.dd[1]),
                p.matmul_nt(&t.dd[2]),
            ],
        }
    }

    /// Records the branch MLP on a tape. `param_ids` must hold one tape node
    /// per parameter tensor, in [`OperatorModel::params`] order.
    pub fn tape_branch(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        branch: usize,
        input: NodeId,
    ) -> NodeId {
        let layout = self.layout();
        let wb = &layout.branch_wb[branch];
        let mut h = input;
        for (l, &(wi, bi)) in wb.iter().enumerate() {
            h = tape.linear(h, param_ids[wi], Some(param_ids[bi]));
            if l + 1 < wb.len() {
                h = tape.swish(h);
            }
        }
        h
    }

    /// Records the jet trunk on a tape, starting from a precomputed Fourier
    /// jet (a tape constant: the embedding is frozen).
    pub fn tape_trunk(&self, tape: &mut Tape, param_ids: &[NodeId], fourier: JetBatch) -> NodeId {
        let layout = self.layout();
        let mut h = tape.jet_const(fourier);
        let n_layers = layout.trunk_wb.len();
        for (l, &(wi, bi)) in layout.trunk_wb.iter().enumerate() {
            h = tape.linear_jet(h, param_ids[wi], Some(param_ids[bi]));
            if l + 1 < n_layers {
                h = tape.swish_jet(h);
            }
        }
        h
    }

    /// Records the head combine on a tape: branch product × trunk jet
    /// (+ head bias when present).
    pub fn tape_combine(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        product: NodeId,
        trunk: NodeId,
    ) -> NodeId {
        let bias = self.layout().head_bias.map(|i| param_ids[i]);
        tape.combine_cross(product, trunk, bias)
    }
}

/// Precomputed-trunk predictor for a fixed coordinate set. Building one
/// amortizes the coordinate-dependent work; each subsequent map costs only
/// its branch forward and the combine.
#[derive(Debug, Clone)]
pub struct Predictor {
    model: OperatorModel,
    trunk: Tensor,
}

impl Predictor {
    pub fn new(model: OperatorModel, coords: &Tensor) -> Predictor {
        let trunk = model.trunk_values(coords);
        Predictor { model, trunk }
    }

    pub fn model(&self) -> &OperatorModel {
        &self.model
    }

    pub fn point_count(&self) -> usize {
        self.trunk.rows
    }

    /// τ predictions (F × n) for the fixed coordinates.
    pub fn predict(&self, branch_inputs: &[Tensor]) -> Tensor {
        let p = self.model.branch_product(branch_inputs);
        let mut out = p.matmul_nt(&self.trunk);
        let b0 = self.model.head_bias_value();
        if b0 != 0.0 {
            for e in out.data.iter_mut() {
                *e += b0;
            }
        }
        out
    }
}

/// Affine maps between physical space/temperature and network units:
/// ŷ_a = (y_a − origin_a)/length_a and τ = (T − t_amb)/t_scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub lengths_m: [f64; 3],
    pub origin_m: [f64; 3],
    pub t_amb: f64,
    pub t_scale: f64,
}

impl ScalingMap {
    pub fn normalize_coords(&self, points: &[[f64; 3]]) -> Tensor {
        let mut out = Tensor::zeros(points.len(), 3);
        for (r, p) in points.iter().enumerate() {
            for a in 0..3 {
                *out.at_mut(r, a) = (p[a] - self.origin_m[a]) / self.lengths_m[a];
            }
        }
        out
    }

    pub fn tau_to_kelvin(&self, tau: f64) -> f64 {
        self.t_amb + self.t_scale * tau
    }

    pub fn kelvin_to_tau(&self, t: f64) -> f64 {
        (t - self.t_amb) / self.t_scale
    }
}

/// How branch inputs are built from a chip configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingSpec {
    /// Single branch fed the flattened m×m surface power map (row-major,
    /// first row at the v-min edge), in raw power units.
    PowerMap2D { m: usize, surface: String },
    /// Two scalar branches fed the top and bottom convection coefficients,
    /// each normalized to [0,1] over the training range [lo, hi].
    HtcDual { lo: f64, hi: f64 },
}

impl EncodingSpec {
    /// Branch input batches for this encoding. `PowerMap2D` takes one tensor
    /// per function sample; `HtcDual` takes (top, bottom) pairs.
    pub fn encode_power_maps(&self, maps: &[Tensor]) -> Result<Vec<Tensor>> {
        let EncodingSpec::PowerMap2D { m, .. } = self else {
            return Err(Error::Model("model does not take power-map inputs".into()));
        };
        let mut batch = Tensor::zeros(maps.len(), m * m);
        for (r, map) in maps.iter().enumerate() {
            if map.rows != *m || map.cols != *m {
                return Err(Error::Model(format!(
                    "power map {r} is {}×{}, model expects {m}×{m}",
                    map.rows, map.cols
                )));
            }
            batch.row_mut(r).copy_from_slice(&map.data);
        }
        Ok(vec![batch])
    }

    pub fn encode_htc_pairs(&self, pairs: &[(f64, f64)]) -> Result<Vec<Tensor>> {
        let EncodingSpec::HtcDual { lo, hi } = self else {
            return Err(Error::Model("model does not take convection-pair inputs".into()));
        };
        let norm = |h: f64| (h - lo) / (hi - lo);
        let mut top = Tensor::zeros(pairs.len(), 1);
        let mut bottom = Tensor::zeros(pairs.len(), 1);
        for (r, (t, b)) in pairs.iter().enumerate() {
            top.data[r] = norm(*t);
            bottom.data[r] = norm(*b);
        }
        Ok(vec![top, bottom])
    }
}

/// A trained model bundled with everything needed to run it on physical
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PackagedModel {
    pub model: OperatorModel,
    pub scaling: ScalingMap,
    pub encoding: EncodingSpec,
}

const CHECKPOINT_MAGIC: &[u8; 10] = b"OPNETCKPT\x01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    scaling: ScalingMap,
    encoding: EncodingSpec,
    names: Vec<String>,
    shapes: Vec<[usize; 2]>,
    fourier_shape: [usize; 2],
}

impl PackagedModel {
    /// Binary checkpoint: magic, little-endian u64 header length, JSON
    /// header, then raw little-endian f64 data — the Fourier matrix followed
    /// by each parameter tensor in order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            spec: self.model.spec.clone(),
            scaling: self.scaling.clone(),
            encoding: self.encoding.clone(),
            names: self.model.names.clone(),
            shapes: self.model.params.iter().map(|t| [t.rows, t.cols]).collect(),
            fourier_shape: [self.model.fourier_b.rows, self.model.fourier_b.cols],
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Model(format!("checkpoint header: {e}")))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        let mut write_tensor = |t: &Tensor| -> Result<()> {
            for v in &t.data {
                f.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        write_tensor(&self.model.fourier_b)?;
        for t in &self.model.params {
            write_tensor(t)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PackagedModel> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 10];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Model(format!(
                "{} is not a model checkpoint (bad magic)",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        f.read_exact(&mut header_json)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Model(format!("checkpoint header: {e}")))?;
        header.spec.validate()?;
        let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor> {
            let mut t = Tensor::zeros(rows, cols);
            let mut buf = [0u8; 8];
            for v in t.data.iter_mut() {
                f.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
                if !v.is_finite() {
                    return Err(Error::Model("checkpoint holds non-finite weights".into()));
                }
            }
            Ok(t)
        };
        let fourier_b = read_tensor(header.fourier_shape[0], header.fourier_shape[1])?;
        let mut params = Vec::with_capacity(header.shapes.len());
        for s in &header.shapes {
            params.push(read_tensor(s[0], s[1])?);
        }
        if header.names.len() != params.len() {
            return Err(Error::Model("checkpoint name/shape count mismatch".into()));
        }
        let model =
            OperatorModel { spec: header.spec, fourier_b, params, names: header.names };
        // The declared architecture must agree with the stored tensors.
        let expect = OperatorModel::init(model.spec.clone(), 0)?;
        if expect.params.len() != model.params.len()
            || expect
                .params
                .iter()
                .zip(&model.params)
                .any(|(a, b)| (a.rows, a.cols) != (b.rows, b.cols))
        {
            return Err(Error::Model("checkpoint tensors do not match the architecture".into()));
        }
        Ok(PackagedModel { model, scaling: header.scaling, encoding: header.encoding })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::JetComp;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            branches: vec![BranchSpec { name: "power".into(), input_dim: 9, layers: vec![8, 5] }],
            trunk_layers: vec![8, 5],
            fourier_features: 4,
            sigma_ff: 1.0,
            head_bias: true,
        }
    }

    fn dual_spec() -> ModelSpec {
        ModelSpec {
            branches: vec![
                BranchSpec { name: "htc_top".into(), input_dim: 1, layers: vec![6, 4] },
                BranchSpec { name: "htc_bottom".into(), input_dim: 1, layers: vec![6, 4] },
            ],
            trunk_layers: vec![6, 6, 4],
            fourier_features: 3,
            sigma_ff: 0.5,
            head_bias: false,
        }
    }

    fn coords(n: usize, salt: u64) -> Tensor {
        let mut t = Tensor::zeros(n, 3);
        let mut state = salt.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        for e in t.data.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *e = (state % 1000) as f64 / 1000.0;
        }
        t
    }

    #[test]
    fn init_is_deterministic_and_glorot_bounded() {
        let a = OperatorModel::init(tiny_spec(), 7).unwrap();
        let b = OperatorModel::init(tiny_spec(), 7).unwrap();
        let c = OperatorModel::init(tiny_spec(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert_ne!(a.fourier_b, c.fourier_b);
        // Per-tensor names and shapes line up.
        assert_eq!(a.params.len(), a.names.len());
        assert_eq!(a.names[0], "branch.power.w0");
        assert_eq!(a.params[0].rows, 8);
        assert_eq!(a.params[0].cols, 9);
        let bound = (6.0f64 / (9.0 + 8.0)).sqrt();
        assert!(a.params[0].data.iter().all(|v| v.abs() <= bound));
        // Biases start at zero; head bias is the final parameter.
        assert!(a.params[1].data.iter().all(|&v| v == 0.0));
        assert_eq!(a.names.last().unwrap(), "head.bias");
        let layout = a.layout();
        assert_eq!(layout.head_bias, Some(a.params.len() - 1));
        assert_eq!(layout.branch_wb[0].len(), 2);
        assert_eq!(layout.trunk_wb.len(), 2);
    }

    #[test]
    fn spec_validation_rejects_width_mismatch() {
        let mut spec = tiny_spec();
        spec.trunk_layers = vec![8, 6];
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.sigma_ff = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.branches.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fourier_embedding_matches_hand_values() {
        let mut model = OperatorModel::init(tiny_spec(), 1).unwrap();
        model.spec.fourier_features = 1;
        model.fourier_b = Tensor::from_vec(1, 3, vec![1.0, 0.0, 0.0]);
        let pts = Tensor::from_vec(1, 3, vec![0.25, 0.9, 0.4]);
        let feat = model.fourier_features(&pts);
        // z = 2π·0.25: sin = 1, cos = 0.
        assert!((feat.at(0, 0) - 1.0).abs() < 1e-12);
        assert!(feat.at(0, 1).abs() < 1e-12);
        let jet = model.fourier_jet(&pts);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((jet.v.at(0, 0) - 1.0).abs() < 1e-12);
        // d sin/dŷ₀ = cos(z)·2π = 0; dd = −sin(z)·(2π)².
        assert!(jet.d[0].at(0, 0).abs() < 1e-9);
        assert!((jet.dd[0].at(0, 0) + two_pi * two_pi).abs() < 1e-9);
        // No dependence on the other axes.
        assert_eq!(jet.d[1].at(0, 0), 0.0);
        assert_eq!(jet.dd[2].at(0, 1), 0.0);
    }

    #[test]
    fn trunk_jets_agree_with_tape_forward_bitwise() {
        let model = OperatorModel::init(tiny_spec(), 3).unwrap();
        let pts = coords(7, 5);
        let direct = model.trunk_jets(&pts);
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = model.params.iter().map(|t| tape.param(t.clone())).collect();
        let trunk = model.tape_trunk(&mut tape, &ids, model.fourier_jet(&pts));
        assert_eq!(direct, *tape.jet_value(trunk));
    }

    #[test]
    fn predict_tau_agrees_with_tape_and_jets() {
        let model = OperatorModel::init(dual_spec(), 11).unwrap();
        let pts = coords(6, 9);
        let inputs = vec![
            Tensor::from_vec(4, 1, vec![0.1, 0.4, 0.7, 1.0]),
            Tensor::from_vec(4, 1, vec![0.9, 0.2, 0.5, 0.0]),
        ];
        let plain = model.predict_tau(&inputs, &pts);
        assert_eq!(plain.rows, 4);
        assert_eq!(plain.cols, 6);
        let jets = model.predict_jets(&inputs, &pts);
        assert_eq!(plain, jets.v);
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = model.params.iter().map(|t| tape.param(t.clone())).collect();
        let x0 = tape.constant(inputs[0].clone());
        let x1 = tape.constant(inputs[1].clone());
        let b0 = model.tape_branch(&mut tape, &ids, 0, x0);
        let b1 = model.tape_branch(&mut tape, &ids, 1, x1);
        let prod = tape.mul(b0, b1);
        let trunk = model.tape_trunk(&mut tape, &ids, model.fourier_jet(&pts));
        let out = model.tape_combine(&mut tape, &ids, prod, trunk);
        let val = tape.component(out, JetComp::Value);
        for e in 0..plain.len() {
            assert!((plain.data[e] - tape.value(val).data[e]).abs() < 1e-12);
        }
        let dd1 = tape.component(out, JetComp::DD(1));
        for e in 0..plain.len() {
            assert!((jets.dd[1].data[e] - tape.value(dd1).data[e]).abs() < 1e-12);
        }
    }

    #[test]
    fn head_bias_shifts_every_output() {
        let mut model = OperatorModel::init(tiny_spec(), 2).unwrap();
        let pts = coords(4, 2);
        let inputs = vec![Tensor::filled(2, 9, 0.3)];
        let base = model.predict_tau(&inputs, &pts);
        let head = model.layout().head_bias.unwrap();
        model.params[head].data[0] = 1.5;
        let shifted = model.predict_tau(&inputs, &pts);
        for e in 0..base.len() {
            assert!((shifted.data[e] - base.data[e] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn predictor_matches_full_forward() {
        let model = OperatorModel::init(tiny_spec(), 4).unwrap();
        let pts = coords(10, 3);
        let inputs = vec![coords(5, 8).matmul_nt(&Tensor::filled(9, 3, 0.2))];
        let full = model.predict_tau(&inputs, &pts);
        let predictor = Predictor::new(model, &pts);
        assert_eq!(predictor.point_count(), 10);
        assert_eq!(predictor.predict(&inputs), full);
    }

    #[test]
    fn scaling_round_trips() {
        let s = ScalingMap {
            lengths_m: [1e-3, 1e-3, 5e-4],
            origin_m: [0.0, 0.0, 0.0],
            t_amb: 298.15,
            t_scale: 20.0,
        };
        let pts = s.normalize_coords(&[[5e-4, 2.5e-4, 5e-4]]);
        assert_eq!(pts.row(0), &[0.5, 0.25, 1.0]);
        let t = 305.0;
        assert!((s.tau_to_kelvin(s.kelvin_to_tau(t)) - t).abs() < 1e-12);
        assert_eq!(s.kelvin_to_tau(298.15), 0.0);
    }

    #[test]
    fn encodings_build_branch_batches() {
        let enc = EncodingSpec::PowerMap2D { m: 3, surface: "zmax".into() };
        let maps = vec![Tensor::from_vec(3, 3, (0..9).map(|v| v as f64).collect())];
        let batch = enc.encode_power_maps(&maps).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].rows, 1);
        assert_eq!(batch[0].cols, 9);
        assert_eq!(batch[0].row(0)[4], 4.0);
        assert!(enc.encode_power_maps(&[Tensor::zeros(2, 3)]).is_err());
        assert!(enc.encode_htc_pairs(&[(1.0, 2.0)]).is_err());

        let enc = EncodingSpec::HtcDual { lo: 100.0, hi: 300.0 };
        let batch = enc.encode_htc_pairs(&[(100.0, 300.0), (200.0, 150.0)]).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].data, vec![0.0, 0.5]);
        assert_eq!(batch[1].data, vec![1.0, 0.25]);
        assert!(enc.encode_power_maps(&[]).is_err());
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = OperatorModel::init(dual_spec(), 21).unwrap();
        let packaged = PackagedModel {
            model,
            scaling: ScalingMap {
                lengths_m: [1e-3, 1e-3, 5.5e-4],
                origin_m: [0.0, 0.0, 0.0],
                t_amb: 298.15,
                t_scale: 20.0,
            },
            encoding: EncodingSpec::HtcDual { lo: 333.33, hi: 1000.0 },
        };
        packaged.save(&path).unwrap();
        let back = PackagedModel::load(&path).unwrap();
        assert_eq!(back, packaged);

        // Not a checkpoint → clean error.
        let bogus = dir.path().join("bogus.ckpt");
        std::fs::write(&bogus, b"not a checkpoint at all").unwrap();
        let err = PackagedModel::load(&bogus).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "got: {err}");
    }
}
