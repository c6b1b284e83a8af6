//! Softmax-output multilayer perceptrons over a support grid.
//!
//! Every grid point `θ_j` is pushed through the same stack of ReLU layers to a single
//! logit `v(θ_j)`; the PMF is the softmax of the `m` logits taken jointly. Gradients of
//! the mixture negative log-likelihood are accumulated in reverse through that
//! softmax and the layers, so one forward pass over the grid serves every row of a
//! data batch.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::{softmax, Grid, KernelMatrix, MixingPmf};
use crate::error::{Error, Result};

/// Layer sizes of a network in the family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    /// Coordinates per grid point.
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Size of the softmax, i.e. the number of grid points.
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Result<Self> {
        let arch = MlpArchitecture {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Four hidden layers of 500 units.
    pub fn default_for(input_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_layers: 4,
            hidden_width: 500,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "architecture dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.hidden_width, self.input_dim)];
        shapes.extend((1..self.hidden_layers).map(|_| (self.hidden_width, self.hidden_width)));
        shapes.push((1, self.hidden_width));
        shapes
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// One affine map `z ↦ W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of every layer. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

/// Gradient of a scalar loss with respect to each parameter of an [`MlpModel`].
pub type GradientSet = ParamSet;

impl ParamSet {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        ParamSet {
            layers: shapes
                .iter()
                .map(|&(r, c)| Layer {
                    weights: Array2::zeros((r, c)),
                    bias: Array1::zeros(r),
                })
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet::zeros(&self.shapes())
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &ParamSet) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights.scaled_add(a, &o.weights);
            l.bias.scaled_add(a, &o.bias);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            l.weights *= a;
            l.bias *= a;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Every scalar, layer by layer: weights (row-major) then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Overwrites every scalar in [`ParamSet::iter`] order.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut it = flat.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.shapes() == other.shapes()
    }
}

/// A network together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArchitecture,
    params: ParamSet,
}

/// Intermediate values of a forward pass over the grid, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    inputs: Array2<f64>,
    /// Post-ReLU activations of each hidden layer, `m × h`.
    hidden: Vec<Array2<f64>>,
    pub logits: Array1<f64>,
    pub pmf: Vec<f64>,
}

impl MlpModel {
    /// He-normal hidden layers (std `√(2/fan_in)`), zero biases, zero output layer.
    pub fn init(arch: MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.layer_shapes();
        let last = shapes.len() - 1;
        let mut params = ParamSet::zeros(&shapes);
        for layer in &mut params.layers[..last] {
            let fan_in = layer.weights.ncols() as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            layer.weights.mapv_inplace(|_| dist.sample(&mut rng));
        }
        Ok(MlpModel { arch, params })
    }

    /// Builds a model from explicit parameters, checking that the shapes chain.
    pub fn from_params(arch: MlpArchitecture, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        if params.shapes() != arch.layer_shapes() {
            return Err(Error::InvalidInput(format!(
                "parameter shapes {:?} do not match architecture {:?}",
                params.shapes(),
                arch.layer_shapes()
            )));
        }
        if params.layers.iter().any(|l| l.bias.len() != l.weights.nrows()) {
            return Err(Error::InvalidInput("bias length must equal layer output size".into()));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(MlpModel { arch, params })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_inputs(&self, inputs: &Array2<f64>) -> Result<()> {
        if inputs.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input dimension",
                expected: self.arch.input_dim,
                found: inputs.ncols(),
            });
        }
        if inputs.nrows() != self.arch.output_dim {
            return Err(Error::DimensionMismatch {
                context: "number of grid points (softmax size)",
                expected: self.arch.output_dim,
                found: inputs.nrows(),
            });
        }
        Ok(())
    }

    /// Forward pass on an `m × d` input matrix (one row per grid point).
    pub fn forward_pass(&self, inputs: &Array2<f64>) -> Result<ForwardPass> {
        self.check_inputs(inputs)?;
        let layers = &self.params.layers;
        let mut hidden = Vec::with_capacity(layers.len() - 1);
        for (k, layer) in layers[..layers.len() - 1].iter().enumerate() {
            let prev = if k == 0 { inputs } else { &hidden[k - 1] };
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            hidden.push(z);
        }
        let out = layers.last().expect("at least one layer");
        let top = hidden.last().expect("at least one hidden layer");
        let logits = top.dot(&out.weights.row(0)) + out.bias[0];
        let pmf = softmax(logits.as_slice().expect("contiguous"));
        Ok(ForwardPass {
            inputs: inputs.clone(),
            hidden,
            logits,
            pmf,
        })
    }

    /// Reverse-mode pass given `∂loss/∂logits`.
    pub fn backward(&self, pass: &ForwardPass, dlogits: &Array1<f64>) -> GradientSet {
        let layers = &self.params.layers;
        let mut grads = self.params.zeros_like();
        let last = layers.len() - 1;
        // Output layer: single row.
        let top = &pass.hidden[last - 1];
        grads.layers[last].weights.row_mut(0).assign(&top.t().dot(dlogits));
        grads.layers[last].bias[0] = dlogits.sum();
        // delta_{ij} = ∂loss/∂(pre-activation of unit j at grid point i)
        let mut delta: Array2<f64> = dlogits
            .view()
            .insert_axis(Axis(1))
            .dot(&layers[last].weights.view());
        delta.zip_mut_with(top, |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        for k in (0..last).rev() {
            let input = if k == 0 { &pass.inputs } else { &pass.hidden[k - 1] };
            grads.layers[k].weights = delta.t().dot(input);
            grads.layers[k].bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut next = delta.dot(&layers[k].weights);
                next.zip_mut_with(&pass.hidden[k - 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        grads
    }

    /// PMF over the grid, feeding the raw grid coordinates to the network.
    pub fn forward_pmf(&self, grid: &Grid) -> Result<MixingPmf> {
        self.pmf_for_inputs(grid, &grid.to_matrix())
    }

    /// PMF over `grid` where the network sees `inputs` (e.g. standardized coordinates).
    pub fn pmf_for_inputs(&self, grid: &Grid, inputs: &Array2<f64>) -> Result<MixingPmf> {
        if inputs.nrows() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "network inputs vs grid",
                expected: grid.len(),
                found: inputs.nrows(),
            });
        }
        let pass = self.forward_pass(inputs)?;
        MixingPmf::new(grid.clone(), pass.pmf)
    }

    /// Mean negative log-likelihood of the batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &KernelMatrix, grid: &Grid) -> Result<(f64, GradientSet)> {
        let pass = self.forward_pass(&grid.to_matrix())?;
        let (loss, dlogits) = batch_loss_and_dlogits(batch, &pass.pmf, 0)?;
        Ok((loss, self.backward(&pass, &dlogits)))
    }

    /// Serializes to JSON; parameters are base64 of little-endian `f64` bytes, so the
    /// round trip is bit-exact.
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            encoding: MODEL_ENCODING.to_string(),
            architecture: self.arch,
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: encode_f64(l.weights.iter().copied()),
                    bias: encode_f64(l.bias.iter().copied()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.encoding != MODEL_ENCODING {
            return Err(Error::Parse(format!(
                "unsupported model document ({}, {})",
                doc.format, doc.encoding
            )));
        }
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                let w = decode_f64(&l.weights)?;
                let b = decode_f64(&l.bias)?;
                let weights = Array2::from_shape_vec((l.rows, l.cols), w)
                    .map_err(|e| Error::Parse(format!("layer weights: {e}")))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_params(doc.architecture, ParamSet { layers })
    }
}

/// Batch loss `-(1/S) Σ_i log Σ_j F_ij p_j` and its gradient with respect to the
/// pre-softmax logits: `p_j (1 - (1/S) Σ_i F_ij / L_i)`.
pub(crate) fn batch_loss_and_dlogits(batch: &KernelMatrix, pmf: &[f64], batch_index: usize) -> Result<(f64, Array1<f64>)> {
    let s = batch.nrows();
    if s == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if batch.ncols() != pmf.len() {
        return Err(Error::DimensionMismatch {
            context: "batch columns vs grid",
            expected: pmf.len(),
            found: batch.ncols(),
        });
    }
    let mixtures = batch.row_mixtures(pmf);
    let mut loss = 0.0;
    let mut col = vec![0.0; pmf.len()];
    for (row, &mix) in batch.values().outer_iter().zip(&mixtures) {
        if !(mix > 0.0 && mix.is_finite()) {
            return Err(Error::Training {
                iteration: 0,
                batch: batch_index,
                reason: format!("row mixture likelihood {mix}"),
            });
        }
        loss -= mix.ln();
        let inv = 1.0 / mix;
        for (c, f) in col.iter_mut().zip(row.iter()) {
            *c += f * inv;
        }
    }
    let inv_s = 1.0 / s as f64;
    let dlogits = Array1::from_iter(pmf.iter().zip(&col).map(|(p, c)| p * (1.0 - c * inv_s)));
    Ok((loss * inv_s, dlogits))
}

/// Deterministic initialization; see [`MlpModel::init`].
pub fn init_model(arch: MlpArchitecture, seed: u64) -> Result<MlpModel> {
    MlpModel::init(arch, seed)
}

pub fn forward_pmf(model: &MlpModel, grid: &Grid) -> Result<MixingPmf> {
    model.forward_pmf(grid)
}

pub fn loss_and_gradient(model: &MlpModel, batch: &KernelMatrix, grid: &Grid) -> Result<(f64, GradientSet)> {
    model.loss_and_gradient(batch, grid)
}

const MODEL_FORMAT: &str = "mixdens-mlp/1";
const MODEL_ENCODING: &str = "base64-f64-le";

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    encoding: String,
    architecture: MlpArchitecture,
    layers: Vec<LayerDocument>,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    rows: usize,
    cols: usize,
    weights: String,
    bias: String,
}

fn encode_f64(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    B64.encode(bytes)
}

fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Parse(format!("base64 parameters: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse("parameter byte length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::mixture_nll;
    use ndarray::arr2;
    use rand::Rng;

    fn arch(d: usize, l: usize, h: usize, m: usize) -> MlpArchitecture {
        MlpArchitecture::new(d, l, h, m).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = arch(1, 2, 6, 5);
        assert_eq!(init_model(a, 4).unwrap(), init_model(a, 4).unwrap());
        assert_ne!(init_model(a, 4).unwrap(), init_model(a, 5).unwrap());
    }

    #[test]
    fn layer_shapes_chain() {
        let m = init_model(arch(1, 1, 3, 4), 0).unwrap();
        let shapes: Vec<_> = m.params().layers.iter().map(|l| (l.weights.dim(), l.bias.len())).collect();
        assert_eq!(shapes, vec![((3, 1), 3), ((1, 3), 1)]);
        let m = init_model(arch(2, 3, 4, 7), 0).unwrap();
        assert_eq!(m.architecture().layer_shapes(), vec![(4, 2), (4, 4), (4, 4), (1, 4)]);
    }

    #[test]
    fn zero_output_layer_gives_uniform_pmf() {
        let grid = Grid::equispaced(-2.0, 3.0, 9).unwrap();
        let m = init_model(arch(1, 2, 5, 9), 1).unwrap();
        let pmf = m.forward_pmf(&grid).unwrap();
        for w in pmf.weights() {
            assert!((w - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_forward_pass() {
        // v(θ) = 2·relu(1.5θ - 0.5) - 1
        let params = ParamSet {
            layers: vec![
                Layer { weights: arr2(&[[1.5]]), bias: Array1::from(vec![-0.5]) },
                Layer { weights: arr2(&[[2.0]]), bias: Array1::from(vec![-1.0]) },
            ],
        };
        let model = MlpModel::from_params(arch(1, 1, 1, 3), params).unwrap();
        let grid = Grid::univariate(vec![0.0, 1.0, 2.0]).unwrap();
        let logits = [-1.0, 2.0 * 1.0 - 1.0, 2.0 * 2.5 - 1.0];
        let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        let pmf = model.forward_pmf(&grid).unwrap();
        for (w, v) in pmf.weights().iter().zip(logits) {
            assert!((w - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = init_model(arch(2, 1, 3, 4), 0).unwrap();
        let grid = Grid::equispaced(0.0, 1.0, 4).unwrap();
        assert!(matches!(m.forward_pmf(&grid), Err(Error::DimensionMismatch { .. })));
        let m = init_model(arch(1, 1, 3, 5), 0).unwrap();
        assert!(matches!(m.forward_pmf(&grid), Err(Error::DimensionMismatch { .. })));
    }

    fn random_kernel(rng: &mut ChaCha8Rng, s: usize, m: usize) -> KernelMatrix {
        KernelMatrix::from_values(Array2::from_shape_fn((s, m), |_| rng.random_range(0.01..1.0))).unwrap()
    }

    #[test]
    fn uniform_model_loss_reduces_to_row_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid::equispaced(-1.0, 1.0, 6).unwrap();
        let model = init_model(arch(1, 2, 4, 6), 3).unwrap();
        let batch = random_kernel(&mut rng, 8, 6);
        let (loss, _) = model.loss_and_gradient(&batch, &grid).unwrap();
        let expected = -batch
            .values()
            .outer_iter()
            .map(|r| (r.sum() / 6.0).ln())
            .sum::<f64>()
            / 8.0;
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn loss_agrees_with_mixture_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = Grid::equispaced(-1.0, 2.0, 7).unwrap();
        let mut model = init_model(arch(1, 2, 5, 7), 3).unwrap();
        let flat: Vec<f64> = (0..model.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.params_mut().set_flat(&flat);
        let batch = random_kernel(&mut rng, 11, 7);
        let (loss, _) = model.loss_and_gradient(&batch, &grid).unwrap();
        let pmf = model.forward_pmf(&grid).unwrap();
        assert!((loss - mixture_nll(&batch, &pmf).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_leave_gradient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid = Grid::equispaced(0.0, 1.0, 5).unwrap();
        let mut model = init_model(arch(1, 2, 4, 5), 0).unwrap();
        let flat: Vec<f64> = (0..model.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.params_mut().set_flat(&flat);
        let batch = random_kernel(&mut rng, 4, 5);
        let doubled = batch.select_rows(&[0, 1, 2, 3, 0, 1, 2, 3]);
        let (l1, g1) = model.loss_and_gradient(&batch, &grid).unwrap();
        let (l2, g2) = model.loss_and_gradient(&doubled, &grid).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn output_bias_shift_leaves_pmf_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = Grid::equispaced(0.0, 1.0, 5).unwrap();
        let mut model = init_model(arch(1, 2, 4, 5), 0).unwrap();
        let flat: Vec<f64> = (0..model.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.params_mut().set_flat(&flat);
        let before = model.forward_pmf(&grid).unwrap();
        let last = model.params().layers.len() - 1;
        model.params_mut().layers[last].bias += 17.25;
        let after = model.forward_pmf(&grid).unwrap();
        for (a, b) in before.weights().iter().zip(after.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = init_model(arch(2, 2, 3, 4), 8).unwrap();
        let flat: Vec<f64> = (0..model.params().len()).map(|_| rng.random::<f64>() * 1e-7 - 3.3).collect();
        model.params_mut().set_flat(&flat);
        let back = MlpModel::from_json(&model.to_json()).unwrap();
        let a: Vec<u64> = model.params().iter().map(f64::to_bits).collect();
        let b: Vec<u64> = back.params().iter().map(f64::to_bits).collect();
        assert_eq!(a, b);
        assert_eq!(back.architecture(), model.architecture());
        assert!(MlpModel::from_json("{}").is_err());
    }
}
