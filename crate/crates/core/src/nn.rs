//! Two-layer networks `x ↦ (1/M) Σ_m c_m σ(w_mᵀx + b_m)`.
//!
//! A network of width `M` on `d` inputs with `C` outputs is stored as a flat
//! vector of `M` contiguous neuron blocks `[w_m (d) | b_m | c_m (C)]`. The same
//! buffer, read as `M` atoms of a uniform empirical measure, is the
//! [`EmpiricalMeasure`] view used by the optimal-transport optimizers.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Target, Targets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative, with the subgradient at the kink taken as 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub width: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkShape {
    pub fn new(input_dim: usize, width: usize, output_dim: usize) -> Result<Self> {
        let shape = NetworkShape {
            input_dim,
            width,
            output_dim,
            activation: Activation::Relu,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.output_dim == 0 {
            return Err(Error::InvalidShape(format!(
                "d = {}, M = {}, C = {} must all be positive",
                self.input_dim, self.width, self.output_dim
            )));
        }
        Ok(())
    }

    /// Length of one neuron block, `d + 1 + C`.
    #[inline]
    pub fn stride(&self) -> usize {
        self.input_dim + 1 + self.output_dim
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.width * self.stride()
    }

    #[inline]
    fn bias_offset(&self) -> usize {
        self.input_dim
    }

    #[inline]
    fn output_offset(&self) -> usize {
        self.input_dim + 1
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector length",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(())
    }
}

/// Flat parameter vector θ of a two-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(shape: &NetworkShape) -> Self {
        ParamVector(vec![0.0; shape.param_count()])
    }

    pub fn new(shape: &NetworkShape, values: Vec<f64>) -> Result<Self> {
        shape.check_params(&values)?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter vector",
                index,
            });
        }
        Ok(ParamVector(values))
    }

    /// Wraps a vector without checking it against a shape.
    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Uniform empirical measure `(1/M) Σ_m δ(w_m, b_m, c_m)` over neuron atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    shape: NetworkShape,
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_params(shape: &NetworkShape, params: &ParamVector) -> Result<Self> {
        shape.validate()?;
        shape.check_params(params)?;
        Ok(EmpiricalMeasure {
            shape: *shape,
            atoms: params.to_vec(),
        })
    }

    /// Builds a measure from `(w, b, c)` triples. All atoms must agree in `d`
    /// and `C`.
    pub fn from_atoms<'a, I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64, &'a [f64])>,
    {
        let mut flat = Vec::new();
        let mut dims: Option<(usize, usize)> = None;
        let mut count = 0;
        for (w, b, c) in atoms {
            match dims {
                None => dims = Some((w.len(), c.len())),
                Some((d, k)) => {
                    if w.len() != d {
                        return Err(Error::DimensionMismatch {
                            what: "atom input dimension",
                            expected: d,
                            found: w.len(),
                        });
                    }
                    if c.len() != k {
                        return Err(Error::DimensionMismatch {
                            what: "atom output dimension",
                            expected: k,
                            found: c.len(),
                        });
                    }
                }
            }
            flat.extend_from_slice(w);
            flat.push(b);
            flat.extend_from_slice(c);
            count += 1;
        }
        let (d, k) = dims.ok_or_else(|| Error::InvalidShape("measure without atoms".into()))?;
        let shape = NetworkShape::new(d, count, k)?;
        let measure = EmpiricalMeasure { shape, atoms: flat };
        if let Some(index) = measure.atoms.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "measure atoms",
                index,
            });
        }
        Ok(measure)
    }

    /// Builds a measure from flat atom coordinates laid out like a
    /// [`ParamVector`].
    pub fn from_flat(shape: &NetworkShape, atoms: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        shape.check_params(&atoms)?;
        Ok(EmpiricalMeasure {
            shape: *shape,
            atoms,
        })
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector(self.atoms.clone())
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    /// Number of atoms `M`.
    pub fn len(&self) -> usize {
        self.shape.width
    }

    pub fn is_empty(&self) -> bool {
        self.shape.width == 0
    }

    /// Dimension of one atom, `d + 1 + C`.
    pub fn atom_dim(&self) -> usize {
        self.shape.stride()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let k = self.atom_dim();
        &self.atoms[i * k..(i + 1) * k]
    }

    pub fn atom_mut(&mut self, i: usize) -> &mut [f64] {
        let k = self.atom_dim();
        &mut self.atoms[i * k..(i + 1) * k]
    }

    pub fn w(&self, i: usize) -> &[f64] {
        &self.atom(i)[..self.shape.input_dim]
    }

    pub fn b(&self, i: usize) -> f64 {
        self.atom(i)[self.shape.bias_offset()]
    }

    pub fn c(&self, i: usize) -> &[f64] {
        &self.atom(i)[self.shape.output_offset()..]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.atoms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl LossKind {
    fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

fn check_input(shape: &NetworkShape, x: &[f64]) -> Result<()> {
    if x.len() != shape.input_dim {
        return Err(Error::DimensionMismatch {
            what: "input dimension",
            expected: shape.input_dim,
            found: x.len(),
        });
    }
    Ok(())
}

/// Reference single-sample evaluation; neurons are summed in index order.
fn forward_flat(shape: &NetworkShape, params: &[f64], x: &[f64]) -> Vec<f64> {
    let d = shape.input_dim;
    let stride = shape.stride();
    let mut out = vec![0.0; shape.output_dim];
    for block in params.chunks_exact(stride) {
        let mut z = block[d];
        for (w, xj) in block[..d].iter().zip(x) {
            z += w * xj;
        }
        let a = shape.activation.apply(z);
        for (o, c) in out.iter_mut().zip(&block[d + 1..]) {
            *o += c * a;
        }
    }
    let m = shape.width as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

pub fn forward(shape: &NetworkShape, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    shape.check_params(params)?;
    check_input(shape, x)?;
    Ok(forward_flat(shape, params, x))
}

pub fn forward_measure(measure: &EmpiricalMeasure, x: &[f64]) -> Result<Vec<f64>> {
    check_input(&measure.shape, x)?;
    Ok(forward_flat(&measure.shape, &measure.atoms, x))
}

/// Pre-activations `W X + b` for `n` row-major inputs, as an `n × M` matrix.
fn pre_activations(shape: &NetworkShape, params: &[f64], inputs: &[f64], n: usize) -> Vec<f64> {
    let d = shape.input_dim;
    let m = shape.width;
    let stride = shape.stride();
    let mut pre = vec![0.0; n * m];
    if n > 0 {
        // SAFETY: the strides describe `inputs` as n×d, the weight blocks of
        // `params` as d×m and `pre` as n×m; all three buffers are large enough.
        unsafe {
            matrixmultiply::dgemm(
                n,
                d,
                m,
                1.0,
                inputs.as_ptr(),
                d as isize,
                1,
                params.as_ptr(),
                1,
                stride as isize,
                0.0,
                pre.as_mut_ptr(),
                m as isize,
                1,
            );
        }
    }
    for row in pre.chunks_exact_mut(m) {
        for (z, block) in row.iter_mut().zip(params.chunks_exact(stride)) {
            *z += block[d];
        }
    }
    pre
}

fn outputs_from_pre(shape: &NetworkShape, params: &[f64], pre: &[f64]) -> Vec<f64> {
    let m = shape.width;
    let k = shape.output_dim;
    let stride = shape.stride();
    let off = shape.output_offset();
    let scale = m as f64;
    let mut out = vec![0.0; (pre.len() / m) * k];
    for (row, o) in pre.chunks_exact(m).zip(out.chunks_exact_mut(k)) {
        for (z, block) in row.iter().zip(params.chunks_exact(stride)) {
            let a = shape.activation.apply(*z);
            if a != 0.0 {
                for (oc, c) in o.iter_mut().zip(&block[off..]) {
                    *oc += c * a;
                }
            }
        }
        o.iter_mut().for_each(|v| *v /= scale);
    }
    out
}

/// Network outputs for `n` row-major inputs, as an `n × C` matrix.
pub fn forward_batch(
    shape: &NetworkShape,
    params: &ParamVector,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    shape.check_params(params)?;
    if inputs.len() != n * shape.input_dim {
        return Err(Error::DimensionMismatch {
            what: "batch input buffer",
            expected: n * shape.input_dim,
            found: inputs.len(),
        });
    }
    let pre = pre_activations(shape, params, inputs, n);
    Ok(outputs_from_pre(shape, params, &pre))
}

pub fn loss(kind: LossKind, target: Target<'_>, pred: &[f64]) -> Result<f64> {
    if let Some(index) = pred.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "prediction",
            index,
        });
    }
    match (kind, target) {
        (LossKind::SquaredError, Target::Real(y)) => {
            if pred.len() != 1 || y.len() != 1 {
                return Err(Error::DimensionMismatch {
                    what: "squared-error output dimension",
                    expected: 1,
                    found: pred.len().max(y.len()),
                });
            }
            let r = y[0] - pred[0];
            Ok(r * r)
        }
        (LossKind::CrossEntropy, Target::Class(class)) => {
            if class >= pred.len() {
                return Err(Error::ClassOutOfRange {
                    class,
                    classes: pred.len(),
                });
            }
            Ok(log_sum_exp(pred) - pred[class])
        }
        (kind, target) => Err(Error::TargetKind {
            loss: kind.name(),
            targets: target.kind_name(),
        }),
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Loss and its derivative with respect to the prediction, written into `grad`.
fn loss_and_grad(kind: LossKind, target: Target<'_>, pred: &[f64], grad: &mut [f64]) -> Result<f64> {
    let value = loss(kind, target, pred)?;
    match (kind, target) {
        (LossKind::SquaredError, Target::Real(y)) => {
            grad[0] = 2.0 * (pred[0] - y[0]);
        }
        (LossKind::CrossEntropy, Target::Class(class)) => {
            let max = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (g, z) in grad.iter_mut().zip(pred) {
                *g = (z - max).exp();
                sum += *g;
            }
            grad.iter_mut().for_each(|g| *g /= sum);
            grad[class] -= 1.0;
        }
        _ => unreachable!("loss() rejects mismatched targets"),
    }
    Ok(value)
}

fn check_batch(shape: &NetworkShape, params: &[f64], batch: &Batch, kind: LossKind) -> Result<()> {
    shape.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.input_dim() != shape.input_dim {
        return Err(Error::DimensionMismatch {
            what: "input dimension",
            expected: shape.input_dim,
            found: batch.input_dim(),
        });
    }
    match (kind, batch.targets()) {
        (LossKind::SquaredError, Targets::Real { dim, .. }) => {
            if *dim != shape.output_dim {
                return Err(Error::DimensionMismatch {
                    what: "target dimension",
                    expected: shape.output_dim,
                    found: *dim,
                });
            }
        }
        (LossKind::CrossEntropy, Targets::Class { classes, .. }) => {
            if *classes != shape.output_dim {
                return Err(Error::DimensionMismatch {
                    what: "number of classes",
                    expected: shape.output_dim,
                    found: *classes,
                });
            }
        }
        (kind, targets) => {
            return Err(Error::TargetKind {
                loss: kind.name(),
                targets: targets.kind_name(),
            })
        }
    }
    Ok(())
}

/// Mean loss over already computed `n × C` predictions, accumulated in
/// ascending sample order.
pub fn risk_of_predictions(kind: LossKind, batch: &Batch, preds: &[f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = preds.len() / batch.len();
    let mut total = 0.0;
    for (s, pred) in preds.chunks_exact(k).enumerate() {
        total += loss(kind, batch.target(s), pred)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn empirical_risk(shape: &NetworkShape, params: &ParamVector, batch: &Batch, kind: LossKind) -> Result<f64> {
    risk_flat(shape, params, batch, kind)
}

/// Empirical risk of the network a measure represents.
pub fn measure_risk(measure: &EmpiricalMeasure, batch: &Batch, kind: LossKind) -> Result<f64> {
    risk_flat(&measure.shape, &measure.atoms, batch, kind)
}

fn risk_flat(shape: &NetworkShape, params: &[f64], batch: &Batch, kind: LossKind) -> Result<f64> {
    check_batch(shape, params, batch, kind)?;
    let pre = pre_activations(shape, params, batch.inputs(), batch.len());
    risk_of_predictions(kind, batch, &outputs_from_pre(shape, params, &pre))
}

pub fn gradient(shape: &NetworkShape, params: &ParamVector, batch: &Batch, kind: LossKind) -> Result<Vec<f64>> {
    risk_and_gradient(shape, params, batch, kind).map(|(_, g)| g)
}

/// Empirical risk and its exact gradient with respect to θ from one
/// forward/backward pass.
pub fn risk_and_gradient(
    shape: &NetworkShape,
    params: &ParamVector,
    batch: &Batch,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check_batch(shape, params, batch, kind)?;
    let n = batch.len();
    let d = shape.input_dim;
    let m = shape.width;
    let k = shape.output_dim;
    let stride = shape.stride();
    let out_off = shape.output_offset();
    let inv_n = 1.0 / n as f64;
    let inv_m = 1.0 / m as f64;

    let pre = pre_activations(shape, params, batch.inputs(), n);
    let preds = outputs_from_pre(shape, params, &pre);

    let mut grad = vec![0.0; shape.param_count()];
    // dL/d(pre-activation), n × M row-major
    let mut dpre = vec![0.0; n * m];
    let mut g = vec![0.0; k];
    let mut total = 0.0;
    for s in 0..n {
        let pred = &preds[s * k..(s + 1) * k];
        total += loss_and_grad(kind, batch.target(s), pred, &mut g)?;
        g.iter_mut().for_each(|v| *v *= inv_n);
        let row = &pre[s * m..(s + 1) * m];
        let drow = &mut dpre[s * m..(s + 1) * m];
        for j in 0..m {
            let block = &params[j * stride..(j + 1) * stride];
            let a = shape.activation.apply(row[j]);
            let gblock = &mut grad[j * stride..(j + 1) * stride];
            let mut back = 0.0;
            for c in 0..k {
                gblock[out_off + c] += g[c] * a * inv_m;
                back += g[c] * block[out_off + c];
            }
            let dz = back * inv_m * shape.activation.derivative(row[j]);
            drow[j] = dz;
            gblock[d] += dz;
        }
    }
    // SAFETY: dpreᵀ is m×n with strides (1, m), the inputs are n×d with
    // strides (d, 1) and the weight blocks of `grad` are m×d with strides
    // (stride, 1); every index stays inside its buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            d,
            1.0,
            dpre.as_ptr(),
            1,
            m as isize,
            batch.inputs().as_ptr(),
            d as isize,
            1,
            0.0,
            grad.as_mut_ptr(),
            stride as isize,
            1,
        );
    }
    Ok((total * inv_n, grad))
}

/// Upper bound on the Barron norm of the represented function:
/// `max_m ‖c_m‖_∞ (‖w_m‖₁ + |b_m|)` over the atoms of the measure.
pub fn barron_estimate(measure: &EmpiricalMeasure) -> f64 {
    (0..measure.len())
        .map(|i| {
            let c = measure.c(i).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            let w: f64 = measure.w(i).iter().map(|v| v.abs()).sum();
            c * (w + measure.b(i).abs())
        })
        .fold(0.0, f64::max)
}
