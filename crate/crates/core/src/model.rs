//! Reference encoder + linear classifier over the three flow modalities.
//!
//! Each modality (byte grid, size trace, interval trace) passes through its own
//! two-layer tanh perceptron. The three hidden outputs are concatenated and a
//! single linear layer fuses them into the representation `z`; the classifier
//! is one linear layer over `z`. Every weight lives in one flat [`ParamVector`]
//! so checkpoints can be averaged coordinate-wise.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODALITIES: [&str; 3] = ["bytes", "sizes", "intervals"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub byte_input_len: usize,
    pub size_trace_len: usize,
    pub interval_trace_len: usize,
    pub hidden_width: usize,
    pub repr_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            byte_input_len: crate::data::BYTE_GRID_LEN,
            size_trace_len: crate::data::TRACE_LEN,
            interval_trace_len: crate::data::TRACE_LEN,
            hidden_width: 128,
            repr_dim: 64,
            num_classes: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("byte_input_len", self.byte_input_len),
            ("size_trace_len", self.size_trace_len),
            ("interval_trace_len", self.interval_trace_len),
            ("hidden_width", self.hidden_width),
            ("repr_dim", self.repr_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "model.num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    fn input_len(&self, modality: usize) -> usize {
        match modality {
            0 => self.byte_input_len,
            1 => self.size_trace_len,
            _ => self.interval_trace_len,
        }
    }

    /// Architecture description hashed into checkpoints. The seed is not part
    /// of it: two seeds of one architecture share a parameter layout.
    pub fn canonical_text(&self) -> String {
        format!(
            "byte_input_len={}\nsize_trace_len={}\ninterval_trace_len={}\nhidden_width={}\nrepr_dim={}\nnum_classes={}\n",
            self.byte_input_len,
            self.size_trace_len,
            self.interval_trace_len,
            self.hidden_width,
            self.repr_dim,
            self.num_classes
        )
    }

    pub fn config_hash(&self) -> u32 {
        fnv1a32(self.canonical_text().as_bytes())
    }

    /// Closed-form parameter count of the architecture.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_width;
        let per_modality =
            |n: usize| n * h + h + h * h + h;
        per_modality(self.byte_input_len)
            + per_modality(self.size_trace_len)
            + per_modality(self.interval_trace_len)
            + 3 * h * self.repr_dim
            + self.repr_dim
            + self.repr_dim * self.num_classes
            + self.num_classes
    }
}

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= b as u32;
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// One named block of the flat parameter vector, stored row-major as
/// `rows × cols` (biases have `rows == 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn is_bias(&self) -> bool {
        self.name.ends_with(".b1") || self.name.ends_with(".b2") || self.name.ends_with(".b")
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    config: ModelConfig,
    slots: Vec<Slot>,
    len: usize,
}

// Layouts compare by shape only; the seed does not change the parameter space.
impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots
    }
}

impl Eq for Layout {}

// Slot indices, fixed by `Layout::new`.
const FUSE_W: usize = 12;
const FUSE_B: usize = 13;
const CLS_W: usize = 14;
const CLS_B: usize = 15;

impl Layout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_width;
        let mut slots = Vec::with_capacity(16);
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            slots.push(Slot {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        for (m, name) in MODALITIES.iter().enumerate() {
            push(format!("{name}.w1"), config.input_len(m), h);
            push(format!("{name}.b1"), 1, h);
            push(format!("{name}.w2"), h, h);
            push(format!("{name}.b2"), 1, h);
        }
        push("fuse.w".into(), 3 * h, config.repr_dim);
        push("fuse.b".into(), 1, config.repr_dim);
        push("cls.w".into(), config.repr_dim, config.num_classes);
        push("cls.b".into(), 1, config.num_classes);
        Ok(Layout {
            config: config.clone(),
            slots,
            len: offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// Flattened model parameters (or a gradient with the same shape).
#[derive(Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamVector")
            .field("len", &self.values.len())
            .field("config_hash", &self.layout.config.config_hash())
            .finish()
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }

    fn matrix(&self, idx: usize) -> ArrayView2<'_, f64> {
        let slot = &self.layout.slots[idx];
        ArrayView2::from_shape((slot.rows, slot.cols), &self.values[slot.range()])
            .expect("slot shape matches layout")
    }

    fn vector(&self, idx: usize) -> ArrayView1<'_, f64> {
        let slot = &self.layout.slots[idx];
        ArrayView1::from(&self.values[slot.range()])
    }

    fn write_slot(&mut self, idx: usize, data: impl IntoIterator<Item = f64>) {
        let range = self.layout.slots[idx].range();
        for (dst, v) in self.values[range].iter_mut().zip(data) {
            *dst = v;
        }
    }

    /// `self ← (1 − β)·self + β·other`.
    pub fn lerp_towards(&mut self, other: &ParamVector, beta: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = (1.0 - beta) * *a + beta * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Deterministic initialization: weights uniform in `±sqrt(6 / (fan_in + fan_out))`
/// drawn in layout order from a ChaCha8 stream seeded by `config.seed`; biases zero.
pub fn init_model(config: &ModelConfig) -> Result<ParamVector> {
    let layout = Arc::new(Layout::new(config)?);
    let mut params = ParamVector::zeros(layout.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for slot in layout.slots() {
        if slot.is_bias() {
            continue;
        }
        let bound = (6.0 / (slot.rows + slot.cols) as f64).sqrt();
        for v in &mut params.values[slot.range()] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Contiguous run of batch rows that belong to one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainGroup {
    pub domain: usize,
    pub rows: Range<usize>,
}

/// Normalized model inputs for a set of flows, grouped by domain.
#[derive(Debug, Clone)]
pub struct Batch {
    pub bytes: Array2<f64>,
    pub sizes: Array2<f64>,
    pub intervals: Array2<f64>,
    pub labels: Vec<usize>,
    pub groups: Vec<DomainGroup>,
}

impl Batch {
    pub fn new(
        bytes: Array2<f64>,
        sizes: Array2<f64>,
        intervals: Array2<f64>,
        labels: Vec<usize>,
        groups: Vec<DomainGroup>,
    ) -> Result<Self> {
        let n = labels.len();
        if bytes.nrows() != n || sizes.nrows() != n || intervals.nrows() != n {
            return Err(Error::Shape(format!(
                "batch rows disagree: labels {n}, bytes {}, sizes {}, intervals {}",
                bytes.nrows(),
                sizes.nrows(),
                intervals.nrows()
            )));
        }
        let mut next = 0;
        for g in &groups {
            if g.rows.start != next || g.rows.is_empty() {
                return Err(Error::Shape(
                    "domain groups must be non-empty and tile the batch in order".into(),
                ));
            }
            next = g.rows.end;
        }
        if next != n {
            return Err(Error::Shape("domain groups do not cover the batch".into()));
        }
        for (name, m) in [("bytes", &bytes), ("sizes", &sizes), ("intervals", &intervals)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(match name {
                    "bytes" => "byte features",
                    "sizes" => "size features",
                    _ => "interval features",
                }));
            }
        }
        Ok(Batch {
            bytes,
            sizes,
            intervals,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn modality(&self, m: usize) -> &Array2<f64> {
        match m {
            0 => &self.bytes,
            1 => &self.sizes,
            _ => &self.intervals,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub reps: Array2<f64>,
    pub logits: Array2<f64>,
    hidden1: [Array2<f64>; 3],
    hidden2: [Array2<f64>; 3],
    fused_input: Array2<f64>,
}

impl ForwardResult {
    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        for mut row in p.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        p
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn add_bias(mut m: Array2<f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        row += &b;
    }
    m
}

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
    for m in 0..3 {
        let got = batch.modality(m).ncols();
        let want = config.input_len(m);
        if got != want {
            return Err(Error::Shape(format!(
                "{} features have width {got}, model expects {want}",
                MODALITIES[m]
            )));
        }
    }
    Ok(())
}

pub fn forward(params: &ParamVector, batch: &Batch) -> Result<ForwardResult> {
    let config = params.config();
    check_batch(config, batch)?;
    let h = config.hidden_width;
    let n = batch.len();

    let mut fused_input = Array2::<f64>::zeros((n, 3 * h));
    let mut hidden1: Vec<Array2<f64>> = Vec::with_capacity(3);
    let mut hidden2: Vec<Array2<f64>> = Vec::with_capacity(3);
    for m in 0..3 {
        let base = 4 * m;
        let x = batch.modality(m);
        let h1 = add_bias(x.dot(&params.matrix(base)), params.vector(base + 1)).mapv(f64::tanh);
        let h2 = add_bias(h1.dot(&params.matrix(base + 2)), params.vector(base + 3))
            .mapv(f64::tanh);
        fused_input.slice_mut(s![.., m * h..(m + 1) * h]).assign(&h2);
        hidden1.push(h1);
        hidden2.push(h2);
    }
    let reps = add_bias(fused_input.dot(&params.matrix(FUSE_W)), params.vector(FUSE_B));
    let logits = add_bias(reps.dot(&params.matrix(CLS_W)), params.vector(CLS_B));
    if reps.iter().chain(logits.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward activations"));
    }
    let to_array = |v: Vec<Array2<f64>>| -> [Array2<f64>; 3] {
        v.try_into().expect("three modalities")
    };
    Ok(ForwardResult {
        reps,
        logits,
        hidden1: to_array(hidden1),
        hidden2: to_array(hidden2),
        fused_input,
    })
}

/// Backpropagates upstream partials `∂L/∂reps` and `∂L/∂logits` to a gradient
/// over every parameter. `fwd` must come from `forward(params, batch)`.
pub fn backward(
    params: &ParamVector,
    batch: &Batch,
    fwd: &ForwardResult,
    d_reps: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> Result<ParamVector> {
    let config = params.config();
    check_batch(config, batch)?;
    let n = batch.len();
    if d_reps.dim() != (n, config.repr_dim) || d_logits.dim() != (n, config.num_classes) {
        return Err(Error::Shape(format!(
            "upstream gradients {:?}/{:?} do not match batch of {n} with D={} K={}",
            d_reps.dim(),
            d_logits.dim(),
            config.repr_dim,
            config.num_classes
        )));
    }
    if fwd.reps.nrows() != n {
        return Err(Error::Shape("forward cache belongs to another batch".into()));
    }
    let h = config.hidden_width;
    let mut grad = params.zeros_like();

    grad.write_slot(CLS_W, fwd.reps.t().dot(d_logits));
    grad.write_slot(CLS_B, d_logits.sum_axis(Axis(0)));
    let d_z = d_reps + &d_logits.dot(&params.matrix(CLS_W).t());

    grad.write_slot(FUSE_W, fwd.fused_input.t().dot(&d_z));
    grad.write_slot(FUSE_B, d_z.sum_axis(Axis(0)));
    let d_fused = d_z.dot(&params.matrix(FUSE_W).t());

    for m in 0..3 {
        let base = 4 * m;
        let h1 = &fwd.hidden1[m];
        let h2 = &fwd.hidden2[m];
        let mut d_a2 = d_fused.slice(s![.., m * h..(m + 1) * h]).to_owned();
        d_a2.zip_mut_with(h2, |d, &y| *d *= 1.0 - y * y);
        grad.write_slot(base + 2, h1.t().dot(&d_a2));
        grad.write_slot(base + 3, d_a2.sum_axis(Axis(0)));
        let mut d_a1 = d_a2.dot(&params.matrix(base + 2).t());
        d_a1.zip_mut_with(h1, |d, &y| *d *= 1.0 - y * y);
        grad.write_slot(base, batch.modality(m).t().dot(&d_a1));
        grad.write_slot(base + 1, d_a1.sum_axis(Axis(0)));
    }
    Ok(grad)
}

/// Plain SGD update `θ − η·g`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, learning_rate: f64) -> Result<ParamVector> {
    params.check_layout(grads)?;
    if grads.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let values = params
        .values
        .iter()
        .zip(&grads.values)
        .map(|(p, g)| p - learning_rate * g)
        .collect();
    Ok(ParamVector {
        values,
        layout: params.layout.clone(),
    })
}
