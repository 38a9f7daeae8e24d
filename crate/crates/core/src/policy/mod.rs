//! The learnable router.
//!
//! A fixed featurizer (see [`crate::retrieval::Embedder`]) feeds a trainable
//! two-layer tanh encoder E. The current state and the retrieved future state
//! are both encoded with the same weights and fused:
//!
//! * gated: `g = σ(W_G [e; ẽ] + b_G)`, `h = g ⊙ e + (1 − g) ⊙ ẽ`
//! * add: `h = (e + ẽ) / 2`
//! * concat: `h = [e; ẽ]`
//!
//! A linear classifier over `h` followed by softmax gives π(a | s).

mod gradcheck;
mod io;
mod train;

pub use gradcheck::{gradient_check, BlockCheck, FD_STEP};
pub use io::{params_digest, read_params, write_params, ParamsFile};
pub use train::{
    prepare_examples, route_policy, train_bc, train_from_records, TrainConfig, TrainReport, TrainedPolicy,
};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Gated,
    Add,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub actions: usize,
    pub fusion: Fusion,
}

impl PolicyShape {
    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            Fusion::Gated | Fusion::Add => self.hidden_dim,
            Fusion::Concat => 2 * self.hidden_dim,
        }
    }
}

/// Trainable weights. Gate blocks are empty unless fusion is gated. The same
/// type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wg: Array2<f64>,
    pub bg: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

pub const BLOCK_NAMES: [&str; 8] =
    ["encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2", "gate.w", "gate.b", "classifier.w", "classifier.b"];

/// One prepared training or routing input: featurized state, featurized
/// approximate future, and the expert label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub state: Array1<f64>,
    pub future: Array1<f64>,
    pub action: usize,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    a1: Array1<f64>,
    e: Array1<f64>,
    a1_future: Array1<f64>,
    e_future: Array1<f64>,
    gate: Option<Array1<f64>>,
    pub fused: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|l| (l - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn outer_add(target: &mut Array2<f64>, left: &Array1<f64>, right: &ArrayView1<f64>) {
    let l = left.view().insert_axis(Axis(1));
    let r = right.view().insert_axis(Axis(0));
    ndarray::linalg::general_mat_mul(1.0, &l, &r, 1.0, target);
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        let (d, h, n, f) = (shape.input_dim, shape.hidden_dim, shape.actions, shape.fused_dim());
        let gate_rows = if shape.fusion == Fusion::Gated { h } else { 0 };
        PolicyParams {
            shape,
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            wg: Array2::zeros((gate_rows, if gate_rows > 0 { 2 * h } else { 0 })),
            bg: Array1::zeros(gate_rows),
            wc: Array2::zeros((n, f)),
            bc: Array1::zeros(n),
        }
    }

    /// Uniform in ±1/sqrt(fan_in) for every block, drawn from `seed`.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut p = PolicyParams::zeros(shape);
        let mut rng = seed::rng(seed::named_seed(seed, "init"));
        let fan_in = [
            shape.input_dim,
            shape.input_dim,
            shape.hidden_dim,
            shape.hidden_dim,
            2 * shape.hidden_dim,
            2 * shape.hidden_dim,
            shape.fused_dim(),
            shape.fused_dim(),
        ];
        for (block, fan) in p.blocks_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan.max(1) as f64).sqrt();
            for w in block.1 {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 8] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            (BLOCK_NAMES[0], s(&self.w1)),
            (BLOCK_NAMES[1], v(&self.b1)),
            (BLOCK_NAMES[2], s(&self.w2)),
            (BLOCK_NAMES[3], v(&self.b2)),
            (BLOCK_NAMES[4], s(&self.wg)),
            (BLOCK_NAMES[5], v(&self.bg)),
            (BLOCK_NAMES[6], s(&self.wc)),
            (BLOCK_NAMES[7], v(&self.bc)),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 8] {
        let PolicyParams { w1, b1, w2, b2, wg, bg, wc, bc, .. } = self;
        [
            (BLOCK_NAMES[0], w1.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[1], b1.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[2], w2.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[3], b2.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[4], wg.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[5], bg.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[6], wc.as_slice_mut().expect("standard layout")),
            (BLOCK_NAMES[7], bc.as_slice_mut().expect("standard layout")),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    fn encode_parts(&self, x: &ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let a1 = (self.w1.dot(x) + &self.b1).mapv(f64::tanh);
        let e = (self.w2.dot(&a1) + &self.b2).mapv(f64::tanh);
        (a1, e)
    }

    /// e = E(x) for a featurized state.
    pub fn encode(&self, features: &[f64]) -> Result<Array1<f64>> {
        if features.len() != self.shape.input_dim {
            return Err(Error::Dimension { expected: self.shape.input_dim, got: features.len() });
        }
        Ok(self.encode_parts(&ArrayView1::from(features)).1)
    }

    /// Fuses two encodings under this policy's fusion mode.
    pub fn fuse(&self, e: &Array1<f64>, e_future: &Array1<f64>) -> Result<Array1<f64>> {
        let h = self.shape.hidden_dim;
        if e.len() != h || e_future.len() != h {
            return Err(Error::Dimension { expected: h, got: if e.len() != h { e.len() } else { e_future.len() } });
        }
        Ok(self.fuse_parts(e, e_future).1)
    }

    fn fuse_parts(&self, e: &Array1<f64>, et: &Array1<f64>) -> (Option<Array1<f64>>, Array1<f64>) {
        match self.shape.fusion {
            Fusion::Gated => {
                let joint = ndarray::concatenate(Axis(0), &[e.view(), et.view()]).expect("same rank");
                let g = (self.wg.dot(&joint) + &self.bg).mapv(sigmoid);
                // g⊙e + (1−g)⊙ẽ, written so that e = ẽ gives exactly e.
                let h = et + &(&g * &(e - et));
                (Some(g), h)
            }
            Fusion::Add => (None, (e + et) * 0.5),
            Fusion::Concat => (None, ndarray::concatenate(Axis(0), &[e.view(), et.view()]).expect("same rank")),
        }
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        let d = self.shape.input_dim;
        for v in [&ex.state, &ex.future] {
            if v.len() != d {
                return Err(Error::Dimension { expected: d, got: v.len() });
            }
        }
        if ex.action >= self.shape.actions {
            return Err(Error::InvalidModel { id: ex.action, len: self.shape.actions });
        }
        Ok(())
    }

    pub fn forward(&self, state: &Array1<f64>, future: &Array1<f64>) -> Forward {
        let (a1, e) = self.encode_parts(&state.view());
        let (a1_future, e_future) = self.encode_parts(&future.view());
        let (gate, fused) = self.fuse_parts(&e, &e_future);
        let logits = self.wc.dot(&fused) + &self.bc;
        let probs = softmax(&logits);
        Forward { a1, e, a1_future, e_future, gate, fused, logits, probs }
    }

    /// π(· | s) given featurized state and approximate future.
    pub fn probabilities(&self, state: &[f64], future: &[f64]) -> Result<Array1<f64>> {
        let d = self.shape.input_dim;
        for v in [state, future] {
            if v.len() != d {
                return Err(Error::Dimension { expected: d, got: v.len() });
            }
        }
        Ok(self.forward(&Array1::from(state.to_vec()), &Array1::from(future.to_vec())).probs)
    }

    /// Mean cross-entropy −log π(a* | s) over the batch.
    pub fn bc_loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let fw = self.forward(&ex.state, &ex.future);
            total += -log_softmax_at(&fw.logits, ex.action);
        }
        Ok(total / batch.len() as f64)
    }

    /// Analytic gradient of [`PolicyParams::bc_loss`].
    pub fn bc_loss_grad(&self, batch: &[Example]) -> Result<(f64, PolicyParams)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grad = PolicyParams::zeros(self.shape);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let fw = self.forward(&ex.state, &ex.future);
            total += -log_softmax_at(&fw.logits, ex.action);
            self.backward(ex, &fw, scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    fn backward(&self, ex: &Example, fw: &Forward, scale: f64, grad: &mut PolicyParams) {
        let h = self.shape.hidden_dim;
        // softmax cross-entropy: dL/dlogits = p − onehot(a*)
        let mut dlogits = fw.probs.clone();
        dlogits[ex.action] -= 1.0;
        dlogits *= scale;
        outer_add(&mut grad.wc, &dlogits, &fw.fused.view());
        grad.bc += &dlogits;
        let dfused = self.wc.t().dot(&dlogits);

        let (de, de_future) = match self.shape.fusion {
            Fusion::Gated => {
                let g = fw.gate.as_ref().expect("gated forward keeps the gate");
                let dgate = &dfused * &(&fw.e - &fw.e_future);
                let dz = &dgate * &g.mapv(|v| v * (1.0 - v));
                let joint = ndarray::concatenate(Axis(0), &[fw.e.view(), fw.e_future.view()]).expect("same rank");
                outer_add(&mut grad.wg, &dz, &joint.view());
                grad.bg += &dz;
                let djoint = self.wg.t().dot(&dz);
                let de = &dfused * g + djoint.slice(ndarray::s![..h]);
                let de_future = &dfused * &(1.0 - g) + djoint.slice(ndarray::s![h..]);
                (de, de_future)
            }
            Fusion::Add => (&dfused * 0.5, &dfused * 0.5),
            Fusion::Concat => (dfused.slice(ndarray::s![..h]).to_owned(), dfused.slice(ndarray::s![h..]).to_owned()),
        };
        self.encoder_backward(&ex.state, &fw.a1, &fw.e, &de, grad);
        self.encoder_backward(&ex.future, &fw.a1_future, &fw.e_future, &de_future, grad);
    }

    fn encoder_backward(
        &self,
        x: &Array1<f64>,
        a1: &Array1<f64>,
        e: &Array1<f64>,
        de: &Array1<f64>,
        grad: &mut PolicyParams,
    ) {
        let dz2 = de * &e.mapv(|v| 1.0 - v * v);
        outer_add(&mut grad.w2, &dz2, &a1.view());
        grad.b2 += &dz2;
        let da1 = self.w2.t().dot(&dz2);
        let dz1 = &da1 * &a1.mapv(|v| 1.0 - v * v);
        outer_add(&mut grad.w1, &dz1, &x.view());
        grad.b1 += &dz1;
    }
}

fn log_softmax_at(logits: &Array1<f64>, index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}
