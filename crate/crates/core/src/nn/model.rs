use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Adam, NetworkSpec};
use crate::error::{Error, Result};
use crate::floats;

/// Running-statistics momentum: `running <- (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f64 = 0.1;
/// Variance guard inside the batch-norm square root.
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, no dropout. Deterministic.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Online,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// `[n x 9]` Q-values.
    pub q: Array2<f64>,
    /// `[n x 9]` generative-head logits, when the network has one.
    pub gen: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn matrix<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).unwrap()
    }

    fn vector<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.range()])
    }

    fn write(&self, dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
        for (d, s) in dst[self.range()].iter_mut().zip(src) {
            *d = s;
        }
    }
}

struct HiddenBlocks {
    w: Block,
    b: Block,
    // batch-norm scale and shift
    bn: Option<(Block, Block)>,
}

/// Offsets of every tensor inside the flat parameter vector.
struct Layout {
    hidden: Vec<HiddenBlocks>,
    q: (Block, Block),
    gen: Option<(Block, Block)>,
    len: usize,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let mut offset = 0;
        let mut alloc = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let h = spec.hidden_units;
        let mut hidden = Vec::with_capacity(spec.hidden_layers);
        for l in 0..spec.hidden_layers {
            let fan_in = if l == 0 { spec.input_dim } else { h };
            let w = alloc(fan_in, h);
            let b = alloc(1, h);
            let bn = spec.batch_norm.then(|| (alloc(1, h), alloc(1, h)));
            hidden.push(HiddenBlocks { w, b, bn });
        }
        let out = spec.output_dim();
        let q = (alloc(h, out), alloc(1, out));
        let gen = spec.gen_head.then(|| (alloc(h, out), alloc(1, out)));
        Layout {
            hidden,
            q,
            gen,
            len: offset,
        }
    }
}

/// Per-layer running mean and variance used in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BnStats {
    fn new(spec: &NetworkSpec) -> Self {
        let layers = if spec.batch_norm { spec.hidden_layers } else { 0 };
        BnStats {
            mean: vec![vec![0.0; spec.hidden_units]; layers],
            var: vec![vec![1.0; spec.hidden_units]; layers],
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Array2<f64>,
    // input to the activation
    pre: Array2<f64>,
    // activation output, before dropout
    act: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    mask: Option<Array2<f64>>,
}

/// Intermediate values of one online forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct Tape {
    mode: ForwardMode,
    layers: Vec<LayerTape>,
    last_hidden: Array2<f64>,
}

impl Tape {
    /// Sign of every activation input, row-major per layer. Where this
    /// pattern is constant the network is smooth in its parameters.
    pub fn sign_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| l.pre.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Online and target Q-networks with their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    spec: NetworkSpec,
    #[serde(with = "floats::vec")]
    online: Vec<f64>,
    #[serde(with = "floats::vec")]
    target: Vec<f64>,
    online_stats: BnStats,
    target_stats: BnStats,
    adam: Adam,
}

impl QModel {
    /// Xavier-uniform weights, zero biases, unit batch-norm scale, target
    /// equal to online.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut params = vec![0.0; layout.len];
        let mut xavier = |block: Block, params: &mut [f64]| {
            let bound = (6.0 / (block.rows + block.cols) as f64).sqrt();
            for p in &mut params[block.range()] {
                *p = rng.random_range(-bound..bound);
            }
        };
        for layer in &layout.hidden {
            xavier(layer.w, &mut params);
            if let Some((gamma, _)) = layer.bn {
                gamma.write(&mut params, std::iter::repeat(1.0));
            }
        }
        xavier(layout.q.0, &mut params);
        if let Some((w, _)) = layout.gen {
            xavier(w, &mut params);
        }
        let stats = BnStats::new(&spec);
        Ok(QModel {
            adam: Adam::new(layout.len),
            target: params.clone(),
            online: params,
            online_stats: stats.clone(),
            target_stats: stats,
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.online.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.online
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.online
    }

    pub fn target_params(&self) -> &[f64] {
        &self.target
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn running_stats(&self) -> &BnStats {
        &self.online_stats
    }

    /// Hard copy of the online network (and its running statistics) into
    /// the target network.
    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
        self.target_stats = self.online_stats.clone();
    }

    pub fn adam_step(&mut self, grads: &[f64], lr: f64) {
        self.adam.step(&mut self.online, grads, lr);
    }

    /// Multiplies the Q head (weights and bias) by `c`, scaling every
    /// Q-value by `c`.
    pub fn scale_q_head(&mut self, c: f64) {
        let layout = Layout::new(&self.spec);
        for block in [layout.q.0, layout.q.1] {
            for p in &mut self.online[block.range()] {
                *p *= c;
            }
        }
    }

    /// Deterministic forward pass with running statistics.
    pub fn eval(&self, x: ArrayView2<f64>, net: Net) -> Result<Outputs> {
        self.run(x, ForwardMode::Eval, net, None).map(|(out, _)| out)
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: ForwardMode,
        net: Net,
        rng: &mut dyn RngCore,
    ) -> Result<Outputs> {
        self.run(x, mode, net, Some(rng)).map(|(out, _)| out)
    }

    /// Online forward pass that keeps what `backward` needs.
    pub fn forward_with_tape(
        &self,
        x: ArrayView2<f64>,
        mode: ForwardMode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Outputs, Tape)> {
        self.run(x, mode, Net::Online, rng)
    }

    fn run(
        &self,
        x: ArrayView2<f64>,
        mode: ForwardMode,
        net: Net,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Outputs, Tape)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        let (params, stats) = match net {
            Net::Online => (&self.online, &self.online_stats),
            Net::Target => (&self.target, &self.target_stats),
        };
        let layout = Layout::new(&self.spec);
        let n = x.nrows() as f64;
        let p_drop = self.spec.dropout_rate;
        let activation = self.spec.activation;

        let mut h = x.to_owned();
        let mut tapes = Vec::with_capacity(layout.hidden.len());
        for (l, blocks) in layout.hidden.iter().enumerate() {
            let z = h.dot(&blocks.w.matrix(params)) + blocks.b.vector(params);
            let mut lt = LayerTape {
                input: h,
                pre: Array2::zeros((0, 0)),
                act: Array2::zeros((0, 0)),
                xhat: None,
                inv_std: None,
                batch_mean: None,
                batch_var: None,
                mask: None,
            };
            let pre = match blocks.bn {
                Some((gamma, beta)) => {
                    let (mean, var) = match mode {
                        ForwardMode::Train => {
                            let mean = z.sum_axis(Axis(0)) / n;
                            let centered = &z - &mean;
                            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
                            lt.batch_mean = Some(mean.clone());
                            lt.batch_var = Some(var.clone());
                            (mean, var)
                        }
                        ForwardMode::Eval => (
                            Array1::from(stats.mean[l].clone()),
                            Array1::from(stats.var[l].clone()),
                        ),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let xhat = (&z - &mean) * &inv_std;
                    let pre = &xhat * &gamma.vector(params) + beta.vector(params);
                    lt.xhat = Some(xhat);
                    lt.inv_std = Some(inv_std);
                    pre
                }
                None => z,
            };
            let act = pre.mapv(|v| activation.apply(v));
            let out = if mode == ForwardMode::Train && p_drop > 0.0 {
                let rng = rng
                    .as_deref_mut()
                    .expect("train-mode dropout needs a random generator");
                let keep = 1.0 / (1.0 - p_drop);
                let mask = Array2::from_shape_fn(act.raw_dim(), |_| {
                    if rng.random::<f64>() < p_drop {
                        0.0
                    } else {
                        keep
                    }
                });
                let out = &act * &mask;
                lt.mask = Some(mask);
                out
            } else {
                act.clone()
            };
            lt.pre = pre;
            lt.act = act;
            tapes.push(lt);
            h = out;
        }

        let q = h.dot(&layout.q.0.matrix(params)) + layout.q.1.vector(params);
        let gen = layout
            .gen
            .map(|(w, b)| h.dot(&w.matrix(params)) + b.vector(params));
        Ok((
            Outputs { q, gen },
            Tape {
                mode,
                layers: tapes,
                last_hidden: h,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to the online parameters,
    /// given the loss gradient at the heads.
    pub fn backward(
        &self,
        tape: &Tape,
        dq: ArrayView2<f64>,
        dgen: Option<ArrayView2<f64>>,
    ) -> Vec<f64> {
        let layout = Layout::new(&self.spec);
        let params = &self.online;
        let mut grads = vec![0.0; layout.len];
        let activation = self.spec.activation;

        let (qw, qb) = layout.q;
        qw.write(&mut grads, tape.last_hidden.t().dot(&dq));
        qb.write(&mut grads, dq.sum_axis(Axis(0)));
        let mut dh = dq.dot(&qw.matrix(params).t());
        if let (Some((gw, gb)), Some(dgen)) = (layout.gen, dgen) {
            gw.write(&mut grads, tape.last_hidden.t().dot(&dgen));
            gb.write(&mut grads, dgen.sum_axis(Axis(0)));
            dh = dh + dgen.dot(&gw.matrix(params).t());
        }

        for (blocks, lt) in layout.hidden.iter().zip(&tape.layers).rev() {
            let dact = match &lt.mask {
                Some(mask) => dh * mask,
                None => dh,
            };
            let mut dpre = dact;
            ndarray::Zip::from(&mut dpre)
                .and(&lt.pre)
                .and(&lt.act)
                .for_each(|d, &x, &y| *d *= activation.derivative(x, y));

            let dz = match blocks.bn {
                Some((gamma, beta)) => {
                    let xhat = lt.xhat.as_ref().unwrap();
                    let inv_std = lt.inv_std.as_ref().unwrap();
                    gamma.write(&mut grads, (&dpre * xhat).sum_axis(Axis(0)));
                    beta.write(&mut grads, dpre.sum_axis(Axis(0)));
                    let dxhat = &dpre * &gamma.vector(params);
                    match tape.mode {
                        ForwardMode::Train => {
                            let n = dxhat.nrows() as f64;
                            let sum_d = dxhat.sum_axis(Axis(0));
                            let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                            (dxhat * n - &sum_d - &(xhat * &sum_dx)) * &(inv_std / n)
                        }
                        ForwardMode::Eval => dxhat * inv_std,
                    }
                }
                None => dpre,
            };
            blocks.w.write(&mut grads, lt.input.t().dot(&dz));
            blocks.b.write(&mut grads, dz.sum_axis(Axis(0)));
            dh = dz.dot(&blocks.w.matrix(params).t());
        }
        grads
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (l, lt) in tape.layers.iter().enumerate() {
            if let (Some(mean), Some(var)) = (&lt.batch_mean, &lt.batch_var) {
                for (r, b) in self.online_stats.mean[l].iter_mut().zip(mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
                for (r, b) in self.online_stats.var[l].iter_mut().zip(var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let model: QModel = serde_json::from_str(&text)?;
        model.spec.validate()?;
        let expected = Layout::new(&model.spec).len;
        for len in [model.online.len(), model.target.len()] {
            if len != expected {
                return Err(Error::DimensionMismatch { expected, got: len });
            }
        }
        Ok(model)
    }
}
