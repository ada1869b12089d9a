//! The quad-stream network.
//!
//! ```text
//! R (N x N) --mixer--> H (N x d) --block x L--> H --pool--> g (1 x d) --MLP--> logits (1 x 2)
//! ```
//!
//! * **Mixer**: every node's correlation profile (a row of `R`) is filtered by
//!   three same-length dilated 1-D convolutions (dilations 1, 2, 5; kernel 3),
//!   the three outputs are summed, projected `N -> d_in`, then ReLU. No bias,
//!   so a zero input gives a zero embedding.
//! * **NeuroGraph block**: `Z_k = L_k H W_k` for each prior `L_k`, fused by view
//!   attention (`e_k = tanh(Z_k w_v + b_v) w_attn`, softmax over views per
//!   node, `sum_k alpha_k * Z_k`), then `ReLU(.) + H`.
//! * **Pooling**: node scores `tanh(H W_p1) w_p2`, softmax over nodes, weighted
//!   sum of node embeddings.
//! * **Head**: `ReLU(g W1 + b1) W2 + b2`.
//!
//! Ablations: without the bipolar split the whole input becomes `|R|` and
//! the priors are `I +/- A_hat(|R|)`; without the dual Laplacian only smooth
//! priors are kept; without NeuroGraph blocks each layer is a plain
//! `ReLU((I + A_hat(|R|)) H W)`.

use std::fmt;

use rand::Rng;

use crate::connectome::{
    build_quad_laplacians, bipolar_split, smooth_and_diff, ConnectivityMatrix, Matrix,
    QuadLaplacians,
};
use crate::error::{LuminaError, Result};
use crate::numerics::{SoftmaxAxis, Tape, Var};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperParams {
    pub d_in: usize,
    pub d_out: usize,
    pub d_hidden: usize,
    pub n_layers: usize,
    pub dilations: Vec<usize>,
    pub kernel_size: usize,
    pub n_classes: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d_in: 48,
            d_out: 48,
            d_hidden: 48,
            n_layers: 3,
            dilations: vec![1, 2, 5],
            kernel_size: 3,
            n_classes: 2,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.d_in, self.d_out, self.d_hidden, self.n_layers, self.kernel_size];
        if widths.contains(&0) || self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(LuminaError::InvalidInput(format!("non-positive hyperparameter in {self:?}")));
        }
        if self.d_in != self.d_out {
            return Err(LuminaError::InvalidInput(format!(
                "residual stacking needs d_in == d_out, got {} and {}",
                self.d_in, self.d_out
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(LuminaError::InvalidInput("kernel_size must be odd".into()));
        }
        if self.n_classes != 2 {
            return Err(LuminaError::InvalidInput("only binary heads are supported".into()));
        }
        Ok(())
    }
}

/// The five rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    NoBipolar,
    NoDualLaplacian,
    NoNeuroGraph,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::NoBipolar,
        Variant::NoDualLaplacian,
        Variant::NoNeuroGraph,
        Variant::Full,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoBipolar => "no-br",
            Variant::NoDualLaplacian => "no-dl",
            Variant::NoNeuroGraph => "no-ng",
            Variant::Full => "full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::NoBipolar => "LUMINA w/o B/R",
            Variant::NoDualLaplacian => "LUMINA w/o D/L",
            Variant::NoNeuroGraph => "LUMINA w/o N/G",
            Variant::Full => "LUMINA (full)",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| LuminaError::InvalidInput(format!("unknown ablation variant {s:?}")))
    }

    pub fn switches(self) -> AblationSwitches {
        let (b, d, n) = match self {
            Variant::Baseline => (false, false, false),
            Variant::NoBipolar => (false, true, true),
            Variant::NoDualLaplacian => (true, false, true),
            Variant::NoNeuroGraph => (true, true, false),
            Variant::Full => (true, true, true),
        };
        AblationSwitches {
            bipolar_relu: b,
            dual_laplacian: d,
            neurograph_block: n,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationSwitches {
    /// B/R
    pub bipolar_relu: bool,
    /// D/L
    pub dual_laplacian: bool,
    /// N/G
    pub neurograph_block: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Variant::Full.switches()
    }
}

impl AblationSwitches {
    pub fn variant(self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.switches() == self)
    }

    /// Variant key, or the raw flags for unnamed combinations.
    pub fn key(self) -> String {
        match self.variant() {
            Some(v) => v.key().to_owned(),
            None => format!(
                "br{}-dl{}-ng{}",
                u8::from(self.bipolar_relu),
                u8::from(self.dual_laplacian),
                u8::from(self.neurograph_block)
            ),
        }
    }

    pub fn route(self) -> Route {
        if self.neurograph_block {
            Route::QuadStream
        } else {
            Route::PlainGcn
        }
    }

    /// Number of GCN streams per layer.
    pub fn n_streams(self) -> usize {
        match (self.neurograph_block, self.bipolar_relu, self.dual_laplacian) {
            (false, _, _) => 1,
            (true, true, true) => 4,
            (true, true, false) | (true, false, true) => 2,
            (true, false, false) => 1,
        }
    }
}

/// Which layer structure a forward pass took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    QuadStream,
    PlainGcn,
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ModelParams {
    pub fn new(names: Vec<String>, values: Vec<Matrix>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(LuminaError::InvalidInput("parameter names and values differ in length".into()));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Shape and fan-in of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub fan_in: usize,
}

/// Parameter layout for a configuration; the order here is the order used
/// everywhere else (init, tape registration, checkpoints, optimizer state).
pub fn param_layout(hp: &HyperParams, switches: AblationSwitches, n_rois: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut add = |name: String, shape: (usize, usize), fan_in: usize| {
        out.push(ParamSpec { name, shape, fan_in })
    };
    for d in &hp.dilations {
        add(format!("mixer.kernel.d{d}"), (1, hp.kernel_size), hp.kernel_size);
    }
    add("mixer.proj".into(), (n_rois, hp.d_in), n_rois);
    for l in 0..hp.n_layers {
        match switches.route() {
            Route::QuadStream => {
                for k in 0..switches.n_streams() {
                    add(format!("block{l}.stream{k}.w"), (hp.d_in, hp.d_out), hp.d_in);
                }
                add(format!("block{l}.attn.w_v"), (hp.d_out, hp.d_hidden), hp.d_out);
                add(format!("block{l}.attn.b_v"), (1, hp.d_hidden), hp.d_out);
                add(format!("block{l}.attn.w_attn"), (hp.d_hidden, 1), hp.d_hidden);
            }
            Route::PlainGcn => add(format!("block{l}.gcn.w"), (hp.d_in, hp.d_out), hp.d_in),
        }
    }
    add("pool.w1".into(), (hp.d_out, hp.d_hidden), hp.d_out);
    add("pool.w2".into(), (hp.d_hidden, 1), hp.d_hidden);
    add("head.w1".into(), (hp.d_out, hp.d_hidden), hp.d_out);
    add("head.b1".into(), (1, hp.d_hidden), hp.d_out);
    add("head.w2".into(), (hp.d_hidden, hp.n_classes), hp.d_hidden);
    add("head.b2".into(), (1, hp.n_classes), hp.d_hidden);
    out
}

/// Where a forward pass gets its spatial priors.
#[derive(Debug, Clone, Copy)]
pub enum PriorSource<'a> {
    /// Constant priors from a prepared cache. `|R|`-based priors for the
    /// ablations are computed on the fly from the input value.
    Prepared(&'a QuadLaplacians),
    /// Rebuild priors from the input node on the tape, so gradients flow from
    /// the output back through normalization and the bipolar split into `R`.
    FromInput,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    pub params: Vec<Var>,
    pub input: Var,
    /// Per layer, `N x K` view weights (only on the quad-stream route).
    pub view_weights: Vec<Var>,
    /// `N x 1` pooling weights.
    pub pool_weights: Var,
    pub route: Route,
}

// ---------------------------------------------------------------------------
// components

/// Multi-scale regional mixer: `ReLU((sum_d conv_d(x)) proj)`.
pub fn regional_mixer(
    tape: &mut Tape,
    x: Var,
    kernels: &[Var],
    dilations: &[usize],
    proj: Var,
) -> Result<Var> {
    if kernels.len() != dilations.len() || kernels.is_empty() {
        return Err(LuminaError::InvalidInput(format!(
            "{} mixer kernels for {} dilations",
            kernels.len(),
            dilations.len()
        )));
    }
    let mut acc = tape.dilated_conv1d(x, kernels[0], dilations[0])?;
    for (k, d) in kernels.iter().zip(dilations).skip(1) {
        let c = tape.dilated_conv1d(x, *k, *d)?;
        acc = tape.add(acc, c)?;
    }
    let projected = tape.matmul(acc, proj)?;
    tape.relu(projected)
}

/// `Z = prior * H * W`, no nonlinearity.
pub fn gcn_stream(tape: &mut Tape, h: Var, prior: Var, w: Var) -> Result<Var> {
    let ph = tape.matmul(prior, h)?;
    tape.matmul(ph, w)
}

/// View attention over `views`; returns the fused `N x d_out` output and the
/// `N x K` weights.
pub fn view_attention(
    tape: &mut Tape,
    views: &[Var],
    expected_views: usize,
    w_v: Var,
    b_v: Var,
    w_attn: Var,
) -> Result<(Var, Var)> {
    if views.len() != expected_views || views.is_empty() {
        return Err(LuminaError::ViewCountMismatch {
            expected: expected_views,
            got: views.len(),
        });
    }
    let shape0 = tape.value(views[0]).dim();
    for v in views {
        let s = tape.value(*v).dim();
        if s != shape0 {
            return Err(LuminaError::ShapeMismatch {
                op: "view_attention",
                left: vec![shape0.0, shape0.1],
                right: vec![s.0, s.1],
            });
        }
    }
    let mut scores = Vec::with_capacity(views.len());
    for z in views {
        let proj = tape.matmul(*z, w_v)?;
        let shifted = tape.add_row(proj, b_v)?;
        let act = tape.tanh(shifted)?;
        scores.push(tape.matmul(act, w_attn)?);
    }
    let stacked = tape.concat_cols(&scores)?;
    let alpha = tape.softmax(stacked, SoftmaxAxis::Rows)?;
    let mut out: Option<Var> = None;
    for (k, z) in views.iter().enumerate() {
        let a_k = tape.column(alpha, k)?;
        let weighted = tape.scale_rows(*z, a_k)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok((out.expect("at least one view"), alpha))
}

/// Parameters of one NeuroGraph block on the tape.
#[derive(Debug, Clone)]
pub struct BlockVars {
    pub stream_weights: Vec<Var>,
    pub w_v: Var,
    pub b_v: Var,
    pub w_attn: Var,
}

/// `ReLU(view_attention(streams)) + H`.
pub fn neurograph_block(
    tape: &mut Tape,
    h: Var,
    priors: &[Var],
    block: &BlockVars,
) -> Result<(Var, Var)> {
    if priors.len() != block.stream_weights.len() {
        return Err(LuminaError::ViewCountMismatch {
            expected: block.stream_weights.len(),
            got: priors.len(),
        });
    }
    let mut views = Vec::with_capacity(priors.len());
    for (prior, w) in priors.iter().zip(&block.stream_weights) {
        views.push(gcn_stream(tape, h, *prior, *w)?);
    }
    let (fused, alpha) =
        view_attention(tape, &views, priors.len(), block.w_v, block.b_v, block.w_attn)?;
    let act = tape.relu(fused)?;
    Ok((tape.add(act, h)?, alpha))
}

/// `ReLU(prior H W)`, the conventional GCN layer.
pub fn plain_gcn_layer(tape: &mut Tape, h: Var, prior: Var, w: Var) -> Result<Var> {
    let z = gcn_stream(tape, h, prior, w)?;
    tape.relu(z)
}

/// Gated attention pooling: returns `(g, sigma)` with `g` of shape `1 x d`
/// and node weights `sigma` of shape `N x 1`.
pub fn attention_pool(tape: &mut Tape, h: Var, w1: Var, w2: Var) -> Result<(Var, Var)> {
    let hidden = tape.matmul(h, w1)?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.matmul(hidden, w2)?;
    let sigma = tape.softmax(scores, SoftmaxAxis::Cols)?;
    let sigma_t = tape.transpose(sigma)?;
    Ok((tape.matmul(sigma_t, h)?, sigma))
}

/// Two-layer MLP head, raw logits.
pub fn classify(tape: &mut Tape, g: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let hidden = tape.matmul(g, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, w2)?;
    tape.add_row(out, b2)
}

/// `(I + A_hat, I - A_hat)` built on the tape from a nonnegative adjacency node.
fn smooth_diff_on_tape(tape: &mut Tape, a: Var) -> Result<(Var, Var)> {
    let degree = tape.row_sum(a)?;
    let inv_sqrt = tape.inv_sqrt(degree)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let left = tape.scale_rows(a, inv_sqrt)?;
    let a_hat = tape.scale_cols(left, inv_sqrt_t)?;
    Ok((tape.identity_plus(a_hat, 1.0)?, tape.identity_plus(a_hat, -1.0)?))
}

fn off_diagonal_mask(n: usize) -> Matrix {
    Matrix::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 })
}

fn abs_zero_diag(r: &Matrix) -> Matrix {
    let mut a = r.mapv(f64::abs);
    a.diag_mut().fill(0.0);
    a
}

// ---------------------------------------------------------------------------
// full model

#[derive(Debug, Clone, PartialEq)]
pub struct Lumina {
    pub hp: HyperParams,
    pub switches: AblationSwitches,
    pub n_rois: usize,
    pub params: ModelParams,
}

impl Lumina {
    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(hp: HyperParams, switches: AblationSwitches, n_rois: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_rois < 2 {
            return Err(LuminaError::InvalidInput(format!("need at least 2 ROIs, got {n_rois}")));
        }
        let mut rng = rng_for(seed, "init");
        let layout = param_layout(&hp, switches, n_rois);
        let mut names = Vec::with_capacity(layout.len());
        let mut values = Vec::with_capacity(layout.len());
        for spec in layout {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            values.push(Matrix::from_shape_fn(spec.shape, |_| rng.random_range(-bound..=bound)));
            names.push(spec.name);
        }
        Ok(Self {
            hp,
            switches,
            n_rois,
            params: ModelParams { names, values },
        })
    }

    /// Check that `params` matches this configuration's layout.
    pub fn check_params(&self, params: &[Matrix]) -> Result<()> {
        let layout = param_layout(&self.hp, self.switches, self.n_rois);
        if layout.len() != params.len() {
            return Err(LuminaError::ConfigMismatch(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (spec, p) in layout.iter().zip(params) {
            if spec.shape != p.dim() {
                return Err(LuminaError::ConfigMismatch(format!(
                    "{}: expected {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    p.dim()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, r: &Matrix) -> Result<()> {
        if r.dim() != (self.n_rois, self.n_rois) {
            return Err(LuminaError::ConfigMismatch(format!(
                "model expects {n}x{n} input, got {:?}",
                r.shape(),
                n = self.n_rois
            )));
        }
        Ok(())
    }

    /// Record a forward pass with the given parameter values.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Matrix],
        r: Var,
        priors: PriorSource<'_>,
    ) -> Result<ForwardTrace> {
        self.check_params(params)?;
        self.check_input(tape.value(r))?;
        let pv: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let mut next = pv.iter().copied();
        let mut take = || next.next().expect("layout checked");

        let features = if self.switches.bipolar_relu { r } else { tape.abs(r)? };
        let prior_vars = self.priors_on_tape(tape, r, priors)?;

        let kernels: Vec<Var> = self.hp.dilations.iter().map(|_| take()).collect();
        let proj = take();
        let mut h = regional_mixer(tape, features, &kernels, &self.hp.dilations, proj)?;

        let mut view_weights = Vec::new();
        for _ in 0..self.hp.n_layers {
            match self.switches.route() {
                Route::QuadStream => {
                    let block = BlockVars {
                        stream_weights: (0..self.switches.n_streams()).map(|_| take()).collect(),
                        w_v: take(),
                        b_v: take(),
                        w_attn: take(),
                    };
                    let (next_h, alpha) = neurograph_block(tape, h, &prior_vars, &block)?;
                    h = next_h;
                    view_weights.push(alpha);
                }
                Route::PlainGcn => {
                    let w = take();
                    h = plain_gcn_layer(tape, h, prior_vars[0], w)?;
                }
            }
        }
        let (pw1, pw2) = (take(), take());
        let (g, pool_weights) = attention_pool(tape, h, pw1, pw2)?;
        let (w1, b1, w2, b2) = (take(), take(), take(), take());
        let logits = classify(tape, g, w1, b1, w2, b2)?;
        Ok(ForwardTrace {
            logits,
            params: pv,
            input: r,
            view_weights,
            pool_weights,
            route: self.switches.route(),
        })
    }

    fn priors_on_tape(&self, tape: &mut Tape, r: Var, source: PriorSource<'_>) -> Result<Vec<Var>> {
        let sw = self.switches;
        match source {
            PriorSource::Prepared(quad) => {
                if quad.n_rois() != self.n_rois {
                    return Err(LuminaError::ConfigMismatch(format!(
                        "priors are {0}x{0}, model expects {1}x{1}",
                        quad.n_rois(),
                        self.n_rois
                    )));
                }
                let mats: Vec<Matrix> = if sw.route() == Route::PlainGcn {
                    vec![smooth_and_diff(&abs_zero_diag(tape.value(r))).0]
                } else if sw.bipolar_relu {
                    let idx: &[usize] = if sw.dual_laplacian { &[0, 1, 2, 3] } else { &[0, 2] };
                    idx.iter().map(|&i| quad.l[i].clone()).collect()
                } else {
                    let (s, d) = smooth_and_diff(&abs_zero_diag(tape.value(r)));
                    if sw.dual_laplacian {
                        vec![s, d]
                    } else {
                        vec![s]
                    }
                };
                Ok(mats.into_iter().map(|m| tape.constant(m)).collect())
            }
            PriorSource::FromInput => {
                let mask = tape.constant(off_diagonal_mask(self.n_rois));
                let zero_diag = tape.mul(r, mask)?;
                if sw.route() == Route::PlainGcn || !sw.bipolar_relu {
                    let a_abs = tape.abs(zero_diag)?;
                    let (s, d) = smooth_diff_on_tape(tape, a_abs)?;
                    if sw.route() == Route::QuadStream && sw.dual_laplacian {
                        Ok(vec![s, d])
                    } else {
                        Ok(vec![s])
                    }
                } else {
                    let a_pos = tape.relu(zero_diag)?;
                    let neg = tape.scale(zero_diag, -1.0)?;
                    let a_neg = tape.relu(neg)?;
                    let (ps, pd) = smooth_diff_on_tape(tape, a_pos)?;
                    let (ns, nd) = smooth_diff_on_tape(tape, a_neg)?;
                    if sw.dual_laplacian {
                        Ok(vec![ps, pd, ns, nd])
                    } else {
                        Ok(vec![ps, ns])
                    }
                }
            }
        }
    }

    /// Logits (`1 x 2`) for one subject using cached priors.
    pub fn logits(&self, r: &Matrix, quad: &QuadLaplacians) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(r.clone());
        let trace = self.forward_on_tape(&mut tape, self.params.values(), x, PriorSource::Prepared(quad))?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Logits with priors recomputed from `r`.
    pub fn logits_from_input(&self, r: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(r.clone());
        let trace = self.forward_on_tape(&mut tape, self.params.values(), x, PriorSource::FromInput)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Softmax probability of class 1.
    pub fn positive_probability(&self, r: &Matrix, quad: &QuadLaplacians) -> Result<f64> {
        Ok(positive_probability(&self.logits(r, quad)?))
    }

    /// Cross-entropy loss and parameter gradients for one subject.
    pub fn loss_and_grads(
        &self,
        params: &[Matrix],
        r: &Matrix,
        quad: &QuadLaplacians,
        label: usize,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let x = tape.constant(r.clone());
        let trace = self.forward_on_tape(&mut tape, params, x, PriorSource::Prepared(quad))?;
        let loss = tape.cross_entropy(trace.logits, label)?;
        let mut grads = tape.backward(loss)?;
        let gs = trace.params.iter().map(|v| grads.take(*v)).collect();
        Ok((tape.scalar(loss), gs))
    }
}

/// Softmax probability of class 1 from a `1 x 2` logit row.
pub fn positive_probability(logits: &Matrix) -> f64 {
    let (a, b) = (logits[[0, 0]], logits[[0, 1]]);
    1.0 / (1.0 + (a - b).exp())
}

/// Convenience for tests and tools: connectivity straight to cached priors.
pub fn priors_for(r: &ConnectivityMatrix) -> QuadLaplacians {
    build_quad_laplacians(&bipolar_split(r))
}
