//! Multi-layer LSTM with a Student-t head (location, scale) or a
//! three-quantile head, plus variational-style dropout masks for the
//! MC-dropout baselines.
//!
//! Per layer and gate g the cell keeps input weights `w_x` (hidden x in),
//! recurrent weights `w_h` (hidden x hidden) and two bias vectors `b`, `b_h`:
//!
//! ```text
//! i_t = sigma(W_xi x_t + b_i + W_hi h_{t-1} + b_hi)
//! f_t = sigma(W_xf x_t + b_f + W_hf h_{t-1} + b_hf)
//! o_t = sigma(W_xo x_t + b_o + W_ho h_{t-1} + b_ho)
//! c~_t = tanh(W_xc x_t + b_c + W_hc h_{t-1} + b_hc)
//! c_t = f_t . c_{t-1} + i_t . c~_t
//! h_t = o_t . tanh(c_t)
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The five parameter blocks the prior factorizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateBlockId {
    Input,
    Forget,
    Output,
    Candidate,
    Head,
}

impl GateBlockId {
    pub fn name(&self) -> &'static str {
        match self {
            GateBlockId::Input => "input",
            GateBlockId::Forget => "forget",
            GateBlockId::Output => "output",
            GateBlockId::Candidate => "candidate",
            GateBlockId::Head => "head",
        }
    }
}

/// Gate iteration order used everywhere a member's parameters are flattened.
pub const GATE_ORDER: [GateBlockId; 4] = [
    GateBlockId::Input,
    GateBlockId::Forget,
    GateBlockId::Output,
    GateBlockId::Candidate,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two outputs: location and raw scale (softplus + floor applied).
    StudentT,
    /// Three outputs: predicted 0.1 / 0.5 / 0.9 quantiles.
    Quantile,
}

impl HeadKind {
    pub fn num_outputs(&self) -> usize {
        match self {
            HeadKind::StudentT => 2,
            HeadKind::Quantile => 3,
        }
    }

    pub fn output_names(&self) -> &'static [&'static str] {
        match self {
            HeadKind::StudentT => &["mu", "scale"],
            HeadKind::Quantile => &["q10", "q50", "q90"],
        }
    }
}

/// Architecture of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub head: HeadKind,
    /// 0 disables dropout entirely; the mask path requires rate in (0, 1).
    pub dropout_rate: f64,
    /// Window length T in samples.
    pub window: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_layers: 4,
            hidden_dim: 32,
            input_dim: 3,
            head: HeadKind::StudentT,
            dropout_rate: 0.0,
            window: 16,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_layers < 1 {
            bad.push(format!("num_layers must be >= 1, got {}", self.num_layers));
        }
        if self.hidden_dim < 1 {
            bad.push(format!("hidden_dim must be >= 1, got {}", self.hidden_dim));
        }
        if self.input_dim < 1 {
            bad.push(format!("input_dim must be >= 1, got {}", self.input_dim));
        }
        if self.window < 1 {
            bad.push(format!("window must be >= 1, got {}", self.window));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bad.push(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// One gate's parameter tensors within a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGateParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
    pub b_h: Tensor,
}

impl LayerGateParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        LayerGateParams {
            w_x: Tensor::zeros(vec![hidden, input]),
            w_h: Tensor::zeros(vec![hidden, hidden]),
            b: Tensor::zeros(vec![hidden, 1]),
            b_h: Tensor::zeros(vec![hidden, 1]),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_x, &self.w_h, &self.b, &self.b_h]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w_x, &mut self.w_h, &mut self.b, &mut self.b_h]
    }
}

pub const GATE_TENSOR_NAMES: [&str; 4] = ["w_x", "w_h", "b", "b_h"];

/// Per-layer parameters: one [`LayerGateParams`] per gate in [`GATE_ORDER`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub gates: [LayerGateParams; 4],
}

impl LstmLayerParams {
    pub fn gate(&self, id: GateBlockId) -> &LayerGateParams {
        match id {
            GateBlockId::Input => &self.gates[0],
            GateBlockId::Forget => &self.gates[1],
            GateBlockId::Output => &self.gates[2],
            GateBlockId::Candidate => &self.gates[3],
            GateBlockId::Head => panic!("head is not a layer gate"),
        }
    }
}

/// Output head: one (w, b) row per head output, consuming the final top-layer
/// hidden state. The Student-t scale row passes through softplus plus a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub rows: Vec<HeadRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadRow {
    pub w: Tensor,
    pub b: Tensor,
}

/// Full parameter set of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberParams {
    pub layers: Vec<LstmLayerParams>,
    pub head: HeadParams,
}

/// Descriptor of one tensor inside a flattened member, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDesc {
    pub name: String,
    pub block: GateBlockId,
    pub rows: usize,
    pub cols: usize,
}

impl MemberParams {
    pub fn new_zeros(cfg: &NetworkConfig) -> Self {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let input = cfg.layer_input_dim(l);
                LstmLayerParams {
                    gates: [
                        LayerGateParams::zeros(cfg.hidden_dim, input),
                        LayerGateParams::zeros(cfg.hidden_dim, input),
                        LayerGateParams::zeros(cfg.hidden_dim, input),
                        LayerGateParams::zeros(cfg.hidden_dim, input),
                    ],
                }
            })
            .collect();
        let rows = (0..cfg.head.num_outputs())
            .map(|_| HeadRow {
                w: Tensor::zeros(vec![1, cfg.hidden_dim]),
                b: Tensor::zeros(vec![1, 1]),
            })
            .collect();
        MemberParams {
            layers,
            head: HeadParams {
                kind: cfg.head,
                rows,
            },
        }
    }

    /// Every tensor in canonical (flattening) order, tagged with its block.
    pub fn tensor_refs(&self) -> Vec<(GateBlockId, &Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for (gi, gate) in layer.gates.iter().enumerate() {
                for t in gate.tensors() {
                    out.push((GATE_ORDER[gi], t));
                }
            }
        }
        for row in &self.head.rows {
            out.push((GateBlockId::Head, &row.w));
            out.push((GateBlockId::Head, &row.b));
        }
        out
    }

    /// Visit every tensor in canonical (flattening) order.
    pub fn for_each(&self, mut f: impl FnMut(GateBlockId, &Tensor)) {
        for (block, t) in self.tensor_refs() {
            f(block, t);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(GateBlockId, &mut Tensor)) {
        for layer in &mut self.layers {
            for (gi, gate) in layer.gates.iter_mut().enumerate() {
                for t in gate.tensors_mut() {
                    f(GATE_ORDER[gi], t);
                }
            }
        }
        for row in &mut self.head.rows {
            f(GateBlockId::Head, &mut row.w);
            f(GateBlockId::Head, &mut row.b);
        }
    }

    /// Canonical tensor descriptors (drives archives and flattening).
    pub fn descriptors(&self) -> Vec<ParamDesc> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for (gi, gate) in layer.gates.iter().enumerate() {
                for (ti, t) in gate.tensors().into_iter().enumerate() {
                    let (r, c) = t.dims2();
                    out.push(ParamDesc {
                        name: format!("layer{li}.{}.{}", GATE_ORDER[gi].name(), GATE_TENSOR_NAMES[ti]),
                        block: GATE_ORDER[gi],
                        rows: r,
                        cols: c,
                    });
                }
            }
        }
        for (ri, row) in self.head.rows.iter().enumerate() {
            let name = self.head.kind.output_names()[ri];
            let (r, c) = row.w.dims2();
            out.push(ParamDesc {
                name: format!("head.{name}.w"),
                block: GateBlockId::Head,
                rows: r,
                cols: c,
            });
            let (r, c) = row.b.dims2();
            out.push(ParamDesc {
                name: format!("head.{name}.b"),
                block: GateBlockId::Head,
                rows: r,
                cols: c,
            });
        }
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each(|_, t| out.extend_from_slice(t.data()));
        out
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, member has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        self.for_each_mut(|_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        });
        Ok(())
    }

    /// Pairwise visit; errors if the two members' shapes disagree.
    pub fn zip_for_each(
        &self,
        other: &Self,
        mut f: impl FnMut(GateBlockId, &Tensor, &Tensor),
    ) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.head.rows.len() != other.head.rows.len()
        {
            return Err(Error::Shape(
                "parameter partitions have different structure".into(),
            ));
        }
        let lhs = self.tensor_refs();
        let rhs = other.tensor_refs();
        for ((b, t), (ob, o)) in lhs.iter().zip(&rhs) {
            if t.shape() != o.shape() || b != ob {
                return Err(Error::Shape("anchor/parameter shape mismatch".into()));
            }
        }
        for ((b, t), (_, o)) in lhs.iter().zip(&rhs) {
            f(*b, t, o);
        }
        Ok(())
    }
}

/// Inverted-dropout masks, one per layer's hidden output, reused across all
/// T time steps of one pass. Entries are 0 or 1/(1-p).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layer_masks: Vec<Vec<f64>>,
}

/// Draw a fresh mask set; requires 0 < dropout_rate < 1.
pub fn sample_dropout_mask(cfg: &NetworkConfig, rng: &mut impl rand::Rng) -> Result<DropoutMask> {
    if cfg.dropout_rate <= 0.0 || cfg.dropout_rate >= 1.0 {
        return Err(Error::Config(format!(
            "dropout mask requires rate in (0, 1), got {}",
            cfg.dropout_rate
        )));
    }
    let keep = 1.0 - cfg.dropout_rate;
    let scale = 1.0 / keep;
    let layer_masks = (0..cfg.num_layers)
        .map(|_| {
            (0..cfg.hidden_dim)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(DropoutMask { layer_masks })
}

/// One LSTM cell step on plain slices. Gate math follows the module-level
/// equations; see [`window_output_nodes`] for the graph (training) path.
pub fn lstm_cell_step(
    params: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (hidden, input) = params.gates[0].w_x.dims2();
    if x.len() != input || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::Shape(format!(
            "cell step: x {} (want {input}), h {} / c {} (want {hidden})",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let pre = |g: &LayerGateParams, j: usize| -> f64 {
        let mut s = g.b.data()[j] + g.b_h.data()[j];
        let wx = g.w_x.data();
        for (k, &xv) in x.iter().enumerate() {
            s += wx[j * input + k] * xv;
        }
        let wh = g.w_h.data();
        for (k, &hv) in h_prev.iter().enumerate() {
            s += wh[j * hidden + k] * hv;
        }
        s
    };
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for j in 0..hidden {
        let i_t = sigmoid(pre(&params.gates[0], j));
        let f_t = sigmoid(pre(&params.gates[1], j));
        let o_t = sigmoid(pre(&params.gates[2], j));
        let cand = pre(&params.gates[3], j).tanh();
        c[j] = f_t * c_prev[j] + i_t * cand;
        h[j] = o_t * c[j].tanh();
    }
    Ok((h, c))
}

// ---- graph construction -------------------------------------------------

/// Node handles for one gate's leaf tensors.
#[derive(Debug, Clone, Copy)]
pub struct GraphGate {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub b: NodeId,
    pub b_h: NodeId,
}

#[derive(Debug, Clone)]
pub struct GraphLayer {
    pub gates: [GraphGate; 4],
    wx_cat: NodeId,
    wh_cat: NodeId,
    bias_cat: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphHeadRow {
    pub w: NodeId,
    pub b: NodeId,
}

/// Parameter leaves of one member inside a [`Graph`]; build once per step and
/// share across every window in the batch.
#[derive(Debug, Clone)]
pub struct GraphParams {
    pub layers: Vec<GraphLayer>,
    pub head: Vec<GraphHeadRow>,
    pub head_kind: HeadKind,
    hidden: usize,
}

impl GraphParams {
    /// Gradient slices in the same canonical order as [`MemberParams::to_flat`].
    pub fn collect_flat_grads(&self, g: &Graph, out: &mut Vec<f64>) {
        out.clear();
        for layer in &self.layers {
            for gate in &layer.gates {
                out.extend_from_slice(g.grad(gate.w_x));
                out.extend_from_slice(g.grad(gate.w_h));
                out.extend_from_slice(g.grad(gate.b));
                out.extend_from_slice(g.grad(gate.b_h));
            }
        }
        for row in &self.head {
            out.extend_from_slice(g.grad(row.w));
            out.extend_from_slice(g.grad(row.b));
        }
    }
}

/// Insert a member's parameters as graph leaves (with the fused per-layer
/// gate concatenations the forward pass multiplies against).
pub fn param_nodes(g: &mut Graph, p: &MemberParams) -> Result<GraphParams> {
    let hidden = p.layers[0].gates[0].w_x.dims2().0;
    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let gates: [GraphGate; 4] = std::array::from_fn(|gi| {
            let gate = &layer.gates[gi];
            GraphGate {
                w_x: g.leaf(&gate.w_x),
                w_h: g.leaf(&gate.w_h),
                b: g.leaf(&gate.b),
                b_h: g.leaf(&gate.b_h),
            }
        });
        let wx_cat = g.concat_rows(&[gates[0].w_x, gates[1].w_x, gates[2].w_x, gates[3].w_x])?;
        let wh_cat = g.concat_rows(&[gates[0].w_h, gates[1].w_h, gates[2].w_h, gates[3].w_h])?;
        let b_cat = g.concat_rows(&[gates[0].b, gates[1].b, gates[2].b, gates[3].b])?;
        let bh_cat = g.concat_rows(&[gates[0].b_h, gates[1].b_h, gates[2].b_h, gates[3].b_h])?;
        let bias_cat = g.add(b_cat, bh_cat)?;
        layers.push(GraphLayer {
            gates,
            wx_cat,
            wh_cat,
            bias_cat,
        });
    }
    let head = p
        .head
        .rows
        .iter()
        .map(|row| GraphHeadRow {
            w: g.leaf(&row.w),
            b: g.leaf(&row.b),
        })
        .collect();
    Ok(GraphParams {
        layers,
        head,
        head_kind: p.head.kind,
        hidden,
    })
}

/// Head output nodes of one window's forward pass.
#[derive(Debug, Clone, Copy)]
pub enum HeadNodes {
    StudentT { mu: NodeId, s: NodeId },
    Quantile { q: [NodeId; 3] },
}

/// Numeric head output (normalized target units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadOutput {
    StudentT { mu: f64, s: f64 },
    Quantile { q: [f64; 3] },
}

/// Run one window (T x F row-major) through the stacked layers and the head.
///
/// `h0 = c0 = 0` for every layer. The recurrence always uses the raw hidden
/// state; masks apply only where a layer's output feeds the next layer or the
/// head. `scale_floor` is the epsilon added below the Student-t softplus
/// scale.
pub fn window_output_nodes(
    g: &mut Graph,
    cfg: &NetworkConfig,
    gp: &GraphParams,
    window: &[f64],
    scale_floor: f64,
    mask: Option<&DropoutMask>,
) -> Result<HeadNodes> {
    let t_len = cfg.window;
    let f_dim = cfg.input_dim;
    if window.len() != t_len * f_dim {
        return Err(Error::Input(format!(
            "window has {} entries, expected {}x{}",
            window.len(),
            t_len,
            f_dim
        )));
    }
    let hidden = gp.hidden;
    let mask_nodes: Option<Vec<NodeId>> = mask.map(|m| {
        m.layer_masks
            .iter()
            .map(|lm| g.leaf_slice(lm, hidden, 1))
            .collect()
    });

    let mut h_state: Vec<NodeId> = Vec::with_capacity(gp.layers.len());
    let mut c_state: Vec<NodeId> = Vec::with_capacity(gp.layers.len());
    for _ in &gp.layers {
        h_state.push(g.zeros_leaf(hidden, 1));
        c_state.push(g.zeros_leaf(hidden, 1));
    }

    let mut top_masked = h_state[gp.layers.len() - 1];
    for t in 0..t_len {
        let mut layer_in = g.leaf_slice(&window[t * f_dim..(t + 1) * f_dim], f_dim, 1);
        for (l, layer) in gp.layers.iter().enumerate() {
            let xw = g.matmul(layer.wx_cat, layer_in)?;
            let hw = g.matmul(layer.wh_cat, h_state[l])?;
            let lin = g.add(xw, hw)?;
            let pre = g.add(lin, layer.bias_cat)?;
            let pre_i = g.slice_rows(pre, 0, hidden)?;
            let pre_f = g.slice_rows(pre, hidden, hidden)?;
            let pre_o = g.slice_rows(pre, 2 * hidden, hidden)?;
            let pre_c = g.slice_rows(pre, 3 * hidden, hidden)?;
            let gate_i = g.sigmoid(pre_i);
            let gate_f = g.sigmoid(pre_f);
            let gate_o = g.sigmoid(pre_o);
            let cand = g.tanh(pre_c);
            let fc = g.mul(gate_f, c_state[l])?;
            let ic = g.mul(gate_i, cand)?;
            let c_new = g.add(fc, ic)?;
            let tc = g.tanh(c_new);
            let h_new = g.mul(gate_o, tc)?;
            h_state[l] = h_new;
            c_state[l] = c_new;
            let fed = match &mask_nodes {
                Some(ms) => g.mul(h_new, ms[l])?,
                None => h_new,
            };
            layer_in = fed;
            if l == gp.layers.len() - 1 {
                top_masked = fed;
            }
        }
    }

    let mut outs = Vec::with_capacity(gp.head.len());
    for row in &gp.head {
        let wh = g.matmul(row.w, top_masked)?;
        outs.push(g.add(wh, row.b)?);
    }
    Ok(match gp.head_kind {
        HeadKind::StudentT => {
            let sp = g.softplus(outs[1]);
            let s = g.add_scalar(sp, scale_floor);
            HeadNodes::StudentT { mu: outs[0], s }
        }
        HeadKind::Quantile => HeadNodes::Quantile {
            q: [outs[0], outs[1], outs[2]],
        },
    })
}

/// Forward pass over a whole batch of windows at once, columns = windows.
/// Produces the same numbers as [`window_output_nodes`] per window but with
/// one matrix op per gate computation instead of one per window, which is
/// what makes training tractable. `masks[w]` applies to column w.
pub fn batch_output_nodes(
    g: &mut Graph,
    cfg: &NetworkConfig,
    gp: &GraphParams,
    windows: &[&[f64]],
    scale_floor: f64,
    masks: Option<&[DropoutMask]>,
) -> Result<HeadNodes> {
    let b = windows.len();
    if b == 0 {
        return Err(Error::Contract("empty window batch".into()));
    }
    let t_len = cfg.window;
    let f_dim = cfg.input_dim;
    for w in windows {
        if w.len() != t_len * f_dim {
            return Err(Error::Input(format!(
                "window has {} entries, expected {}x{}",
                w.len(),
                t_len,
                f_dim
            )));
        }
    }
    if let Some(ms) = masks {
        if ms.len() != b {
            return Err(Error::Contract(format!(
                "{} masks for {b} windows",
                ms.len()
            )));
        }
    }
    let hidden = gp.hidden;
    // per-layer mask matrices, column w = window w's mask
    let mask_nodes: Option<Vec<NodeId>> = masks.map(|ms| {
        (0..gp.layers.len())
            .map(|l| {
                let mut buf = vec![0.0; hidden * b];
                for (w, m) in ms.iter().enumerate() {
                    for j in 0..hidden {
                        buf[j * b + w] = m.layer_masks[l][j];
                    }
                }
                g.leaf_slice(&buf, hidden, b)
            })
            .collect()
    });

    let mut h_state: Vec<NodeId> = Vec::with_capacity(gp.layers.len());
    let mut c_state: Vec<NodeId> = Vec::with_capacity(gp.layers.len());
    for _ in &gp.layers {
        h_state.push(g.zeros_leaf(hidden, b));
        c_state.push(g.zeros_leaf(hidden, b));
    }

    let mut xbuf = vec![0.0; f_dim * b];
    let mut top_masked = h_state[gp.layers.len() - 1];
    for t in 0..t_len {
        for (w, win) in windows.iter().enumerate() {
            for f in 0..f_dim {
                xbuf[f * b + w] = win[t * f_dim + f];
            }
        }
        let mut layer_in = g.leaf_slice(&xbuf, f_dim, b);
        for (l, layer) in gp.layers.iter().enumerate() {
            let xw = g.matmul(layer.wx_cat, layer_in)?;
            let hw = g.matmul(layer.wh_cat, h_state[l])?;
            let lin = g.add(xw, hw)?;
            let pre = g.add_cols(lin, layer.bias_cat)?;
            let pre_i = g.slice_rows(pre, 0, hidden)?;
            let pre_f = g.slice_rows(pre, hidden, hidden)?;
            let pre_o = g.slice_rows(pre, 2 * hidden, hidden)?;
            let pre_c = g.slice_rows(pre, 3 * hidden, hidden)?;
            let gate_i = g.sigmoid(pre_i);
            let gate_f = g.sigmoid(pre_f);
            let gate_o = g.sigmoid(pre_o);
            let cand = g.tanh(pre_c);
            let fc = g.mul(gate_f, c_state[l])?;
            let ic = g.mul(gate_i, cand)?;
            let c_new = g.add(fc, ic)?;
            let tc = g.tanh(c_new);
            let h_new = g.mul(gate_o, tc)?;
            h_state[l] = h_new;
            c_state[l] = c_new;
            let fed = match &mask_nodes {
                Some(ms) => g.mul(h_new, ms[l])?,
                None => h_new,
            };
            layer_in = fed;
            if l == gp.layers.len() - 1 {
                top_masked = fed;
            }
        }
    }

    let mut outs = Vec::with_capacity(gp.head.len());
    for row in &gp.head {
        let wh = g.matmul(row.w, top_masked)?; // [1, b]
        outs.push(g.add(wh, row.b)?); // scalar bias broadcast
    }
    Ok(match gp.head_kind {
        HeadKind::StudentT => {
            let sp = g.softplus(outs[1]);
            let s = g.add_scalar(sp, scale_floor);
            HeadNodes::StudentT { mu: outs[0], s }
        }
        HeadKind::Quantile => HeadNodes::Quantile {
            q: [outs[0], outs[1], outs[2]],
        },
    })
}

/// Pure-function forward pass: bit-identical on repeated calls with the same
/// (window, params, mask). Windows with non-finite entries are rejected.
pub fn forward(
    cfg: &NetworkConfig,
    params: &MemberParams,
    window: &[f64],
    scale_floor: f64,
    mask: Option<&DropoutMask>,
) -> Result<HeadOutput> {
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("window contains non-finite entries".into()));
    }
    let mut g = Graph::new();
    let gp = param_nodes(&mut g, params)?;
    let head = window_output_nodes(&mut g, cfg, &gp, window, scale_floor, mask)?;
    Ok(match head {
        HeadNodes::StudentT { mu, s } => HeadOutput::StudentT {
            mu: g.value_scalar(mu),
            s: g.value_scalar(s),
        },
        HeadNodes::Quantile { q } => HeadOutput::Quantile {
            q: [
                g.value_scalar(q[0]),
                g.value_scalar(q[1]),
                g.value_scalar(q[2]),
            ],
        },
    })
}
