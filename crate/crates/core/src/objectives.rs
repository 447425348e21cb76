//! Training losses: per-sample Student-t NLL, Gaussian NLL, pinball loss,
//! the gate-wise anchor penalty, and graph builders for the member objective.
//!
//! The t-NLL used in training drops the additive constants (Gamma terms and
//! (1/2) log(nu pi)); with fixed nu they do not move the optimum.
//! [`t_nll_log_score`] restores them so log-scores stay comparable across nu.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::lstm::{GateBlockId, GraphParams, HeadNodes, MemberParams};
use crate::tdist::ln_gamma;

/// Student-t likelihood settings. `nu` is fixed during training; interval
/// variance decomposition additionally needs nu > 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TNllConfig {
    pub nu: f64,
    pub scale_floor: f64,
}

impl Default for TNllConfig {
    fn default() -> Self {
        TNllConfig {
            nu: 4.0,
            scale_floor: 1e-4,
        }
    }
}

impl TNllConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.nu > 0.0) {
            bad.push(format!("nu must be > 0, got {}", self.nu));
        }
        if !(self.scale_floor > 0.0) {
            bad.push(format!("scale_floor must be > 0, got {}", self.scale_floor));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Per-block prior variance; a single shared value by default (0.01).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub sigma2_input: f64,
    pub sigma2_forget: f64,
    pub sigma2_output: f64,
    pub sigma2_candidate: f64,
    pub sigma2_head: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::shared(0.01)
    }
}

impl PriorSpec {
    pub fn shared(sigma2: f64) -> Self {
        PriorSpec {
            sigma2_input: sigma2,
            sigma2_forget: sigma2,
            sigma2_output: sigma2,
            sigma2_candidate: sigma2,
            sigma2_head: sigma2,
        }
    }

    pub fn sigma2(&self, block: GateBlockId) -> f64 {
        match block {
            GateBlockId::Input => self.sigma2_input,
            GateBlockId::Forget => self.sigma2_forget,
            GateBlockId::Output => self.sigma2_output,
            GateBlockId::Candidate => self.sigma2_candidate,
            GateBlockId::Head => self.sigma2_head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("input", self.sigma2_input),
            ("forget", self.sigma2_forget),
            ("output", self.sigma2_output),
            ("candidate", self.sigma2_candidate),
            ("head", self.sigma2_head),
        ];
        let bad: Vec<String> = all
            .iter()
            .filter(|(_, v)| !(*v > 0.0))
            .map(|(n, v)| format!("sigma2_{n} must be > 0, got {v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Per-sample Student-t negative log-likelihood without additive constants:
/// `log s + ((nu+1)/2) log(1 + (y-mu)^2 / (nu s^2))`.
pub fn t_nll(y: f64, mu: f64, s: f64, cfg: &TNllConfig) -> Result<f64> {
    if s < cfg.scale_floor {
        return Err(Error::Contract(format!(
            "scale {s} below floor {}",
            cfg.scale_floor
        )));
    }
    let r = y - mu;
    Ok(s.ln() + 0.5 * (cfg.nu + 1.0) * (1.0 + r * r / (cfg.nu * s * s)).ln())
}

/// Full Student-t NLL including the nu-dependent constants; comparable
/// across different nu (the reported log-score).
pub fn t_nll_log_score(y: f64, mu: f64, s: f64, cfg: &TNllConfig) -> Result<f64> {
    let base = t_nll(y, mu, s, cfg)?;
    let nu = cfg.nu;
    Ok(base + 0.5 * (nu * std::f64::consts::PI).ln() + ln_gamma(0.5 * nu)
        - ln_gamma(0.5 * (nu + 1.0)))
}

/// Heteroscedastic Gaussian NLL without constants: `log s + (y-mu)^2 / (2 s^2)`.
pub fn gaussian_nll(y: f64, mu: f64, s: f64, scale_floor: f64) -> Result<f64> {
    if s < scale_floor {
        return Err(Error::Contract(format!(
            "scale {s} below floor {scale_floor}"
        )));
    }
    let r = y - mu;
    Ok(s.ln() + r * r / (2.0 * s * s))
}

/// Pinball (quantile) loss `max(tau (y-yhat), (tau-1)(y-yhat))`.
pub fn pinball_loss(y: f64, yhat: f64, tau: f64) -> Result<f64> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::Config(format!("tau {tau} outside (0,1)")));
    }
    let d = y - yhat;
    Ok((tau * d).max((tau - 1.0) * d))
}

/// The three quantile levels of the quantile head.
pub const QUANTILE_TAUS: [f64; 3] = [0.1, 0.5, 0.9];

/// Gate-wise quadratic anchor penalty
/// `sum_g ||W_g - W_{g,anc}||^2 / (2 sigma_g^2)`; biases count toward their
/// gate's block.
pub fn anchor_penalty(
    params: &MemberParams,
    anchors: &MemberParams,
    prior: &PriorSpec,
) -> Result<f64> {
    let mut acc = 0.0;
    params.zip_for_each(anchors, |block, p, a| {
        let sq: f64 = p
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        acc += sq / (2.0 * prior.sigma2(block));
    })?;
    Ok(acc)
}

// ---- graph builders ------------------------------------------------------

/// t-NLL nodes, elementwise over the shapes of `y`, `mu`, `s`:
/// `log s + ((nu+1)/2) log(1 + (y-mu)^2/(nu s^2))`.
pub fn t_nll_nodes(g: &mut Graph, y: NodeId, mu: NodeId, s: NodeId, nu: f64) -> Result<NodeId> {
    let d = g.sub(y, mu)?;
    let d2 = g.square(d);
    let s2 = g.square(s);
    let denom = g.mul_scalar(s2, nu);
    let ratio = g.div(d2, denom)?;
    let one_plus = g.add_scalar(ratio, 1.0);
    let lg = g.log(one_plus)?;
    let tail = g.mul_scalar(lg, 0.5 * (nu + 1.0));
    let ls = g.log(s)?;
    g.add(ls, tail)
}

/// Gaussian NLL nodes: `log s + (y-mu)^2 / (2 s^2)`.
pub fn gaussian_nll_nodes(g: &mut Graph, y: NodeId, mu: NodeId, s: NodeId) -> Result<NodeId> {
    let d = g.sub(y, mu)?;
    let d2 = g.square(d);
    let s2 = g.square(s);
    let two_s2 = g.mul_scalar(s2, 2.0);
    let quad = g.div(d2, two_s2)?;
    let ls = g.log(s)?;
    g.add(ls, quad)
}

/// Pinball loss nodes: `tau relu(d) + (1-tau) relu(-d)` with `d = y - yhat`.
pub fn pinball_nodes(g: &mut Graph, y: NodeId, yhat: NodeId, tau: f64) -> Result<NodeId> {
    let d = g.sub(y, yhat)?;
    let pos = g.relu(d);
    let neg_d = g.mul_scalar(d, -1.0);
    let neg = g.relu(neg_d);
    let a = g.mul_scalar(pos, tau);
    let b = g.mul_scalar(neg, 1.0 - tau);
    g.add(a, b)
}

/// Per-sample data loss for a head output (elementwise across a batch):
/// t-NLL for the Student-t head, mean pinball over the three quantile levels
/// for the quantile head.
pub fn sample_loss_nodes(g: &mut Graph, y: NodeId, head: &HeadNodes, nu: f64) -> Result<NodeId> {
    match head {
        HeadNodes::StudentT { mu, s } => t_nll_nodes(g, y, *mu, *s, nu),
        HeadNodes::Quantile { q } => {
            let l0 = pinball_nodes(g, y, q[0], QUANTILE_TAUS[0])?;
            let l1 = pinball_nodes(g, y, q[1], QUANTILE_TAUS[1])?;
            let l2 = pinball_nodes(g, y, q[2], QUANTILE_TAUS[2])?;
            let s01 = g.add(l0, l1)?;
            let s = g.add(s01, l2)?;
            Ok(g.mul_scalar(s, 1.0 / 3.0))
        }
    }
}

/// Anchor-penalty node over a member's parameter leaves.
pub fn anchor_penalty_nodes(
    g: &mut Graph,
    gp: &GraphParams,
    anchors: &MemberParams,
    prior: &PriorSpec,
) -> Result<NodeId> {
    let mut anchor_leaves: Vec<(NodeId, GateBlockId, NodeId)> = Vec::new();
    {
        let mut param_ids: Vec<NodeId> = Vec::new();
        for layer in &gp.layers {
            for gate in &layer.gates {
                param_ids.extend_from_slice(&[gate.w_x, gate.w_h, gate.b, gate.b_h]);
            }
        }
        for row in &gp.head {
            param_ids.push(row.w);
            param_ids.push(row.b);
        }
        let mut i = 0;
        let mut shape_ok = true;
        anchors.for_each(|block, t| {
            if i >= param_ids.len() {
                shape_ok = false;
                return;
            }
            let pid = param_ids[i];
            let (r, c) = g.shape(pid);
            if (r, c) != t.dims2() {
                shape_ok = false;
            }
            let aid = g.leaf(t);
            anchor_leaves.push((pid, block, aid));
            i += 1;
        });
        if !shape_ok || i != param_ids.len() {
            return Err(Error::Shape(
                "anchor partition does not match parameter partition".into(),
            ));
        }
    }
    let mut total: Option<NodeId> = None;
    for (pid, block, aid) in anchor_leaves {
        let d = g.sub(pid, aid)?;
        let sq = g.square(d);
        let ssum = g.sum(sq);
        let term = g.mul_scalar(ssum, 1.0 / (2.0 * prior.sigma2(block)));
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("member has no parameters".into()))
}
