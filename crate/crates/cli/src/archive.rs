//! Versioned model archive: JSON with raw-bit (hex) float encoding for every
//! array that feeds predictions, guaranteeing bit-exact save/load round
//! trips. The `float_encoding` header documents the choice.

use std::path::Path;

use serde::{Deserialize, Serialize};

use evpower_core::data::{ColumnStats, NormStats};
use evpower_core::lstm::{GateBlockId, MemberParams};
use evpower_core::train::{AnchorSet, EnsembleModel, TrainingLog};
use evpower_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const FLOAT_ENCODING: &str = "f64-bits-hex";

fn encode_bits(data: &[f64]) -> String {
    let mut s = String::with_capacity(data.len() * 16);
    for v in data {
        s.push_str(&format!("{:016x}", v.to_bits()));
    }
    s
}

fn decode_bits(s: &str, expect: usize, what: &str) -> Result<Vec<f64>> {
    if s.len() != expect * 16 {
        return Err(CliError::Archive(format!(
            "{what}: expected {} hex chars, found {}",
            expect * 16,
            s.len()
        )));
    }
    let mut out = Vec::with_capacity(expect);
    for (i, chunk) in s.as_bytes().chunks(16).enumerate() {
        let hex = std::str::from_utf8(chunk)
            .map_err(|_| CliError::Archive(format!("{what}: non-ascii hex at value {i}")))?;
        let bits = u64::from_str_radix(hex, 16)
            .map_err(|_| CliError::Archive(format!("{what}: bad hex at value {i}")))?;
        out.push(f64::from_bits(bits));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    block: GateBlockId,
    rows: usize,
    cols: usize,
    bits: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MemberEntry {
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    min_bits: String,
    max_bits: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormStatsEntry {
    features: Vec<StatsEntry>,
    target: StatsEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogSummary {
    member: usize,
    epochs: usize,
    initial_objective: f64,
    final_objective: f64,
    /// Last epoch's batch-averaged terms; absent when the archive was
    /// written from a model whose epoch history was not retained.
    final_data: Option<f64>,
    final_penalty: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveDoc {
    format_version: u32,
    float_encoding: String,
    run_config: RunConfig,
    norm_stats: NormStatsEntry,
    members: Vec<MemberEntry>,
    anchors: Option<Vec<MemberEntry>>,
    training_summary: Vec<LogSummary>,
}

fn member_entry(p: &MemberParams) -> MemberEntry {
    let descs = p.descriptors();
    let mut tensors = Vec::with_capacity(descs.len());
    let refs = p.tensor_refs();
    for (desc, (_, t)) in descs.into_iter().zip(refs) {
        tensors.push(TensorEntry {
            name: desc.name,
            block: desc.block,
            rows: desc.rows,
            cols: desc.cols,
            bits: encode_bits(t.data()),
        });
    }
    MemberEntry { tensors }
}

fn restore_member(template: &MemberParams, entry: &MemberEntry) -> Result<MemberParams> {
    let descs = template.descriptors();
    if descs.len() != entry.tensors.len() {
        return Err(CliError::Archive(format!(
            "member has {} tensors, archive carries {}",
            descs.len(),
            entry.tensors.len()
        )));
    }
    let mut flat = Vec::with_capacity(template.num_params());
    for (desc, te) in descs.iter().zip(&entry.tensors) {
        if desc.name != te.name || desc.rows != te.rows || desc.cols != te.cols {
            return Err(CliError::Archive(format!(
                "tensor mismatch: expected {} [{}x{}], found {} [{}x{}]",
                desc.name, desc.rows, desc.cols, te.name, te.rows, te.cols
            )));
        }
        flat.extend(decode_bits(&te.bits, te.rows * te.cols, &te.name)?);
    }
    let mut out = template.clone();
    out.copy_from_flat(&flat).map_err(CliError::Core)?;
    Ok(out)
}

fn stats_entry(c: &ColumnStats) -> StatsEntry {
    StatsEntry {
        name: c.name.clone(),
        min_bits: encode_bits(&[c.min]),
        max_bits: encode_bits(&[c.max]),
    }
}

fn restore_stats(e: &StatsEntry) -> Result<ColumnStats> {
    Ok(ColumnStats {
        name: e.name.clone(),
        min: decode_bits(&e.min_bits, 1, &e.name)?[0],
        max: decode_bits(&e.max_bits, 1, &e.name)?[0],
    })
}

/// Serialize a trained model (plus its resolved run configuration) to disk.
pub fn save_model(path: &Path, model: &EnsembleModel, cfg: &RunConfig) -> Result<()> {
    let doc = ArchiveDoc {
        format_version: FORMAT_VERSION,
        float_encoding: FLOAT_ENCODING.to_string(),
        run_config: cfg.clone(),
        norm_stats: NormStatsEntry {
            features: model.norm_stats.features.iter().map(stats_entry).collect(),
            target: stats_entry(&model.norm_stats.target),
        },
        members: model.members.iter().map(member_entry).collect(),
        anchors: model
            .anchors
            .as_ref()
            .map(|a| a.members.iter().map(member_entry).collect()),
        training_summary: model
            .logs
            .iter()
            .enumerate()
            .map(|(m, log)| LogSummary {
                member: m,
                epochs: log.epochs.len(),
                initial_objective: log.initial_objective,
                final_objective: log.final_objective,
                final_data: log.epochs.last().map(|e| e.data),
                final_penalty: log.epochs.last().map(|e| e.penalty),
            })
            .collect(),
    };
    let json = serde_json::to_string(&doc)
        .map_err(|e| CliError::Archive(format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(Error::Io)?;
    Ok(())
}

/// Load a model archive; rejects unknown versions and corrupt payloads with
/// parser position context.
pub fn load_model(path: &Path) -> Result<(EnsembleModel, RunConfig)> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    // version gate before full decode so future formats fail cleanly
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Archive(format!("{}: {e}", path.display()))
    })?;
    match probe.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(CliError::Version(format!(
                "archive format {v} unsupported (expected {FORMAT_VERSION})"
            )))
        }
        None => {
            return Err(CliError::Archive(format!(
                "{}: missing format_version",
                path.display()
            )))
        }
    }
    let doc: ArchiveDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Archive(format!("{}: {e}", path.display())))?;
    if doc.float_encoding != FLOAT_ENCODING {
        return Err(CliError::Archive(format!(
            "unknown float encoding '{}'",
            doc.float_encoding
        )));
    }
    let cfg = doc.run_config.clone();
    cfg.validate()?;

    let template = MemberParams::new_zeros(&cfg.network);
    let members = doc
        .members
        .iter()
        .map(|m| restore_member(&template, m))
        .collect::<Result<Vec<_>>>()?;
    if members.is_empty() {
        return Err(CliError::Archive("archive holds no members".into()));
    }
    let anchors = match &doc.anchors {
        Some(list) => Some(AnchorSet {
            members: list
                .iter()
                .map(|m| restore_member(&template, m))
                .collect::<Result<Vec<_>>>()?,
        }),
        None => None,
    };
    let norm_stats = NormStats {
        features: doc
            .norm_stats
            .features
            .iter()
            .map(restore_stats)
            .collect::<Result<Vec<_>>>()?,
        target: restore_stats(&doc.norm_stats.target)?,
    };
    let logs = doc
        .training_summary
        .iter()
        .map(|s| TrainingLog {
            initial_objective: s.initial_objective,
            final_objective: s.final_objective,
            epochs: Vec::new(),
        })
        .collect();

    let model = EnsembleModel {
        network: cfg.network.clone(),
        likelihood: cfg.likelihood,
        prior: cfg.prior,
        mode: cfg.train.mode,
        mc_samples: cfg.train.mc_samples,
        seed: cfg.train.seed,
        members,
        anchors,
        norm_stats,
        logs,
    };
    Ok((model, cfg))
}

/// Round-trip helper for tests: bitwise tensor equality.
pub fn params_bits_equal(a: &MemberParams, b: &MemberParams) -> bool {
    let fa = a.to_flat();
    let fb = b.to_flat();
    fa.len() == fb.len()
        && fa
            .iter()
            .zip(&fb)
            .all(|(x, y)| x.to_bits() == y.to_bits())
}
