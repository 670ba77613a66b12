use super::activations::collect_activations;
use super::ledger::CoreLedger;
use crate::error::{Error, Result};
use crate::linalg::{project_onto_basis, reduced_svd_via_gram, trace_variance, DenseMatrix};
use crate::nn::{Architecture, Network};

/// Fraction of the feature layers' parameters (weights and biases) owned by
/// core filters after `task`. Weights a causal mask excludes count as free.
/// Depends only on the architecture and the ledger.
pub fn network_size_fraction(arch: &Architecture, ledger: &CoreLedger, task: u32) -> Result<f64> {
    if task == 0 || task as usize > ledger.n_tasks() {
        return Err(Error::InvalidArgument(format!("ledger has no entry for task {task}")));
    }
    let geometries = arch.geometries()?;
    let mut owned = 0usize;
    for (l, g) in geometries.iter().enumerate() {
        for s in 1..=task {
            let added = ledger.core_counts(s)[l] - ledger.core_counts(s - 1)[l];
            let channels = if l == 0 { g.in_channels } else { ledger.core_counts(s)[l - 1] };
            owned += added * (channels * g.elements_per_channel() + 1);
        }
    }
    Ok(owned as f64 / arch.feature_parameter_count()? as f64)
}

/// Per-layer share of task-`s` activation variance (collected on the
/// snapshot taken after task `s`, under mask `F[s]`) that lies in the span
/// of the filters frozen up to task `t ≤ s`.
///
/// The first `F[t]` columns count in full; the columns added by tasks after
/// `t` contribute only their projection onto the span of the first block.
pub fn variance_explained_by_core(
    snapshot: &Network,
    ledger: &CoreLedger,
    core_task: u32,
    probe_task: u32,
    probe: &DenseMatrix,
    sample_count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if core_task == 0 || core_task > probe_task || probe_task as usize > ledger.n_tasks() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= core task ({core_task}) <= probe task ({probe_task}) <= {}",
            ledger.n_tasks()
        )));
    }
    let mask_s = ledger.core_counts(probe_task);
    let mask_t = ledger.core_counts(core_task);
    let acts = collect_activations(snapshot, probe, probe_task, &mask_s, sample_count, seed)?;
    acts.iter()
        .enumerate()
        .map(|(l, a)| {
            let n = a.n_samples();
            let (ft, fs) = (mask_t[l], mask_s[l]);
            let v_total = trace_variance(&a.centered.columns(0..fs)?, n)?;
            if v_total <= 0.0 {
                return Ok(0.0);
            }
            if ft == fs {
                return Ok(1.0);
            }
            if ft == 0 {
                return Ok(0.0);
            }
            let core = a.centered.columns(0..ft)?;
            let rest = a.centered.columns(ft..fs)?;
            let v_core = trace_variance(&core, n)?;
            let v_proj = match reduced_svd_via_gram(&core)?.left_basis {
                Some(u) => trace_variance(&project_onto_basis(&u, &rest)?, n)?,
                None => 0.0,
            };
            Ok((v_core + v_proj) / v_total)
        })
        .collect()
}
