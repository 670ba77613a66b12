//! Structural invariants of a checkpoint plus replay of stored logits.

use space_core::nn::{Checkpoint, Ownership};
use space_core::space::network_size_fraction;

use crate::fixtures::{FixtureSet, ReplayResult};

/// Largest tolerated logit drift for an earlier task.
pub const REPLAY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: usize,
    pub violations: Vec<String>,
    pub replay: Vec<ReplayResult>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, cond: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !cond {
            self.violations.push(msg());
        }
    }
}

pub fn verify_checkpoint(ckpt: &Checkpoint, fixtures: Option<&FixtureSet>) -> VerifyReport {
    let mut rep = VerifyReport::default();
    let net = &ckpt.network;
    let ledger = &ckpt.ledger;
    let n_tasks = ledger.n_tasks() as u32;
    rep.check(ledger.widths() == net.widths().as_slice(), || "ledger widths differ from the network".into());
    if !rep.ok() {
        return rep;
    }

    for (l, layer) in net.layers.iter().enumerate() {
        for j in 0..layer.n_out() {
            let owner = (1..=n_tasks).find(|&t| j < ledger.core_counts(t)[l]);
            match owner {
                Some(s) => {
                    rep.check(layer.ownership[j] == Ownership::Core(s), || {
                        format!("layer {l} filter {j}: expected Core({s}), found {:?}", layer.ownership[j])
                    });
                    let limit = (l > 0).then(|| ledger.core_counts(s)[l - 1]);
                    rep.check(layer.input_limit[j] == limit, || {
                        format!("layer {l} filter {j}: causal limit {:?}, expected {limit:?}", layer.input_limit[j])
                    });
                    let leak = (0..layer.patch_len()).any(|r| !layer.is_unmasked(r, j) && layer.weight(r, j) != 0.0);
                    rep.check(!leak, || format!("layer {l} filter {j}: nonzero weight behind its causal mask"));
                }
                None => {
                    rep.check(layer.ownership[j] == Ownership::Free, || {
                        format!("layer {l} filter {j}: expected Free, found {:?}", layer.ownership[j])
                    });
                    let zero = layer.bias[j] == 0.0 && (0..layer.patch_len()).all(|r| layer.weight(r, j) == 0.0);
                    rep.check(zero, || format!("layer {l} filter {j}: free filter has nonzero parameters"));
                }
            }
        }
    }

    let expected: Vec<u32> = (1..=n_tasks).collect();
    rep.check(net.heads.keys().copied().collect::<Vec<_>>() == expected, || {
        format!("heads {:?} do not match tasks 1..={n_tasks}", net.heads.keys().collect::<Vec<_>>())
    });
    let last = net.n_layers() - 1;
    for (&t, head) in &net.heads {
        if t <= n_tasks {
            let want = ledger.core_counts(t)[last];
            rep.check(head.in_channels == want, || format!("head {t} reads {} channels, core has {want}", head.in_channels));
        }
    }

    rep.check(ckpt.accuracy_history.len() == n_tasks as usize, || {
        format!("{} accuracy rows for {n_tasks} tasks", ckpt.accuracy_history.len())
    });
    for (i, row) in ckpt.accuracy_history.iter().enumerate() {
        rep.check(row.len() == i + 1, || format!("accuracy row {} has {} entries", i + 1, row.len()));
        rep.check(row.iter().all(|a| (0.0..=100.0).contains(a)), || format!("accuracy row {} out of range", i + 1));
    }
    if n_tasks > 0 {
        match network_size_fraction(net.architecture(), ledger, n_tasks) {
            Ok(f) => rep.check(f > 0.0 && f <= 1.0, || format!("network size fraction {f} outside (0, 1]")),
            Err(e) => rep.check(false, || format!("network size fraction: {e}")),
        }
    }

    if let Some(fx) = fixtures {
        for f in &fx.fixtures {
            if f.task > n_tasks {
                continue;
            }
            match fx.replay_one(net, f) {
                Ok(r) => {
                    rep.check(r.max_abs_diff <= REPLAY_TOLERANCE, || {
                        format!("task {}: logits drifted by {:e}", r.task, r.max_abs_diff)
                    });
                    rep.replay.push(r);
                }
                Err(e) => rep.check(false, || format!("task {}: replay failed: {e}", f.task)),
            }
        }
    }
    rep
}
