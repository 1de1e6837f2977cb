use super::optimize::agent_weights;
use super::{check_feasible, tolerance, CostModel, Partition, PartitionError};
use crate::runtime::Profile;
use crate::spec::SpecDocument;

pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Calls `visit` with every restricted growth string of length `n`, i.e.
/// every set partition of `0..n` exactly once, blocks numbered by first
/// occurrence.
fn for_each_rgs(n: usize, mut visit: impl FnMut(&[usize])) {
    if n == 0 {
        visit(&[]);
        return;
    }
    let mut a = vec![0usize; n];
    let mut max = vec![0usize; n];
    loop {
        visit(&a);
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if a[i] <= max[i - 1] {
                a[i] += 1;
                max[i] = max[i - 1].max(a[i]);
                for j in (i + 1)..n {
                    a[j] = 0;
                    max[j] = max[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Exact minimum over all set partitions of the agents, filtered by the
/// feasibility validator; ties go to the lexicographically least canonical
/// form.
pub fn brute_force_partition(spec: &SpecDocument, profile: &Profile, cm: &CostModel) -> Result<Partition, PartitionError> {
    let names: Vec<String> = spec.workflow.agent_names().into_iter().collect();
    if names.len() > BRUTE_FORCE_LIMIT {
        return Err(PartitionError::TooLarge(names.len()));
    }
    let w = agent_weights(&names, profile, cm);
    let total: f64 = (0..names.len()).flat_map(|i| ((i + 1)..names.len()).map(move |j| (i, j))).map(|(i, j)| w[i][j]).sum();
    let eps = tolerance(total + names.len() as f64 * cm.unit_fixed_cost);
    let mut best: Option<(f64, Partition)> = None;
    let mut first_violations = None;
    for_each_rgs(names.len(), |rgs| {
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        let mut cut = 0.0;
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                if rgs[i] != rgs[j] {
                    cut += w[i][j];
                }
            }
        }
        let cost = cut + blocks as f64 * cm.unit_fixed_cost;
        if let Some((bc, _)) = &best {
            if cost > bc + eps {
                return;
            }
        }
        let p = Partition::from_blocks(
            (0..blocks).map(|b| names.iter().zip(rgs).filter(|(_, &g)| g == b).map(|(n, _)| n.clone()).collect::<Vec<_>>()),
        );
        let violations = check_feasible(spec, &p);
        if !violations.is_empty() {
            first_violations.get_or_insert(violations);
            return;
        }
        let better = match &best {
            None => true,
            Some((bc, bp)) => cost < bc - eps || p.canonical_form() < bp.canonical_form(),
        };
        if better {
            best = Some((cost, p));
        }
    });
    best.map(|(_, p)| p).ok_or_else(|| PartitionError::Infeasible(first_violations.unwrap_or_default()))
}
