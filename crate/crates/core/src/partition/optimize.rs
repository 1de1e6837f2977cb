use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{check_feasible, partition_cost, tolerance, CostModel, Partition, PartitionError, Violation};
use crate::runtime::Profile;
use crate::spec::SpecDocument;

/// The optimization problem over "atoms": connected components of the
/// colocate relation, which always move together.
pub(super) struct Instance {
    pub names: Vec<String>,
    pub atoms: Vec<Vec<usize>>,
    pub mem: Vec<u64>,
    pub weight: Vec<Vec<f64>>,
    pub separate: Vec<Vec<bool>>,
    pub fixed: f64,
    pub cap: Option<u64>,
    pub max_units: Option<usize>,
    pub eps: f64,
}

/// Symmetric agent-to-agent cut weights, indexed like the sorted agent list.
pub(super) fn agent_weights(names: &[String], profile: &Profile, cm: &CostModel) -> Vec<Vec<f64>> {
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut w = vec![vec![0.0; names.len()]; names.len()];
    for (key, stats) in &profile.edges {
        if let (Some(&a), Some(&b)) = (index.get(key.from.as_str()), index.get(key.to.as_str())) {
            if a != b {
                let c = stats.count as f64 * cm.remote_latency_ms + stats.bytes as f64 * cm.remote_byte_cost;
                w[a][b] += c;
                w[b][a] += c;
            }
        }
    }
    w
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Shortest chain of colocate pairs from `a` to `b`.
fn colocate_path(names: &[String], pairs: &[(usize, usize)], a: usize, b: usize) -> Vec<Violation> {
    let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::from([a]);
    let mut seen = BTreeSet::from([a]);
    while let Some(x) = queue.pop_front() {
        if x == b {
            break;
        }
        for &(p, q) in pairs {
            for (u, v) in [(p, q), (q, p)] {
                if u == x && seen.insert(v) {
                    prev.insert(v, x);
                    queue.push_back(v);
                }
            }
        }
    }
    let mut chain = Vec::new();
    let mut cur = b;
    while let Some(&p) = prev.get(&cur) {
        chain.push(Violation::Colocate(names[p].clone(), names[cur].clone()));
        cur = p;
    }
    chain.reverse();
    chain.push(Violation::Separate(names[a].clone(), names[b].clone()));
    chain
}

impl Instance {
    pub fn new(spec: &SpecDocument, profile: &Profile, cm: &CostModel) -> Result<Self, PartitionError> {
        let names: Vec<String> = spec.workflow.agent_names().into_iter().collect();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let c = &spec.deployment.constraints;
        let pair = |[a, b]: &[String; 2]| -> Option<(usize, usize)> { Some((*index.get(a.as_str())?, *index.get(b.as_str())?)) };
        let colocate: Vec<(usize, usize)> = c.colocate.iter().filter_map(pair).collect();
        let separate: Vec<(usize, usize)> = c.separate.iter().filter_map(pair).collect();

        let mut parent: Vec<usize> = (0..names.len()).collect();
        for &(a, b) in &colocate {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        for &(a, b) in &separate {
            if a == b || find(&mut parent, a) == find(&mut parent, b) {
                return Err(PartitionError::Infeasible(colocate_path(&names, &colocate, a, b)));
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..names.len() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let atoms: Vec<Vec<usize>> = groups.into_values().collect();
        let agent_mem: Vec<u64> = names.iter().map(|n| spec.mem_mb(n)).collect();
        let mem: Vec<u64> = atoms.iter().map(|a| a.iter().map(|&i| agent_mem[i]).sum()).collect();
        if let Some(cap) = c.unit_mem_cap_mb {
            let over: Vec<Violation> = atoms
                .iter()
                .zip(&mem)
                .filter(|(_, &m)| m > cap)
                .map(|(atom, &m)| Violation::MemCap {
                    unit: format!("{{{}}}", atom.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join(", ")),
                    mem_mb: m,
                    cap_mb: cap,
                })
                .collect();
            if !over.is_empty() {
                return Err(PartitionError::Infeasible(over));
            }
        }

        let aw = agent_weights(&names, profile, cm);
        let k = atoms.len();
        let mut atom_of = vec![0; names.len()];
        for (a, members) in atoms.iter().enumerate() {
            for &i in members {
                atom_of[i] = a;
            }
        }
        let mut weight = vec![vec![0.0; k]; k];
        let mut total = 0.0;
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                total += aw[i][j];
                let (a, b) = (atom_of[i], atom_of[j]);
                if a != b {
                    weight[a][b] += aw[i][j];
                    weight[b][a] += aw[i][j];
                }
            }
        }
        let mut sep = vec![vec![false; k]; k];
        for &(a, b) in &separate {
            sep[atom_of[a]][atom_of[b]] = true;
            sep[atom_of[b]][atom_of[a]] = true;
        }
        Ok(Self {
            eps: tolerance(total + names.len() as f64 * cm.unit_fixed_cost),
            names,
            atoms,
            mem,
            weight,
            separate: sep,
            fixed: cm.unit_fixed_cost,
            cap: c.unit_mem_cap_mb,
            max_units: c.max_units.map(|m| m as usize),
        })
    }

    pub fn to_partition(&self, blocks: &[Vec<usize>]) -> Partition {
        Partition::from_blocks(
            blocks
                .iter()
                .filter(|b| !b.is_empty())
                .map(|b| b.iter().flat_map(|&a| self.atoms[a].iter().map(|&i| self.names[i].clone())).collect::<Vec<_>>()),
        )
    }

    fn w_to(&self, x: usize, block: &[usize], skip: Option<usize>) -> f64 {
        block.iter().filter(|&&y| y != x && Some(y) != skip).map(|&y| self.weight[x][y]).sum()
    }

    fn sep_with(&self, x: usize, block: &[usize], skip: Option<usize>) -> bool {
        block.iter().any(|&y| y != x && Some(y) != skip && self.separate[x][y])
    }

    fn mem_of(&self, block: &[usize]) -> u64 {
        block.iter().map(|&a| self.mem[a]).sum()
    }

    fn fits(&self, mem: u64) -> bool {
        self.cap.is_none_or(|cap| mem <= cap)
    }
}

struct State<'a> {
    inst: &'a Instance,
    blocks: Vec<Vec<usize>>,
    home: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Move {
    To { atom: usize, to: usize },
    Fresh { atom: usize },
    Swap { x: usize, y: usize },
}

impl<'a> State<'a> {
    fn new(inst: &'a Instance, blocks: Vec<Vec<usize>>) -> Self {
        let mut home = vec![0; inst.atoms.len()];
        for (b, atoms) in blocks.iter().enumerate() {
            for &a in atoms {
                home[a] = b;
            }
        }
        Self { inst, blocks, home }
    }

    fn live(&self) -> usize {
        self.blocks.iter().filter(|b| !b.is_empty()).count()
    }

    fn compact(&mut self) {
        self.blocks.retain(|b| !b.is_empty());
        for b in &mut self.blocks {
            b.sort_unstable();
        }
        self.blocks.sort();
        *self = State::new(self.inst, std::mem::take(&mut self.blocks));
    }

    /// Greedy agglomeration. Returns whether anything merged.
    fn merge(&mut self) -> Result<bool, PartitionError> {
        let inst = self.inst;
        let mut merged = false;
        loop {
            self.compact();
            let forced = inst.max_units.is_some_and(|m| self.blocks.len() > m);
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.blocks.len() {
                for j in (i + 1)..self.blocks.len() {
                    let (bi, bj) = (&self.blocks[i], &self.blocks[j]);
                    if bi.iter().any(|&x| inst.sep_with(x, bj, None)) || !inst.fits(inst.mem_of(bi) + inst.mem_of(bj)) {
                        continue;
                    }
                    let gain: f64 = bi.iter().map(|&x| inst.w_to(x, bj, None)).sum::<f64>() + inst.fixed;
                    if best.is_none_or(|(g, _, _)| gain > g + inst.eps) {
                        best = Some((gain, i, j));
                    }
                }
            }
            match best {
                Some((gain, i, j)) if forced || gain > inst.eps => {
                    let absorbed = std::mem::take(&mut self.blocks[j]);
                    self.blocks[i].extend(absorbed);
                    merged = true;
                }
                None if forced => {
                    return Err(PartitionError::Infeasible(vec![Violation::MaxUnits {
                        units: self.blocks.len(),
                        max: inst.max_units.unwrap_or_default() as u32,
                    }]))
                }
                _ => return Ok(merged),
            }
        }
    }

    fn gain(&self, mv: Move) -> Option<f64> {
        let inst = self.inst;
        match mv {
            Move::To { atom, to } => {
                let from = self.home[atom];
                let target = &self.blocks[to];
                if from == to || inst.sep_with(atom, target, None) || !inst.fits(inst.mem_of(target) + inst.mem[atom]) {
                    return None;
                }
                if target.is_empty() {
                    return None;
                }
                let emptied = if self.blocks[from].len() == 1 { inst.fixed } else { 0.0 };
                Some(inst.w_to(atom, target, None) - inst.w_to(atom, &self.blocks[from], None) + emptied)
            }
            Move::Fresh { atom } => {
                let from = self.home[atom];
                if self.blocks[from].len() == 1 || inst.max_units.is_some_and(|m| self.live() >= m) {
                    return None;
                }
                Some(-inst.w_to(atom, &self.blocks[from], None) - inst.fixed)
            }
            Move::Swap { x, y } => {
                let (s, t) = (self.home[x], self.home[y]);
                if s == t {
                    return None;
                }
                let (bs, bt) = (&self.blocks[s], &self.blocks[t]);
                if inst.sep_with(x, bt, Some(y)) || inst.sep_with(y, bs, Some(x)) {
                    return None;
                }
                if !inst.fits(inst.mem_of(bt) - inst.mem[y] + inst.mem[x])
                    || !inst.fits(inst.mem_of(bs) - inst.mem[x] + inst.mem[y])
                {
                    return None;
                }
                Some(inst.w_to(x, bt, Some(y)) - inst.w_to(x, bs, None) + inst.w_to(y, bs, Some(x)) - inst.w_to(y, bt, None))
            }
        }
    }

    fn apply(&mut self, mv: Move) {
        let relocate = |atom: usize, to: usize, state: &mut Self| {
            let from = state.home[atom];
            state.blocks[from].retain(|&a| a != atom);
            state.blocks[to].push(atom);
            state.home[atom] = to;
        };
        match mv {
            Move::To { atom, to } => relocate(atom, to, self),
            Move::Fresh { atom } => {
                self.blocks.push(Vec::new());
                let to = self.blocks.len() - 1;
                relocate(atom, to, self);
            }
            Move::Swap { x, y } => {
                let (s, t) = (self.home[x], self.home[y]);
                relocate(x, t, self);
                relocate(y, s, self);
            }
        }
    }

    /// One Fiduccia–Mattheyses style pass over single-atom moves and swaps:
    /// apply the best available move even when it loses, lock what moved,
    /// then keep only the best prefix. Returns whether the cost dropped.
    fn refine(&mut self) -> bool {
        let inst = self.inst;
        let n = inst.atoms.len();
        let start = self.blocks.clone();
        let mut locked = vec![false; n];
        let mut history = Vec::new();
        let mut cumulative = 0.0;
        let mut best = (0.0, 0usize);
        loop {
            let mut choice: Option<(f64, Move)> = None;
            let mut consider = |g: Option<f64>, mv: Move| {
                if let Some(g) = g {
                    if choice.is_none_or(|(b, _)| g > b + inst.eps) {
                        choice = Some((g, mv));
                    }
                }
            };
            for atom in (0..n).filter(|&a| !locked[a]) {
                for to in 0..self.blocks.len() {
                    consider(self.gain(Move::To { atom, to }), Move::To { atom, to });
                }
                consider(self.gain(Move::Fresh { atom }), Move::Fresh { atom });
                for y in ((atom + 1)..n).filter(|&y| !locked[y]) {
                    consider(self.gain(Move::Swap { x: atom, y }), Move::Swap { x: atom, y });
                }
            }
            let Some((g, mv)) = choice else { break };
            self.apply(mv);
            match mv {
                Move::To { atom, .. } | Move::Fresh { atom } => locked[atom] = true,
                Move::Swap { x, y } => {
                    locked[x] = true;
                    locked[y] = true;
                }
            }
            cumulative += g;
            history.push(mv);
            if cumulative > best.0 + inst.eps {
                best = (cumulative, history.len());
            }
        }
        *self = State::new(inst, start);
        for &mv in &history[..best.1] {
            self.apply(mv);
        }
        self.compact();
        best.1 > 0
    }

    fn cost(&self) -> f64 {
        let inst = self.inst;
        let mut cut = 0.0;
        for x in 0..inst.atoms.len() {
            for y in (x + 1)..inst.atoms.len() {
                if self.home[x] != self.home[y] {
                    cut += inst.weight[x][y];
                }
            }
        }
        cut + self.live() as f64 * inst.fixed
    }
}

/// Greedy agglomerative merging interleaved with move/swap refinement,
/// finally compared against the distributed and monolithic baselines.
pub fn optimize_partition(spec: &SpecDocument, profile: &Profile, cm: &CostModel) -> Result<Partition, PartitionError> {
    let inst = Instance::new(spec, profile, cm)?;
    let mut state = State::new(&inst, (0..inst.atoms.len()).map(|a| vec![a]).collect());
    for _ in 0..64 {
        state.merge()?;
        let before = state.cost();
        if !state.refine() || state.cost() >= before - inst.eps {
            break;
        }
    }
    state.merge()?;

    let mut candidates = vec![inst.to_partition(&state.blocks)];
    candidates.push(inst.to_partition(&(0..inst.atoms.len()).map(|a| vec![a]).collect::<Vec<_>>()));
    candidates.push(inst.to_partition(&[(0..inst.atoms.len()).collect()]));
    let mut best: Option<(f64, Partition)> = None;
    for p in candidates {
        if !check_feasible(spec, &p).is_empty() {
            continue;
        }
        let c = partition_cost(&p, profile, cm);
        let better = match &best {
            None => true,
            Some((bc, bp)) => c < bc - inst.eps || (c <= bc + inst.eps && p.canonical_form() < bp.canonical_form()),
        };
        if better {
            best = Some((c, p));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        PartitionError::Infeasible(check_feasible(spec, &inst.to_partition(&state.blocks)))
    })
}
