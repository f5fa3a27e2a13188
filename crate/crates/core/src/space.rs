//! Architecture search space: option lists per decision variable, the
//! fixed-length categorical encoding of architectures, enumeration, and the
//! progressive expansion schedule used during supernet training.
//!
//! A space has three dimensions: encoder depth, per-layer attention head
//! count, and per-layer feed-forward intermediate size. An architecture is
//! described by `1 + 2 * max_depth` decision variables in a fixed order:
//! depth first, then `(heads, intermediate)` for each layer index ascending.
//! Option lists are stored descending (largest first) so that the active
//! subset under progressive expansion is always a prefix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three searchable dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Depth,
    Heads,
    Intermediate,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Depth => write!(f, "depth"),
            Dimension::Heads => write!(f, "heads"),
            Dimension::Intermediate => write!(f, "intermediate"),
        }
    }
}

/// What a flat decision-variable index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Depth,
    /// Head count of the given layer.
    Heads(usize),
    /// Intermediate size of the given layer.
    Intermediate(usize),
}

/// Number of active (trainable) prefix options per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveCounts {
    pub depths: usize,
    pub heads: usize,
    pub intermediates: usize,
}

/// The architecture search space.
///
/// Option lists are descending and duplicate-free; the largest depth option
/// equals `max_depth`. `active` marks the per-dimension prefix currently
/// trainable under progressive expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    max_depth: usize,
    depth_options: Vec<usize>,
    head_options: Vec<usize>,
    intermediate_options: Vec<usize>,
    active: ActiveCounts,
}

fn check_options(name: &str, opts: &[usize]) -> Result<()> {
    if opts.is_empty() {
        return Err(Error::InvalidSpace(format!("{name} options are empty")));
    }
    if opts.contains(&0) {
        return Err(Error::InvalidSpace(format!("{name} options must be positive")));
    }
    for w in opts.windows(2) {
        if w[0] <= w[1] {
            return Err(Error::InvalidSpace(format!(
                "{name} options must be strictly descending, got {opts:?}"
            )));
        }
    }
    Ok(())
}

impl SearchSpace {
    /// Builds a fully active space. Option lists may be given in any order;
    /// they are sorted descending here. Duplicates are rejected.
    pub fn new(
        depth_options: Vec<usize>,
        head_options: Vec<usize>,
        intermediate_options: Vec<usize>,
    ) -> Result<Self> {
        let mut depth_options = depth_options;
        let mut head_options = head_options;
        let mut intermediate_options = intermediate_options;
        depth_options.sort_unstable_by(|a, b| b.cmp(a));
        head_options.sort_unstable_by(|a, b| b.cmp(a));
        intermediate_options.sort_unstable_by(|a, b| b.cmp(a));
        check_options("depth", &depth_options)?;
        check_options("head", &head_options)?;
        check_options("intermediate", &intermediate_options)?;
        let max_depth = depth_options[0];
        let active = ActiveCounts {
            depths: depth_options.len(),
            heads: head_options.len(),
            intermediates: intermediate_options.len(),
        };
        Ok(SearchSpace {
            max_depth,
            depth_options,
            head_options,
            intermediate_options,
            active,
        })
    }

    /// Returns a copy with the given active prefix counts.
    pub fn with_active_counts(&self, counts: ActiveCounts) -> Result<Self> {
        let ok = |n: usize, len: usize| n >= 1 && n <= len;
        if !ok(counts.depths, self.depth_options.len())
            || !ok(counts.heads, self.head_options.len())
            || !ok(counts.intermediates, self.intermediate_options.len())
        {
            return Err(Error::InvalidSpace(format!(
                "active counts {counts:?} out of range for option lists"
            )));
        }
        let mut s = self.clone();
        s.active = counts;
        Ok(s)
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn depth_options(&self) -> &[usize] {
        &self.depth_options
    }

    pub fn head_options(&self) -> &[usize] {
        &self.head_options
    }

    pub fn intermediate_options(&self) -> &[usize] {
        &self.intermediate_options
    }

    pub fn active_counts(&self) -> ActiveCounts {
        self.active
    }

    pub fn is_fully_active(&self) -> bool {
        self.active.depths == self.depth_options.len()
            && self.active.heads == self.head_options.len()
            && self.active.intermediates == self.intermediate_options.len()
    }

    /// Copy of this space with every option active.
    pub fn fully_active(&self) -> Self {
        let mut s = self.clone();
        s.active = ActiveCounts {
            depths: s.depth_options.len(),
            heads: s.head_options.len(),
            intermediates: s.intermediate_options.len(),
        };
        s
    }

    /// Number of decision variables: depth plus (heads, intermediate) per layer.
    pub fn var_count(&self) -> usize {
        1 + 2 * self.max_depth
    }

    /// What variable `var` denotes. Variable order: 0 = depth, then for each
    /// layer `l` the pair (heads at `1 + 2l`, intermediate at `2 + 2l`).
    pub fn var_kind(&self, var: usize) -> VarKind {
        assert!(var < self.var_count(), "variable index out of range");
        if var == 0 {
            VarKind::Depth
        } else if (var - 1).is_multiple_of(2) {
            VarKind::Heads((var - 1) / 2)
        } else {
            VarKind::Intermediate((var - 1) / 2)
        }
    }

    /// Full option list of variable `var`.
    pub fn options(&self, var: usize) -> &[usize] {
        match self.var_kind(var) {
            VarKind::Depth => &self.depth_options,
            VarKind::Heads(_) => &self.head_options,
            VarKind::Intermediate(_) => &self.intermediate_options,
        }
    }

    /// Number of active options of variable `var`.
    pub fn active_count(&self, var: usize) -> usize {
        match self.var_kind(var) {
            VarKind::Depth => self.active.depths,
            VarKind::Heads(_) => self.active.heads,
            VarKind::Intermediate(_) => self.active.intermediates,
        }
    }

    /// Index of `value` in the option list of variable `var`.
    pub fn option_index(&self, var: usize, value: usize) -> Result<usize> {
        self.options(var).iter().position(|&o| o == value).ok_or_else(|| {
            Error::InvalidArchitecture(format!(
                "value {value} is not an option of variable {var} ({:?})",
                self.var_kind(var)
            ))
        })
    }

    /// Number of distinct architectures, counting canonical forms once:
    /// sum over depth options of (|heads| * |intermediates|)^depth.
    /// With `active_only` the sum runs over the active prefixes.
    pub fn cardinality(&self, active_only: bool) -> Result<u128> {
        let (nd, nh, nk) = if active_only {
            (self.active.depths, self.active.heads, self.active.intermediates)
        } else {
            (
                self.depth_options.len(),
                self.head_options.len(),
                self.intermediate_options.len(),
            )
        };
        let per_layer = (nh as u128)
            .checked_mul(nk as u128)
            .ok_or(Error::SpaceTooLarge { cardinality: u128::MAX, limit: u128::MAX })?;
        let mut total: u128 = 0;
        for &d in &self.depth_options[..nd] {
            let mut term: u128 = 1;
            for _ in 0..d {
                term = term.checked_mul(per_layer).ok_or(Error::SpaceTooLarge {
                    cardinality: u128::MAX,
                    limit: u128::MAX,
                })?;
            }
            total = total.checked_add(term).ok_or(Error::SpaceTooLarge {
                cardinality: u128::MAX,
                limit: u128::MAX,
            })?;
        }
        Ok(total)
    }

    /// Streams every distinct architecture (canonical inactive-layer fill)
    /// exactly once. Fails if the cardinality exceeds `limit`.
    pub fn enumerate(&self, active_only: bool, limit: u128) -> Result<EnumerateIter<'_>> {
        let cardinality = self.cardinality(active_only)?;
        if cardinality > limit {
            return Err(Error::SpaceTooLarge { cardinality, limit });
        }
        Ok(EnumerateIter::new(self, active_only))
    }

    /// The maximal architecture: greatest depth, largest option everywhere.
    pub fn maximal_arch(&self) -> ArchitectureSpec {
        ArchitectureSpec {
            depth: self.max_depth,
            heads: vec![self.head_options[0]; self.max_depth],
            intermediates: vec![self.intermediate_options[0]; self.max_depth],
        }
    }

    /// The cheapest architecture: smallest depth, smallest options on active
    /// layers (inactive layers keep the canonical fill).
    pub fn minimal_arch(&self) -> ArchitectureSpec {
        let depth = *self.depth_options.last().expect("non-empty");
        let mut heads = vec![self.head_options[0]; self.max_depth];
        let mut inters = vec![self.intermediate_options[0]; self.max_depth];
        for l in 0..depth {
            heads[l] = *self.head_options.last().expect("non-empty");
            inters[l] = *self.intermediate_options.last().expect("non-empty");
        }
        ArchitectureSpec { depth, heads, intermediates: inters }
    }
}

/// One candidate sub-network: depth plus per-layer head-count and
/// intermediate-size choices. Vectors have length `max_depth`; entries for
/// layers at or beyond `depth` are carried in canonical form (the largest
/// option) so every semantic architecture has exactly one representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    depth: usize,
    heads: Vec<usize>,
    intermediates: Vec<usize>,
}

impl ArchitectureSpec {
    /// Validates membership of every entry and canonicalizes inactive-layer
    /// entries to the largest option.
    pub fn new(
        depth: usize,
        heads: Vec<usize>,
        intermediates: Vec<usize>,
        space: &SearchSpace,
    ) -> Result<Self> {
        if heads.len() != space.max_depth() || intermediates.len() != space.max_depth() {
            return Err(Error::InvalidArchitecture(format!(
                "per-layer vectors must have length {}, got {} and {}",
                space.max_depth(),
                heads.len(),
                intermediates.len()
            )));
        }
        if !space.depth_options().contains(&depth) {
            return Err(Error::InvalidArchitecture(format!(
                "depth {depth} is not in {:?}",
                space.depth_options()
            )));
        }
        let mut heads = heads;
        let mut intermediates = intermediates;
        for l in 0..space.max_depth() {
            if l < depth {
                if !space.head_options().contains(&heads[l]) {
                    return Err(Error::InvalidArchitecture(format!(
                        "head count {} at layer {l} is not in {:?}",
                        heads[l],
                        space.head_options()
                    )));
                }
                if !space.intermediate_options().contains(&intermediates[l]) {
                    return Err(Error::InvalidArchitecture(format!(
                        "intermediate size {} at layer {l} is not in {:?}",
                        intermediates[l],
                        space.intermediate_options()
                    )));
                }
            } else {
                heads[l] = space.head_options()[0];
                intermediates[l] = space.intermediate_options()[0];
            }
        }
        Ok(ArchitectureSpec { depth, heads, intermediates })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Per-layer head counts, canonical beyond `depth`.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    /// Per-layer intermediate sizes, canonical beyond `depth`.
    pub fn intermediates(&self) -> &[usize] {
        &self.intermediates
    }

    /// Value of decision variable `var` in this architecture.
    pub fn var_value(&self, var: usize, space: &SearchSpace) -> usize {
        match space.var_kind(var) {
            VarKind::Depth => self.depth,
            VarKind::Heads(l) => self.heads[l],
            VarKind::Intermediate(l) => self.intermediates[l],
        }
    }

    /// True when every choice lies in the active prefix of `space`.
    pub fn is_active_in(&self, space: &SearchSpace) -> bool {
        (0..space.var_count()).all(|var| {
            let value = self.var_value(var, space);
            match space.option_index(var, value) {
                Ok(idx) => idx < space.active_count(var),
                Err(_) => false,
            }
        })
    }

    /// Fixed-length one-hot encoding: one group per decision variable, in
    /// variable order. Exactly one entry per group is 1.
    pub fn encode(&self, space: &SearchSpace) -> Result<Vec<Vec<u8>>> {
        let mut groups = Vec::with_capacity(space.var_count());
        for var in 0..space.var_count() {
            let idx = space.option_index(var, self.var_value(var, space))?;
            let mut group = vec![0u8; space.options(var).len()];
            group[idx] = 1;
            groups.push(group);
        }
        Ok(groups)
    }

    /// Inverse of [`encode`](Self::encode). Each group must contain exactly
    /// one 1. The result is canonicalized, so decoding a group vector with a
    /// non-canonical inactive-layer choice yields the canonical form.
    pub fn decode(groups: &[Vec<u8>], space: &SearchSpace) -> Result<Self> {
        if groups.len() != space.var_count() {
            return Err(Error::MalformedOneHot(format!(
                "expected {} groups, got {}",
                space.var_count(),
                groups.len()
            )));
        }
        let mut values = Vec::with_capacity(groups.len());
        for (var, group) in groups.iter().enumerate() {
            let opts = space.options(var);
            if group.len() != opts.len() {
                return Err(Error::MalformedOneHot(format!(
                    "group {var} has length {}, expected {}",
                    group.len(),
                    opts.len()
                )));
            }
            let hot: Vec<usize> = group
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(|(i, _)| i)
                .collect();
            if hot.len() != 1 {
                return Err(Error::MalformedOneHot(format!(
                    "group {var} has {} hot entries, expected exactly 1",
                    hot.len()
                )));
            }
            values.push(opts[hot[0]]);
        }
        let depth = values[0];
        let heads = (0..space.max_depth()).map(|l| values[1 + 2 * l]).collect();
        let inters = (0..space.max_depth()).map(|l| values[2 + 2 * l]).collect();
        ArchitectureSpec::new(depth, heads, inters, space)
    }

    /// Hamming distance over decision variables (canonical forms compared).
    pub fn hamming(&self, other: &ArchitectureSpec) -> usize {
        let mut d = usize::from(self.depth != other.depth);
        for l in 0..self.heads.len() {
            d += usize::from(self.heads[l] != other.heads[l]);
            d += usize::from(self.intermediates[l] != other.intermediates[l]);
        }
        d
    }
}

/// Compact text form, e.g. `d2:h4.2:k64.32`. Only the active layers are
/// printed; parsing restores the canonical fill.
impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}:h", self.depth)?;
        for (l, h) in self.heads[..self.depth].iter().enumerate() {
            if l > 0 {
                write!(f, ".")?;
            }
            write!(f, "{h}")?;
        }
        write!(f, ":k")?;
        for (l, k) in self.intermediates[..self.depth].iter().enumerate() {
            if l > 0 {
                write!(f, ".")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

/// Parsed form of [`ArchitectureSpec`]'s display syntax; must be bound to a
/// space with [`ArchDesc::into_arch`] before use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDesc {
    pub depth: usize,
    pub heads: Vec<usize>,
    pub intermediates: Vec<usize>,
}

impl ArchDesc {
    pub fn into_arch(self, space: &SearchSpace) -> Result<ArchitectureSpec> {
        if self.heads.len() != self.depth || self.intermediates.len() != self.depth {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} per-layer entries, got {} heads and {} intermediates",
                self.depth,
                self.heads.len(),
                self.intermediates.len()
            )));
        }
        let mut heads = vec![space.head_options()[0]; space.max_depth()];
        let mut inters = vec![space.intermediate_options()[0]; space.max_depth()];
        let take = self.depth.min(space.max_depth());
        heads[..take].copy_from_slice(&self.heads[..take]);
        inters[..take].copy_from_slice(&self.intermediates[..take]);
        ArchitectureSpec::new(self.depth, heads, inters, space)
    }
}

impl FromStr for ArchDesc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArchitecture(format!("cannot parse `{s}`: {m}"));
        let mut parts = s.split(':');
        let d = parts.next().ok_or_else(|| bad("missing depth"))?;
        let h = parts.next().ok_or_else(|| bad("missing heads"))?;
        let k = parts.next().ok_or_else(|| bad("missing intermediates"))?;
        if parts.next().is_some() {
            return Err(bad("too many sections"));
        }
        let depth: usize = d
            .strip_prefix('d')
            .ok_or_else(|| bad("depth must start with `d`"))?
            .parse()
            .map_err(|_| bad("depth is not a number"))?;
        let nums = |sec: &str, prefix: char| -> Result<Vec<usize>> {
            sec.strip_prefix(prefix)
                .ok_or_else(|| bad("bad section prefix"))?
                .split('.')
                .map(|t| t.parse::<usize>().map_err(|_| bad("bad number")))
                .collect()
        };
        Ok(ArchDesc { depth, heads: nums(h, 'h')?, intermediates: nums(k, 'k')? })
    }
}

/// Iterator over every distinct architecture of a space, canonical fill,
/// depth options in list order and per-layer choices lexicographic.
pub struct EnumerateIter<'a> {
    space: &'a SearchSpace,
    nd: usize,
    nh: usize,
    nk: usize,
    depth_idx: usize,
    /// Per active layer: (head index, intermediate index).
    choice: Vec<(usize, usize)>,
    done: bool,
}

impl<'a> EnumerateIter<'a> {
    fn new(space: &'a SearchSpace, active_only: bool) -> Self {
        let (nd, nh, nk) = if active_only {
            let a = space.active_counts();
            (a.depths, a.heads, a.intermediates)
        } else {
            (
                space.depth_options().len(),
                space.head_options().len(),
                space.intermediate_options().len(),
            )
        };
        let depth0 = space.depth_options()[0];
        EnumerateIter {
            space,
            nd,
            nh,
            nk,
            depth_idx: 0,
            choice: vec![(0, 0); depth0],
            done: false,
        }
    }

    fn current(&self) -> ArchitectureSpec {
        let space = self.space;
        let depth = space.depth_options()[self.depth_idx];
        let mut heads = vec![space.head_options()[0]; space.max_depth()];
        let mut inters = vec![space.intermediate_options()[0]; space.max_depth()];
        for (l, &(hi, ki)) in self.choice.iter().enumerate() {
            heads[l] = space.head_options()[hi];
            inters[l] = space.intermediate_options()[ki];
        }
        ArchitectureSpec { depth, heads, intermediates: inters }
    }

    fn advance(&mut self) {
        // Odometer over per-layer (head, intermediate) pairs, then depth.
        for slot in self.choice.iter_mut().rev() {
            if slot.1 + 1 < self.nk {
                slot.1 += 1;
                return;
            }
            slot.1 = 0;
            if slot.0 + 1 < self.nh {
                slot.0 += 1;
                return;
            }
            slot.0 = 0;
        }
        self.depth_idx += 1;
        if self.depth_idx >= self.nd {
            self.done = true;
        } else {
            let depth = self.space.depth_options()[self.depth_idx];
            self.choice = vec![(0, 0); depth];
        }
    }
}

impl Iterator for EnumerateIter<'_> {
    type Item = ArchitectureSpec;

    fn next(&mut self) -> Option<ArchitectureSpec> {
        if self.done {
            return None;
        }
        let arch = self.current();
        self.advance();
        Some(arch)
    }
}

/// One progressive-expansion event: entering epoch `epoch`, option `option`
/// of dimension `dimension` becomes trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionEvent {
    pub epoch: usize,
    pub dimension: Dimension,
    pub option: usize,
}

/// Ordered progressive-expansion schedule. Events activate exactly the next
/// prefix option of one dimension; `initial` gives the active counts before
/// any event fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionSchedule {
    initial: ActiveCounts,
    events: Vec<ExpansionEvent>,
}

impl ExpansionSchedule {
    /// Validates ordering and the next-prefix-option rule against `space`.
    pub fn new(space: &SearchSpace, initial: ActiveCounts, events: Vec<ExpansionEvent>) -> Result<Self> {
        space.with_active_counts(initial)?;
        let mut counts = initial;
        let mut last_epoch = 0usize;
        for ev in &events {
            if ev.epoch < last_epoch {
                return Err(Error::InvalidSpace(format!(
                    "expansion events out of order at epoch {}",
                    ev.epoch
                )));
            }
            last_epoch = ev.epoch;
            let (opts, count) = match ev.dimension {
                Dimension::Depth => (space.depth_options(), &mut counts.depths),
                Dimension::Heads => (space.head_options(), &mut counts.heads),
                Dimension::Intermediate => (space.intermediate_options(), &mut counts.intermediates),
            };
            if *count >= opts.len() {
                return Err(Error::InvalidSpace(format!(
                    "expansion event at epoch {} activates beyond the {} option list",
                    ev.epoch, ev.dimension
                )));
            }
            if opts[*count] != ev.option {
                return Err(Error::InvalidSpace(format!(
                    "expansion event at epoch {} activates {} option {}, expected next prefix option {}",
                    ev.epoch, ev.dimension, ev.option, opts[*count]
                )));
            }
            *count += 1;
        }
        Ok(ExpansionSchedule { initial, events })
    }

    /// Empty schedule: the space is fully active from the start.
    pub fn none(space: &SearchSpace) -> Self {
        ExpansionSchedule {
            initial: ActiveCounts {
                depths: space.depth_options().len(),
                heads: space.head_options().len(),
                intermediates: space.intermediate_options().len(),
            },
            events: Vec::new(),
        }
    }

    /// Default progressive schedule: start from the maximal configuration
    /// (one option per dimension), activate head options first, then
    /// intermediate sizes, then depths, one option per event, spaced evenly
    /// so the final event fires strictly before `total_epochs`.
    pub fn progressive(space: &SearchSpace, total_epochs: usize) -> Result<Self> {
        let initial = ActiveCounts { depths: 1, heads: 1, intermediates: 1 };
        let mut pending: Vec<(Dimension, usize)> = Vec::new();
        for &h in &space.head_options()[1..] {
            pending.push((Dimension::Heads, h));
        }
        for &k in &space.intermediate_options()[1..] {
            pending.push((Dimension::Intermediate, k));
        }
        for &d in &space.depth_options()[1..] {
            pending.push((Dimension::Depth, d));
        }
        let n_events = pending.len();
        let mut events = Vec::with_capacity(n_events);
        for (i, (dimension, option)) in pending.into_iter().enumerate() {
            let epoch = ((i + 1) * total_epochs) / (n_events + 1);
            events.push(ExpansionEvent { epoch, dimension, option });
        }
        ExpansionSchedule::new(space, initial, events)
    }

    pub fn events(&self) -> &[ExpansionEvent] {
        &self.events
    }

    pub fn initial(&self) -> ActiveCounts {
        self.initial
    }

    /// Active counts once every event with `event.epoch <= epoch` has fired.
    pub fn counts_at(&self, epoch: usize) -> ActiveCounts {
        let mut counts = self.initial;
        for ev in &self.events {
            if ev.epoch > epoch {
                break;
            }
            match ev.dimension {
                Dimension::Depth => counts.depths += 1,
                Dimension::Heads => counts.heads += 1,
                Dimension::Intermediate => counts.intermediates += 1,
            }
        }
        counts
    }

    /// Events firing exactly at `epoch`.
    pub fn events_at(&self, epoch: usize) -> Vec<ExpansionEvent> {
        self.events.iter().copied().filter(|e| e.epoch == epoch).collect()
    }
}

/// Applies the schedule at `epoch` to `space`. Active sets only ever grow:
/// the result keeps each dimension at the larger of the space's current
/// count and the schedule's count at `epoch`.
pub fn expand(space: &SearchSpace, schedule: &ExpansionSchedule, epoch: usize) -> SearchSpace {
    let at = schedule.counts_at(epoch);
    let cur = space.active_counts();
    let counts = ActiveCounts {
        depths: cur.depths.max(at.depths),
        heads: cur.heads.max(at.heads),
        intermediates: cur.intermediates.max(at.intermediates),
    };
    space.with_active_counts(counts).expect("schedule counts validated at construction")
}

/// Named space presets.
pub mod presets {
    use super::SearchSpace;

    /// Desk-scale space: 7371 architectures, enumerable for oracle testing.
    pub fn desk() -> SearchSpace {
        SearchSpace::new(vec![4, 3, 2], vec![4, 2, 1], vec![64, 32, 16]).expect("valid preset")
    }

    /// Full-scale transformer space (~9.0e12 architectures). Supported by
    /// the encoding and cost model; not intended for desk training.
    pub fn bert() -> SearchSpace {
        SearchSpace::new(vec![12, 10, 8, 6], vec![12, 8, 4], vec![3072, 1024, 768, 512])
            .expect("valid preset")
    }

    pub fn by_name(name: &str) -> Option<SearchSpace> {
        match name {
            "desk" => Some(desk()),
            "bert" => Some(bert()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SearchSpace {
        // max_depth=2, depth {1,2}, heads {2,1}, intermediates {32,16}
        SearchSpace::new(vec![2, 1], vec![2, 1], vec![32, 16]).unwrap()
    }

    #[test]
    fn encode_produces_documented_group_order() {
        let space = tiny();
        let arch =
            ArchitectureSpec::new(2, vec![2, 2], vec![32, 32], &space).unwrap();
        let groups = arch.encode(&space).unwrap();
        // depth one-hot over {2,1}: depth 2 is index 0
        assert_eq!(groups[0], vec![1, 0]);
        // per-layer groups: heads then intermediate, layer ascending
        assert_eq!(groups[1], vec![1, 0]);
        assert_eq!(groups[2], vec![1, 0]);
        assert_eq!(groups[3], vec![1, 0]);
        assert_eq!(groups[4], vec![1, 0]);
        assert_eq!(groups.len(), 5);
    }

    #[test]
    fn encode_rejects_out_of_space_value() {
        let space = tiny();
        let err = ArchitectureSpec::new(2, vec![3, 2], vec![32, 32], &space);
        assert!(matches!(err, Err(Error::InvalidArchitecture(_))));
    }

    #[test]
    fn decode_rejects_malformed_groups() {
        let space = tiny();
        let arch = ArchitectureSpec::new(1, vec![1, 2], vec![16, 32], &space).unwrap();
        let mut groups = arch.encode(&space).unwrap();
        groups[2][0] = 1; // two hot entries
        assert!(matches!(
            ArchitectureSpec::decode(&groups, &space),
            Err(Error::MalformedOneHot(_))
        ));
        let short = vec![vec![1u8, 0]; 4];
        assert!(ArchitectureSpec::decode(&short, &space).is_err());
    }

    #[test]
    fn canonical_fill_uses_largest_option() {
        let space = tiny();
        let arch = ArchitectureSpec::new(1, vec![1, 1], vec![16, 16], &space).unwrap();
        assert_eq!(arch.heads(), &[1, 2]);
        assert_eq!(arch.intermediates(), &[16, 32]);
    }

    #[test]
    fn cardinality_matches_hand_counts() {
        // depth_options={2}, |h|=3, |k|=3 -> 81
        let s = SearchSpace::new(vec![2], vec![4, 2, 1], vec![64, 32, 16]).unwrap();
        assert_eq!(s.cardinality(false).unwrap(), 81);
        let desk = presets::desk();
        assert_eq!(desk.cardinality(false).unwrap(), 7371);
    }

    #[test]
    fn paper_scale_cardinality_is_ten_to_the_thirteen() {
        let bert = presets::bert();
        let n = bert.cardinality(false).unwrap();
        // Independent big-integer evaluation of the sum.
        let mut expect: u128 = 0;
        for d in [6u32, 8, 10, 12] {
            expect += (12u128).pow(d);
        }
        assert_eq!(n, expect);
        assert_eq!(n, 8_978_450_780_160);
        assert!(n > 10u128.pow(12) && n < 10u128.pow(13));
    }

    #[test]
    fn enumerate_yields_each_architecture_once() {
        let desk = presets::desk();
        let archs: Vec<_> = desk.enumerate(false, 10_000).unwrap().collect();
        assert_eq!(archs.len(), 7371);
        let set: std::collections::HashSet<_> = archs.iter().collect();
        assert_eq!(set.len(), 7371);
    }

    #[test]
    fn enumerate_singleton_and_limit() {
        let s = SearchSpace::new(vec![1], vec![2], vec![16]).unwrap();
        let archs: Vec<_> = s.enumerate(false, 10).unwrap().collect();
        assert_eq!(archs.len(), 1);
        let desk = presets::desk();
        assert!(matches!(
            desk.enumerate(false, 100),
            Err(Error::SpaceTooLarge { cardinality: 7371, limit: 100 })
        ));
    }

    #[test]
    fn expansion_follows_schedule_and_never_shrinks() {
        let space = presets::desk().with_active_counts(ActiveCounts {
            depths: 1,
            heads: 1,
            intermediates: 1,
        })
        .unwrap();
        let schedule = ExpansionSchedule::new(
            &space,
            ActiveCounts { depths: 1, heads: 1, intermediates: 1 },
            vec![
                ExpansionEvent { epoch: 2, dimension: Dimension::Heads, option: 2 },
                ExpansionEvent { epoch: 4, dimension: Dimension::Heads, option: 1 },
                ExpansionEvent { epoch: 6, dimension: Dimension::Intermediate, option: 32 },
            ],
        )
        .unwrap();
        let s1 = expand(&space, &schedule, 1);
        assert_eq!(s1.active_counts().heads, 1);
        let s2 = expand(&s1, &schedule, 2);
        assert_eq!(s2.active_counts().heads, 2);
        // no event at epoch 3: unchanged
        let s3 = expand(&s2, &schedule, 3);
        assert_eq!(s2, s3);
        // monotone even if queried backwards from a later state
        let s5 = expand(&s3, &schedule, 5);
        let again = expand(&s5, &schedule, 2);
        assert_eq!(again.active_counts().heads, s5.active_counts().heads);
    }

    #[test]
    fn progressive_schedule_exhausts_all_options() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::progressive(&space, 12).unwrap();
        assert_eq!(schedule.events().len(), 6);
        let last_epoch = schedule.events().last().unwrap().epoch;
        assert!(last_epoch < 12);
        let counts = schedule.counts_at(last_epoch);
        assert_eq!(counts.depths, 3);
        assert_eq!(counts.heads, 3);
        assert_eq!(counts.intermediates, 3);
        // heads first, then intermediates, then depth
        let dims: Vec<_> = schedule.events().iter().map(|e| e.dimension).collect();
        assert_eq!(
            dims,
            vec![
                Dimension::Heads,
                Dimension::Heads,
                Dimension::Intermediate,
                Dimension::Intermediate,
                Dimension::Depth,
                Dimension::Depth
            ]
        );
    }

    #[test]
    fn schedule_rejects_non_prefix_activation() {
        let space = presets::desk();
        let initial = ActiveCounts { depths: 1, heads: 1, intermediates: 1 };
        // heads list is [4,2,1]; activating 1 before 2 violates prefix order
        let err = ExpansionSchedule::new(
            &space,
            initial,
            vec![ExpansionEvent { epoch: 1, dimension: Dimension::Heads, option: 1 }],
        );
        assert!(err.is_err());
    }

    #[test]
    fn arch_string_round_trip() {
        let space = presets::desk();
        let arch = ArchitectureSpec::new(
            2,
            vec![2, 1, 4, 4],
            vec![32, 16, 64, 64],
            &space,
        )
        .unwrap();
        let s = arch.to_string();
        assert_eq!(s, "d2:h2.1:k32.16");
        let back: ArchDesc = s.parse().unwrap();
        assert_eq!(back.into_arch(&space).unwrap(), arch);
    }

    #[test]
    fn minimal_and_maximal_arch() {
        let desk = presets::desk();
        let max = desk.maximal_arch();
        assert_eq!(max.depth(), 4);
        assert!(max.heads().iter().all(|&h| h == 4));
        let min = desk.minimal_arch();
        assert_eq!(min.depth(), 2);
        assert_eq!(min.heads()[..2], [1, 1]);
        assert_eq!(min.heads()[2..], [4, 4]); // canonical fill
    }
}
