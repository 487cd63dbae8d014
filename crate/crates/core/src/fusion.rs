//! Tensor fusion and the complete-group gate.
//!
//! Ungrouped fusion packs whatever the coordinator released this cycle.
//! Grouped fusion only releases groups whose every member has been released,
//! holding partial groups back across cycles, so no fused message is ever
//! smaller than the group it carries regardless of the cycle time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Response, TensorMeta};

pub const DEFAULT_FUSION_BUFFER_BYTES: u64 = 64 * 1024 * 1024;

pub type GroupId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FusionError {
    #[error("tensor `{0}` has no group assignment")]
    UnknownTensor(String),
    #[error("response mixes tensors from groups {0} and {1}")]
    MixedGroups(GroupId, GroupId),
    #[error("tensor `{name}` ({bytes} B) does not fit the {buffer} B fusion buffer")]
    BufferTooSmall {
        name: String,
        bytes: u64,
        buffer: u64,
    },
    #[error("workload tensor `{0}` is missing from the group spec")]
    Uncovered(String),
    #[error("group spec names `{0}`, which is not in the workload")]
    Extraneous(String),
    #[error("cannot split {tensors} tensors into {groups} groups")]
    BadGroupCount { tensors: usize, groups: usize },
}

/// Assignment of tensors to disjoint, nonempty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, GroupId>", into = "BTreeMap<String, GroupId>")]
pub struct GroupSpec {
    assignments: BTreeMap<String, GroupId>,
    members: BTreeMap<GroupId, BTreeSet<String>>,
}

impl From<BTreeMap<String, GroupId>> for GroupSpec {
    fn from(assignments: BTreeMap<String, GroupId>) -> Self {
        let mut members: BTreeMap<GroupId, BTreeSet<String>> = BTreeMap::new();
        for (name, &g) in &assignments {
            members.entry(g).or_default().insert(name.clone());
        }
        GroupSpec {
            assignments,
            members,
        }
    }
}

impl From<GroupSpec> for BTreeMap<String, GroupId> {
    fn from(spec: GroupSpec) -> Self {
        spec.assignments
    }
}

impl FromIterator<(String, GroupId)> for GroupSpec {
    fn from_iter<I: IntoIterator<Item = (String, GroupId)>>(iter: I) -> Self {
        GroupSpec::from(iter.into_iter().collect::<BTreeMap<_, _>>())
    }
}

impl GroupSpec {
    pub fn group_of(&self, name: &str) -> Option<GroupId> {
        self.assignments.get(name).copied()
    }

    pub fn members(&self, group: GroupId) -> Option<&BTreeSet<String>> {
        self.members.get(&group)
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &BTreeSet<String>)> {
        self.members.iter().map(|(g, m)| (*g, m))
    }

    pub fn group_count(&self) -> usize {
        self.members.len()
    }

    /// Checks that the spec covers exactly the given tensors.
    pub fn validate_covers<'a>(
        &self,
        tensors: impl IntoIterator<Item = &'a TensorMeta>,
    ) -> Result<(), FusionError> {
        let mut seen = BTreeSet::new();
        for t in tensors {
            if !self.assignments.contains_key(t.name()) {
                return Err(FusionError::Uncovered(t.name().to_string()));
            }
            seen.insert(t.name());
        }
        if let Some(extra) = self.assignments.keys().find(|n| !seen.contains(n.as_str())) {
            return Err(FusionError::Extraneous(extra.clone()));
        }
        Ok(())
    }

    /// Byte total of each group under the given tensor sizes.
    pub fn group_bytes<'a>(
        &self,
        tensors: impl IntoIterator<Item = &'a TensorMeta>,
    ) -> BTreeMap<GroupId, u64> {
        let mut out = BTreeMap::new();
        for t in tensors {
            if let Some(g) = self.group_of(t.name()) {
                *out.entry(g).or_insert(0) += t.message_bytes();
            }
        }
        out
    }
}

/// Contiguous partition of `order` into `groups` groups of roughly equal
/// bytes. Group 0 holds the first tensors of `order`.
pub fn equal_byte_groups(order: &[&TensorMeta], groups: usize) -> Result<GroupSpec, FusionError> {
    if groups == 0 || groups > order.len() {
        return Err(FusionError::BadGroupCount {
            tensors: order.len(),
            groups,
        });
    }
    let total: u128 = order.iter().map(|t| t.message_bytes() as u128).sum();
    let mut assignments = BTreeMap::new();
    let mut acc: u128 = 0;
    let mut group = 0usize;
    for (i, t) in order.iter().enumerate() {
        assignments.insert(t.name().to_string(), group as GroupId);
        acc += t.message_bytes() as u128;
        let groups_left = groups - group - 1;
        let tensors_left = order.len() - i - 1;
        // Cut at the byte quantile, or early enough that every group gets a tensor.
        if groups_left > 0
            && (tensors_left == groups_left || acc * groups as u128 >= total * (group as u128 + 1))
        {
            group += 1;
        }
    }
    let spec = GroupSpec::from(assignments);
    debug_assert_eq!(spec.group_count(), groups);
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionMode {
    Ungrouped,
    Grouped(GroupSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionPolicy {
    pub mode: FusionMode,
    pub fusion_buffer_bytes: u64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        FusionPolicy {
            mode: FusionMode::Ungrouped,
            fusion_buffer_bytes: DEFAULT_FUSION_BUFFER_BYTES,
        }
    }
}

impl FusionPolicy {
    pub fn grouped(spec: GroupSpec) -> Self {
        FusionPolicy {
            mode: FusionMode::Grouped(spec),
            ..Default::default()
        }
    }

    pub fn group_spec(&self) -> Option<&GroupSpec> {
        match &self.mode {
            FusionMode::Grouped(spec) => Some(spec),
            FusionMode::Ungrouped => None,
        }
    }

    pub fn validate<'a>(
        &self,
        tensors: impl IntoIterator<Item = &'a TensorMeta> + Clone,
    ) -> Result<(), FusionError> {
        for t in tensors.clone() {
            if t.message_bytes() > self.fusion_buffer_bytes {
                return Err(FusionError::BufferTooSmall {
                    name: t.name().to_string(),
                    bytes: t.message_bytes(),
                    buffer: self.fusion_buffer_bytes,
                });
            }
        }
        if let FusionMode::Grouped(spec) = &self.mode {
            spec.validate_covers(tensors)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionBatch {
    pub responses: Vec<Arc<Response>>,
    pub total_bytes: u64,
    pub group_ids: BTreeSet<GroupId>,
}

impl FusionBatch {
    fn new() -> Self {
        FusionBatch {
            responses: Vec::new(),
            total_bytes: 0,
            group_ids: BTreeSet::new(),
        }
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.responses
            .iter()
            .flat_map(|r| r.tensor_names.iter().map(String::as_str))
    }
}

/// Splits the coordinator's ordered output into fused batches.
///
/// `deferred` holds responses from earlier cycles that belong to groups
/// that were not yet complete; the returned list replaces it.
pub fn select_batches(
    ready: &[Arc<Response>],
    deferred: &[Arc<Response>],
    policy: &FusionPolicy,
) -> Result<(Vec<FusionBatch>, Vec<Arc<Response>>), FusionError> {
    match &policy.mode {
        FusionMode::Ungrouped => {
            let pool = deferred.iter().chain(ready);
            Ok((pack_in_order(pool, policy.fusion_buffer_bytes), Vec::new()))
        }
        FusionMode::Grouped(spec) => {
            select_grouped(ready, deferred, spec, policy.fusion_buffer_bytes)
        }
    }
}

fn pack_in_order<'a>(
    responses: impl IntoIterator<Item = &'a Arc<Response>>,
    buffer: u64,
) -> Vec<FusionBatch> {
    let mut batches = Vec::new();
    let mut current = FusionBatch::new();
    for resp in responses {
        if !current.responses.is_empty() && current.total_bytes + resp.message_bytes > buffer {
            batches.push(std::mem::replace(&mut current, FusionBatch::new()));
        }
        current.total_bytes += resp.message_bytes;
        current.responses.push(resp.clone());
    }
    if !current.responses.is_empty() {
        batches.push(current);
    }
    batches
}

fn group_of_response(spec: &GroupSpec, resp: &Response) -> Result<GroupId, FusionError> {
    let mut group = None;
    for name in &resp.tensor_names {
        let g = spec
            .group_of(name)
            .ok_or_else(|| FusionError::UnknownTensor(name.clone()))?;
        match group {
            None => group = Some(g),
            Some(prev) if prev != g => return Err(FusionError::MixedGroups(prev, g)),
            Some(_) => {}
        }
    }
    Ok(group.expect("responses name at least one tensor"))
}

fn select_grouped(
    ready: &[Arc<Response>],
    deferred: &[Arc<Response>],
    spec: &GroupSpec,
    buffer: u64,
) -> Result<(Vec<FusionBatch>, Vec<Arc<Response>>), FusionError> {
    // Pool in arrival order: held-back responses first.
    let mut order: Vec<GroupId> = Vec::new();
    let mut by_group: HashMap<GroupId, Vec<Arc<Response>>> = HashMap::new();
    let mut present: HashMap<GroupId, usize> = HashMap::new();
    let mut pool_groups = Vec::with_capacity(deferred.len() + ready.len());
    for resp in deferred.iter().chain(ready) {
        let g = group_of_response(spec, resp)?;
        pool_groups.push(g);
        let entry = by_group.entry(g).or_insert_with(|| {
            order.push(g);
            Vec::new()
        });
        entry.push(resp.clone());
        *present.entry(g).or_insert(0) += resp.tensor_names.len();
    }

    let complete: BTreeSet<GroupId> = order
        .iter()
        .copied()
        .filter(|g| spec.members(*g).is_some_and(|m| present[g] >= m.len()))
        .collect();

    let mut batches = Vec::new();
    let mut current = FusionBatch::new();
    for g in order.iter().filter(|g| complete.contains(g)) {
        let members = &by_group[g];
        let bytes: u64 = members.iter().map(|r| r.message_bytes).sum();
        if !current.responses.is_empty() && current.total_bytes + bytes > buffer {
            batches.push(std::mem::replace(&mut current, FusionBatch::new()));
        }
        current.total_bytes += bytes;
        current.responses.extend(members.iter().cloned());
        current.group_ids.insert(*g);
    }
    if !current.responses.is_empty() {
        batches.push(current);
    }

    let still_deferred = deferred
        .iter()
        .chain(ready)
        .zip(&pool_groups)
        .filter(|(_, g)| !complete.contains(g))
        .map(|(r, _)| r.clone())
        .collect();
    Ok((batches, still_deferred))
}

/// Per-worker fusion state: the policy plus the queue of held-back responses.
#[derive(Debug, Clone)]
pub struct Fuser {
    policy: FusionPolicy,
    deferred: Vec<Arc<Response>>,
}

impl Fuser {
    pub fn new(policy: FusionPolicy) -> Self {
        Fuser {
            policy,
            deferred: Vec::new(),
        }
    }

    pub fn policy(&self) -> &FusionPolicy {
        &self.policy
    }

    pub fn deferred(&self) -> &[Arc<Response>] {
        &self.deferred
    }

    pub fn push(&mut self, ready: &[Arc<Response>]) -> Result<Vec<FusionBatch>, FusionError> {
        let (batches, deferred) = select_batches(ready, &self.deferred, &self.policy)?;
        self.deferred = deferred;
        Ok(batches)
    }
}

/// Buckets time-stamped arrivals into coordination cycles. Cycle `k` (k ≥ 1)
/// fires at `k * cycle_time` and sees arrivals in `((k-1)·ct, k·ct]`; an
/// arrival at time zero lands in cycle 1. Only nonempty cycles are returned,
/// in increasing order.
pub fn cycle_scope<T: Clone>(
    arrivals: &[(Duration, T)],
    cycle_time: Duration,
) -> Vec<(u64, Vec<T>)> {
    assert!(!cycle_time.is_zero(), "cycle time must be positive");
    let ct = cycle_time.as_nanos();
    let mut cycles: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for (at, item) in arrivals {
        let k = at.as_nanos().div_ceil(ct).max(1) as u64;
        cycles.entry(k).or_default().push(item.clone());
    }
    cycles.into_iter().collect()
}
