//! Replica selection policies.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simcore::{fnv1a64, RngStream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoutingKind {
    #[default]
    Random,
    RoundRobin,
    Sticky,
    CacheAware,
}

/// How STICKY picks the replica on a key's first touch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StickyMode {
    #[default]
    LeastLoaded,
    KeyHash,
}

/// What the router may see of a replica.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplicaView {
    pub in_flight: u32,
    /// Bytes of the request's content key resident on the replica.
    pub cached_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct RoutingPolicy {
    pub kind: RoutingKind,
    pub sticky_mode: StickyMode,
    rng: RngStream,
    affinity: HashMap<(String, String), usize>,
}

impl RoutingPolicy {
    pub fn new(kind: RoutingKind, sticky_mode: StickyMode, rng: RngStream) -> Self {
        Self {
            kind,
            sticky_mode,
            rng,
            affinity: HashMap::new(),
        }
    }

    /// Replica assigned to `key` in `group`, if any.
    pub fn affinity(&self, group: &str, key: &str) -> Option<usize> {
        self.affinity.get(&(group.to_string(), key.to_string())).copied()
    }

    /// Picks an index into `replicas` for request `request_id` (its arrival
    /// ordinal). A single replica is returned without consuming randomness.
    pub fn route(
        &mut self,
        group: &str,
        request_id: u64,
        content_key: Option<&str>,
        replicas: &[ReplicaView],
    ) -> Result<usize> {
        if replicas.is_empty() {
            return Err(SimError::NoReplicas);
        }
        let needs_key = matches!(self.kind, RoutingKind::Sticky | RoutingKind::CacheAware);
        if needs_key && content_key.is_none() {
            return Err(SimError::MissingContentKey(request_id));
        }
        if replicas.len() == 1 {
            return Ok(0);
        }
        let n = replicas.len();
        Ok(match self.kind {
            RoutingKind::Random => self.rng.below(n),
            RoutingKind::RoundRobin => (request_id % n as u64) as usize,
            RoutingKind::Sticky => {
                let slot = (group.to_string(), content_key.unwrap().to_string());
                if let Some(&r) = self.affinity.get(&slot) {
                    r
                } else {
                    let r = match self.sticky_mode {
                        StickyMode::LeastLoaded => least_loaded(replicas),
                        StickyMode::KeyHash => (fnv1a64(slot.1.as_bytes()) % n as u64) as usize,
                    };
                    self.affinity.insert(slot, r);
                    r
                }
            }
            RoutingKind::CacheAware => (0..n)
                .min_by_key(|&i| (std::cmp::Reverse(replicas[i].cached_bytes), replicas[i].in_flight, i))
                .unwrap(),
        })
    }
}

fn least_loaded(replicas: &[ReplicaView]) -> usize {
    (0..replicas.len())
        .min_by_key(|&i| (replicas[i].in_flight, i))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::rng_substream;

    fn policy(kind: RoutingKind) -> RoutingPolicy {
        RoutingPolicy::new(kind, StickyMode::LeastLoaded, rng_substream(9, "routing"))
    }

    fn idle(n: usize) -> Vec<ReplicaView> {
        vec![ReplicaView::default(); n]
    }

    #[test]
    fn single_replica_any_policy() {
        for kind in [RoutingKind::Random, RoutingKind::RoundRobin, RoutingKind::Sticky, RoutingKind::CacheAware] {
            assert_eq!(policy(kind).route("g", 3, Some("v"), &idle(1)).unwrap(), 0);
        }
    }

    #[test]
    fn sticky_keeps_affinity() {
        let mut p = policy(RoutingKind::Sticky);
        let mut reps = idle(2);
        let first = p.route("g", 0, Some("V"), &reps).unwrap();
        reps[first].in_flight = 5;
        for id in 1..3 {
            assert_eq!(p.route("g", id, Some("V"), &reps).unwrap(), first);
        }
        // a new key goes to the less loaded replica
        assert_eq!(p.route("g", 3, Some("W"), &reps).unwrap(), 1 - first);
    }

    #[test]
    fn key_policies_need_a_key() {
        let mut p = policy(RoutingKind::Sticky);
        assert!(matches!(p.route("g", 7, None, &idle(2)), Err(SimError::MissingContentKey(7))));
        let mut r = policy(RoutingKind::Random);
        assert!(r.route("g", 7, None, &idle(2)).is_ok());
        assert!(matches!(r.route("g", 7, None, &[]), Err(SimError::NoReplicas)));
    }

    #[test]
    fn cache_aware_prefers_resident_bytes() {
        let mut p = policy(RoutingKind::CacheAware);
        let reps = [
            ReplicaView { in_flight: 0, cached_bytes: 0 },
            ReplicaView { in_flight: 3, cached_bytes: 100 },
        ];
        assert_eq!(p.route("g", 0, Some("V"), &reps).unwrap(), 1);
        let tie = [
            ReplicaView { in_flight: 2, cached_bytes: 0 },
            ReplicaView { in_flight: 1, cached_bytes: 0 },
        ];
        assert_eq!(p.route("g", 0, Some("V"), &tie).unwrap(), 1);
        assert_eq!(p.route("g", 0, Some("V"), &idle(3)).unwrap(), 0);
    }

    #[test]
    fn round_robin_by_arrival() {
        let mut p = policy(RoutingKind::RoundRobin);
        let picks: Vec<usize> = (0..6).map(|i| p.route("g", i, None, &idle(3)).unwrap()).collect();
        assert_eq!(picks, [0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn random_shares_are_uniform() {
        let mut p = policy(RoutingKind::Random);
        let mut counts = [0u32; 4];
        let n = 100_000;
        for i in 0..n {
            counts[p.route("g", i, None, &idle(4)).unwrap()] += 1;
        }
        for c in counts {
            assert!((f64::from(c) / n as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn key_hash_mode_is_stable() {
        let mut a = RoutingPolicy::new(RoutingKind::Sticky, StickyMode::KeyHash, rng_substream(1, "r"));
        let mut b = RoutingPolicy::new(RoutingKind::Sticky, StickyMode::KeyHash, rng_substream(2, "r"));
        for k in ["a", "b", "c", "d"] {
            assert_eq!(
                a.route("g", 0, Some(k), &idle(3)).unwrap(),
                b.route("g", 9, Some(k), &idle(3)).unwrap()
            );
        }
    }
}
