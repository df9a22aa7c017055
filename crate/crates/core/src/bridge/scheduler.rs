use std::collections::VecDeque;

use super::Tier;

/// Fraction of a tick's budget reserved for bulk traffic whenever bulk is queued.
pub const BULK_GUARD: f64 = 0.05;

#[derive(Debug, Clone)]
struct Item<T> {
    cost: usize,
    value: T,
}

/// One FIFO queue per tier with a per-tier length limit (drop oldest).
#[derive(Debug, Clone)]
pub struct TierQueues<T> {
    queues: [VecDeque<Item<T>>; 3],
    limit: usize,
    overflow: [u64; 3],
}

impl<T> TierQueues<T> {
    pub fn new(limit: usize) -> Self {
        Self {
            queues: [VecDeque::new(), VecDeque::new(), VecDeque::new()],
            limit: limit.max(1),
            overflow: [0; 3],
        }
    }

    /// Appends `value`; returns the evicted item if the tier was full.
    pub fn push(&mut self, tier: Tier, cost: usize, value: T) -> Option<T> {
        let q = &mut self.queues[tier.index()];
        q.push_back(Item { cost, value });
        if q.len() > self.limit {
            self.overflow[tier.index()] += 1;
            return q.pop_front().map(|i| i.value);
        }
        None
    }

    /// Puts `value` at the head of its tier, ahead of queued traffic.
    pub fn push_front(&mut self, tier: Tier, cost: usize, value: T) {
        self.queues[tier.index()].push_front(Item { cost, value });
    }

    pub fn len(&self, tier: Tier) -> usize {
        self.queues[tier.index()].len()
    }

    pub fn bytes(&self, tier: Tier) -> usize {
        self.queues[tier.index()].iter().map(|i| i.cost).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn overflow(&self, tier: Tier) -> u64 {
        self.overflow[tier.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.queues.iter().flat_map(|q| q.iter().map(|i| &i.value))
    }

    fn head_cost(&self, tier: Tier) -> Option<usize> {
        self.queues[tier.index()].front().map(|i| i.cost)
    }

    fn pop(&mut self, tier: Tier) -> Option<(usize, T)> {
        self.queues[tier.index()].pop_front().map(|i| (i.cost, i.value))
    }
}

/// Picks what to transmit this tick from `budget` bytes with the default
/// bulk guard.
pub fn tier_scheduler<T>(queues: &mut TierQueues<T>, budget: usize) -> Vec<(Tier, T)> {
    schedule_with_shares(queues, budget, [0.0, 0.0, 0.0])
}

/// Strict priority (critical, standard, bulk) with guaranteed minimum shares.
///
/// A non-empty tier `i` is guaranteed `shares[i] * budget` bytes; bulk is
/// guaranteed at least [`BULK_GUARD`]. Higher tiers may use everything not
/// guaranteed to lower non-empty tiers. Whatever the lower tiers leave unused
/// is offered again in priority order. Items are indivisible: a tier stops at
/// the first item that does not fit.
pub fn schedule_with_shares<T>(
    queues: &mut TierQueues<T>,
    budget: usize,
    shares: [f64; 3],
) -> Vec<(Tier, T)> {
    let mut reserved = [0usize; 3];
    for tier in Tier::ALL {
        let mut share = shares[tier.index()].clamp(0.0, 1.0);
        if tier == Tier::Bulk {
            share = share.max(BULK_GUARD);
        }
        if queues.len(tier) > 0 {
            reserved[tier.index()] = (share * budget as f64).ceil() as usize;
        }
    }

    let mut used = 0usize;
    let mut out = Vec::new();
    let mut take = |queues: &mut TierQueues<T>, tier: Tier, allowance: usize, used: &mut usize| {
        while let Some(cost) = queues.head_cost(tier) {
            if *used + cost > allowance {
                break;
            }
            let (cost, v) = queues.pop(tier).expect("head exists");
            *used += cost;
            out.push((tier, v));
        }
    };

    for tier in Tier::ALL {
        let held_back: usize = Tier::ALL
            .iter()
            .filter(|t| t.index() > tier.index())
            .map(|t| reserved[t.index()])
            .sum();
        let allowance = budget.saturating_sub(held_back);
        take(queues, tier, allowance, &mut used);
    }
    for tier in Tier::ALL {
        take(queues, tier, budget, &mut used);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(q: &mut TierQueues<u32>, tier: Tier, n: usize, cost: usize) {
        for i in 0..n {
            q.push(tier, cost, i as u32);
        }
    }

    fn sent_bytes(out: &[(Tier, u32)], tier: Tier, cost: usize) -> usize {
        out.iter().filter(|(t, _)| *t == tier).count() * cost
    }

    #[test]
    fn bulk_alone_uses_full_budget() {
        let mut q = TierQueues::new(1000);
        fill(&mut q, Tier::Bulk, 200, 1000);
        let out = tier_scheduler(&mut q, 100_000);
        assert_eq!(sent_bytes(&out, Tier::Bulk, 1000), 100_000);
    }

    #[test]
    fn critical_overload_starves_others_when_bulk_empty() {
        let mut q = TierQueues::new(1000);
        fill(&mut q, Tier::Critical, 200, 1000);
        fill(&mut q, Tier::Standard, 10, 1000);
        let out = tier_scheduler(&mut q, 100_000);
        assert!(out.iter().all(|(t, _)| *t == Tier::Critical));
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn saturated_tiers_leave_bulk_its_guard() {
        let mut q = TierQueues::new(1000);
        for tier in Tier::ALL {
            fill(&mut q, tier, 500, 1000);
        }
        let out = tier_scheduler(&mut q, 100_000);
        let bulk = sent_bytes(&out, Tier::Bulk, 1000);
        assert!(bulk >= 5_000, "bulk got {bulk}");
        assert_eq!(sent_bytes(&out, Tier::Critical, 1000), 95_000);
        // critical goes first in the send order
        assert_eq!(out[0].0, Tier::Critical);
    }

    #[test]
    fn unused_guard_returns_to_higher_tiers() {
        let mut q = TierQueues::new(1000);
        fill(&mut q, Tier::Critical, 200, 1000);
        fill(&mut q, Tier::Bulk, 1, 1000);
        let out = tier_scheduler(&mut q, 100_000);
        assert_eq!(sent_bytes(&out, Tier::Bulk, 1000), 1000);
        assert_eq!(sent_bytes(&out, Tier::Critical, 1000), 99_000);
    }

    #[test]
    fn standard_share_is_guaranteed() {
        let mut q = TierQueues::new(1000);
        fill(&mut q, Tier::Critical, 200, 100);
        fill(&mut q, Tier::Standard, 200, 100);
        let out = schedule_with_shares(&mut q, 10_000, [0.0, 0.2, 0.0]);
        assert_eq!(sent_bytes(&out, Tier::Standard, 100), 2_000);
        assert_eq!(sent_bytes(&out, Tier::Critical, 100), 8_000);
    }

    #[test]
    fn queue_limit_drops_oldest() {
        let mut q = TierQueues::new(2);
        assert_eq!(q.push(Tier::Bulk, 1, 1), None);
        assert_eq!(q.push(Tier::Bulk, 1, 2), None);
        assert_eq!(q.push(Tier::Bulk, 1, 3), Some(1));
        assert_eq!(q.overflow(Tier::Bulk), 1);
        assert_eq!(q.len(Tier::Bulk), 2);
    }

    #[test]
    fn order_within_tier_is_fifo() {
        let mut q = TierQueues::new(10);
        fill(&mut q, Tier::Standard, 5, 10);
        let out = tier_scheduler(&mut q, 1000);
        let vals: Vec<u32> = out.into_iter().map(|(_, v)| v).collect();
        assert_eq!(vals, vec![0, 1, 2, 3, 4]);
    }
}
