//! Priority allocation that keeps a planned load profile deliverable.
//!
//! EVs and window slots form a transportation network: source to EV (remaining
//! demand), EV to each slot up to its deadline (slot cap), slot to sink
//! (planned charging energy). A flow saturating both sides is a way of
//! meeting every demand along the plan. Among such flows, the allocation of
//! the current slot is made lexicographically largest in priority order by
//! cancelling cycles through the current slot.

use std::collections::VecDeque;

const SRC: usize = 0;
const SINK: usize = 1;

struct Edge {
    to: usize,
    cap: f64,
}

struct Network {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    eps: f64,
}

impl Network {
    fn new(nodes: usize, eps: f64) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            eps,
        }
    }

    /// Adds `from -> to` and its reverse; returns the forward edge id.
    fn add(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap });
        self.edges.push(Edge { to: from, cap: 0.0 });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn push(&mut self, e: usize, amount: f64) {
        self.edges[e].cap -= amount;
        self.edges[e ^ 1].cap += amount;
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if self.edges[e].cap > self.eps && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[t] != usize::MAX).then_some(level)
    }

    fn blocking(
        &mut self,
        u: usize,
        t: usize,
        limit: f64,
        level: &[usize],
        next: &mut [usize],
    ) -> f64 {
        if u == t {
            return limit;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let v = self.edges[e].to;
            let cap = self.edges[e].cap;
            if cap > self.eps && level[v] == level[u] + 1 {
                let got = self.blocking(v, t, limit.min(cap), level, next);
                if got > 0.0 {
                    self.push(e, got);
                    return got;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while let Some(level) = self.levels(s, t) {
            let mut next = vec![0; self.adj.len()];
            loop {
                let f = self.blocking(s, t, f64::INFINITY, &level, &mut next);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
        total
    }

    /// Shortest residual path `from -> to` avoiding `blocked` nodes and edges.
    fn path(
        &self,
        from: usize,
        to: usize,
        blocked_node: &[bool],
        blocked_edge: &[bool],
    ) -> Option<Vec<usize>> {
        let mut via = vec![usize::MAX; self.adj.len()];
        let mut seen = blocked_node.to_vec();
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if seen[v] || blocked_edge[e] || self.edges[e].cap <= self.eps {
                    continue;
                }
                seen[v] = true;
                via[v] = e;
                if v == to {
                    let mut path = Vec::new();
                    let mut n = to;
                    while n != from {
                        let e = via[n];
                        path.push(e);
                        n = self.edges[e ^ 1].to;
                    }
                    return Some(path);
                }
                queue.push_back(v);
            }
        }
        None
    }
}

/// Current-slot allocation for EVs listed in priority order.
///
/// `demand[k]`, `cap[k]` and `last[k]` give EV k's remaining energy, slot cap
/// and last usable window position; `columns[j]` is the planned charging
/// energy at window position j, with position 0 the current slot. Returns
/// `None` when the demands cannot be delivered along `columns` to within
/// `tol`.
///
/// The flow is then nudged so that every EV gets at least `floor[k]` and the
/// allocation sums to `columns[0]` whenever the limits allow it, taking from
/// the back of the priority order and giving to the front.
pub(crate) fn realizable_fill(
    demand: &[f64],
    cap: &[f64],
    floor: &[f64],
    last: &[usize],
    columns: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    let n = demand.len();
    let w = columns.len();
    if w == 0 {
        return (demand.iter().sum::<f64>() <= tol).then(|| vec![0.0; n]);
    }
    let total_demand: f64 = demand.iter().sum();
    let total_plan: f64 = columns.iter().sum();
    if (total_demand - total_plan).abs() > tol {
        return None;
    }
    let ev_node = |k: usize| 2 + k;
    let col_node = |j: usize| 2 + n + j;
    let mut net = Network::new(2 + n + w, 1e-12 * total_plan.max(1.0));
    let mut now = vec![usize::MAX; n];
    for k in 0..n {
        net.add(SRC, ev_node(k), demand[k].max(0.0));
        for j in 0..=last[k].min(w - 1) {
            let e = net.add(ev_node(k), col_node(j), cap[k]);
            if j == 0 {
                now[k] = e;
            }
        }
    }
    for (j, &c) in columns.iter().enumerate() {
        net.add(col_node(j), SINK, c.max(0.0));
    }
    if net.max_flow(SRC, SINK) < total_demand.max(total_plan) - tol {
        return None;
    }

    let mut blocked_node = vec![false; net.adj.len()];
    blocked_node[SRC] = true;
    blocked_node[SINK] = true;
    let mut blocked_edge = vec![false; net.edges.len()];
    let flow = |net: &Network, e: usize| {
        if e == usize::MAX {
            0.0
        } else {
            net.edges[e ^ 1].cap
        }
    };
    for k in 0..n {
        let close = now[k];
        if close == usize::MAX {
            continue;
        }
        // Taking energy back from EV k itself would only cancel the gain, and
        // higher-priority allocations are final.
        blocked_edge[close ^ 1] = true;
        while net.edges[close].cap > net.eps {
            let Some(path) = net.path(col_node(0), ev_node(k), &blocked_node, &blocked_edge) else {
                break;
            };
            let gain = path
                .iter()
                .map(|&e| net.edges[e].cap)
                .fold(net.edges[close].cap, f64::min);
            for &e in &path {
                net.push(e, gain);
            }
            net.push(close, gain);
        }
    }
    let most: Vec<f64> = (0..n).map(|k| cap[k].min(demand[k]).max(0.0)).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|k| flow(&net, now[k]).min(most[k]).max(floor[k].min(most[k])))
        .collect();
    let mut diff = columns[0] - x.iter().sum::<f64>();
    if diff > 0.0 {
        for k in 0..n {
            let d = diff.min(most[k] - x[k]);
            x[k] += d;
            diff -= d;
        }
    } else {
        for k in (0..n).rev() {
            let d = (-diff).min(x[k] - floor[k].min(most[k])).max(0.0);
            x[k] -= d;
            diff += d;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_priority_when_unconstrained() {
        let x = realizable_fill(
            &[4.0, 4.0],
            &[2.0, 2.0],
            &[0.0; 2],
            &[3, 3],
            &[3.0, 2.0, 2.0, 1.0],
            1e-9,
        )
        .unwrap();
        assert_eq!(x, vec![2.0, 1.0]);
    }

    #[test]
    fn keeps_later_columns_fillable() {
        // Only the second EV can take the last column.
        let x = realizable_fill(
            &[2.0, 2.0],
            &[2.0, 1.0],
            &[0.0; 2],
            &[1, 2],
            &[2.0, 1.0, 1.0],
            1e-9,
        )
        .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12, "{x:?}");
        let x = realizable_fill(
            &[2.0, 3.0],
            &[2.0, 1.0],
            &[0.0, 1.0],
            &[1, 2],
            &[2.0, 2.0, 1.0],
            1e-9,
        )
        .unwrap();
        assert!(
            (x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12,
            "{x:?}"
        );
    }

    #[test]
    fn nudged_to_floor_and_exact_total() {
        // Plan is short of the demand by less than the tolerance.
        let x = realizable_fill(
            &[1.0, 1.0],
            &[1.0, 1.0],
            &[0.0, 1.0],
            &[1, 0],
            &[1.0 + 1e-7, 1.0],
            1e-6,
        )
        .unwrap();
        assert_eq!(x[1], 1.0);
        assert!(
            (x.iter().sum::<f64>() - (1.0 + 1e-7)).abs() < 1e-15,
            "{x:?}"
        );
    }

    #[test]
    fn unrealizable_plans_rejected() {
        assert!(realizable_fill(&[2.0], &[1.0], &[0.0], &[0], &[2.0], 1e-9).is_none());
        assert!(!cut_feasible(&[2.0], &[1.0], &[0], &[2.0], 1e-9));
        assert!(cut_feasible(&[2.0], &[1.0], &[1], &[1.0, 1.0], 1e-9));
        assert!(realizable_fill(&[2.0], &[2.0], &[0.0], &[1], &[1.0, 0.5], 1e-9).is_none());
        assert_eq!(
            realizable_fill(&[0.0], &[1.0], &[0.0], &[0], &[], 1e-9),
            Some(vec![0.0])
        );
    }

    /// Whether demands and columns can be matched exactly, from the cut
    /// bound: every slot subset `K` needs `sum_K columns + sum_i min(d_i,
    /// cap_i * |slots of i outside K|)` to cover the total demand.
    fn cut_feasible(
        demand: &[f64],
        cap: &[f64],
        last: &[usize],
        columns: &[f64],
        tol: f64,
    ) -> bool {
        let total: f64 = demand.iter().sum();
        if (total - columns.iter().sum::<f64>()).abs() > tol {
            return false;
        }
        (0..1usize << columns.len()).all(|set| {
            let inside = |k: usize| set >> k & 1 == 1;
            let cols: f64 = (0..columns.len())
                .filter(|&k| inside(k))
                .map(|k| columns[k])
                .sum();
            let evs: f64 = (0..demand.len())
                .map(|i| {
                    let outside = (0..=last[i].min(columns.len().saturating_sub(1)))
                        .filter(|&k| !inside(k))
                        .count();
                    let reach = if columns.is_empty() {
                        0.0
                    } else {
                        cap[i] * outside as f64
                    };
                    demand[i].min(reach)
                })
                .sum();
            cols + evs >= total - tol
        })
    }

    proptest::proptest! {
        #[test]
        fn realizable_plans_are_followed(
            rows in proptest::collection::vec(
                (0.5f64..3.0, 0usize..5, proptest::collection::vec(0.0f64..1.0, 5)),
                1..6,
            )
        ) {
            let n = rows.len();
            let width = rows.iter().map(|r| r.1).max().unwrap() + 1;
            let mut columns = vec![0.0; width];
            let (mut demand, mut cap, mut last, mut floor) = (vec![], vec![], vec![], vec![]);
            for (c, l, frac) in &rows {
                let mut d = 0.0;
                for k in 0..=*l {
                    let y = c * frac[k];
                    columns[k] += y;
                    d += y;
                }
                demand.push(d);
                cap.push(*c);
                last.push(*l);
                floor.push((d - c * *l as f64).max(0.0));
            }
            let tol = 1e-9;
            let x = realizable_fill(&demand, &cap, &floor, &last, &columns, tol);
            proptest::prop_assert!(x.is_some());
            let x = x.unwrap();
            proptest::prop_assert!((x.iter().sum::<f64>() - columns[0]).abs() <= 1e-12 * columns[0].max(1.0));
            let mut rest_demand = Vec::new();
            let mut rest_cap = Vec::new();
            let mut rest_last = Vec::new();
            for i in 0..n {
                proptest::prop_assert!(x[i] >= floor[i] - 1e-9 && x[i] <= cap[i].min(demand[i]) + 1e-9);
                let r = demand[i] - x[i];
                if last[i] == 0 {
                    proptest::prop_assert!(r.abs() <= 1e-7);
                } else {
                    rest_demand.push(r.max(0.0));
                    rest_cap.push(cap[i]);
                    rest_last.push(last[i] - 1);
                }
            }
            proptest::prop_assert!(cut_feasible(&rest_demand, &rest_cap, &rest_last, &columns[1..], 1e-7));
        }
    }
}
