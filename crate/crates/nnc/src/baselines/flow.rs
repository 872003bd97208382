//! Edmonds-Karp max flow with real capacities, used for min-cut feasibility
//! checks in the separation baseline. Graphs here are tiny (tens of edges).

const FLOW_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<Edge>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(Edge { to, cap, rev: rev_from });
        self.adj[to].push(Edge {
            to: from,
            cap: 0.0,
            rev: rev_to,
        });
    }

    /// Maximum s-t flow; consumes residual state, so call on a clone to reuse.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.adj.len();
        let mut flow = 0.0;
        loop {
            // BFS for a shortest augmenting path
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
            let mut queue = std::collections::VecDeque::new();
            queue.push_back(s);
            let mut seen = vec![false; n];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if !seen[e.to] && e.cap > FLOW_EPS {
                        seen[e.to] = true;
                        prev[e.to] = Some((u, ei));
                        queue.push_back(e.to);
                    }
                }
            }
            if !seen[t] {
                return flow;
            }
            // bottleneck
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                let (u, ei) = prev[v].unwrap();
                bottleneck = bottleneck.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = t;
            while v != s {
                let (u, ei) = prev[v].unwrap();
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= bottleneck;
                self.adj[v][rev].cap += bottleneck;
                v = u;
            }
            flow += bottleneck;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge() {
        let mut g = FlowNetwork::new(2);
        g.add_edge(0, 1, 3.5);
        assert!((g.max_flow(0, 1) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn diamond_bottleneck() {
        // 0 -> {1,2} -> 3 with asymmetric capacities
        let mut g = FlowNetwork::new(4);
        g.add_edge(0, 1, 2.0);
        g.add_edge(0, 2, 1.0);
        g.add_edge(1, 3, 1.5);
        g.add_edge(2, 3, 2.0);
        assert!((g.max_flow(0, 3) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn disconnected_is_zero() {
        let mut g = FlowNetwork::new(3);
        g.add_edge(0, 1, 1.0);
        assert_eq!(g.max_flow(0, 2), 0.0);
    }

    #[test]
    fn butterfly_shaped_cut() {
        // classic butterfly: min cut from both sources to one sink is
        // limited by the direct link plus the shared middle path
        // nodes: s1=0 s2=1 r1=2 r2=3 d1=4 d2=5, unit capacities
        let mut g = FlowNetwork::new(7);
        let edges = [
            (0, 4),
            (0, 2),
            (1, 2),
            (1, 5),
            (2, 3),
            (3, 4),
            (3, 5),
        ];
        for &(a, b) in &edges {
            g.add_edge(a, b, 1.0);
        }
        // super source 6 feeding both sources
        g.add_edge(6, 0, f64::INFINITY);
        g.add_edge(6, 1, f64::INFINITY);
        assert!((g.max_flow(6, 4) - 2.0).abs() < 1e-12);
    }
}
