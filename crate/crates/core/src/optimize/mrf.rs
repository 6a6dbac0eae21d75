/// Pairwise term between nodes `a < b`; `cost[la * labels[b] + lb]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MrfEdge {
    pub a: usize,
    pub b: usize,
    pub cost: Vec<f64>,
}

/// Discrete pairwise energy `sum_i U_i(x_i) + sum_(a,b) P_ab(x_a, x_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMrf {
    pub labels: Vec<usize>,
    pub unary: Vec<Vec<f64>>,
    pub edges: Vec<MrfEdge>,
}

impl PairwiseMrf {
    pub fn new(unary: Vec<Vec<f64>>) -> Self {
        assert!(unary.iter().all(|u| !u.is_empty()), "every node needs a label");
        Self {
            labels: unary.iter().map(Vec::len).collect(),
            unary,
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Adds `cost[xa * labels[b] + xb]` between `a` and `b`, in either order.
    pub fn add_edge(&mut self, a: usize, b: usize, cost: Vec<f64>) {
        assert!(a != b);
        assert_eq!(cost.len(), self.labels[a] * self.labels[b]);
        if a < b {
            self.edges.push(MrfEdge { a, b, cost });
        } else {
            let (la, lb) = (self.labels[a], self.labels[b]);
            let mut t = vec![0.0; cost.len()];
            for xa in 0..la {
                for xb in 0..lb {
                    t[xb * la + xa] = cost[xa * lb + xb];
                }
            }
            self.edges.push(MrfEdge { a: b, b: a, cost: t });
        }
    }

    pub fn energy(&self, x: &[usize]) -> f64 {
        let u: f64 = self.unary.iter().zip(x).map(|(u, &l)| u[l]).sum();
        let p: f64 = self
            .edges
            .iter()
            .map(|e| e.cost[x[e.a] * self.labels[e.b] + x[e.b]])
            .sum();
        u + p
    }

    /// Minimizer by exhaustive enumeration; `None` if the joint label space
    /// exceeds `max_states`.
    pub fn solve_exact(&self, max_states: u64) -> Option<(Vec<usize>, f64)> {
        let mut states: u64 = 1;
        for &l in &self.labels {
            states = states.checked_mul(l as u64).filter(|&s| s <= max_states)?;
        }
        let n = self.len();
        let mut x = vec![0usize; n];
        let mut best = (x.clone(), self.energy(&x));
        loop {
            let mut i = 0;
            while i < n {
                x[i] += 1;
                if x[i] < self.labels[i] {
                    break;
                }
                x[i] = 0;
                i += 1;
            }
            if i == n {
                return Some(best);
            }
            let e = self.energy(&x);
            if e < best.1 {
                best = (x.clone(), e);
            }
        }
    }

    /// Sequential tree-reweighted message passing in node-id order.
    ///
    /// Each sweep is one forward and one backward pass; after every sweep a
    /// labeling is decoded in forward order and the lowest-energy labeling
    /// seen (including all-zeros) is returned.
    pub fn solve_trws(&self, sweeps: usize) -> (Vec<usize>, f64) {
        let n = self.len();
        // incident edges per node: (edge, node is endpoint a)
        let mut incident: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
        for (ei, e) in self.edges.iter().enumerate() {
            incident[e.a].push((ei, true));
            incident[e.b].push((ei, false));
        }
        let gamma: Vec<f64> = (0..n)
            .map(|i| {
                let before = incident[i]
                    .iter()
                    .filter(|&&(ei, is_a)| self.other(ei, is_a) < i)
                    .count();
                let after = incident[i].len() - before;
                1.0 / before.max(after).max(1) as f64
            })
            .collect();
        // to_b[e]: message a -> b (indexed by x_b); to_a[e]: message b -> a
        let mut to_b: Vec<Vec<f64>> = self.edges.iter().map(|e| vec![0.0; self.labels[e.b]]).collect();
        let mut to_a: Vec<Vec<f64>> = self.edges.iter().map(|e| vec![0.0; self.labels[e.a]]).collect();

        let zero = vec![0usize; n];
        let mut best = (zero.clone(), self.energy(&zero));
        let order: Vec<usize> = (0..n).collect();
        for _ in 0..sweeps {
            for backward in [false, true] {
                let iter: Box<dyn Iterator<Item = &usize>> = if backward {
                    Box::new(order.iter().rev())
                } else {
                    Box::new(order.iter())
                };
                for &i in iter {
                    let mut theta = self.unary[i].clone();
                    for &(ei, is_a) in &incident[i] {
                        let m = if is_a { &to_a[ei] } else { &to_b[ei] };
                        for (t, v) in theta.iter_mut().zip(m) {
                            *t += v;
                        }
                    }
                    for &(ei, is_a) in &incident[i] {
                        let j = self.other(ei, is_a);
                        if (j > i) == backward {
                            continue;
                        }
                        let e = &self.edges[ei];
                        let (li, lj) = (self.labels[i], self.labels[j]);
                        let incoming = if is_a { &to_a[ei] } else { &to_b[ei] };
                        let h: Vec<f64> = (0..li).map(|x| gamma[i] * theta[x] - incoming[x]).collect();
                        let mut out = vec![f64::INFINITY; lj];
                        for (xi, &hx) in h.iter().enumerate() {
                            for (xj, o) in out.iter_mut().enumerate() {
                                let c = if is_a {
                                    e.cost[xi * lj + xj]
                                } else {
                                    e.cost[xj * li + xi]
                                };
                                let v = hx + c;
                                if v < *o {
                                    *o = v;
                                }
                            }
                        }
                        let m = out.iter().copied().fold(f64::INFINITY, f64::min);
                        if m.is_finite() {
                            out.iter_mut().for_each(|o| *o -= m);
                        }
                        if is_a {
                            to_b[ei] = out;
                        } else {
                            to_a[ei] = out;
                        }
                    }
                }
            }
            let x = self.decode(&incident, &to_a, &to_b);
            let e = self.energy(&x);
            if e < best.1 {
                best = (x, e);
            }
        }
        best
    }

    fn other(&self, ei: usize, is_a: bool) -> usize {
        if is_a {
            self.edges[ei].b
        } else {
            self.edges[ei].a
        }
    }

    /// Conditions on already-decoded earlier nodes and uses messages from later ones.
    fn decode(&self, incident: &[Vec<(usize, bool)>], to_a: &[Vec<f64>], to_b: &[Vec<f64>]) -> Vec<usize> {
        let n = self.len();
        let mut x = vec![0usize; n];
        for i in 0..n {
            let mut score = self.unary[i].clone();
            for &(ei, is_a) in &incident[i] {
                let j = self.other(ei, is_a);
                let e = &self.edges[ei];
                if j < i {
                    // i is endpoint b
                    let lb = self.labels[i];
                    for (xi, s) in score.iter_mut().enumerate() {
                        *s += e.cost[x[j] * lb + xi];
                    }
                } else {
                    let m = if is_a { &to_a[ei] } else { &to_b[ei] };
                    for (s, v) in score.iter_mut().zip(m) {
                        *s += v;
                    }
                }
            }
            let mut arg = 0;
            for (l, &s) in score.iter().enumerate() {
                if s < score[arg] {
                    arg = l;
                }
            }
            x[i] = arg;
        }
        x
    }
}
