//! Minimum-weight spanning in-trees via Chu-Liu/Edmonds on the reversed graph.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Spanning in-tree: every non-root node points to its parent.
#[derive(Clone, Debug, PartialEq)]
pub struct InTree<T> {
    pub root: usize,
    pub weight: T,
    /// `parent[i]` is `None` exactly for the root.
    pub parent: Vec<Option<usize>>,
}

impl<T: Scalar> InTree<T> {
    /// Structural check: one outgoing edge per non-root node, no cycles,
    /// every node reaches the root.
    pub fn is_valid(&self) -> bool {
        let k = self.parent.len();
        if self.root >= k || self.parent[self.root].is_some() {
            return false;
        }
        (0..k).all(|start| {
            let mut v = start;
            for _ in 0..=k {
                if v == self.root {
                    return true;
                }
                match self.parent[v] {
                    Some(p) if p < k && p != v => v = p,
                    _ => return false,
                }
            }
            false
        })
    }
}

/// Sum of `q[i][parent[i]]` in node-index order.
pub fn tree_weight<T: Scalar>(q: &[Vec<T>], parent: &[Option<usize>]) -> T {
    parent
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| q[i][p]))
        .fold(T::zero(), |a, b| a + b)
}

#[derive(Clone, Copy)]
struct Edge<T> {
    from: usize,
    to: usize,
    w: T,
}

/// Chosen edge indices of a minimum arborescence rooted at `root`, or `None`
/// if some node is unreachable.
fn edmonds<T: Scalar>(n: usize, root: usize, edges: &[Edge<T>]) -> Option<Vec<usize>> {
    let mut best_in: Vec<Option<usize>> = vec![None; n];
    for (idx, e) in edges.iter().enumerate() {
        if e.from == e.to || e.to == root {
            continue;
        }
        let replace = match best_in[e.to] {
            None => true,
            Some(b) => e.w < edges[b].w || (e.w == edges[b].w && e.from < edges[b].from),
        };
        if replace {
            best_in[e.to] = Some(idx);
        }
    }
    if (0..n).any(|v| v != root && best_in[v].is_none()) {
        return None;
    }
    // cycle detection on the chosen in-edges
    let mut comp = vec![usize::MAX; n];
    let mut mark = vec![usize::MAX; n];
    let mut n_comp = 0;
    let mut has_cycle = false;
    for start in 0..n {
        let mut v = start;
        while v != root && mark[v] == usize::MAX && comp[v] == usize::MAX {
            mark[v] = start;
            v = edges[best_in[v].unwrap()].from;
        }
        if v != root && mark[v] == start && comp[v] == usize::MAX {
            has_cycle = true;
            let mut u = v;
            loop {
                comp[u] = n_comp;
                u = edges[best_in[u].unwrap()].from;
                if u == v {
                    break;
                }
            }
            n_comp += 1;
        }
    }
    if !has_cycle {
        return Some((0..n).filter(|&v| v != root).map(|v| best_in[v].unwrap()).collect());
    }
    for c in comp.iter_mut() {
        if *c == usize::MAX {
            *c = n_comp;
            n_comp += 1;
        }
    }
    let mut reduced = Vec::new();
    let mut origin = Vec::new();
    for (idx, e) in edges.iter().enumerate() {
        let (a, b) = (comp[e.from], comp[e.to]);
        if a == b {
            continue;
        }
        let w = if e.to != root { e.w - edges[best_in[e.to].unwrap()].w } else { e.w };
        reduced.push(Edge { from: a, to: b, w });
        origin.push(idx);
    }
    let chosen = edmonds(n_comp, comp[root], &reduced)?;
    let mut entered = vec![false; n];
    let mut result = Vec::with_capacity(n - 1);
    for r in chosen {
        let idx = origin[r];
        entered[edges[idx].to] = true;
        result.push(idx);
    }
    for v in 0..n {
        if v != root && !entered[v] {
            result.push(best_in[v].unwrap());
        }
    }
    Some(result)
}

/// Optimal in-tree weight with `forced[i]` pinning node `i`'s parent.
fn forced_optimum<T: Scalar>(q: &[Vec<T>], root: usize, forced: &[Option<usize>]) -> Option<Vec<Option<usize>>> {
    let k = q.len();
    let mut edges = Vec::new();
    for i in 0..k {
        if i == root {
            continue;
        }
        for p in 0..k {
            if p == i || !q[i][p].is_finite() || forced[i].is_some_and(|f| f != p) {
                continue;
            }
            // arborescence edge parent -> child carries the in-tree cost q[child][parent]
            edges.push(Edge { from: p, to: i, w: q[i][p] });
        }
    }
    let chosen = edmonds(k, root, &edges)?;
    let mut parent = vec![None; k];
    for idx in chosen {
        parent[edges[idx].to] = Some(edges[idx].from);
    }
    Some(parent)
}

/// Minimum-weight spanning in-tree rooted at `root`. Among optimal trees the
/// lexicographically smallest parent map is returned; the weight is summed
/// in node-index order.
pub fn min_in_tree<T: Scalar>(q: &[Vec<T>], root: usize) -> Result<InTree<T>> {
    let k = q.len();
    if root >= k {
        return Err(Error::InvalidArgument(format!("root {root} out of range for {k} components")));
    }
    let first = forced_optimum(q, root, &vec![None; k]).ok_or(Error::NoFiniteTree(root))?;
    let best = tree_weight(q, &first);
    let slack = T::c(1e-12) * (T::one() + best.abs());
    let mut forced = vec![None; k];
    for i in 0..k {
        if i == root {
            continue;
        }
        for p in 0..k {
            if p == i || !q[i][p].is_finite() {
                continue;
            }
            forced[i] = Some(p);
            if let Some(t) = forced_optimum(q, root, &forced) {
                if tree_weight(q, &t) <= best + slack {
                    break;
                }
            }
            forced[i] = None;
        }
        if forced[i].is_none() {
            forced[i] = first[i];
        }
    }
    Ok(InTree { root, weight: tree_weight(q, &forced), parent: forced })
}

/// Exhaustive search over all parent maps; the oracle for small `k`.
pub fn min_in_tree_brute_force<T: Scalar>(q: &[Vec<T>], root: usize) -> Result<InTree<T>> {
    let k = q.len();
    if root >= k {
        return Err(Error::InvalidArgument(format!("root {root} out of range for {k} components")));
    }
    if k > 8 {
        return Err(Error::InvalidArgument("brute-force in-tree search is limited to k <= 8".into()));
    }
    let others: Vec<usize> = (0..k).filter(|&i| i != root).collect();
    let mut choice = vec![0usize; others.len()];
    let mut best: Option<InTree<T>> = None;
    loop {
        let mut parent = vec![None; k];
        let mut ok = true;
        for (slot, &i) in others.iter().enumerate() {
            let p = choice[slot];
            if p == i || !q[i][p].is_finite() {
                ok = false;
                break;
            }
            parent[i] = Some(p);
        }
        if ok {
            let t = InTree { root, weight: tree_weight(q, &parent), parent };
            if t.is_valid() && best.as_ref().is_none_or(|b| t.weight < b.weight) {
                best = Some(t);
            }
        }
        // odometer over parent choices, last node fastest
        let mut s = others.len();
        loop {
            if s == 0 {
                return best.ok_or(Error::NoFiniteTree(root));
            }
            s -= 1;
            choice[s] += 1;
            if choice[s] < k {
                break;
            }
            choice[s] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_node_example() {
        let q = vec![vec![0.0, 1.0, 4.0], vec![2.0, 0.0, 1.0], vec![3.0, 5.0, 0.0]];
        let t = min_in_tree(&q, 0).unwrap();
        assert_eq!(t.weight, 4.0);
        assert_eq!(t.parent, vec![None, Some(2), Some(0)]);
        assert_eq!(min_in_tree_brute_force(&q, 0).unwrap(), t);
    }

    #[test]
    fn two_nodes_and_infinite_edges() {
        let q = vec![vec![0.0, 3.0], vec![1.0, 0.0]];
        assert_eq!(min_in_tree(&q, 0).unwrap().weight, 1.0);
        assert_eq!(min_in_tree(&q, 1).unwrap().weight, 3.0);
        let inf = f64::INFINITY;
        let q = vec![vec![0.0, inf], vec![1.0, 0.0]];
        assert!(matches!(min_in_tree(&q, 1), Err(Error::NoFiniteTree(1))));
        assert!(matches!(min_in_tree_brute_force(&q, 1), Err(Error::NoFiniteTree(1))));
    }

    #[test]
    fn ties_pick_lexicographically_smallest_parent_map() {
        let q = vec![vec![1.0; 4]; 4];
        let t = min_in_tree(&q, 2).unwrap();
        assert_eq!(t.parent, vec![Some(1), Some(2), None, Some(0)]);
        assert_eq!(t, min_in_tree_brute_force(&q, 2).unwrap());
        assert!(t.is_valid());
    }

    #[test]
    fn contraction_case() {
        // 1 and 2 prefer each other; the cycle must be broken
        let q = vec![
            vec![0.0, 9.0, 9.0, 9.0],
            vec![5.0, 0.0, 1.0, 9.0],
            vec![6.0, 1.0, 0.0, 9.0],
            vec![9.0, 2.0, 9.0, 0.0],
        ];
        let t = min_in_tree(&q, 0).unwrap();
        assert_eq!(t, min_in_tree_brute_force(&q, 0).unwrap());
        assert_eq!(t.weight, 8.0);
    }
}
