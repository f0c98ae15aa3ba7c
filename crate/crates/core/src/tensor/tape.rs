use std::collections::{HashMap, HashSet};

use super::Tensor;

/// Linearised view of the graph reachable from a root, in reverse
/// topological (descending id) order.
pub struct GradTape {
    nodes: Vec<Tensor>,
}

/// One recorded primitive, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeEntry {
    pub id: u64,
    pub op: Option<&'static str>,
    pub parents: Vec<u64>,
}

impl GradTape {
    pub fn record(root: &Tensor) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(f) = t.grad_fn() {
                for p in f.inputs() {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));
        GradTape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entries(&self) -> Vec<TapeEntry> {
        self.nodes
            .iter()
            .map(|t| TapeEntry {
                id: t.id(),
                op: t.op_name(),
                parents: t
                    .grad_fn()
                    .map(|f| f.inputs().iter().map(|p| p.id()).collect())
                    .unwrap_or_default(),
            })
            .collect()
    }

    /// Propagate `seed` (the gradient of the root) through every entry once.
    pub(crate) fn replay(&self, root: &Tensor, seed: Vec<f64>) {
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(root.id(), seed);
        for node in &self.nodes {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match node.grad_fn() {
                None => node.accumulate_grad(&g),
                Some(f) => {
                    let inputs = f.inputs();
                    let grads = f.backward(node.data(), &g);
                    debug_assert_eq!(inputs.len(), grads.len(), "{}", f.name());
                    for (input, pg) in inputs.into_iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), input.numel(), "{}", f.name());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(input.id(), pg);
                            }
                        }
                    }
                }
            }
        }
    }
}
