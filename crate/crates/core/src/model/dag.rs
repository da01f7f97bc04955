use std::collections::VecDeque;
use std::fmt;

use crate::scalar::Real;

use super::{ModelError, NominalRates, ServiceModel, ValidationReport};

/// One job class: its task graph and Bernoulli arrival rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DagJobClass<T> {
    /// Task types of this class (0-based).
    pub nodes: Vec<usize>,
    /// Precedence edges `(parent, child)` (0-based).
    pub edges: Vec<(usize, usize)>,
    pub arrival_rate: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagNetworkSpec<T> {
    pub classes: Vec<DagJobClass<T>>,
    pub service: ServiceModel<T>,
}

impl<T: Real> DagNetworkSpec<T> {
    pub fn num_tasks(&self) -> usize {
        self.service.num_tasks()
    }

    /// Class index of every task; `None` for tasks not owned by any class.
    fn owners(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.num_tasks()];
        for (m, c) in self.classes.iter().enumerate() {
            for &k in &c.nodes {
                if k < owner.len() && owner[k].is_none() {
                    owner[k] = Some(m);
                }
            }
        }
        owner
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let k_total = self.num_tasks();
        if self.classes.is_empty() {
            report.push(ModelError::InvalidStructure("no job classes".into()));
        }
        let mut seen = vec![0usize; k_total];
        for (m, c) in self.classes.iter().enumerate() {
            let class_id = m + 1;
            if c.nodes.is_empty() {
                report.push(ModelError::InvalidStructure(format!(
                    "class {class_id} has no nodes"
                )));
                continue;
            }
            let mut structural_ok = true;
            for &k in &c.nodes {
                if k >= k_total {
                    report.push(ModelError::InvalidStructure(format!(
                        "class {class_id} lists unknown task {}",
                        k + 1
                    )));
                    structural_ok = false;
                } else {
                    seen[k] += 1;
                }
            }
            for &(a, b) in &c.edges {
                if !c.nodes.contains(&a) || !c.nodes.contains(&b) {
                    report.push(ModelError::InvalidStructure(format!(
                        "edge ({},{}) leaves class {class_id}",
                        a + 1,
                        b + 1
                    )));
                    structural_ok = false;
                } else if a == b {
                    report.push(ModelError::CyclicGraph { class: class_id });
                    structural_ok = false;
                }
            }
            if structural_ok {
                if topo_order(&c.nodes, &c.edges).is_none() {
                    report.push(ModelError::CyclicGraph { class: class_id });
                }
                if !weakly_connected(&c.nodes, &c.edges) {
                    report.push(ModelError::DisconnectedClass { class: class_id });
                }
            }
            let l = c.arrival_rate;
            if !(l > T::zero() && l < T::one()) {
                report.push(ModelError::ArrivalRateOutOfRange {
                    subject: format!("class {class_id}"),
                    rate: l.as_f64(),
                });
            }
        }
        for (k, &n) in seen.iter().enumerate() {
            if n == 0 {
                report.push(ModelError::InvalidStructure(format!(
                    "task {} belongs to no class",
                    k + 1
                )));
            } else if n > 1 {
                report.push(ModelError::InvalidStructure(format!(
                    "task {} appears in more than one class",
                    k + 1
                )));
            }
        }
        self.service.validate_into(&mut report);
        report
    }

    /// `nu_k = lambda_{m(k)}`.
    pub fn nominal_rates(&self) -> NominalRates<T> {
        let owner = self.owners();
        let nu = owner
            .iter()
            .map(|o| o.map_or(T::zero(), |m| self.classes[m].arrival_rate))
            .collect();
        NominalRates { nu }
    }
}

fn topo_order(nodes: &[usize], edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let idx = |k: usize| nodes.iter().position(|&n| n == k).unwrap();
    let mut indeg = vec![0usize; nodes.len()];
    for &(_, b) in edges {
        indeg[idx(b)] += 1;
    }
    let mut ready: Vec<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop() {
        order.push(nodes[i]);
        for &(a, b) in edges {
            if a == nodes[i] {
                let t = idx(b);
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}

fn weakly_connected(nodes: &[usize], edges: &[(usize, usize)]) -> bool {
    let idx = |k: usize| nodes.iter().position(|&n| n == k).unwrap();
    let mut seen = vec![false; nodes.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &(a, b) in edges {
            let other = if a == nodes[i] {
                b
            } else if b == nodes[i] {
                a
            } else {
                continue;
            };
            let o = idx(other);
            if !seen[o] {
                seen[o] = true;
                queue.push_back(o);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Virtual queue `(k', k)`, or the root queue `(0, k)` when `parent` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueId {
    pub parent: Option<usize>,
    pub child: usize,
}

impl QueueId {
    pub fn root(child: usize) -> Self {
        Self {
            parent: None,
            child,
        }
    }

    pub fn edge(parent: usize, child: usize) -> Self {
        Self {
            parent: Some(parent),
            child,
        }
    }

    /// Short label for CSV headers: `q0_1`, `q2_4`.
    pub fn label(&self) -> String {
        format!("q{}_{}", self.parent.map_or(0, |p| p + 1), self.child + 1)
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.parent.map_or(0, |p| p + 1), self.child + 1)
    }
}

/// Virtual-queue network derived from the job DAGs.
///
/// Queues are ordered class by class, and within a class by `(child, parent)` with the
/// root queue of a node before its edge queues.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueueTopology {
    pub queues: Vec<QueueId>,
    pub class_of_task: Vec<usize>,
    /// `P_k`, sorted.
    pub parents: Vec<Vec<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Queues a type-k task consumes from (the root queue for roots).
    pub input_queues: Vec<Vec<usize>>,
    /// Queues a completed type-k task feeds.
    pub output_queues: Vec<Vec<usize>>,
    pub roots: Vec<usize>,
    /// `L_k`: longest root-to-k path length in edges.
    pub longest_path_depth: Vec<usize>,
    /// `H_k`: queue indices from a root queue to an input queue of `k`.
    pub estimator_paths: Vec<Vec<usize>>,
    pub root_queues_of_class: Vec<Vec<usize>>,
}

impl VirtualQueueTopology {
    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.parents.len()
    }

    pub fn queue_index(&self, id: QueueId) -> Option<usize> {
        self.queues.iter().position(|&q| q == id)
    }
}

/// Builds the virtual-queue topology of a validated spec.
pub fn build_topology<T: Real>(spec: &DagNetworkSpec<T>) -> VirtualQueueTopology {
    let k_total = spec.num_tasks();
    let mut class_of_task = vec![0; k_total];
    let mut parents = vec![Vec::new(); k_total];
    let mut children = vec![Vec::new(); k_total];
    for (m, c) in spec.classes.iter().enumerate() {
        for &k in &c.nodes {
            class_of_task[k] = m;
        }
        for &(a, b) in &c.edges {
            parents[b].push(a);
            children[a].push(b);
        }
    }
    for v in parents.iter_mut().chain(children.iter_mut()) {
        v.sort_unstable();
        v.dedup();
    }

    let mut queues = Vec::new();
    let mut root_queues_of_class = vec![Vec::new(); spec.classes.len()];
    for (m, c) in spec.classes.iter().enumerate() {
        let mut nodes = c.nodes.clone();
        nodes.sort_unstable();
        for &k in &nodes {
            if parents[k].is_empty() {
                root_queues_of_class[m].push(queues.len());
                queues.push(QueueId::root(k));
            }
            for &p in &parents[k] {
                queues.push(QueueId::edge(p, k));
            }
        }
    }
    let index_of = |id: QueueId| queues.iter().position(|&q| q == id).unwrap();

    let roots: Vec<usize> = (0..k_total).filter(|&k| parents[k].is_empty()).collect();
    let input_queues: Vec<Vec<usize>> = (0..k_total)
        .map(|k| {
            if parents[k].is_empty() {
                vec![index_of(QueueId::root(k))]
            } else {
                parents[k]
                    .iter()
                    .map(|&p| index_of(QueueId::edge(p, k)))
                    .collect()
            }
        })
        .collect();
    let output_queues: Vec<Vec<usize>> = (0..k_total)
        .map(|k| {
            children[k]
                .iter()
                .map(|&c| index_of(QueueId::edge(k, c)))
                .collect()
        })
        .collect();

    let mut depth = vec![0usize; k_total];
    for c in &spec.classes {
        let order = topo_order(&c.nodes, &c.edges).expect("validated spec is acyclic");
        for k in order {
            depth[k] = parents[k].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        }
    }

    let estimator_paths = (0..k_total)
        .map(|k| {
            let mut path = Vec::with_capacity(depth[k] + 1);
            let mut cur = k;
            while let Some(&p) = parents[cur]
                .iter()
                .find(|&&p| depth[p] + 1 == depth[cur])
            {
                path.push(index_of(QueueId::edge(p, cur)));
                cur = p;
            }
            path.push(index_of(QueueId::root(cur)));
            path.reverse();
            path
        })
        .collect();

    VirtualQueueTopology {
        queues,
        class_of_task,
        parents,
        children,
        input_queues,
        output_queues,
        roots,
        longest_path_depth: depth,
        estimator_paths,
        root_queues_of_class,
    }
}
