use super::SensorGraph;

/// Bi-connected components of an undirected graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BccDecomposition {
    /// Sorted node indices per component, ordered lexicographically.
    /// Isolated nodes appear as singleton components.
    pub components: Vec<Vec<usize>>,
    /// Sorted articulation points.
    pub cut_vertices: Vec<usize>,
}

impl BccDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// For every node, the components containing it.
    pub fn memberships(&self, node_count: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); node_count];
        for (c, comp) in self.components.iter().enumerate() {
            for &v in comp {
                out[v].push(c);
            }
        }
        out
    }

    pub fn named_components(&self, graph: &SensorGraph) -> Vec<Vec<String>> {
        self.components
            .iter()
            .map(|c| c.iter().map(|&v| graph.node_ids()[v].clone()).collect())
            .collect()
    }
}

/// Tarjan's bi-connected component decomposition of the binarized,
/// symmetrized sensor graph.
pub fn tarjan_bcc(graph: &SensorGraph) -> BccDecomposition {
    biconnected_components(&graph.neighbors())
}

const UNSEEN: usize = usize::MAX;

/// Iterative Tarjan over simple undirected adjacency lists. O(|V| + |E|).
pub fn biconnected_components(adj: &[Vec<usize>]) -> BccDecomposition {
    let n = adj.len();
    let mut disc = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut is_cut = vec![false; n];
    let mut clock = 0usize;
    let mut vertex_stack: Vec<usize> = Vec::new();
    let mut components = Vec::new();
    // (vertex, parent, next neighbour position)
    let mut frames: Vec<(usize, usize, usize)> = Vec::new();

    for root in 0..n {
        if disc[root] != UNSEEN {
            continue;
        }
        disc[root] = clock;
        low[root] = clock;
        clock += 1;
        if adj[root].is_empty() {
            components.push(vec![root]);
            continue;
        }
        let mut root_children = 0usize;
        vertex_stack.push(root);
        frames.push((root, UNSEEN, 0));

        while let Some(frame) = frames.last_mut() {
            let (v, parent) = (frame.0, frame.1);
            if frame.2 < adj[v].len() {
                let w = adj[v][frame.2];
                frame.2 += 1;
                if disc[w] == UNSEEN {
                    disc[w] = clock;
                    low[w] = clock;
                    clock += 1;
                    vertex_stack.push(w);
                    frames.push((w, v, 0));
                    if v == root {
                        root_children += 1;
                    }
                } else if w != parent {
                    low[v] = low[v].min(disc[w]);
                }
                continue;
            }
            frames.pop();
            let Some(&(p, _, _)) = frames.last() else {
                continue;
            };
            low[p] = low[p].min(low[v]);
            if low[v] >= disc[p] {
                if p != root {
                    is_cut[p] = true;
                }
                let mut comp = vec![p];
                while let Some(x) = vertex_stack.pop() {
                    comp.push(x);
                    if x == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
        vertex_stack.pop();
        if root_children >= 2 {
            is_cut[root] = true;
        }
    }

    components.sort_unstable();
    BccDecomposition {
        components,
        cut_vertices: (0..n).filter(|&v| is_cut[v]).collect(),
    }
}
