use std::collections::{BTreeMap, HashMap, HashSet};

use super::{MeshError, TriMesh};

/// Undirected edge incidence for a triangle list.
///
/// Face edge `k` runs from corner `k` to corner `(k + 1) % 3`.
#[derive(Debug, Clone)]
pub struct EdgeTopology {
    /// Unique edges as `(min, max)` vertex pairs, sorted.
    pub edges: Vec<[usize; 2]>,
    /// Faces incident to each edge, in ascending face order.
    pub edge_faces: Vec<Vec<usize>>,
    /// Edge index of each face edge.
    pub face_edges: Vec<[usize; 3]>,
    pub vertex_count: usize,
}

impl EdgeTopology {
    pub fn new(faces: &[[usize; 3]], vertex_count: usize) -> Self {
        let mut map: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 2);
        let mut keys: Vec<(usize, usize)> = Vec::with_capacity(faces.len() * 2);
        for f in faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if !map.contains_key(&key) {
                    map.insert(key, 0);
                    keys.push(key);
                }
            }
        }
        keys.sort_unstable();
        for (i, k) in keys.iter().enumerate() {
            map.insert(*k, i);
        }
        let mut edge_faces = vec![Vec::new(); keys.len()];
        let mut face_edges = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let mut fe = [0; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = map[&(a.min(b), a.max(b))];
                edge_faces[e].push(fi);
                fe[k] = e;
            }
            face_edges.push(fe);
        }
        let edges = keys.into_iter().map(|(a, b)| [a, b]).collect();
        Self { edges, edge_faces, face_edges, vertex_count }
    }

    pub fn of(mesh: &TriMesh) -> Self {
        Self::new(mesh.faces(), mesh.vertex_count())
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edge_faces[e].len() == 1)
    }

    pub fn non_manifold_edges(&self) -> Vec<(usize, usize)> {
        (0..self.edges.len())
            .filter(|&e| self.edge_faces[e].len() > 2)
            .map(|e| (self.edges[e][0], self.edges[e][1]))
            .collect()
    }

    /// Sorted, deduplicated one-ring of every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut n = vec![Vec::new(); self.vertex_count];
        for &[a, b] in &self.edges {
            n[a].push(b);
            n[b].push(a);
        }
        for l in &mut n {
            l.sort_unstable();
        }
        n
    }

    /// Number of connected components among vertices referenced by a face.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertex_count).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; self.vertex_count];
        for &[a, b] in &self.edges {
            used[a] = true;
            used[b] = true;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        (0..self.vertex_count).filter(|&v| used[v] && find(&mut parent, v) == v).count()
    }
}

/// Closed vertex cycles bounding the holes of an open surface.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BoundaryLoops {
    pub loops: Vec<Vec<usize>>,
}

impl BoundaryLoops {
    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn total_length(&self) -> usize {
        self.loops.iter().map(Vec::len).sum()
    }

    /// Loops as vertex sets, for order-independent comparisons.
    pub fn vertex_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = self
            .loops
            .iter()
            .map(|l| {
                let mut s = l.clone();
                s.sort_unstable();
                s
            })
            .collect();
        sets.sort();
        sets
    }
}

/// Extracts every boundary cycle. Fails on edges shared by more than two faces.
pub fn boundary_loops(mesh: &TriMesh) -> Result<BoundaryLoops, MeshError> {
    let topo = EdgeTopology::of(mesh);
    let bad = topo.non_manifold_edges();
    if !bad.is_empty() {
        return Err(MeshError::NonManifoldEdges { edges: bad });
    }
    Ok(trace_loops(&topo, mesh.faces()))
}

/// Walks the graph of single-face edges. Each loop starts at its smallest
/// vertex and follows the winding of the face owning its first edge, so the
/// result does not depend on face order.
pub(crate) fn trace_loops(topo: &EdgeTopology, faces: &[[usize; 3]]) -> BoundaryLoops {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for e in topo.boundary_edges() {
        let [a, b] = topo.edges[e];
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
        let f = faces[topo.edge_faces[e][0]];
        for k in 0..3 {
            if (f[k], f[(k + 1) % 3]) == (a, b) {
                directed.insert((a, b));
            } else if (f[k], f[(k + 1) % 3]) == (b, a) {
                directed.insert((b, a));
            }
        }
    }
    for list in adj.values_mut() {
        list.sort_unstable();
    }
    let pinch: Vec<usize> = adj.iter().filter(|(_, n)| n.len() > 2).map(|(v, _)| *v).collect();
    if !pinch.is_empty() {
        log::warn!("non-manifold boundary vertices: {pinch:?}");
    }

    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut loops = Vec::new();
    let starts: Vec<usize> = adj.keys().copied().collect();
    for start in starts {
        loop {
            let Some(&first) = adj[&start].iter().find(|&&n| !used.contains(&key(start, n))) else {
                break;
            };
            let mut cycle = vec![start];
            used.insert(key(start, first));
            let mut cur = first;
            while cur != start {
                cycle.push(cur);
                let next = adj[&cur].iter().copied().find(|&n| !used.contains(&key(cur, n)));
                match next {
                    Some(n) => {
                        used.insert(key(cur, n));
                        cur = n;
                    }
                    None => break,
                }
            }
            // orient along the owning face's winding
            if cycle.len() > 1 && !directed.contains(&(cycle[0], cycle[1])) {
                cycle[1..].reverse();
            }
            loops.push(cycle);
        }
    }
    loops.sort();
    BoundaryLoops { loops }
}
