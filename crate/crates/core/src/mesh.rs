//! Conforming triangular meshes with Dirichlet/Neumann boundary labels and
//! vertex-patch topology.
//!
//! Edges are stored once, sorted by their (lower, higher) vertex pair. The
//! global edge normal is the lower→higher tangent rotated by −90°. A triangle
//! sees its local edge `e` (from local vertex `e+1` to `e+2`) with sign `+1`
//! when that local direction agrees with the global one.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::local_edge_vertices;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexClass {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// How boundary edges of a generated mesh are labelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryRule {
    AllDirichlet,
    AllNeumann,
    /// Neumann on the listed sides of the bounding box, Dirichlet elsewhere.
    NeumannSides(Vec<Side>),
}

impl FromStr for BoundaryRule {
    type Err = Error;

    /// `all-dirichlet`, `all-neumann` or `neumann:left,top` (other sides Dirichlet).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all-dirichlet" => Ok(BoundaryRule::AllDirichlet),
            "all-neumann" => Ok(BoundaryRule::AllNeumann),
            other => {
                let sides = other
                    .strip_prefix("neumann:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown boundary rule `{other}`")))?;
                sides
                    .split(',')
                    .map(|side| match side.trim() {
                        "left" => Ok(Side::Left),
                        "right" => Ok(Side::Right),
                        "bottom" => Ok(Side::Bottom),
                        "top" => Ok(Side::Top),
                        bad => Err(Error::InvalidArgument(format!("unknown side `{bad}`"))),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(BoundaryRule::NeumannSides)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// `[lower, higher]` vertex indices.
    pub vertices: [usize; 2],
    /// `(element, local edge)` pairs; one entry on the boundary, two inside.
    pub elements: Vec<(usize, usize)>,
    pub label: Option<BoundaryLabel>,
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elements.len() == 1
    }
}

/// Affine map `x = B x̂ + v0` of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub vertices: [[f64; 2]; 3],
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub b: [[f64; 2]; 2],
    pub det: f64,
    /// `B^{-T}`, mapping reference gradients to physical ones.
    pub binv_t: [[f64; 2]; 2],
}

impl ElementGeometry {
    pub fn new(vertices: [[f64; 2]; 3]) -> Self {
        let b = [
            [vertices[1][0] - vertices[0][0], vertices[2][0] - vertices[0][0]],
            [vertices[1][1] - vertices[0][1], vertices[2][1] - vertices[0][1]],
        ];
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        let binv_t = [[b[1][1] / det, -b[1][0] / det], [-b[0][1] / det, b[0][0] / det]];
        ElementGeometry {
            vertices,
            b,
            det,
            binv_t,
        }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }

    pub fn map(&self, xh: [f64; 2]) -> [f64; 2] {
        [
            self.vertices[0][0] + self.b[0][0] * xh[0] + self.b[0][1] * xh[1],
            self.vertices[0][1] + self.b[1][0] * xh[0] + self.b[1][1] * xh[1],
        ]
    }

    pub fn inverse_map(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.vertices[0][0], x[1] - self.vertices[0][1]];
        // B^{-1} = (B^{-T})^T
        [
            self.binv_t[0][0] * d[0] + self.binv_t[1][0] * d[1],
            self.binv_t[0][1] * d[0] + self.binv_t[1][1] * d[1],
        ]
    }

    /// Barycentric coordinates of a reference point.
    pub fn barycentric(xh: [f64; 2]) -> [f64; 3] {
        [1.0 - xh[0] - xh[1], xh[0], xh[1]]
    }

    /// Constant physical gradients of the three barycentric coordinates.
    pub fn barycentric_gradients(&self) -> [[f64; 2]; 3] {
        let g1 = [self.binv_t[0][0], self.binv_t[1][0]];
        let g2 = [self.binv_t[0][1], self.binv_t[1][1]];
        [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = local_edge_vertices(e);
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|e| self.edge_length(e)).fold(0.0, f64::max)
    }

    /// Diameter of the inscribed circle.
    pub fn inscribed_diameter(&self) -> f64 {
        let perimeter: f64 = (0..3).map(|e| self.edge_length(e)).sum();
        4.0 * self.area() / perimeter
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone)]
pub struct VertexPatch {
    pub vertex: usize,
    pub class: VertexClass,
    /// Elements containing the vertex, ascending.
    pub elements: Vec<usize>,
    /// Edges containing the vertex whose normal flux is free in the patch
    /// space: interior edges, plus Dirichlet boundary edges.
    pub free_edges: Vec<usize>,
    /// Dirichlet boundary edges containing the vertex.
    pub dirichlet_edges: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    elem_edges: Vec<[usize; 3]>,
    elem_signs: Vec<[f64; 3]>,
    geometry: Vec<ElementGeometry>,
    patches: Vec<VertexPatch>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryEntry {
    edge: [usize; 2],
    label: BoundaryLabel,
}

impl Mesh {
    /// Builds and validates a mesh. Clockwise triangles are reoriented.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        labels: &BTreeMap<[usize; 2], BoundaryLabel>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::MeshValidation("mesh has no triangles".into()));
        }
        for (k, t) in triangles.iter_mut().enumerate() {
            for &v in t.iter() {
                if v >= vertices.len() {
                    return Err(Error::MeshValidation(format!(
                        "triangle {k} references missing vertex {v}"
                    )));
                }
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::MeshValidation(format!("triangle {k} repeats a vertex")));
            }
            let g = ElementGeometry::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]);
            let scale = g.diameter().powi(2);
            if !(g.det.abs() > 1e-14 * scale) {
                return Err(Error::MeshValidation(format!(
                    "triangle {k} {:?} has zero area",
                    *t
                )));
            }
            if g.det < 0.0 {
                t.swap(1, 2);
            }
        }

        let mut edge_map: BTreeMap<[usize; 2], Vec<(usize, usize)>> = BTreeMap::new();
        for (k, t) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = local_edge_vertices(e);
                let key = sorted(t[a], t[b]);
                edge_map.entry(key).or_default().push((k, e));
            }
        }

        let mut edges = Vec::with_capacity(edge_map.len());
        let mut elem_edges = vec![[0usize; 3]; triangles.len()];
        let mut elem_signs = vec![[0.0f64; 3]; triangles.len()];
        for (idx, (key, elems)) in edge_map.into_iter().enumerate() {
            if elems.len() > 2 {
                return Err(Error::MeshValidation(format!(
                    "edge {key:?} is shared by {} triangles",
                    elems.len()
                )));
            }
            let label = labels.get(&key).copied();
            if elems.len() == 1 && label.is_none() {
                return Err(Error::MeshValidation(format!(
                    "boundary edge {key:?} has no label"
                )));
            }
            if elems.len() == 2 && label.is_some() {
                return Err(Error::MeshValidation(format!(
                    "interior edge {key:?} carries a boundary label"
                )));
            }
            for &(k, e) in &elems {
                let (a, _) = local_edge_vertices(e);
                elem_edges[k][e] = idx;
                elem_signs[k][e] = if triangles[k][a] == key[0] { 1.0 } else { -1.0 };
            }
            let (p, q) = (vertices[key[0]], vertices[key[1]]);
            let length = dist(p, q);
            let t = [(q[0] - p[0]) / length, (q[1] - p[1]) / length];
            edges.push(Edge {
                vertices: key,
                elements: elems,
                label,
                normal: [t[1], -t[0]],
                length,
            });
        }
        for key in labels.keys() {
            if edges.binary_search_by(|e| e.vertices.cmp(key)).is_err() {
                return Err(Error::MeshValidation(format!(
                    "label given for {key:?}, which is not a mesh edge"
                )));
            }
        }

        // A boundary edge with a vertex strictly inside it is a hanging node.
        let boundary_vertices: Vec<usize> = {
            let mut v: Vec<usize> = edges
                .iter()
                .filter(|e| e.is_boundary())
                .flat_map(|e| e.vertices)
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        for e in edges.iter().filter(|e| e.is_boundary()) {
            let (p, q) = (vertices[e.vertices[0]], vertices[e.vertices[1]]);
            for &v in &boundary_vertices {
                if e.vertices.contains(&v) {
                    continue;
                }
                let x = vertices[v];
                let cross = (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]);
                let along = ((x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1]))
                    / (e.length * e.length);
                if cross.abs() <= 1e-12 * e.length * e.length && along > 1e-12 && along < 1.0 - 1e-12 {
                    return Err(Error::MeshValidation(format!(
                        "hanging node: vertex {v} lies inside edge {:?}",
                        e.vertices
                    )));
                }
            }
        }

        let geometry = triangles
            .iter()
            .map(|t| ElementGeometry::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]))
            .collect();

        let mut mesh = Mesh {
            vertices,
            triangles,
            edges,
            elem_edges,
            elem_signs,
            geometry,
            patches: Vec::new(),
        };
        mesh.patches = mesh.build_patches();
        Ok(mesh)
    }

    fn build_patches(&self) -> Vec<VertexPatch> {
        let nv = self.vertices.len();
        let mut elements = vec![Vec::new(); nv];
        for (k, t) in self.triangles.iter().enumerate() {
            for &v in t {
                elements[v].push(k);
            }
        }
        let mut class = vec![VertexClass::Interior; nv];
        for e in self.edges.iter() {
            match e.label {
                Some(BoundaryLabel::Dirichlet) => {
                    for &v in &e.vertices {
                        class[v] = VertexClass::Dirichlet;
                    }
                }
                Some(BoundaryLabel::Neumann) => {
                    for &v in &e.vertices {
                        if class[v] == VertexClass::Interior {
                            class[v] = VertexClass::Neumann;
                        }
                    }
                }
                None => {}
            }
        }
        let mut free_edges = vec![Vec::new(); nv];
        let mut dirichlet_edges = vec![Vec::new(); nv];
        for (i, e) in self.edges.iter().enumerate() {
            for &v in &e.vertices {
                match e.label {
                    None => free_edges[v].push(i),
                    Some(BoundaryLabel::Dirichlet) => {
                        free_edges[v].push(i);
                        dirichlet_edges[v].push(i);
                    }
                    Some(BoundaryLabel::Neumann) => {}
                }
            }
        }
        (0..nv)
            .map(|v| VertexPatch {
                vertex: v,
                class: class[v],
                elements: std::mem::take(&mut elements[v]),
                free_edges: std::mem::take(&mut free_edges[v]),
                dirichlet_edges: std::mem::take(&mut dirichlet_edges[v]),
            })
            .collect()
    }

    /// Uniform `n × n` grid on `[x0, x1] × [y0, y1]`, each cell split along
    /// its `(i, j) → (i+1, j+1)` diagonal.
    pub fn structured(n: usize, domain: [[f64; 2]; 2], rule: &BoundaryRule) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("structured mesh needs n >= 1".into()));
        }
        let [[x0, y0], [x1, y1]] = domain;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidArgument(format!("empty domain {domain:?}")));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([
                    x0 + (x1 - x0) * i as f64 / n as f64,
                    y0 + (y1 - y0) * j as f64 / n as f64,
                ]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let labels = label_boundary(&vertices, &triangles, rule);
        Mesh::new(vertices, triangles, &labels)
    }

    /// Unit square `[0, 1]²` with `n` cells per side.
    pub fn unit_square(n: usize, rule: &BoundaryRule) -> Result<Self> {
        Mesh::structured(n, [[0.0, 0.0], [1.0, 1.0]], rule)
    }

    /// L-shaped domain `[-1, 1]² \ (0, 1] × [-1, 0)` with `n` cells per unit
    /// length; the reentrant corner is the vertex at the origin.
    pub fn lshape(n: usize, rule: &BoundaryRule) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("L-shape mesh needs n >= 1".into()));
        }
        let m = 2 * n;
        let coord = |i: usize| -1.0 + i as f64 / n as f64;
        let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
        let mut vertices = Vec::new();
        for j in 0..=m {
            for i in 0..=m {
                // drop vertices strictly inside the removed quadrant
                if i > n && j < n {
                    continue;
                }
                index[j * (m + 1) + i] = vertices.len();
                vertices.push([coord(i), coord(j)]);
            }
        }
        let idx = |i: usize, j: usize| index[j * (m + 1) + i];
        let mut triangles = Vec::new();
        for j in 0..m {
            for i in 0..m {
                if i >= n && j < n {
                    continue;
                }
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let labels = label_boundary(&vertices, &triangles, rule);
        Mesh::new(vertices, triangles, &labels)
    }

    /// One-element mesh of the triangle `vertices` with every edge labeled `label`.
    pub fn single_triangle(vertices: [[f64; 2]; 3], label: BoundaryLabel) -> Result<Self> {
        let labels = [[0, 1], [1, 2], [0, 2]].into_iter().map(|e| (e, label)).collect();
        Mesh::new(vertices.to_vec(), vec![[0, 1, 2]], &labels)
    }

    /// The reference triangle `(0,0), (1,0), (0,1)` as a Dirichlet mesh.
    pub fn reference_triangle() -> Self {
        Mesh::single_triangle(crate::basis::REF_VERTICES, BoundaryLabel::Dirichlet)
            .expect("reference triangle is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Mesh::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut labels = BTreeMap::new();
        for b in &file.boundary {
            let key = sorted(b.edge[0], b.edge[1]);
            if labels.insert(key, b.label).is_some() {
                return Err(Error::MeshValidation(format!("edge {key:?} labelled twice")));
            }
        }
        Mesh::new(file.vertices, file.triangles, &labels)
    }

    pub fn to_json(&self) -> String {
        let boundary = self
            .edges
            .iter()
            .filter_map(|e| {
                e.label.map(|label| BoundaryEntry {
                    edge: e.vertices,
                    label,
                })
            })
            .collect();
        let file = MeshFile {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary,
        };
        serde_json::to_string(&file).expect("mesh serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Red refinement: every triangle is split into four similar children.
    pub fn refine_uniform(&self) -> Mesh {
        self.refine_with_parents().0
    }

    /// Red refinement, also returning the parent of every child triangle.
    pub fn refine_with_parents(&self) -> (Mesh, Vec<usize>) {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        for e in &self.edges {
            let (p, q) = (self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut parents = Vec::with_capacity(4 * self.triangles.len());
        for (k, t) in self.triangles.iter().enumerate() {
            // m[e] is the midpoint of the edge opposite local vertex e
            let m = self.elem_edges[k].map(|e| nv + e);
            triangles.push([t[0], m[2], m[1]]);
            triangles.push([m[2], t[1], m[0]]);
            triangles.push([m[1], m[0], t[2]]);
            triangles.push([m[0], m[1], m[2]]);
            parents.extend([k; 4]);
        }
        let mut labels = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            if let Some(l) = e.label {
                labels.insert(sorted(e.vertices[0], nv + i), l);
                labels.insert(sorted(nv + i, e.vertices[1]), l);
            }
        }
        let mesh = Mesh::new(vertices, triangles, &labels)
            .expect("red refinement of a valid mesh is valid");
        (mesh, parents)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Global edge indices of the three local edges of element `k`.
    pub fn element_edges(&self, k: usize) -> [usize; 3] {
        self.elem_edges[k]
    }

    /// Orientation signs of the three local edges of element `k`.
    pub fn element_signs(&self, k: usize) -> [f64; 3] {
        self.elem_signs[k]
    }

    pub fn geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    pub fn patches(&self) -> &[VertexPatch] {
        &self.patches
    }

    pub fn patch(&self, a: usize) -> &VertexPatch {
        &self.patches[a]
    }

    /// Local index of global vertex `a` in element `k`, if any.
    pub fn local_vertex(&self, k: usize, a: usize) -> Option<usize> {
        self.triangles[k].iter().position(|&v| v == a)
    }

    pub fn h(&self, k: usize) -> f64 {
        self.geometry[k].diameter()
    }

    pub fn h_max(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.h(k)).fold(0.0, f64::max)
    }

    /// Shape-regularity parameter `max_K h_K / ϱ_K`.
    pub fn kappa(&self) -> f64 {
        self.geometry
            .iter()
            .map(|g| g.diameter() / g.inscribed_diameter())
            .fold(0.0, f64::max)
    }

    /// Diameter of the domain (largest vertex distance).
    pub fn domain_diameter(&self) -> f64 {
        let hull_candidates: Vec<[f64; 2]> = self
            .edges
            .iter()
            .filter(|e| e.is_boundary())
            .flat_map(|e| e.vertices)
            .map(|v| self.vertices[v])
            .collect();
        let mut d: f64 = 0.0;
        for (i, p) in hull_candidates.iter().enumerate() {
            for q in &hull_candidates[i + 1..] {
                d = d.max(dist(*p, *q));
            }
        }
        d
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    pub fn has_neumann(&self) -> bool {
        self.edges.iter().any(|e| e.label == Some(BoundaryLabel::Neumann))
    }

    pub fn has_dirichlet(&self) -> bool {
        self.edges.iter().any(|e| e.label == Some(BoundaryLabel::Dirichlet))
    }

    /// Value of the hat function of vertex `a` at reference point `xh` of element `k`.
    pub fn hat(&self, a: usize, k: usize, xh: [f64; 2]) -> f64 {
        match self.local_vertex(k, a) {
            Some(l) => ElementGeometry::barycentric(xh)[l],
            None => 0.0,
        }
    }

    /// Gradient of the hat function of vertex `a` on element `k`.
    pub fn hat_gradient(&self, a: usize, k: usize) -> [f64; 2] {
        match self.local_vertex(k, a) {
            Some(l) => self.geometry[k].barycentric_gradients()[l],
            None => [0.0, 0.0],
        }
    }

    /// Returns a copy with every boundary edge relabelled by `rule`.
    pub fn relabel(&self, rule: &BoundaryRule) -> Result<Mesh> {
        let labels = label_boundary(&self.vertices, &self.triangles, rule);
        Mesh::new(self.vertices.clone(), self.triangles.clone(), &labels)
    }

    /// Returns a copy labelled from a JSON list of `{"edge": [a, b], "label": ...}`
    /// entries, which must cover every boundary edge.
    pub fn relabel_from_json(&self, text: &str) -> Result<Mesh> {
        let entries: Vec<BoundaryEntry> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut labels = BTreeMap::new();
        for b in entries {
            let key = sorted(b.edge[0], b.edge[1]);
            if labels.insert(key, b.label).is_some() {
                return Err(Error::MeshValidation(format!("edge {key:?} labelled twice")));
            }
        }
        Mesh::new(self.vertices.clone(), self.triangles.clone(), &labels)
    }

    /// Label statistics, summarised for `mesh inspect`.
    pub fn summary(&self) -> MeshSummary {
        let count = |l| self.edges.iter().filter(|e| e.label == Some(l)).count();
        MeshSummary {
            vertices: self.num_vertices(),
            edges: self.num_edges(),
            triangles: self.num_elements(),
            dirichlet_edges: count(BoundaryLabel::Dirichlet),
            neumann_edges: count(BoundaryLabel::Neumann),
            h_max: self.h_max(),
            kappa: self.kappa(),
            euler_characteristic: self.euler_characteristic(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub edges: usize,
    pub triangles: usize,
    pub dirichlet_edges: usize,
    pub neumann_edges: usize,
    pub h_max: f64,
    pub kappa: f64,
    pub euler_characteristic: i64,
}

fn sorted(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn label_boundary(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    rule: &BoundaryRule,
) -> BTreeMap<[usize; 2], BoundaryLabel> {
    let mut count: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    for t in triangles {
        for e in 0..3 {
            let (a, b) = local_edge_vertices(e);
            *count.entry(sorted(t[a], t[b])).or_default() += 1;
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in vertices {
        for c in 0..2 {
            lo[c] = lo[c].min(v[c]);
            hi[c] = hi[c].max(v[c]);
        }
    }
    let tol = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let on_side = |p: [f64; 2], q: [f64; 2], side: Side| {
        let (c, target) = match side {
            Side::Left => (0, lo[0]),
            Side::Right => (0, hi[0]),
            Side::Bottom => (1, lo[1]),
            Side::Top => (1, hi[1]),
        };
        (p[c] - target).abs() <= tol && (q[c] - target).abs() <= tol
    };
    count
        .into_iter()
        .filter(|&(_, c)| c == 1)
        .map(|(key, _)| {
            let label = match rule {
                BoundaryRule::AllDirichlet => BoundaryLabel::Dirichlet,
                BoundaryRule::AllNeumann => BoundaryLabel::Neumann,
                BoundaryRule::NeumannSides(sides) => {
                    let (p, q) = (vertices[key[0]], vertices[key[1]]);
                    if sides.iter().any(|&s| on_side(p, q, s)) {
                        BoundaryLabel::Neumann
                    } else {
                        BoundaryLabel::Dirichlet
                    }
                }
            };
            (key, label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_counts() {
        let m = Mesh::unit_square(1, &BoundaryRule::AllDirichlet).unwrap();
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_elements()), (4, 5, 2));
        let m = Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap();
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_elements()), (9, 16, 8));
        for n in 1..6 {
            let m = Mesh::unit_square(n, &BoundaryRule::AllDirichlet).unwrap();
            assert_eq!(m.euler_characteristic(), 1);
        }
        assert!(matches!(
            Mesh::unit_square(0, &BoundaryRule::AllDirichlet),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn center_patch_of_two_by_two_mesh() {
        // Cells (0,0) and (1,1) put both of their triangles at the centre,
        // cells (1,0) and (0,1) one each: 6 triangles in total.
        let m = Mesh::unit_square(2, &BoundaryRule::AllDirichlet).unwrap();
        let c = m.patch(4);
        assert_eq!(m.vertices()[4], [0.5, 0.5]);
        assert_eq!(c.class, VertexClass::Interior);
        assert_eq!(c.elements.len(), 6);
        assert_eq!(c.free_edges.len(), 6);
        assert_eq!(m.patch(0).class, VertexClass::Dirichlet);
        let total: usize = m.patches().iter().map(|p| p.elements.len()).sum();
        assert_eq!(total, 3 * m.num_elements());
    }

    #[test]
    fn interface_vertices_are_dirichlet() {
        let m = Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Left])).unwrap();
        assert_eq!(m.patch(0).class, VertexClass::Dirichlet);
        assert_eq!(m.patch(3).class, VertexClass::Neumann);
        assert_eq!(m.patch(3).dirichlet_edges.len(), 0);
        let m = Mesh::unit_square(2, &BoundaryRule::AllNeumann).unwrap();
        assert!(m.patches().iter().all(|p| p.class != VertexClass::Dirichlet));
    }

    #[test]
    fn orientation_signs_are_opposite_on_interior_edges() {
        let m = Mesh::lshape(2, &BoundaryRule::AllDirichlet).unwrap();
        for e in m.edges() {
            if e.elements.len() == 2 {
                let s: Vec<f64> = e
                    .elements
                    .iter()
                    .map(|&(k, l)| m.element_signs(k)[l])
                    .collect();
                assert_eq!(s[0], -s[1]);
            }
        }
    }

    #[test]
    fn refinement_is_similar_and_nested() {
        let m = Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Top])).unwrap();
        let (r, parents) = m.refine_with_parents();
        assert_eq!(r.num_elements(), 4 * m.num_elements());
        assert_eq!(r.h_max(), 0.5 * m.h_max());
        assert!((r.kappa() - m.kappa()).abs() < 1e-12 * m.kappa());
        assert_eq!(r.summary().neumann_edges, 2 * m.summary().neumann_edges);
        for (c, &k) in parents.iter().enumerate() {
            let g = m.geometry(k);
            for &v in &r.triangles()[c] {
                let xh = g.inverse_map(r.vertices()[v]);
                let l = ElementGeometry::barycentric(xh);
                assert!(l.iter().all(|&b| b >= -1e-14));
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = Mesh::lshape(2, &BoundaryRule::NeumannSides(vec![Side::Left])).unwrap();
        let text = m.to_json();
        let back = Mesh::from_json(&text).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn validation_errors() {
        let unlabeled = r#"{"vertices":[[0,0],[1,0],[0,1]],"triangles":[[0,1,2]],
            "boundary":[{"edge":[0,1],"label":"dirichlet"},{"edge":[1,2],"label":"dirichlet"}]}"#;
        assert!(matches!(Mesh::from_json(unlabeled), Err(Error::MeshValidation(_))));
        let flat = r#"{"vertices":[[0,0],[1,0],[2,0]],"triangles":[[0,1,2]],"boundary":[]}"#;
        assert!(matches!(Mesh::from_json(flat), Err(Error::MeshValidation(_))));
        // Triangle 0-1-2 has vertex 3 on its edge 0-1; the other side is split.
        let hanging = r#"{"vertices":[[0,0],[2,0],[1,1],[1,0],[1,-1]],
            "triangles":[[0,1,2],[0,4,3],[3,4,1]],
            "boundary":[{"edge":[1,2],"label":"dirichlet"},{"edge":[0,2],"label":"dirichlet"},
            {"edge":[0,4],"label":"dirichlet"},{"edge":[1,4],"label":"dirichlet"},
            {"edge":[0,1],"label":"dirichlet"},{"edge":[0,3],"label":"dirichlet"},{"edge":[1,3],"label":"dirichlet"}]}"#;
        assert!(matches!(Mesh::from_json(hanging), Err(Error::MeshValidation(_))));
        assert!(matches!(Mesh::from_json("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn lshape_has_corner_vertex() {
        let m = Mesh::lshape(2, &BoundaryRule::AllDirichlet).unwrap();
        assert_eq!(m.num_elements(), 3 * 2 * 4);
        assert_eq!(m.euler_characteristic(), 1);
        assert!(m.vertices().contains(&[0.0, 0.0]));
        assert!((m.domain_diameter() - 8f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn boundary_rules_parse_and_label_files_roundtrip() {
        assert_eq!("all-dirichlet".parse::<BoundaryRule>().unwrap(), BoundaryRule::AllDirichlet);
        assert_eq!(
            "neumann:left, top".parse::<BoundaryRule>().unwrap(),
            BoundaryRule::NeumannSides(vec![Side::Left, Side::Top])
        );
        assert!("neumann:up".parse::<BoundaryRule>().is_err());
        let m = Mesh::unit_square(2, &BoundaryRule::NeumannSides(vec![Side::Left])).unwrap();
        let plain = m.relabel(&BoundaryRule::AllDirichlet).unwrap();
        let entries: Vec<String> = m
            .edges()
            .iter()
            .filter_map(|e| {
                let label = serde_json::to_string(&e.label?).unwrap();
                Some(format!("{{\"edge\":[{},{}],\"label\":{label}}}", e.vertices[1], e.vertices[0]))
            })
            .collect();
        let back = plain.relabel_from_json(&format!("[{}]", entries.join(","))).unwrap();
        assert_eq!(back.summary().neumann_edges, m.summary().neumann_edges);
        assert!(plain.relabel_from_json("[]").is_err());
    }
}
