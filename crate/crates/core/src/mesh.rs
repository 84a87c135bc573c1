//! Structured triangulations of the unit disk and boundary electrode layouts.
//!
//! The base mesh is a centre node surrounded by two concentric rings (8 nodes
//! at radius 0.5, 16 nodes on the unit circle), giving 32 triangles. Every
//! refinement level splits each triangle into four through its edge
//! midpoints; midpoints of boundary edges are pushed back onto the unit
//! circle so the polygonal boundary converges to the circle.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

/// Largest supported refinement level.
pub const MAX_REFINEMENT: u32 = 8;

/// Default electrode coverage (fraction of the circumference under electrodes).
pub const DEFAULT_COVERAGE: f64 = 0.5;

/// Default contact impedance assigned to every electrode.
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("refinement level {0} out of range (max {MAX_REFINEMENT})")]
    RefinementOutOfRange(u32),
    #[error("triangle {0} has non-positive signed area {1:e}")]
    Orientation(usize, f64),
    #[error("node {0} lies outside the unit disk (radius {1})")]
    OutsideDisk(usize, f64),
    #[error("nodes {0} and {1} coincide")]
    DuplicateNode(usize, usize),
    #[error("edge ({0}, {1}) is shared by {2} triangles")]
    DanglingEdge(usize, usize, usize),
    #[error("boundary edge list disagrees with triangle connectivity: {0}")]
    BoundaryMismatch(String),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("too few boundary edges ({edges}) for {electrodes} electrodes (need at least {needed})")]
    TooFewBoundaryEdges {
        edges: usize,
        electrodes: usize,
        needed: usize,
    },
    #[error("invalid electrode layout: {0}")]
    InvalidLayout(String),
    #[error("mesh file: {0}")]
    Format(String),
    #[error("mesh file i/o: {0}")]
    Io(String),
}

/// A conforming triangulation of the unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node-index triples.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges ordered counter-clockwise around the circle, each
    /// oriented with the domain on its left.
    pub boundary_edges: Vec<[usize; 2]>,
}

impl TriMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn tri_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.tri_count()).map(|t| self.signed_area(t)).sum()
    }

    pub fn edge_length(&self, e: [usize; 2]) -> f64 {
        let p = self.nodes[e[0]];
        let q = self.nodes[e[1]];
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    /// Checks orientation, disk containment, duplicate nodes and edge
    /// manifoldness, and that `boundary_edges` is exactly the set of edges
    /// with a single incident triangle.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.node_count();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange(bad));
            }
            let area = self.signed_area(t);
            if area <= 0.0 {
                return Err(MeshError::Orientation(t, area));
            }
        }
        for (i, p) in self.nodes.iter().enumerate() {
            let r = p[0].hypot(p[1]);
            if r > 1.0 + 1e-9 {
                return Err(MeshError::OutsideDisk(i, r));
            }
        }
        // Duplicate detection on a quantized grid.
        let mut seen: HashMap<(i64, i64), usize> = HashMap::with_capacity(n);
        for (i, p) in self.nodes.iter().enumerate() {
            let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
            if let Some(&j) = seen.get(&key) {
                return Err(MeshError::DuplicateNode(j, i));
            }
            seen.insert(key, i);
        }

        let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *edge_use.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edge_use {
            if count > 2 {
                return Err(MeshError::DanglingEdge(a, b, count));
            }
        }
        let mut boundary_from_tris: Vec<(usize, usize)> = edge_use
            .iter()
            .filter(|(_, &c)| c == 1)
            .map(|(&k, _)| k)
            .collect();
        boundary_from_tris.sort_unstable();
        let mut listed: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|e| edge_key(e[0], e[1]))
            .collect();
        listed.sort_unstable();
        if listed != boundary_from_tris {
            return Err(MeshError::BoundaryMismatch(format!(
                "{} listed vs {} single-use edges",
                listed.len(),
                boundary_from_tris.len()
            )));
        }
        Ok(())
    }

    /// Serializes the mesh in the plain-text exchange format:
    /// `nodes N tris T edges E`, then N coordinate rows, T triangle rows and
    /// E boundary-edge rows (0-based indices).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {} tris {} edges {}",
            self.node_count(),
            self.tri_count(),
            self.boundary_edges.len()
        );
        for p in &self.nodes {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(out, "{} {}", e[0], e[1]);
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), MeshError> {
        w.write_all(self.to_text().as_bytes())
            .map_err(|e| MeshError::Io(e.to_string()))
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self, MeshError> {
        let mut lines = BufReader::new(r).lines();
        let mut next_line = |what: &str| -> Result<String, MeshError> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(MeshError::Io(e.to_string())),
                None => Err(MeshError::Format(format!("unexpected end of file reading {what}"))),
            }
        };
        let header = next_line("header")?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 6 || tok[0] != "nodes" || tok[2] != "tris" || tok[4] != "edges" {
            return Err(MeshError::Format(format!("bad header line {header:?}")));
        }
        let parse_count = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| MeshError::Format(format!("bad count {s:?}")))
        };
        let (nn, nt, ne) = (parse_count(tok[1])?, parse_count(tok[3])?, parse_count(tok[5])?);

        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let l = next_line("node")?;
            let v = parse_row::<f64>(&l, 2)?;
            nodes.push([v[0], v[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = next_line("triangle")?;
            let v = parse_row::<usize>(&l, 3)?;
            triangles.push([v[0], v[1], v[2]]);
        }
        let mut boundary_edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            let l = next_line("edge")?;
            let v = parse_row::<usize>(&l, 2)?;
            boundary_edges.push([v[0], v[1]]);
        }
        let mesh = TriMesh {
            nodes,
            triangles,
            boundary_edges,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

fn parse_row<T: std::str::FromStr>(line: &str, n: usize) -> Result<Vec<T>, MeshError> {
    let v: Vec<T> = line
        .split_whitespace()
        .map(|s| s.parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| MeshError::Format(format!("unparseable row {line:?}")))?;
    if v.len() != n {
        return Err(MeshError::Format(format!(
            "expected {n} values, found {} in {line:?}",
            v.len()
        )));
    }
    Ok(v)
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn base_mesh() -> TriMesh {
    const INNER: usize = 8;
    const OUTER: usize = 16;
    let mut nodes = vec![[0.0, 0.0]];
    for k in 0..INNER {
        let th = 2.0 * PI * k as f64 / INNER as f64;
        nodes.push([0.5 * th.cos(), 0.5 * th.sin()]);
    }
    for k in 0..OUTER {
        let th = 2.0 * PI * k as f64 / OUTER as f64;
        nodes.push([th.cos(), th.sin()]);
    }
    let inner = |k: usize| 1 + (k % INNER);
    let outer = |k: usize| 1 + INNER + (k % OUTER);

    let mut triangles = Vec::with_capacity(32);
    for k in 0..INNER {
        triangles.push([0, inner(k), inner(k + 1)]);
    }
    for k in 0..INNER {
        let (a, b) = (inner(k), inner(k + 1));
        let (p, q, s) = (outer(2 * k), outer(2 * k + 1), outer(2 * k + 2));
        triangles.push([a, p, q]);
        triangles.push([a, q, b]);
        triangles.push([b, q, s]);
    }
    let boundary_edges = (0..OUTER).map(|k| [outer(k), outer(k + 1)]).collect();
    TriMesh {
        nodes,
        triangles,
        boundary_edges,
    }
}

/// Builds the structured disk mesh at the given refinement level. Level `r`
/// has `32 * 4^r` triangles and `16 * 2^r` boundary edges.
pub fn build_disk_mesh(refinement: u32) -> Result<TriMesh, MeshError> {
    if refinement > MAX_REFINEMENT {
        return Err(MeshError::RefinementOutOfRange(refinement));
    }
    let mut mesh = base_mesh();
    for _ in 0..refinement {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

/// Splits every triangle into four through its edge midpoints. Parent nodes
/// keep their indices; boundary midpoints are projected onto the unit circle.
pub fn refine_uniform(mesh: &TriMesh) -> TriMesh {
    let mut nodes = mesh.nodes.clone();
    let mut boundary: HashMap<(usize, usize), ()> = HashMap::new();
    for e in &mesh.boundary_edges {
        boundary.insert(edge_key(e[0], e[1]), ());
    }
    let mut midpoint: HashMap<(usize, usize), usize> =
        HashMap::with_capacity(mesh.tri_count() * 3 / 2 + mesh.boundary_edges.len());

    let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        let key = edge_key(a, b);
        if let Some(&m) = midpoint.get(&key) {
            return m;
        }
        let (p, q) = (nodes[a], nodes[b]);
        let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        if boundary.contains_key(&key) {
            let r = m[0].hypot(m[1]);
            m = [m[0] / r, m[1] / r];
        }
        nodes.push(m);
        let idx = nodes.len() - 1;
        midpoint.insert(key, idx);
        idx
    };

    // Boundary first so the refined boundary ordering is easy to rebuild.
    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = mid(e[0], e[1], &mut nodes);
        boundary_edges.push([e[0], m]);
        boundary_edges.push([m, e[1]]);
    }
    let mut triangles = Vec::with_capacity(4 * mesh.tri_count());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut nodes);
        let bc = mid(b, c, &mut nodes);
        let ca = mid(c, a, &mut nodes);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    TriMesh {
        nodes,
        triangles,
        boundary_edges,
    }
}

/// Triangle centroids (vertex means), one per triangle.
pub fn centroids(mesh: &TriMesh) -> Vec<[f64; 2]> {
    mesh.triangles
        .iter()
        .map(|&[a, b, c]| {
            let (p, q, r) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
            [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
        })
        .collect()
}

/// Boundary electrodes as contiguous runs of boundary edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    /// For each electrode, indices into `TriMesh::boundary_edges`, in
    /// counter-clockwise order.
    pub electrode_edges: Vec<Vec<usize>>,
    pub contact_impedances: Vec<f64>,
    /// Angular centre of each electrode.
    pub centers: Vec<f64>,
}

impl ElectrodeLayout {
    pub fn count(&self) -> usize {
        self.electrode_edges.len()
    }

    /// Arc length (sum of edge lengths) of each electrode.
    pub fn lengths(&self, mesh: &TriMesh) -> Vec<f64> {
        self.electrode_edges
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .map(|&e| mesh.edge_length(mesh.boundary_edges[e]))
                    .sum()
            })
            .collect()
    }

    pub fn with_contact_impedance(mut self, z: f64) -> Self {
        self.contact_impedances = vec![z; self.count()];
        self
    }

    /// Checks disjointness, contiguity, positivity of impedances and the
    /// presence of insulating gaps.
    pub fn validate(&self, mesh: &TriMesh) -> Result<(), MeshError> {
        let nb = mesh.boundary_edges.len();
        if self.contact_impedances.len() != self.count() {
            return Err(MeshError::InvalidLayout("impedance count mismatch".into()));
        }
        if self.contact_impedances.iter().any(|&z| !(z > 0.0)) {
            return Err(MeshError::InvalidLayout("non-positive contact impedance".into()));
        }
        let mut owner = vec![usize::MAX; nb];
        for (l, edges) in self.electrode_edges.iter().enumerate() {
            if edges.is_empty() {
                return Err(MeshError::InvalidLayout(format!("electrode {l} is empty")));
            }
            for w in edges.windows(2) {
                if (w[0] + 1) % nb != w[1] {
                    return Err(MeshError::InvalidLayout(format!(
                        "electrode {l} is not contiguous"
                    )));
                }
            }
            for &e in edges {
                if e >= nb {
                    return Err(MeshError::IndexOutOfRange(e));
                }
                if owner[e] != usize::MAX {
                    return Err(MeshError::InvalidLayout(format!(
                        "edge {e} shared by electrodes {} and {l}",
                        owner[e]
                    )));
                }
                owner[e] = l;
            }
        }
        if owner.iter().all(|&o| o != usize::MAX) {
            return Err(MeshError::InvalidLayout("no insulating gap".into()));
        }
        Ok(())
    }
}

/// Places `count` equally spaced electrodes, the first centred at angle 0.
pub fn assign_electrodes(
    mesh: &TriMesh,
    count: usize,
    coverage: f64,
) -> Result<ElectrodeLayout, MeshError> {
    assign_electrodes_rotated(mesh, count, coverage, 0.0)
}

/// Places `count` equally spaced electrodes, electrode `l` centred at
/// `start_angle + 2πl/count`, each spanning `coverage/count` of the
/// circumference. An edge belongs to an electrode when its midpoint angle
/// falls inside the electrode's arc.
pub fn assign_electrodes_rotated(
    mesh: &TriMesh,
    count: usize,
    coverage: f64,
    start_angle: f64,
) -> Result<ElectrodeLayout, MeshError> {
    let nb = mesh.boundary_edges.len();
    if count == 0 {
        return Err(MeshError::InvalidLayout("electrode count must be positive".into()));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(MeshError::InvalidLayout(format!(
            "coverage {coverage} outside (0, 1)"
        )));
    }
    if nb < 4 * count {
        return Err(MeshError::TooFewBoundaryEdges {
            edges: nb,
            electrodes: count,
            needed: 4 * count,
        });
    }
    let half_width = PI * coverage / count as f64;
    let mid_angles: Vec<f64> = mesh
        .boundary_edges
        .iter()
        .map(|&[a, b]| {
            let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
            (p[1] + q[1]).atan2(p[0] + q[0])
        })
        .collect();

    let mut electrode_edges = Vec::with_capacity(count);
    let mut centers = Vec::with_capacity(count);
    for l in 0..count {
        let center = start_angle + 2.0 * PI * l as f64 / count as f64;
        let inside: Vec<usize> = (0..nb)
            .filter(|&e| {
                let d = wrap_angle(mid_angles[e] - center);
                (-half_width..half_width).contains(&d)
            })
            .collect();
        if inside.is_empty() {
            return Err(MeshError::InvalidLayout(format!(
                "electrode {l} covers no boundary edge"
            )));
        }
        electrode_edges.push(rotate_to_contiguous(inside, nb));
        centers.push(wrap_angle(center));
    }
    let layout = ElectrodeLayout {
        electrode_edges,
        contact_impedances: vec![DEFAULT_CONTACT_IMPEDANCE; count],
        centers,
    };
    layout.validate(mesh)?;
    Ok(layout)
}

/// Wraps an angle into [-π, π).
pub(crate) fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

// Edge indices of an arc that straddles index 0 come out of the filter as
// [0, 1, .., nb-2, nb-1]; rotate so the run starts at its first edge.
fn rotate_to_contiguous(mut edges: Vec<usize>, nb: usize) -> Vec<usize> {
    edges.sort_unstable();
    if let Some(split) = edges.windows(2).position(|w| w[1] != w[0] + 1) {
        edges.rotate_left(split + 1);
    }
    debug_assert!(edges.windows(2).all(|w| (w[0] + 1) % nb == w[1]));
    edges
}

/// Nodes touched by each electrode's edges, sorted and deduplicated.
pub fn electrode_nodes(mesh: &TriMesh, layout: &ElectrodeLayout) -> Vec<Vec<usize>> {
    layout
        .electrode_edges
        .iter()
        .map(|edges| {
            let mut v: Vec<usize> = edges
                .iter()
                .flat_map(|&e| mesh.boundary_edges[e])
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_mesh_is_valid() {
        let m = build_disk_mesh(0).unwrap();
        assert_eq!(m.tri_count(), 32);
        assert!(m.tri_count() >= 8);
        m.validate().unwrap();
    }

    #[test]
    fn refinement_levels_valid_and_quadruple() {
        let mut prev = build_disk_mesh(0).unwrap();
        for _ in 1..=6 {
            let next = refine_uniform(&prev);
            next.validate().unwrap();
            assert_eq!(next.tri_count(), 4 * prev.tri_count());
            assert_eq!(&next.nodes[..prev.node_count()], &prev.nodes[..]);
            let (e_prev, e_next) = (
                (prev.total_area() - PI).abs(),
                (next.total_area() - PI).abs(),
            );
            assert!(e_next < e_prev);
            prev = next;
        }
    }

    #[test]
    fn desk_scale_area_close_to_pi() {
        let m = build_disk_mesh(3).unwrap();
        assert!((2000..=3000).contains(&m.tri_count()));
        let area = m.total_area();
        assert!((area - PI).abs() / PI < 0.01, "area {area}");
    }

    #[test]
    fn interior_children_preserve_area() {
        let m = build_disk_mesh(1).unwrap();
        let r = refine_uniform(&m);
        // Child t*4..t*4+4 come from parent t; interior parents keep area.
        let on_boundary: std::collections::HashSet<usize> =
            m.boundary_edges.iter().flatten().copied().collect();
        for t in 0..m.tri_count() {
            let tri = m.triangles[t];
            let boundary_pair = (0..3).any(|k| {
                on_boundary.contains(&tri[k]) && on_boundary.contains(&tri[(k + 1) % 3])
            });
            if boundary_pair {
                continue;
            }
            let child: f64 = (0..4).map(|c| r.signed_area(4 * t + c)).sum();
            assert!((child - m.signed_area(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn refinement_out_of_range() {
        assert_eq!(
            build_disk_mesh(9).unwrap_err(),
            MeshError::RefinementOutOfRange(9)
        );
    }

    #[test]
    fn centroid_of_unit_right_triangle() {
        let m = TriMesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![],
        };
        let c = centroids(&m);
        assert!((c[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c[0][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn centroids_inside_disk() {
        let m = build_disk_mesh(3).unwrap();
        let c = centroids(&m);
        assert_eq!(c.len(), m.tri_count());
        assert!(c.iter().all(|p| p[0].hypot(p[1]) < 1.0));
    }

    #[test]
    fn sixteen_electrodes_half_coverage() {
        let m = build_disk_mesh(3).unwrap();
        let layout = assign_electrodes(&m, 16, 0.5).unwrap();
        assert_eq!(layout.count(), 16);
        let lengths = layout.lengths(&m);
        let expected = 2.0 * PI * 0.5 / 16.0;
        for len in lengths {
            assert!((len - expected).abs() / expected < 0.02, "{len}");
        }
        let used: usize = layout.electrode_edges.iter().map(Vec::len).sum();
        assert!(used < m.boundary_edges.len());
    }

    #[test]
    fn single_quarter_electrode() {
        let m = build_disk_mesh(2).unwrap();
        let layout = assign_electrodes(&m, 1, 0.25).unwrap();
        let len = layout.lengths(&m)[0];
        assert!((len - PI / 2.0).abs() < 0.05, "{len}");
    }

    #[test]
    fn wrapping_electrode_is_contiguous() {
        let m = build_disk_mesh(2).unwrap();
        let layout = assign_electrodes(&m, 4, 0.5).unwrap();
        // Electrode 0 is centred on angle 0, which straddles the edge list start.
        let e0 = &layout.electrode_edges[0];
        let nb = m.boundary_edges.len();
        assert!(e0.windows(2).all(|w| (w[0] + 1) % nb == w[1]));
    }

    #[test]
    fn rotation_keeps_arc_lengths() {
        let m = build_disk_mesh(3).unwrap();
        let h = m.edge_length(m.boundary_edges[0]);
        let base = assign_electrodes(&m, 16, 0.5).unwrap().lengths(&m);
        let step = 2.0 * PI / m.boundary_edges.len() as f64;
        let rotated = assign_electrodes_rotated(&m, 16, 0.5, step)
            .unwrap()
            .lengths(&m);
        for (a, b) in base.iter().zip(&rotated) {
            assert!((a - b).abs() <= h + 1e-12);
        }
    }

    #[test]
    fn too_few_edges_rejected() {
        let m = build_disk_mesh(0).unwrap();
        assert!(matches!(
            assign_electrodes(&m, 16, 0.5),
            Err(MeshError::TooFewBoundaryEdges { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let m = build_disk_mesh(2).unwrap();
        let text = m.to_text();
        assert!(text.starts_with(&format!(
            "nodes {} tris {} edges {}\n",
            m.node_count(),
            m.tri_count(),
            m.boundary_edges.len()
        )));
        let back = TriMesh::read_text(text.as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_text_rejected() {
        let m = build_disk_mesh(1).unwrap();
        let text = m.to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            TriMesh::read_text(cut.as_bytes()),
            Err(MeshError::Format(_))
        ));
    }
}
