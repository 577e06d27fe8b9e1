//! Triangle meshes of a rectangular tissue cross-section.
//!
//! Meshes are generated as a jittered structured grid that is then made Delaunay by
//! Lawson edge flips. Boundary nodes stay on the rectangle edges. Elements are stored
//! counter-clockwise.
//!
//! Coordinates follow the elastography convention used throughout the crate: `x` is the
//! lateral direction and `y` the axial one, with `y = 0` at the bottom of the domain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MAX_JITTER_RETRIES: usize = 5;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate triangulation after {retries} jitter reductions (last jitter {jitter})")]
    Degenerate { retries: usize, jitter: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("element {element} references node {node} but the mesh has {count} nodes")]
    ElementOutOfBounds {
        element: usize,
        node: usize,
        count: usize,
    },
    #[error("element {element} has zero area")]
    ZeroArea { element: usize },
    #[error("nodes {a} and {b} coincide")]
    DuplicateNode { a: usize, b: usize },
    #[error("boundary sets do not match the mesh boundary: {0}")]
    BoundaryMismatch(String),
    #[error("element index {0} out of range")]
    NoSuchElement(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named boundary node sets. Corners belong to both adjacent sides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundarySets {
    pub top: BTreeSet<usize>,
    pub bottom: BTreeSet<usize>,
    pub left: BTreeSet<usize>,
    pub right: BTreeSet<usize>,
}

impl BoundarySets {
    /// All boundary nodes, de-duplicated.
    pub fn union(&self) -> BTreeSet<usize> {
        self.top
            .iter()
            .chain(&self.bottom)
            .chain(&self.left)
            .chain(&self.right)
            .copied()
            .collect()
    }

    fn sides_of(&self, node: usize) -> Vec<&'static str> {
        let mut sides = Vec::new();
        for (name, set) in [
            ("top", &self.top),
            ("bottom", &self.bottom),
            ("left", &self.left),
            ("right", &self.right),
        ] {
            if set.contains(&node) {
                sides.push(name);
            }
        }
        sides
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary: BoundarySets,
    thickness: f64,
}

/// Parameters of [`generate_mesh`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshParams {
    pub width: f64,
    pub height: f64,
    pub target_nodes: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            width: 1.0,
            height: 1.0,
            target_nodes: 225,
            jitter: 0.2,
            seed: 0,
        }
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

/// Positive when `d` lies strictly inside the circumcircle of the CCW triangle `abc`.
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant. Clockwise elements are
    /// reoriented with a warning.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        mut elements: Vec<[usize; 3]>,
        boundary: BoundarySets,
        thickness: f64,
    ) -> Result<Self, MeshError> {
        if !(thickness > 0.0 && thickness.is_finite()) {
            return Err(MeshError::InvalidParameter(format!(
                "thickness must be positive, got {thickness}"
            )));
        }
        let count = nodes.len();
        for (e, tri) in elements.iter_mut().enumerate() {
            for &node in tri.iter() {
                if node >= count {
                    return Err(MeshError::ElementOutOfBounds {
                        element: e,
                        node,
                        count,
                    });
                }
            }
            let doubled = orient(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if doubled == 0.0 || !doubled.is_finite() {
                return Err(MeshError::ZeroArea { element: e });
            }
            if doubled < 0.0 {
                log::warn!("element {e} is clockwise; reorienting");
                tri.swap(1, 2);
            }
        }
        for set in [&boundary.top, &boundary.bottom, &boundary.left, &boundary.right] {
            if let Some(&bad) = set.iter().find(|&&n| n >= count) {
                return Err(MeshError::BoundaryMismatch(format!(
                    "boundary node {bad} does not exist"
                )));
            }
        }

        let mesh = Self {
            nodes,
            elements,
            boundary,
            thickness,
        };
        mesh.check_duplicates()?;
        mesh.check_boundary()?;
        Ok(mesh)
    }

    fn check_duplicates(&self) -> Result<(), MeshError> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            self.nodes[a][0]
                .total_cmp(&self.nodes[b][0])
                .then(self.nodes[a][1].total_cmp(&self.nodes[b][1]))
        });
        for w in order.windows(2) {
            if self.nodes[w[0]] == self.nodes[w[1]] {
                let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
                return Err(MeshError::DuplicateNode { a, b });
            }
        }
        Ok(())
    }

    fn check_boundary(&self) -> Result<(), MeshError> {
        let on_boundary: BTreeSet<usize> = self
            .boundary_edges()
            .into_iter()
            .flat_map(|(a, b)| [a, b])
            .collect();
        let tagged = self.boundary.union();
        if on_boundary != tagged {
            let missing: Vec<_> = on_boundary.difference(&tagged).take(5).collect();
            let extra: Vec<_> = tagged.difference(&on_boundary).take(5).collect();
            return Err(MeshError::BoundaryMismatch(format!(
                "untagged boundary nodes {missing:?}, tagged interior nodes {extra:?}"
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary(&self) -> &BoundarySets {
        &self.boundary
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn element_nodes(&self, element: usize) -> Result<[[f64; 2]; 3], MeshError> {
        let tri = self
            .elements
            .get(element)
            .ok_or(MeshError::NoSuchElement(element))?;
        Ok([self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]])
    }

    /// Area of an element, positive for CCW ordering.
    pub fn signed_area(&self, element: usize) -> Result<f64, MeshError> {
        let [a, b, c] = self.element_nodes(element)?;
        Ok(0.5 * orient(a, b, c))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.elements.len())
            .map(|e| self.signed_area(e).expect("valid element index"))
            .sum()
    }

    /// Number of elements sharing each undirected edge, keyed by `(min, max)` node pair.
    pub fn edge_multiplicity(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges = BTreeMap::new();
        for tri in &self.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edge_multiplicity().into_keys().collect()
    }

    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        self.edge_multiplicity()
            .into_iter()
            .filter(|&(_, count)| count == 1)
            .map(|(e, _)| e)
            .collect()
    }

    /// Elements adjacent to each node.
    pub fn node_elements(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (e, tri) in self.elements.iter().enumerate() {
            for &n in tri {
                adj[n].push(e);
            }
        }
        adj
    }

    /// Barycentric coordinates of `p` in an element.
    pub fn barycentric(&self, element: usize, p: [f64; 2]) -> [f64; 3] {
        let tri = self.elements[element];
        let [a, b, c] = [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]];
        let area = orient(a, b, c);
        [
            orient(p, b, c) / area,
            orient(a, p, c) / area,
            orient(a, b, p) / area,
        ]
    }

    /// Writes the whitespace-separated text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {} elements {} thickness {}",
            self.nodes.len(),
            self.elements.len(),
            self.thickness
        );
        for (i, p) in self.nodes.iter().enumerate() {
            let sides = self.boundary.sides_of(i);
            let tag = match sides.as_slice() {
                [] => "interior".to_string(),
                [one] => one.to_string(),
                many => format!("corner:{}", many.join("+")),
            };
            let _ = writeln!(out, "{} {} {}", p[0], p[1], tag);
        }
        for tri in &self.elements {
            let _ = writeln!(out, "{} {} {}", tri[0], tri[1], tri[2]);
        }
        out
    }

    /// Parses the text format produced by [`Mesh::to_text`].
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let parse_err = |line: usize, message: String| MeshError::Parse { line, message };

        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6
            || fields[0] != "nodes"
            || fields[2] != "elements"
            || fields[4] != "thickness"
        {
            return Err(parse_err(
                hline,
                "expected `nodes N elements M thickness T`".into(),
            ));
        }
        let n: usize = fields[1]
            .parse()
            .map_err(|e| parse_err(hline, format!("node count: {e}")))?;
        let m: usize = fields[3]
            .parse()
            .map_err(|e| parse_err(hline, format!("element count: {e}")))?;
        let thickness: f64 = fields[5]
            .parse()
            .map_err(|e| parse_err(hline, format!("thickness: {e}")))?;

        let mut nodes = Vec::with_capacity(n);
        let mut boundary = BoundarySets::default();
        for i in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(hline, format!("expected {n} node lines, found {i}")))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(ln, "expected `x y tag`".into()));
            }
            let x: f64 = f[0]
                .parse()
                .map_err(|e| parse_err(ln, format!("x coordinate: {e}")))?;
            let y: f64 = f[1]
                .parse()
                .map_err(|e| parse_err(ln, format!("y coordinate: {e}")))?;
            let sides: Vec<&str> = match f[2] {
                "interior" => vec![],
                tag if tag.starts_with("corner:") => tag["corner:".len()..].split('+').collect(),
                tag => vec![tag],
            };
            for side in sides {
                let set = match side {
                    "top" => &mut boundary.top,
                    "bottom" => &mut boundary.bottom,
                    "left" => &mut boundary.left,
                    "right" => &mut boundary.right,
                    other => return Err(parse_err(ln, format!("unknown tag `{other}`"))),
                };
                set.insert(i);
            }
            nodes.push([x, y]);
        }
        let mut elements = Vec::with_capacity(m);
        for e in 0..m {
            let (ln, line) = lines.next().ok_or_else(|| {
                parse_err(hline, format!("expected {m} element lines, found {e}"))
            })?;
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|err| parse_err(ln, format!("element indices: {err}")))?;
            if f.len() != 3 {
                return Err(parse_err(ln, "expected `i j k`".into()));
            }
            elements.push([f[0], f[1], f[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content after elements".into()));
        }
        Mesh::new(nodes, elements, boundary, thickness)
    }
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    std::fs::write(path, mesh.to_text())?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    Mesh::from_text(&std::fs::read_to_string(path)?)
}

/// Grid dimensions `(nx, ny)` whose product is closest to the target node count with
/// near-square cells.
fn grid_shape(width: f64, height: f64, target: usize) -> (usize, usize) {
    let mut best = (2, 2);
    let mut best_score = f64::INFINITY;
    for nx in 2..=target.max(2) {
        let ny = (((nx - 1) as f64) * height / width + 1.0).round().max(2.0) as usize;
        let score = (nx * ny).abs_diff(target) as f64;
        if score < best_score {
            best_score = score;
            best = (nx, ny);
        }
        if nx * 2 > target {
            break;
        }
    }
    best
}

/// Generates a jittered-grid Delaunay mesh of `[0, width] × [0, height]`.
pub fn generate_mesh(params: &MeshParams) -> Result<Mesh, MeshError> {
    let MeshParams {
        width,
        height,
        target_nodes,
        jitter,
        seed,
    } = *params;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(MeshError::InvalidParameter(format!(
            "domain must have positive size, got {width} x {height}"
        )));
    }
    if target_nodes < 4 {
        return Err(MeshError::InvalidParameter(format!(
            "need at least 4 nodes, got {target_nodes}"
        )));
    }
    if !(0.0..0.5).contains(&jitter) {
        return Err(MeshError::InvalidParameter(format!(
            "jitter must lie in [0, 0.5), got {jitter}"
        )));
    }

    let (nx, ny) = grid_shape(width, height, target_nodes);
    let mut current = jitter;
    for attempt in 0..=MAX_JITTER_RETRIES {
        if let Some(mesh) = try_jittered_grid(width, height, nx, ny, current, seed) {
            if attempt > 0 {
                log::warn!("mesh generation succeeded after reducing jitter to {current}");
            }
            return Ok(mesh);
        }
        current *= 0.5;
    }
    Err(MeshError::Degenerate {
        retries: MAX_JITTER_RETRIES,
        jitter: current,
    })
}

fn try_jittered_grid(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    jitter: f64,
    seed: u64,
) -> Option<Mesh> {
    let hx = width / (nx - 1) as f64;
    let hy = height / (ny - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(nx * ny);
    let mut boundary = BoundarySets::default();
    for j in 0..ny {
        for i in 0..nx {
            let id = j * nx + i;
            // exact edge coordinates so the boundary stays on the rectangle
            let mut x = if i == nx - 1 { width } else { i as f64 * hx };
            let mut y = if j == ny - 1 { height } else { j as f64 * hy };
            let interior = i > 0 && i < nx - 1 && j > 0 && j < ny - 1;
            if interior && jitter > 0.0 {
                x += rng.random_range(-1.0..1.0) * jitter * hx;
                y += rng.random_range(-1.0..1.0) * jitter * hy;
            }
            if j == 0 {
                boundary.bottom.insert(id);
            }
            if j == ny - 1 {
                boundary.top.insert(id);
            }
            if i == 0 {
                boundary.left.insert(id);
            }
            if i == nx - 1 {
                boundary.right.insert(id);
            }
            nodes.push([x, y]);
        }
    }

    let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            elements.push([a, b, d]);
            elements.push([a, d, c]);
        }
    }
    let min_area = 1e-9 * hx * hy;
    if elements
        .iter()
        .any(|t| 0.5 * orient(nodes[t[0]], nodes[t[1]], nodes[t[2]]) <= min_area)
    {
        return None;
    }
    lawson_flip(&nodes, &mut elements, 1e-12 * (hx * hy).powi(2));
    if elements
        .iter()
        .any(|t| 0.5 * orient(nodes[t[0]], nodes[t[1]], nodes[t[2]]) <= min_area)
    {
        return None;
    }
    Mesh::new(nodes, elements, boundary, 1.0).ok()
}

/// Flips interior edges until every one satisfies the empty-circumcircle criterion.
fn lawson_flip(nodes: &[[f64; 2]], elements: &mut [[usize; 3]], tol: f64) {
    let max_passes = 4 * elements.len() + 16;
    for _ in 0..max_passes {
        // directed edge (a, b) -> (element, opposite vertex)
        let mut half_edges: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for (e, t) in elements.iter().enumerate() {
            for k in 0..3 {
                half_edges.insert((t[k], t[(k + 1) % 3]), (e, t[(k + 2) % 3]));
            }
        }
        let mut touched = vec![false; elements.len()];
        let mut flipped = false;
        for (&(a, b), &(e1, c)) in &half_edges {
            if a > b {
                continue;
            }
            let Some(&(e2, d)) = half_edges.get(&(b, a)) else {
                continue;
            };
            if touched[e1] || touched[e2] {
                continue;
            }
            // e1 = (a, b, c), e2 = (b, a, d)
            if incircle(nodes[a], nodes[b], nodes[c], nodes[d]) <= tol {
                continue;
            }
            let t1 = [a, d, c];
            let t2 = [d, b, c];
            if orient(nodes[t1[0]], nodes[t1[1]], nodes[t1[2]]) <= 0.0
                || orient(nodes[t2[0]], nodes[t2[1]], nodes[t2[2]]) <= 0.0
            {
                continue;
            }
            elements[e1] = t1;
            elements[e2] = t2;
            touched[e1] = true;
            touched[e2] = true;
            flipped = true;
        }
        if !flipped {
            return;
        }
    }
    log::warn!("Lawson flipping did not settle within the pass limit");
}
