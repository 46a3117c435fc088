//! Triangulations of planar domains.
//!
//! Meshes are built from a coarse seed (concentric rings for discs, ear
//! clipping for polygons) and refined either uniformly (red refinement, every
//! triangle split into four) or locally toward a marked point by longest-edge
//! bisection, which keeps the mesh conforming and the angles bounded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Analytic description of the boundary, used to place new boundary vertices
/// during refinement.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCurve {
    Circle { center: Point, radius: f64 },
    Polygon(Vec<Point>),
    /// Boundary known only through the mesh itself (e.g. a mesh read from file).
    PiecewiseLinear,
}

impl BoundaryCurve {
    fn place_midpoint(&self, a: Point, b: Point) -> Point {
        let mid = [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
        match self {
            BoundaryCurve::Circle { center, radius } => {
                let dx = mid[0] - center[0];
                let dy = mid[1] - center[1];
                let r = dx.hypot(dy);
                [center[0] + radius * dx / r, center[1] + radius * dy / r]
            }
            _ => mid,
        }
    }

    /// Distance from `p` to the analytic boundary, if one is known.
    pub fn distance(&self, p: Point) -> Option<f64> {
        match self {
            BoundaryCurve::Circle { center, radius } => {
                Some((radius - (p[0] - center[0]).hypot(p[1] - center[1])).abs())
            }
            BoundaryCurve::Polygon(v) => Some(
                (0..v.len())
                    .map(|i| point_segment_distance(p, v[i], v[(i + 1) % v.len()]))
                    .fold(f64::INFINITY, f64::min),
            ),
            BoundaryCurve::PiecewiseLinear => None,
        }
    }
}

/// Target element size for local refinement toward `center`:
/// `h_min` inside `plateau`, then growing linearly with rate `growth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    pub center: Point,
    pub h_min: f64,
    pub plateau: f64,
    pub growth: f64,
}

impl Grading {
    pub fn new(center: Point, h_min: f64) -> Self {
        Self {
            center,
            h_min,
            plateau: 16.0 * h_min,
            growth: 0.15,
        }
    }

    pub fn target(&self, distance: f64) -> f64 {
        if distance <= self.plateau {
            self.h_min
        } else {
            self.h_min + self.growth * (distance - self.plateau)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h_max: f64,
    curve: BoundaryCurve,
    locator: OnceLock<Locator>,
}

impl TriMesh {
    /// Builds a mesh from raw parts, checking the structural invariants.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<bool>,
        curve: BoundaryCurve,
    ) -> Result<Self> {
        if boundary.len() != vertices.len() {
            return Err(Error::InvalidInput(format!(
                "{} boundary flags for {} vertices",
                boundary.len(),
                vertices.len()
            )));
        }
        if let Some(t) = triangles.iter().flatten().find(|&&v| v >= vertices.len()) {
            return Err(Error::InvalidInput(format!("vertex index {t} out of range")));
        }
        let mut mesh = Self {
            vertices,
            triangles,
            boundary,
            h_max: 0.0,
            curve,
            locator: OnceLock::new(),
        };
        mesh.h_max = mesh.compute_h_max();
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn curve(&self) -> &BoundaryCurve {
        &self.curve
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn longest_edge(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    /// Degeneracy threshold for triangle `t`, relative to its own size so
    /// strongly graded meshes are not rejected.
    pub fn area_tolerance(&self, t: usize) -> f64 {
        let e = self.longest_edge(t);
        1e-14 * e * e
    }

    /// Area of the union of triangles.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    fn compute_h_max(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |i| {
                    let p = self.vertices[t[i]];
                    let q = self.vertices[t[(i + 1) % 3]];
                    (p[0] - q[0]).hypot(p[1] - q[1])
                })
            })
            .fold(0.0, f64::max)
    }

    /// Distance from `p` to the boundary (analytic when known, otherwise to
    /// the boundary edges of the mesh).
    pub fn boundary_distance(&self, p: Point) -> f64 {
        if let Some(d) = self.curve.distance(p) {
            return d;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.boundary_edges() {
            best = best.min(point_segment_distance(p, self.vertices[a], self.vertices[b]));
        }
        best
    }

    /// Edges belonging to exactly one triangle, oriented as in that triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let counts = self.edge_counts();
        let mut out = Vec::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                if counts[&edge_key(a, b)] == 1 {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.triangles.len() * 2);
        for t in &self.triangles {
            for i in 0..3 {
                *counts.entry(edge_key(t[i], t[(i + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Checks orientation, edge manifoldness and boundary flags.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            let area = self.signed_area(t);
            let tol = self.area_tolerance(t);
            if area <= tol {
                return Err(Error::DegenerateTriangle {
                    index: t,
                    area,
                    tolerance: tol,
                });
            }
        }
        let counts = self.edge_counts();
        if let Some((e, c)) = counts.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidInput(format!(
                "edge {e:?} shared by {c} triangles"
            )));
        }
        let mut on_boundary = vec![false; self.vertices.len()];
        for (&(a, b), &c) in &counts {
            if c == 1 {
                on_boundary[a] = true;
                on_boundary[b] = true;
            }
        }
        for (v, (&flag, &expect)) in self.boundary.iter().zip(&on_boundary).enumerate() {
            if flag != expect {
                return Err(Error::InvalidInput(format!(
                    "vertex {v}: boundary flag {flag} but lies on boundary edge: {expect}"
                )));
            }
            if flag {
                if let Some(d) = self.curve.distance(self.vertices[v]) {
                    if d > 1e-12 * (1.0 + self.h_max) {
                        return Err(Error::InvalidInput(format!(
                            "boundary vertex {v} is {d:e} off the analytic boundary"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Red refinement: every triangle split into four through its edge
    /// midpoints. Boundary midpoints are moved onto the analytic boundary.
    pub fn refine_uniform(&self) -> TriMesh {
        let counts = self.edge_counts();
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::with_capacity(counts.len());
        let mut triangles = Vec::with_capacity(self.triangles.len() * 4);
        for t in &self.triangles {
            let mut m = [0usize; 3];
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                let key = edge_key(a, b);
                m[i] = *mids.entry(key).or_insert_with(|| {
                    let on_bdry = counts[&key] == 1;
                    let p = if on_bdry {
                        self.curve.place_midpoint(vertices[a], vertices[b])
                    } else {
                        midpoint(vertices[a], vertices[b])
                    };
                    vertices.push(p);
                    boundary.push(on_bdry);
                    vertices.len() - 1
                });
            }
            let [a, b, c] = *t;
            triangles.push([a, m[0], m[2]]);
            triangles.push([m[0], b, m[1]]);
            triangles.push([m[2], m[1], c]);
            triangles.push([m[0], m[1], m[2]]);
        }
        TriMesh::from_parts(vertices, triangles, boundary, self.curve.clone())
            .expect("red refinement preserves indices")
    }

    pub fn refine_uniform_times(&self, levels: usize) -> TriMesh {
        let mut mesh = self.clone();
        for _ in 0..levels {
            mesh = mesh.refine_uniform();
        }
        mesh
    }

    /// Local longest-edge bisection until every triangle meets the size
    /// target of `grading`.
    pub fn refine_toward(&self, grading: &Grading) -> TriMesh {
        if !(grading.h_min > 0.0) {
            return self.clone();
        }
        let mut b = Bisector::new(self);
        loop {
            let marked: Vec<usize> = (0..b.tris.len())
                .filter(|&t| b.alive[t] && b.needs_split(t, grading))
                .collect();
            if marked.is_empty() {
                break;
            }
            for t in marked {
                if b.alive[t] && b.needs_split(t, grading) {
                    b.refine(t);
                }
            }
        }
        b.finish(self.curve.clone())
    }

    /// Copy of the mesh rotated by `angle` (radians) about `center`.
    pub fn rotated(&self, angle: f64, center: Point) -> TriMesh {
        let (s, c) = angle.sin_cos();
        let rot = |p: Point| {
            let dx = p[0] - center[0];
            let dy = p[1] - center[1];
            [center[0] + c * dx - s * dy, center[1] + s * dx + c * dy]
        };
        let curve = match &self.curve {
            BoundaryCurve::Circle { center: cc, radius } => BoundaryCurve::Circle {
                center: rot(*cc),
                radius: *radius,
            },
            BoundaryCurve::Polygon(v) => BoundaryCurve::Polygon(v.iter().map(|&p| rot(p)).collect()),
            BoundaryCurve::PiecewiseLinear => BoundaryCurve::PiecewiseLinear,
        };
        TriMesh::from_parts(
            self.vertices.iter().map(|&p| rot(p)).collect(),
            self.triangles.clone(),
            self.boundary.clone(),
            curve,
        )
        .expect("rotation keeps topology")
    }

    /// Finds a triangle containing `p` with its barycentric coordinates.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        self.locator
            .get_or_init(|| Locator::build(self))
            .locate(self, p)
    }

    /// P1 interpolation of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Option<f64> {
        let (t, w) = self.locate(p)?;
        let [a, b, c] = self.triangles[t];
        Some(w[0] * values[a] + w[1] * values[b] + w[2] * values[c])
    }

    /// Vertex closest to `p` (lowest index on ties).
    pub fn nearest_vertex(&self, p: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Longest edge among the triangles touching the vertex nearest to `p`.
    pub fn local_h(&self, p: Point) -> f64 {
        let v = self.nearest_vertex(p);
        let mut h: f64 = 0.0;
        for t in self.triangles.iter().filter(|t| t.contains(&v)) {
            for i in 0..3 {
                let a = self.vertices[t[i]];
                let b = self.vertices[t[(i + 1) % 3]];
                h = h.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        h
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = std::f64::consts::PI;
        for t in 0..self.triangles.len() {
            let p = self.triangle_points(t);
            for i in 0..3 {
                let a = p[i];
                let b = p[(i + 1) % 3];
                let c = p[(i + 2) % 3];
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
                best = best.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        best
    }

    /// Writes the whitespace-delimited mesh format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        for (i, (v, &b)) in self.vertices.iter().zip(&self.boundary).enumerate() {
            writeln!(s, "{i} {:e} {:e} {}", v[0], v[1], u8::from(b)).unwrap();
        }
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<TriMesh> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Vertices,
            Triangles,
        }
        let mut section = Section::None;
        let mut vertices = Vec::new();
        let mut boundary = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "vertices" => {
                    section = Section::Vertices;
                    continue;
                }
                "triangles" => {
                    section = Section::Triangles;
                    continue;
                }
                _ => {}
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|e| perr(format!("bad index: {e}")))?;
            match section {
                Section::None => return Err(perr("data before section header".into())),
                Section::Vertices => {
                    if fields.len() != 4 {
                        return Err(perr("expected: index x y boundary_flag".into()));
                    }
                    if index != vertices.len() {
                        return Err(perr(format!("vertex index {index} out of sequence")));
                    }
                    let x: f64 = fields[1].parse().map_err(|e| perr(format!("{e}")))?;
                    let y: f64 = fields[2].parse().map_err(|e| perr(format!("{e}")))?;
                    let b = match fields[3] {
                        "0" | "false" => false,
                        "1" | "true" => true,
                        other => return Err(perr(format!("bad boundary flag {other:?}"))),
                    };
                    vertices.push([x, y]);
                    boundary.push(b);
                }
                Section::Triangles => {
                    if fields.len() != 4 {
                        return Err(perr("expected: index v0 v1 v2".into()));
                    }
                    if index != triangles.len() {
                        return Err(perr(format!("triangle index {index} out of sequence")));
                    }
                    let mut t = [0usize; 3];
                    for k in 0..3 {
                        t[k] = fields[k + 1].parse().map_err(|e| perr(format!("{e}")))?;
                    }
                    triangles.push(t);
                }
            }
        }
        TriMesh::from_parts(vertices, triangles, boundary, BoundaryCurve::PiecewiseLinear)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TriMesh> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.triangles == other.triangles
            && self.boundary == other.boundary
    }
}

/// Quasi-uniform mesh of the disc of given radius centred at the origin.
///
/// The seed mesh has four concentric rings with `8j` vertices on ring `j`;
/// it is invariant under rotation by 45 degrees, so the doubly degenerate
/// Dirichlet eigenvalues of the disc stay exactly degenerate after
/// discretization.
pub fn build_disc_mesh(radius: f64, refinement_level: usize) -> Result<TriMesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("disc radius {radius} must be positive")));
    }
    const RINGS: usize = 4;
    const PER_RING: usize = 8;
    let mut vertices = vec![[0.0, 0.0]];
    let mut boundary = vec![false];
    let mut ring_start = vec![0usize];
    for j in 1..=RINGS {
        ring_start.push(vertices.len());
        let n = PER_RING * j;
        let r = radius * j as f64 / RINGS as f64;
        for i in 0..n {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
            boundary.push(j == RINGS);
        }
    }
    let mut triangles = Vec::new();
    // center fan
    for i in 0..PER_RING {
        triangles.push([0, 1 + i, 1 + (i + 1) % PER_RING]);
    }
    // stitch ring j-1 to ring j, advancing along whichever ring has the
    // smaller next angle; angles compared exactly as fractions of a turn
    for j in 2..=RINGS {
        let (ni, no) = (PER_RING * (j - 1), PER_RING * j);
        let (si, so) = (ring_start[j - 1], ring_start[j]);
        let (mut a, mut b) = (0usize, 0usize);
        while a < ni || b < no {
            let inner = si + a % ni;
            let outer = so + b % no;
            // (a+1)/ni versus (b+1)/no
            let advance_outer = b < no && (a >= ni || (b + 1) * ni <= (a + 1) * no);
            if advance_outer {
                triangles.push([inner, outer, so + (b + 1) % no]);
                b += 1;
            } else {
                triangles.push([inner, outer, si + (a + 1) % ni]);
                a += 1;
            }
        }
    }
    let seed = TriMesh::from_parts(
        vertices,
        triangles,
        boundary,
        BoundaryCurve::Circle {
            center: [0.0, 0.0],
            radius,
        },
    )?;
    Ok(seed.refine_uniform_times(refinement_level))
}

/// Conforming triangulation of a simple counterclockwise polygon.
pub fn build_polygon_mesh(polygon: &[Point], refinement_level: usize) -> Result<TriMesh> {
    let n = polygon.len();
    if n < 3 {
        return Err(Error::InvalidInput("polygon needs at least 3 vertices".into()));
    }
    if polygon.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite polygon coordinate".into()));
    }
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        if a == b {
            return Err(Error::InvalidInput(format!("zero-length polygon edge {i}")));
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (c, d) = (polygon[j], polygon[(j + 1) % n]);
            if adjacent {
                // adjacent edges may only share their common endpoint
                let shared = if j == i + 1 { b } else { a };
                let (other_a, other_b) = if j == i + 1 { (a, d) } else { (b, c) };
                if collinear_overlap(shared, other_a, other_b) {
                    return Err(Error::SelfIntersecting(i, j));
                }
            } else if segments_intersect(a, b, c, d) {
                return Err(Error::SelfIntersecting(i, j));
            }
        }
    }
    let area2: f64 = (0..n)
        .map(|i| {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    if area2 <= 0.0 {
        return Err(Error::InvalidInput("polygon must be counterclockwise".into()));
    }

    // a fan from the centroid keeps the polygon's symmetries (and with them
    // exact eigenvalue multiplicities); ear clipping handles the rest
    let (vertices, triangles, flags) = match centroid_fan(polygon, area2 * 0.5) {
        Some(tris) => {
            let mut v = polygon.to_vec();
            v.push(polygon_centroid(polygon, area2 * 0.5));
            let mut f = vec![true; n];
            f.push(false);
            (v, tris, f)
        }
        None => (polygon.to_vec(), ear_clip(polygon)?, vec![true; n]),
    };
    let seed = TriMesh::from_parts(vertices, triangles, flags, BoundaryCurve::Polygon(polygon.to_vec()))?;
    Ok(seed.refine_uniform_times(refinement_level))
}

fn polygon_centroid(polygon: &[Point], area: f64) -> Point {
    let n = polygon.len();
    let mut c = [0.0, 0.0];
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let w = a[0] * b[1] - b[0] * a[1];
        c[0] += (a[0] + b[0]) * w;
        c[1] += (a[1] + b[1]) * w;
    }
    [c[0] / (6.0 * area), c[1] / (6.0 * area)]
}

/// Triangles fanning from the centroid, if every one of them is well shaped.
fn centroid_fan(polygon: &[Point], area: f64) -> Option<Vec<[usize; 3]>> {
    let n = polygon.len();
    let c = polygon_centroid(polygon, area);
    let mut tris = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let edge2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
        // reject slivers: height over the edge at least a tenth of its length
        if signed_area(a, b, c) < 0.05 * edge2 {
            return None;
        }
        tris.push([i, (i + 1) % n, n]);
    }
    Some(tris)
}

fn ear_clip(polygon: &[Point]) -> Result<Vec<[usize; 3]>> {
    let mut idx: Vec<usize> = (0..polygon.len()).collect();
    let mut out = Vec::with_capacity(polygon.len() - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&k| {
            let (p, c, q) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, d) = (polygon[p], polygon[c], polygon[q]);
            if signed_area(a, b, d) <= 0.0 {
                return false;
            }
            !idx.iter()
                .filter(|&&o| o != p && o != c && o != q)
                .any(|&o| point_in_triangle_closed(polygon[o], a, b, d))
        });
        let Some(k) = ear else {
            return Err(Error::InvalidInput("ear clipping failed; polygon not simple".into()));
        };
        out.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
        idx.remove(k);
    }
    out.push([idx[0], idx[1], idx[2]]);
    Ok(out)
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn midpoint(a: Point, b: Point) -> Point {
    [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5]
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Two segments sharing endpoint `s` overlap if the other endpoints lie on the
/// same ray from `s`.
fn collinear_overlap(s: Point, a: Point, b: Point) -> bool {
    let u = [a[0] - s[0], a[1] - s[1]];
    let v = [b[0] - s[0], b[1] - s[1]];
    u[0] * v[1] - u[1] * v[0] == 0.0 && u[0] * v[0] + u[1] * v[1] > 0.0
}

fn point_in_triangle_closed(p: Point, a: Point, b: Point, c: Point) -> bool {
    orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let det = orient(a, b, c);
    let l1 = orient(p, b, c) / det;
    let l2 = orient(a, p, c) / det;
    [l1, l2, 1.0 - l1 - l2]
}

fn point_triangle_distance(p: Point, t: [Point; 3]) -> f64 {
    let w = barycentric(p, t[0], t[1], t[2]);
    if w.iter().all(|&x| x >= 0.0) {
        return 0.0;
    }
    (0..3)
        .map(|i| point_segment_distance(p, t[i], t[(i + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

/// Uniform bucket grid over the bounding box for point location.
#[derive(Debug, Clone)]
struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn build(mesh: &TriMesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &mesh.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let n_tri = mesh.triangles.len().max(1);
        let side = (n_tri as f64).sqrt().ceil().max(1.0);
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let cell = extent / side;
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for t in 0..mesh.triangles.len() {
            let p = mesh.triangle_points(t);
            let cx = |x: f64| (((x - lo[0]) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy = |y: f64| (((y - lo[1]) / cell).floor().max(0.0) as usize).min(ny - 1);
            let (x0, x1) = (
                cx(p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min)),
                cx(p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max)),
            );
            let (y0, y1) = (
                cy(p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min)),
                cy(p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max)),
            );
            for j in y0..=y1 {
                for i in x0..=x1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn locate(&self, mesh: &TriMesh, p: Point) -> Option<(usize, [f64; 3])> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx >= -1e-9 && fy >= -1e-9) {
            return None;
        }
        let i = (fx.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.floor().max(0.0) as usize).min(self.ny - 1);
        if fx > self.nx as f64 + 1e-9 || fy > self.ny as f64 + 1e-9 {
            return None;
        }
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let [a, b, c] = mesh.triangle_points(t);
            let w = barycentric(p, a, b, c);
            let worst = w.iter().copied().fold(f64::INFINITY, f64::min);
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, w, worst));
            }
        }
        match best {
            Some((t, w, worst)) if worst >= -1e-10 => Some((t, w)),
            _ => None,
        }
    }
}

/// Longest-edge (Rivara) bisection state.
struct Bisector {
    vertices: Vec<Point>,
    boundary: Vec<bool>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edges: HashMap<(usize, usize), [usize; 2]>,
    curve: BoundaryCurve,
}

const NONE: usize = usize::MAX;

impl Bisector {
    fn new(mesh: &TriMesh) -> Self {
        let mut b = Self {
            vertices: mesh.vertices.clone(),
            boundary: mesh.boundary.clone(),
            tris: Vec::with_capacity(mesh.triangles.len() * 2),
            alive: Vec::new(),
            edges: HashMap::with_capacity(mesh.triangles.len() * 2),
            curve: mesh.curve.clone(),
        };
        for &t in &mesh.triangles {
            b.push(t);
        }
        b
    }

    fn push(&mut self, t: [usize; 3]) -> usize {
        let id = self.tris.len();
        self.tris.push(t);
        self.alive.push(true);
        for i in 0..3 {
            let slot = self.edges.entry(edge_key(t[i], t[(i + 1) % 3])).or_insert([NONE, NONE]);
            if slot[0] == NONE {
                slot[0] = id;
            } else {
                slot[1] = id;
            }
        }
        id
    }

    fn kill(&mut self, id: usize) {
        self.alive[id] = false;
        let t = self.tris[id];
        for i in 0..3 {
            let key = edge_key(t[i], t[(i + 1) % 3]);
            let slot = self.edges.get_mut(&key).unwrap();
            if slot[0] == id {
                slot[0] = slot[1];
            }
            slot[1] = NONE;
            if slot[0] == NONE {
                self.edges.remove(&key);
            }
        }
    }

    /// Longest edge with a deterministic tie-break on the vertex pair.
    fn longest(&self, id: usize) -> (usize, usize) {
        let t = self.tris[id];
        let mut best: Option<(f64, (usize, usize))> = None;
        for i in 0..3 {
            let key = edge_key(t[i], t[(i + 1) % 3]);
            let (p, q) = (self.vertices[key.0], self.vertices[key.1]);
            let len2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            let better = match best {
                None => true,
                Some((l, k)) => len2 > l || (len2 == l && key > k),
            };
            if better {
                best = Some((len2, key));
            }
        }
        best.unwrap().1
    }

    fn neighbor(&self, id: usize, key: (usize, usize)) -> Option<usize> {
        let slot = self.edges[&key];
        let other = if slot[0] == id { slot[1] } else { slot[0] };
        (other != NONE).then_some(other)
    }

    fn needs_split(&self, id: usize, g: &Grading) -> bool {
        let t = self.tris[id];
        let pts = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
        let key = self.longest(id);
        let (p, q) = (self.vertices[key.0], self.vertices[key.1]);
        let len = (p[0] - q[0]).hypot(p[1] - q[1]);
        len > g.target(point_triangle_distance(g.center, pts))
    }

    fn refine(&mut self, id: usize) {
        while self.alive[id] {
            let mut cur = id;
            loop {
                let e = self.longest(cur);
                match self.neighbor(cur, e) {
                    None => {
                        self.bisect(e);
                        break;
                    }
                    Some(n) => {
                        if self.longest(n) == e {
                            self.bisect(e);
                            break;
                        }
                        cur = n;
                    }
                }
            }
        }
    }

    fn bisect(&mut self, key: (usize, usize)) {
        let slot = self.edges[&key];
        let on_boundary = slot[1] == NONE;
        let (a, b) = (self.vertices[key.0], self.vertices[key.1]);
        let m_pt = if on_boundary {
            self.curve.place_midpoint(a, b)
        } else {
            midpoint(a, b)
        };
        self.vertices.push(m_pt);
        self.boundary.push(on_boundary);
        let m = self.vertices.len() - 1;
        for &s in slot.iter().filter(|&&s| s != NONE) {
            let t = self.tris[s];
            let i = (0..3)
                .find(|&i| edge_key(t[i], t[(i + 1) % 3]) == key)
                .unwrap();
            let (p, q, r) = (t[i], t[(i + 1) % 3], t[(i + 2) % 3]);
            self.kill(s);
            self.push([p, m, r]);
            self.push([m, q, r]);
        }
    }

    fn finish(self, curve: BoundaryCurve) -> TriMesh {
        let triangles: Vec<[usize; 3]> = self
            .tris
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(t, _)| *t)
            .collect();
        TriMesh::from_parts(self.vertices, triangles, self.boundary, curve)
            .expect("bisection preserves indices")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_square() -> Vec<Point> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    #[test]
    fn coarse_disc_area_within_two_percent() {
        let m = build_disc_mesh(1.0, 0).unwrap();
        m.validate().unwrap();
        assert!(m.area() < PI);
        assert!((m.area() - PI).abs() / PI < 0.02);
    }

    #[test]
    fn refined_disc_area_converges() {
        let m = build_disc_mesh(1.0, 4).unwrap();
        m.validate().unwrap();
        assert!((m.area() - PI).abs() / PI < 5e-4, "area {}", m.area());
    }

    #[test]
    fn h_max_halves_per_level() {
        let h: Vec<f64> = (0..4).map(|k| build_disc_mesh(1.0, k).unwrap().h_max()).collect();
        for w in h.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 0.45 && ratio < 0.55, "ratio {ratio}");
        }
    }

    #[test]
    fn disc_scales_by_radius() {
        let a = build_disc_mesh(1.0, 2).unwrap();
        let b = build_disc_mesh(2.0, 2).unwrap();
        assert_eq!(a.num_vertices(), b.num_vertices());
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            assert!((2.0 * p[0] - q[0]).abs() < 1e-14 && (2.0 * p[1] - q[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn square_cover_is_exact() {
        let m = build_polygon_mesh(&unit_square(), 3).unwrap();
        m.validate().unwrap();
        assert!((m.area() - 1.0).abs() < 1e-14);
        for k in 0..4 {
            let h0 = build_polygon_mesh(&unit_square(), k).unwrap().h_max();
            let h1 = build_polygon_mesh(&unit_square(), k + 1).unwrap().h_max();
            assert!(h1 <= 0.6 * h0);
        }
    }

    #[test]
    fn single_triangle_polygon() {
        let m = build_polygon_mesh(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 0).unwrap();
        assert!(m.num_triangles() >= 1);
        assert!((m.area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonconvex_polygon_triangulates() {
        let l_shape = [
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ];
        let m = build_polygon_mesh(&l_shape, 2).unwrap();
        m.validate().unwrap();
        assert!((m.area() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let bowtie = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            build_polygon_mesh(&bowtie, 0),
            Err(Error::SelfIntersecting(..))
        ));
    }

    #[test]
    fn clockwise_polygon_rejected() {
        let mut sq = unit_square();
        sq.reverse();
        assert!(build_polygon_mesh(&sq, 0).is_err());
    }

    #[test]
    fn graded_refinement_reaches_target() {
        let base = build_disc_mesh(1.0, 1).unwrap();
        let g = Grading::new([0.0, 0.0], 1e-4);
        let m = base.refine_toward(&g);
        m.validate().unwrap();
        assert!(m.local_h([0.0, 0.0]) <= 1e-4 * 1.0000001);
        assert!(m.min_angle() > 0.5 * base.min_angle() - 1e-12);
        assert!((m.area() - base.area()).abs() < 1e-12 + 1e-3);
    }

    #[test]
    fn graded_refinement_off_center_pole() {
        let base = build_polygon_mesh(&unit_square(), 2).unwrap();
        let g = Grading::new([0.3, 0.55], 5e-3);
        let m = base.refine_toward(&g);
        m.validate().unwrap();
        assert!(m.local_h([0.3, 0.55]) <= 5e-3 * (1.0 + 1e-12));
        assert!((m.area() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn locate_and_interpolate_linear() {
        let m = build_polygon_mesh(&unit_square(), 3).unwrap();
        let vals: Vec<f64> = m.vertices().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for p in [[0.13, 0.77], [0.5, 0.5], [0.999, 0.001], [0.0, 0.0]] {
            let v = m.interpolate(&vals, p).unwrap();
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-13);
        }
        assert!(m.locate([1.5, 0.5]).is_none());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = build_disc_mesh(1.0, 1)
            .unwrap()
            .refine_toward(&Grading::new([0.1, 0.2], 0.05));
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = TriMesh::read_from(buf.as_slice()).unwrap();
        assert_eq!(m, back);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn malformed_file_reports_line() {
        let text = "vertices 1\n0 0.0 0.0 2\n";
        match TriMesh::read_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disc_mesh_has_eightfold_symmetry() {
        let m = build_disc_mesh(1.0, 2).unwrap();
        let r = m.rotated(PI / 4.0, [0.0, 0.0]);
        // every rotated vertex coincides with an original vertex
        for p in r.vertices() {
            let q = m.vertices()[m.nearest_vertex(*p)];
            assert!((p[0] - q[0]).hypot(p[1] - q[1]) < 1e-12);
        }
    }
}
