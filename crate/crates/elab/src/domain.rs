//! Voxelized model domains.
//!
//! Lattice nodes sit at `i*h` for `i in 0..n` along each axis, with `h = 1/(n-1)`.
//! A node is interior when it lies strictly inside the model shape; the
//! discrete domain is the union of the interior voxels `[X-h/2, X+h/2]^d`.
//! Its boundary is the set of voxel faces between an interior and an exterior
//! node, each represented by its face-center point.

use std::collections::{BinaryHeap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Disk and ball radius; centered in the unit box.
pub const ROUND_RADIUS: f64 = 0.45;
/// Side of the square base of the Koch island.
pub const KOCH_SIDE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disk,
    LipschitzGraph {
        slope: f64,
    },
    KochPrefractal {
        depth: u32,
    },
    /// Unit square minus a vertical slit from the bottom edge to its center.
    Slit,
    Cube,
    Ball,
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Cube | Shape::Ball => 3,
            _ => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Shape::Square => "square".into(),
            Shape::Disk => "disk".into(),
            Shape::LipschitzGraph { slope } => format!("lipschitz_graph({slope})"),
            Shape::KochPrefractal { depth } => format!("koch_prefractal({depth})"),
            Shape::Slit => "slit".into(),
            Shape::Cube => "cube".into(),
            Shape::Ball => "ball".into(),
        }
    }

    /// Parses `square`, `disk`, `lipschitz_graph(1.5)`, `koch(2)`, `slit`, `cube`, `ball`.
    pub fn parse(s: &str) -> Result<Shape> {
        let s = s.trim();
        let arg = |s: &str| -> Result<f64> {
            let open = s.find('(').ok_or_else(|| Error::Parse(format!("missing argument in {s}")))?;
            let close = s.rfind(')').ok_or_else(|| Error::Parse(format!("unclosed argument in {s}")))?;
            s[open + 1..close].trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")))
        };
        match s {
            "square" => Ok(Shape::Square),
            "disk" => Ok(Shape::Disk),
            "slit" => Ok(Shape::Slit),
            "cube" | "3d" => Ok(Shape::Cube),
            "ball" => Ok(Shape::Ball),
            "lipschitz" => Ok(Shape::LipschitzGraph { slope: 1.0 }),
            "koch" => Ok(Shape::KochPrefractal { depth: 2 }),
            _ if s.starts_with("lipschitz") => Ok(Shape::LipschitzGraph { slope: arg(s)? }),
            _ if s.starts_with("koch") => Ok(Shape::KochPrefractal { depth: arg(s)? as u32 }),
            _ => Err(Error::Parse(format!("unknown shape {s}"))),
        }
    }

    /// Analytic boundary length (2D) for the polygonal shapes.
    pub fn analytic_perimeter(&self) -> Option<f64> {
        match self {
            Shape::Square => Some(4.0),
            Shape::Disk => Some(2.0 * std::f64::consts::PI * ROUND_RADIUS),
            Shape::KochPrefractal { depth } => Some(4.0 * KOCH_SIDE * (4.0f64 / 3.0).powi(*depth as i32)),
            Shape::LipschitzGraph { .. } => Some(polygon_length(&lipschitz_polygon(self))),
            _ => None,
        }
    }
}

fn polygon_length(poly: &[[f64; 2]]) -> f64 {
    (0..poly.len())
        .map(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
        })
        .sum()
}

fn lipschitz_profile(slope: f64, x: f64) -> f64 {
    let t = x.rem_euclid(0.25);
    0.25 + slope * (t - 0.125).abs()
}

fn lipschitz_polygon(shape: &Shape) -> Vec<[f64; 2]> {
    let slope = match shape {
        Shape::LipschitzGraph { slope } => *slope,
        _ => 0.0,
    };
    let mut poly = Vec::new();
    let mut x = 0.0;
    while x <= 1.0 + 1e-12 {
        poly.push([x, lipschitz_profile(slope, x)]);
        x += 0.125;
    }
    poly.push([1.0, 1.0]);
    poly.push([0.0, 1.0]);
    poly
}

/// Counter-clockwise Koch island on a square base, bumps pointing outward.
pub fn koch_polygon(depth: u32) -> Vec<[f64; 2]> {
    let a = 0.5 - KOCH_SIDE / 2.0;
    let b = 0.5 + KOCH_SIDE / 2.0;
    let mut poly = vec![[a, a], [b, a], [b, b], [a, b]];
    let (s, c) = (-std::f64::consts::FRAC_PI_3).sin_cos();
    for _ in 0..depth {
        let mut next = Vec::with_capacity(poly.len() * 4);
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let d = [(q[0] - p[0]) / 3.0, (q[1] - p[1]) / 3.0];
            let u = [p[0] + d[0], p[1] + d[1]];
            let w = [p[0] + 2.0 * d[0], p[1] + 2.0 * d[1]];
            // Rotating clockwise points outward for a counter-clockwise polygon.
            let apex = [u[0] + c * d[0] - s * d[1], u[1] + s * d[0] + c * d[1]];
            next.extend_from_slice(&[p, u, apex, w]);
        }
        poly = next;
    }
    poly
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Unit normal of the polygon edge nearest to `(x, y)`.
fn nearest_edge_normal(poly: &[[f64; 2]], x: f64, y: f64) -> [f64; 2] {
    let mut best = f64::INFINITY;
    let mut normal = [0.0, 1.0];
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let d = [q[0] - p[0], q[1] - p[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 == 0.0 {
            continue;
        }
        let t = (((x - p[0]) * d[0] + (y - p[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let cx = p[0] + t * d[0] - x;
        let cy = p[1] + t * d[1] - y;
        let dd = cx * cx + cy * cy;
        if dd < best {
            best = dd;
            let len = len2.sqrt();
            normal = [d[1] / len, -d[0] / len];
        }
    }
    normal
}

/// Model geometry used to classify nodes and to orient boundary faces.
enum Geometry {
    Box,
    Round,
    Polygon(Vec<[f64; 2]>),
    Slit,
    Mask,
}

impl Geometry {
    fn of(shape: &Shape) -> Geometry {
        match shape {
            Shape::Square | Shape::Cube => Geometry::Box,
            Shape::Disk | Shape::Ball => Geometry::Round,
            Shape::LipschitzGraph { .. } => Geometry::Polygon(lipschitz_polygon(shape)),
            Shape::KochPrefractal { depth } => Geometry::Polygon(koch_polygon(*depth)),
            Shape::Slit => Geometry::Slit,
        }
    }

    fn contains(&self, p: &Point, dim: usize, h: f64) -> bool {
        const EPS: f64 = 1e-12;
        let in_box = (0..dim).all(|a| p[a] > EPS && p[a] < 1.0 - EPS);
        match self {
            Geometry::Box => in_box,
            Geometry::Round => {
                let c = [0.5, 0.5, if dim == 3 { 0.5 } else { 0.0 }];
                dist2(p, &c) < ROUND_RADIUS * ROUND_RADIUS
            }
            Geometry::Polygon(poly) => in_box && point_in_polygon(poly, p[0], p[1]),
            Geometry::Slit => in_box && !((p[0] - 0.5).abs() < 0.5 * h && p[1] <= 0.5 + EPS),
            Geometry::Mask => unreachable!("mask domains are classified externally"),
        }
    }

    /// Weight factor |n·e_axis| for a face at `p` whose lattice normal is `axis`.
    fn face_factor(&self, p: &Point, axis: usize, dim: usize) -> f64 {
        match self {
            Geometry::Box | Geometry::Slit | Geometry::Mask => 1.0,
            Geometry::Round => {
                let c = [0.5, 0.5, if dim == 3 { 0.5 } else { 0.0 }];
                let r = dist(p, &c);
                if r == 0.0 {
                    1.0
                } else {
                    ((p[axis] - c[axis]) / r).abs()
                }
            }
            Geometry::Polygon(poly) => nearest_edge_normal(poly, p[0], p[1])[axis].abs(),
        }
    }
}

/// One boundary cell: the face between interior cell `cell` and its exterior
/// neighbor in direction `dir` along `axis`.
#[derive(Clone, Debug)]
pub struct BoundaryFace {
    pub cell: usize,
    pub axis: u8,
    pub dir: i8,
    pub point: Point,
    pub sigma: f64,
}

/// Uniform bucket grid over a point set for radius queries.
#[derive(Clone, Debug)]
pub struct PointIndex {
    origin: Point,
    bucket: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl PointIndex {
    pub fn new(points: &[Point], bucket: f64) -> PointIndex {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let bucket = bucket.max(1e-12);
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / bucket).floor() as usize + 1).max(1);
        }
        let nb = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; nb + 1];
        let key = |p: &Point| -> usize {
            let mut k = [0usize; 3];
            for a in 0..3 {
                k[a] = (((p[a] - lo[a]) / bucket).floor() as usize).min(dims[a] - 1);
            }
            k[0] + dims[0] * (k[1] + dims[1] * k[2])
        };
        for p in points {
            counts[key(p) + 1] += 1;
        }
        for i in 0..nb {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let k = key(p);
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        PointIndex { origin: lo, bucket, dims, starts: counts, items }
    }

    /// Calls `f(i)` for every candidate within the bucket cover of `B(p, r)`.
    pub fn for_candidates(&self, p: &Point, r: f64, mut f: impl FnMut(usize)) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = ((p[a] - r - self.origin[a]) / self.bucket).floor();
            let u = ((p[a] + r - self.origin[a]) / self.bucket).floor();
            if u < 0.0 || l > (self.dims[a] - 1) as f64 {
                return;
            }
            lo[a] = l.max(0.0) as usize;
            hi[a] = (u as usize).min(self.dims[a] - 1);
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let b = i + self.dims[0] * (j + self.dims[1] * k);
                    for &it in &self.items[self.starts[b] as usize..self.starts[b + 1] as usize] {
                        f(it as usize);
                    }
                }
            }
        }
    }

    /// Indices of points with `|q - p| < r`, in increasing index order.
    pub fn within(&self, points: &[Point], p: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = r * r;
        self.for_candidates(p, r, |i| {
            if dist2(&points[i], p) < r2 {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }
}

/// A surface ball `B(x, r) ∩ ∂Ω` centered at a boundary face.
#[derive(Clone, Debug)]
pub struct SurfaceBall {
    pub center_face: usize,
    pub center: Point,
    pub radius: f64,
    pub members: Vec<usize>,
}

/// Result of a corkscrew search.
#[derive(Clone, Copy, Debug)]
pub struct Corkscrew {
    /// Interior cell index of the corkscrew point.
    pub cell: usize,
    pub point: Point,
    /// Achieved ratio: `B(point, c0 * r) ⊂ B(x, r) ∩ Ω`.
    pub c0: f64,
}

#[derive(Clone, Debug)]
pub struct HarnackChain {
    /// Ball centers and radii, from `X` to `X'`.
    pub balls: Vec<(Point, f64)>,
    pub pi: f64,
    pub c1: f64,
    pub c2: f64,
}

impl HarnackChain {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// `2 + log2⁺ Π`.
    pub fn log_budget(pi: f64) -> f64 {
        2.0 + if pi > 1.0 { pi.log2() } else { 0.0 }
    }
}

#[derive(Debug)]
pub struct GridDomain {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub shape: Option<Shape>,
    interior: Vec<bool>,
    unknown: Vec<u32>,
    cells: Vec<usize>,
    faces: Vec<BoundaryFace>,
    face_points: Vec<Point>,
    face_index: PointIndex,
    delta: Vec<f64>,
    diam: f64,
    corkscrew_inf: AtomicU64,
}

const NONE: u32 = u32::MAX;

impl GridDomain {
    /// Voxelizes `shape` on an `n^d` lattice.
    pub fn build(shape: &Shape, n: usize) -> Result<GridDomain> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("resolution {n} < 3")));
        }
        if let Shape::KochPrefractal { depth } = shape {
            if *depth > 5 {
                return Err(Error::InvalidParameter(format!("koch depth {depth} > 5")));
            }
        }
        if let Shape::LipschitzGraph { slope } = shape {
            if !(0.0..=4.0).contains(slope) {
                return Err(Error::InvalidParameter(format!("lipschitz slope {slope} outside [0,4]")));
            }
        }
        let dim = shape.dim();
        let h = 1.0 / (n - 1) as f64;
        let geom = Geometry::of(shape);
        let total = n.pow(dim as u32);
        let mut interior = vec![false; total];
        for (id, flag) in interior.iter_mut().enumerate() {
            let p = lattice_point(id, n, dim, h);
            *flag = geom.contains(&p, dim, h);
        }
        Self::assemble(dim, n, Some(shape.clone()), interior, &geom)
    }

    /// Builds a domain from an explicit interior mask on the `n^d` lattice.
    pub fn from_mask(dim: usize, n: usize, interior: Vec<bool>) -> Result<GridDomain> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidParameter(format!("dimension {dim}")));
        }
        if interior.len() != n.pow(dim as u32) {
            return Err(Error::InvalidParameter("mask size does not match lattice".into()));
        }
        Self::assemble(dim, n, None, interior, &Geometry::Mask)
    }

    fn assemble(
        dim: usize,
        n: usize,
        shape: Option<Shape>,
        mut interior: Vec<bool>,
        geom: &Geometry,
    ) -> Result<GridDomain> {
        let h = 1.0 / (n - 1) as f64;
        // The outer lattice layer is always exterior so every face has an exterior node.
        for (id, flag) in interior.iter_mut().enumerate() {
            let c = lattice_coords(id, n);
            if (0..dim).any(|a| c[a] == 0 || c[a] == n - 1) {
                *flag = false;
            }
        }
        let mut unknown = vec![NONE; interior.len()];
        let mut cells = Vec::new();
        for (id, &inside) in interior.iter().enumerate() {
            if inside {
                unknown[id] = cells.len() as u32;
                cells.push(id);
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidParameter("domain has no interior cells".into()));
        }
        check_connected(dim, n, &interior, &unknown, &cells)?;

        let mut faces = Vec::new();
        for (u, &id) in cells.iter().enumerate() {
            let c = lattice_coords(id, n);
            for axis in 0..dim {
                for dir in [-1i8, 1] {
                    let mut nc = c;
                    nc[axis] = (nc[axis] as isize + dir as isize) as usize;
                    let nid = lattice_id(&nc, n);
                    if !interior[nid] {
                        let mut point = lattice_point(id, n, dim, h);
                        point[axis] += dir as f64 * 0.5 * h;
                        let factor = geom.face_factor(&point, axis, dim);
                        faces.push(BoundaryFace {
                            cell: u,
                            axis: axis as u8,
                            dir,
                            point,
                            sigma: h.powi(dim as i32 - 1) * factor,
                        });
                    }
                }
            }
        }
        let face_points: Vec<Point> = faces.iter().map(|f| f.point).collect();
        let face_index = PointIndex::new(&face_points, 4.0 * h);
        let delta = distance_transform(dim, n, h, &cells, &faces);
        let diam = subsampled_diameter(&face_points, 4096);
        Ok(GridDomain {
            dim,
            n,
            h,
            shape,
            interior,
            unknown,
            cells,
            faces,
            face_points,
            face_index,
            delta,
            diam,
            corkscrew_inf: AtomicU64::new(f64::INFINITY.to_bits()),
        })
    }

    pub fn lattice_len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_interior(&self, lattice: usize) -> bool {
        self.interior[lattice]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    /// Number of interior cells (solver unknowns).
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Lattice id of interior cell `u`.
    pub fn cell_lattice(&self, u: usize) -> usize {
        self.cells[u]
    }

    /// Interior cell index of lattice node `id`, if interior.
    pub fn cell_of_lattice(&self, id: usize) -> Option<usize> {
        match self.unknown[id] {
            NONE => None,
            u => Some(u as usize),
        }
    }

    pub fn cell_point(&self, u: usize) -> Point {
        lattice_point(self.cells[u], self.n, self.dim, self.h)
    }

    pub fn cell_coords(&self, u: usize) -> [usize; 3] {
        lattice_coords(self.cells[u], self.n)
    }

    pub fn lattice_coords(&self, id: usize) -> [usize; 3] {
        lattice_coords(id, self.n)
    }

    pub fn lattice_id(&self, c: &[usize; 3]) -> usize {
        lattice_id(c, self.n)
    }

    /// Interior neighbor of cell `u` one step along `axis` in direction `dir`.
    pub fn neighbor(&self, u: usize, axis: usize, dir: i8) -> Option<usize> {
        let mut c = self.cell_coords(u);
        c[axis] = (c[axis] as isize + dir as isize) as usize;
        self.cell_of_lattice(lattice_id(&c, self.n))
    }

    /// Face index between cell `u` and its exterior neighbor, if that neighbor is exterior.
    pub fn face_between(&self, u: usize, axis: usize, dir: i8) -> Option<usize> {
        if self.neighbor(u, axis, dir).is_some() {
            return None;
        }
        let p = {
            let mut p = self.cell_point(u);
            p[axis] += dir as f64 * 0.5 * self.h;
            p
        };
        let mut found = None;
        self.face_index.for_candidates(&p, 0.25 * self.h, |i| {
            let f = &self.faces[i];
            if f.cell == u && f.axis as usize == axis && f.dir == dir {
                found = Some(i);
            }
        });
        found
    }

    /// Interior cell containing `p` (nearest lattice node), if any.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..self.dim {
            let t = (p[a] / self.h).round();
            if t < 0.0 || t > (self.n - 1) as f64 {
                return None;
            }
            c[a] = t as usize;
        }
        self.cell_of_lattice(lattice_id(&c, self.n))
    }

    /// Whether `p` lies in the voxel union.
    pub fn contains(&self, p: &Point) -> bool {
        self.locate(p).is_some()
    }

    pub fn faces(&self) -> &[BoundaryFace] {
        &self.faces
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_points(&self) -> &[Point] {
        &self.face_points
    }

    pub fn face_index(&self) -> &PointIndex {
        &self.face_index
    }

    pub fn sigma_total(&self) -> f64 {
        self.faces.iter().map(|f| f.sigma).sum()
    }

    /// Distance from interior cell `u` to the nearest boundary face center.
    pub fn delta(&self, u: usize) -> f64 {
        self.delta[u]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    /// Boundary diameter from a subsample of at most 4096 faces.
    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Faces within distance `< r` of `p`, in face order.
    pub fn faces_within(&self, p: &Point, r: f64) -> Vec<usize> {
        self.face_index.within(&self.face_points, p, r)
    }

    /// Distance from `p` to the nearest face center (brute force over buckets).
    pub fn boundary_distance(&self, p: &Point) -> f64 {
        let mut r = 4.0 * self.h;
        loop {
            let mut best = f64::INFINITY;
            self.face_index.for_candidates(p, r, |i| {
                best = best.min(dist2(&self.face_points[i], p));
            });
            if best.sqrt() <= r || r > 4.0 {
                return best.sqrt();
            }
            r *= 2.0;
        }
    }

    pub fn surface_ball(&self, center_face: usize, radius: f64) -> Result<SurfaceBall> {
        if center_face >= self.faces.len() {
            return Err(Error::InvalidParameter(format!("face {center_face} out of range")));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        let center = self.face_points[center_face];
        let members = self.faces_within(&center, radius);
        Ok(SurfaceBall { center_face, center, radius, members })
    }

    /// Interior cells with `|X - p| < r`, in cell order.
    pub fn cells_within(&self, p: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_cells_within(p, r, |u| out.push(u));
        out.sort_unstable();
        out
    }

    /// Visits interior cells with `|X - p| < r` in lattice order.
    pub fn for_cells_within(&self, p: &Point, r: f64, mut f: impl FnMut(usize)) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..self.dim {
            let l = ((p[a] - r) / self.h).ceil().max(0.0);
            let u = ((p[a] + r) / self.h).floor().min((self.n - 1) as f64);
            if u < l {
                return;
            }
            lo[a] = l as usize;
            hi[a] = u as usize;
        }
        let r2 = r * r;
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let id = lattice_id(&[i, j, k], self.n);
                    if let Some(u) = self.cell_of_lattice(id) {
                        let q = lattice_point(id, self.n, self.dim, self.h);
                        if dist2(&q, p) < r2 {
                            f(u);
                        }
                    }
                }
            }
        }
    }

    /// Exhaustive corkscrew search in `B(x, r)`, maximizing the clearance
    /// `min(δ(X), r - |X - x|)`; ties go to the lowest cell index.
    pub fn corkscrew(&self, x: &Point, r: f64) -> Result<Corkscrew> {
        self.corkscrew_masked(x, r, |_| true)
    }

    /// Corkscrew search restricted to cells accepted by `allow`.
    pub fn corkscrew_masked(&self, x: &Point, r: f64, allow: impl Fn(usize) -> bool) -> Result<Corkscrew> {
        let mut best: Option<(f64, usize)> = None;
        self.for_cells_within(x, r, |u| {
            if !allow(u) {
                return;
            }
            let clearance = self.delta[u].min(r - dist(&self.cell_point(u), x));
            match best {
                Some((c, b)) if c > clearance || (c == clearance && b < u) => {}
                _ => best = Some((clearance, u)),
            }
        });
        let (c, u) = best.ok_or(Error::DegenerateBall { x: x[0], y: x[1], z: x[2], radius: r })?;
        let c0 = c / r;
        let mut cur = self.corkscrew_inf.load(Ordering::Relaxed);
        while c0 < f64::from_bits(cur) {
            match self.corkscrew_inf.compare_exchange(cur, c0.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break,
                Err(now) => cur = now,
            }
        }
        Ok(Corkscrew { cell: u, point: self.cell_point(u), c0 })
    }

    /// Infimum of the corkscrew ratio over all searches made on this domain.
    pub fn corkscrew_infimum(&self) -> f64 {
        f64::from_bits(self.corkscrew_inf.load(Ordering::Relaxed))
    }

    /// Harnack chain between interior cells `x` and `y`, following the
    /// shortest path in the metric `|dX| / δ(X)` and covering it with balls
    /// `B(Y, 3δ(Y)/5)`.
    pub fn harnack_chain(&self, x: usize, y: usize) -> Result<HarnackChain> {
        const SHRINK: f64 = 0.6;
        let px = self.cell_point(x);
        let py = self.cell_point(y);
        let pi = dist(&px, &py) / self.delta[x].min(self.delta[y]);
        let c2 = (1.0 - SHRINK) / (2.0 * SHRINK);
        let c2 = c2.max(1.0 / c2);
        if x == y {
            return Ok(HarnackChain {
                balls: vec![(px, SHRINK * self.delta[x])],
                pi,
                c1: 1.0 / HarnackChain::log_budget(pi),
                c2,
            });
        }
        if pi <= 1.0 {
            let balls = vec![(px, SHRINK * self.delta[x]), (py, SHRINK * self.delta[y])];
            return Ok(HarnackChain { balls, pi, c1: 2.0 / HarnackChain::log_budget(pi), c2 });
        }
        let path = self.weighted_path(x, y)?;
        let radius = |u: usize| SHRINK * self.delta[u];
        let mut balls = vec![(px, radius(x))];
        let mut cur = 0usize;
        while dist(&self.cell_point(path[cur]), &py) >= radius(path[cur]) {
            let c = path[cur];
            let pc = self.cell_point(c);
            let mut next = cur + 1;
            for (j, &v) in path.iter().enumerate().skip(cur + 1) {
                if dist(&pc, &self.cell_point(v)) < radius(c) + radius(v) {
                    next = j;
                }
            }
            cur = next;
            balls.push((self.cell_point(path[cur]), radius(path[cur])));
            if cur == path.len() - 1 {
                break;
            }
        }
        let c1 = balls.len() as f64 / HarnackChain::log_budget(pi);
        Ok(HarnackChain { balls, pi, c1, c2 })
    }

    fn weighted_path(&self, x: usize, y: usize) -> Result<Vec<usize>> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        let m = self.cells.len();
        let mut best = vec![f64::INFINITY; m];
        let mut prev = vec![usize::MAX; m];
        let mut heap = BinaryHeap::new();
        best[x] = 0.0;
        heap.push(Item(0.0, x));
        let offsets = stencil_offsets(self.dim);
        while let Some(Item(d, u)) = heap.pop() {
            if d > best[u] {
                continue;
            }
            if u == y {
                break;
            }
            let c = self.cell_coords(u);
            for off in &offsets {
                let mut nc = [0usize; 3];
                let mut len2 = 0.0;
                for a in 0..3 {
                    nc[a] = (c[a] as isize + off[a]) as usize;
                    len2 += (off[a] * off[a]) as f64;
                }
                let Some(v) = self.cell_of_lattice(lattice_id(&nc, self.n)) else { continue };
                let w = len2.sqrt() * self.h * 2.0 / (self.delta[u] + self.delta[v]);
                if d + w < best[v] {
                    best[v] = d + w;
                    prev[v] = u;
                    heap.push(Item(d + w, v));
                }
            }
        }
        if !best[y].is_finite() {
            return Err(Error::Unreachable { from: x, to: y });
        }
        let mut path = vec![y];
        let mut u = y;
        while u != x {
            u = prev[u];
            path.push(u);
        }
        path.reverse();
        Ok(path)
    }

    /// Portable text dump: header lines then the run-length encoded mask.
    pub fn to_dump(&self) -> String {
        let mut out = format!("elab-grid 1\ndim {}\nresolution {}\nspacing {:.17e}\nrle", self.dim, self.n, self.h);
        let mut value = false;
        let mut run = 0usize;
        for &b in &self.interior {
            if b == value {
                run += 1;
            } else {
                out.push_str(&format!(" {run}"));
                value = b;
                run = 1;
            }
        }
        out.push_str(&format!(" {run}\n"));
        out
    }

    /// Reads a dump produced by [`GridDomain::to_dump`].
    pub fn from_dump(text: &str) -> Result<GridDomain> {
        let (dim, n, mask) = parse_dump(text)?;
        GridDomain::from_mask(dim, n, mask)
    }
}

/// Parses a grid dump into `(dim, resolution, mask)`.
pub fn parse_dump(text: &str) -> Result<(usize, usize, Vec<bool>)> {
    let mut dim = None;
    let mut n = None;
    let mut mask = Vec::new();
    let mut seen_rle = false;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("dim") => dim = it.next().and_then(|s| s.parse::<usize>().ok()),
            Some("resolution") => n = it.next().and_then(|s| s.parse::<usize>().ok()),
            Some("rle") => {
                seen_rle = true;
                let mut value = false;
                for tok in it {
                    let run: usize = tok.parse().map_err(|_| Error::Parse(format!("bad run {tok}")))?;
                    mask.extend(std::iter::repeat_n(value, run));
                    value = !value;
                }
            }
            _ => {}
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse("missing dim".into()))?;
    let n = n.ok_or_else(|| Error::Parse("missing resolution".into()))?;
    if !seen_rle || mask.len() != n.pow(dim as u32) {
        return Err(Error::Parse("mask length does not match header".into()));
    }
    Ok((dim, n, mask))
}

pub fn lattice_coords(id: usize, n: usize) -> [usize; 3] {
    [id % n, (id / n) % n, id / (n * n)]
}

pub fn lattice_id(c: &[usize; 3], n: usize) -> usize {
    c[0] + n * (c[1] + n * c[2])
}

pub fn lattice_point(id: usize, n: usize, dim: usize, h: f64) -> Point {
    let c = lattice_coords(id, n);
    let mut p = [0.0; 3];
    for a in 0..dim {
        p[a] = c[a] as f64 * h;
    }
    p
}

/// Full `3^d - 1` neighborhood offsets.
pub fn stencil_offsets(dim: usize) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    let zr: &[isize] = if dim == 3 { &[-1, 0, 1] } else { &[0] };
    for &dz in zr {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx != 0 || dy != 0 || dz != 0 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn check_connected(dim: usize, n: usize, interior: &[bool], unknown: &[u32], cells: &[usize]) -> Result<()> {
    let mut comp = vec![usize::MAX; cells.len()];
    let mut sizes = Vec::new();
    for start in 0..cells.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([start]);
        comp[start] = label;
        while let Some(u) = queue.pop_front() {
            size += 1;
            let c = lattice_coords(cells[u], n);
            for axis in 0..dim {
                for dir in [-1isize, 1] {
                    let mut nc = c;
                    nc[axis] = (nc[axis] as isize + dir) as usize;
                    let nid = lattice_id(&nc, n);
                    if interior[nid] {
                        let v = unknown[nid] as usize;
                        if comp[v] == usize::MAX {
                            comp[v] = label;
                            queue.push_back(v);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    if sizes.len() > 1 {
        return Err(Error::Disconnected { components: sizes.len(), sizes });
    }
    Ok(())
}

/// Squared 1D distance transform (lower envelope of parabolas), unit spacing.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere to the left.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Exact Euclidean distance from each interior cell to the face centers,
/// computed on the half-spacing lattice where face centers are nodes.
fn distance_transform(dim: usize, n: usize, h: f64, cells: &[usize], faces: &[BoundaryFace]) -> Vec<f64> {
    let m = 2 * n - 1;
    let total = m.pow(dim as u32);
    let mut grid = vec![f64::INFINITY; total];
    let fine_id = |c: &[usize; 3]| c[0] + m * (c[1] + m * c[2]);
    for f in faces {
        let base = lattice_coords(cells[f.cell], n);
        let mut c = [2 * base[0], 2 * base[1], 2 * base[2]];
        c[f.axis as usize] = (c[f.axis as usize] as isize + f.dir as isize) as usize;
        grid[fine_id(&c)] = 0.0;
    }
    let mut line = vec![0.0; m];
    let mut out = vec![0.0; m];
    let mut v = vec![0usize; m];
    let mut z = vec![0.0; m + 1];
    let strides = [1, m, m * m];
    for axis in 0..dim {
        let stride = strides[axis];
        let others: Vec<usize> = (0..total)
            .filter(|&id| {
                let c = [id % m, (id / m) % m, id / (m * m)];
                c[axis] == 0 && (dim == 3 || c[2] == 0)
            })
            .collect();
        for start in others {
            for i in 0..m {
                line[i] = grid[start + i * stride];
            }
            edt_1d(&line, &mut out, &mut v, &mut z);
            for i in 0..m {
                grid[start + i * stride] = out[i];
            }
        }
    }
    cells
        .iter()
        .map(|&id| {
            let c = lattice_coords(id, n);
            grid[fine_id(&[2 * c[0], 2 * c[1], 2 * c[2]])].sqrt() * 0.5 * h
        })
        .collect()
}

fn subsampled_diameter(points: &[Point], cap: usize) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let stride = points.len().div_ceil(cap).max(1);
    let sample: Vec<&Point> = points.iter().step_by(stride).collect();
    let mut best = 0.0f64;
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            best = best.max(dist2(sample[i], sample[j]));
        }
    }
    best.sqrt()
}
