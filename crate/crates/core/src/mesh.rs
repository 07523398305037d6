//! Surface meshes of binary masks and box wireframes, with OBJ/STL writers.
//!
//! Surfaces are built from exposed voxel faces, two triangles per face, so
//! area and enclosed volume match the voxel geometry exactly. Where two
//! voxels touch only along an edge, the four faces meeting at that edge are
//! split into two sheets and lattice corners are duplicated per sheet; the
//! result is a closed mesh in which every edge borders exactly two triangles.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::volume::{Mask3D, Spacing};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Triangle mesh in millimeters; triangles wind counter-clockwise seen from
/// outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn corners(&self, t: &[u32; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                norm(cross(sub(b, a), sub(c, a))) / 2.0
            })
            .sum()
    }

    /// Enclosed volume from the signed-tetrahedron sum.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Lattice point `(x, y, z)` in voxel-corner units.
type Corner = [i64; 3];

/// Face normals as `(dx, dy, dz)` together with the face's four corners
/// relative to the voxel origin, counter-clockwise seen along the normal.
const FACES: [([i64; 3], [Corner; 4]); 6] = [
    ([-1, 0, 0], [[0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]]),
    ([1, 0, 0], [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]]),
    ([0, -1, 0], [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]]),
    ([0, 1, 0], [[0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 1, 0]]),
    ([0, 0, -1], [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]]),
    ([0, 0, 1], [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]),
];

struct Face {
    /// Foreground voxel `(x, y, z)`.
    voxel: Corner,
    /// Background cell across the face; may lie outside the grid.
    outside: Corner,
    corners: [Corner; 4],
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn exposed_faces(m: &Mask3D) -> Vec<Face> {
    let dims = m.dims();
    let filled = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < dims.w
            && (y as usize) < dims.h
            && (z as usize) < dims.d
            && m.get(z as usize, y as usize, x as usize)
    };
    let mut faces = Vec::new();
    for z in 0..dims.d as i64 {
        for y in 0..dims.h as i64 {
            for x in 0..dims.w as i64 {
                if !filled(x, y, z) {
                    continue;
                }
                for (n, quad) in FACES {
                    if filled(x + n[0], y + n[1], z + n[2]) {
                        continue;
                    }
                    faces.push(Face {
                        voxel: [x, y, z],
                        outside: [x + n[0], y + n[1], z + n[2]],
                        corners: quad.map(|c| [x + c[0], y + c[1], z + c[2]]),
                    });
                }
            }
        }
    }
    faces
}

/// Faces incident to one lattice edge: `(face, local corner a, local corner b)`.
type EdgeFaces = Vec<(usize, usize, usize)>;

/// Groups face edges by lattice edge, in order of first appearance.
fn edge_table(faces: &[Face]) -> Vec<EdgeFaces> {
    let mut index: HashMap<(Corner, Corner), usize> = HashMap::new();
    let mut table: Vec<EdgeFaces> = Vec::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..4 {
            let (a, b) = (k, (k + 1) % 4);
            let (ca, cb) = (f.corners[a], f.corners[b]);
            let (key, ends) = if ca < cb {
                ((ca, cb), (a, b))
            } else {
                ((cb, ca), (b, a))
            };
            let slot = *index.entry(key).or_insert_with(|| {
                table.push(Vec::new());
                table.len() - 1
            });
            table[slot].push((fi, ends.0, ends.1));
        }
    }
    table
}

/// Pairs the faces at one edge. Two faces pair trivially; four faces (two
/// voxels touching along the edge) pair by shared foreground voxel, or by
/// shared background cell when `by_background` is set.
fn pair_faces(
    faces: &[Face],
    at_edge: &EdgeFaces,
    by_background: bool,
) -> Vec<[(usize, usize, usize); 2]> {
    match at_edge.len() {
        2 => vec![[at_edge[0], at_edge[1]]],
        4 => {
            let key = |i: usize| {
                let f = &faces[at_edge[i].0];
                if by_background {
                    f.outside
                } else {
                    f.voxel
                }
            };
            let partner = (1..4).find(|&j| key(j) == key(0)).expect("paired face");
            let rest: Vec<usize> = (1..4).filter(|&j| j != partner).collect();
            vec![
                [at_edge[0], at_edge[partner]],
                [at_edge[rest[0]], at_edge[rest[1]]],
            ]
        }
        n => unreachable!("a lattice edge borders 2 or 4 exposed faces, found {n}"),
    }
}

/// Resolves each face corner to a vertex copy: corners of faces that are
/// chained through paired edges around the same lattice point share a copy.
fn resolve_corners(faces: &[Face], edges: &[EdgeFaces]) -> UnionFind {
    let mut by_background = vec![false; edges.len()];
    loop {
        let mut uf = UnionFind::new(faces.len() * 4);
        for (e, at_edge) in edges.iter().enumerate() {
            for [(f, fa, fb), (g, ga, gb)] in pair_faces(faces, at_edge, by_background[e]) {
                uf.union(f * 4 + fa, g * 4 + ga);
                uf.union(f * 4 + fb, g * 4 + gb);
            }
        }
        // An edge whose two sheets still share copies at both ends would be
        // bordered by four triangles; re-pair it the other way and retry.
        // Re-pairing only splits corner groups, so this terminates.
        let mut changed = false;
        for (e, at_edge) in edges.iter().enumerate() {
            if at_edge.len() != 4 || by_background[e] {
                continue;
            }
            let [p, q] = <[_; 2]>::try_from(pair_faces(faces, at_edge, false)).unwrap();
            let ends = |uf: &mut UnionFind, (f, a, b): (usize, usize, usize)| {
                (uf.find(f * 4 + a), uf.find(f * 4 + b))
            };
            if ends(&mut uf, p[0]) == ends(&mut uf, q[0]) {
                by_background[e] = true;
                changed = true;
            }
        }
        if !changed {
            return uf;
        }
    }
}

/// Voxel-face surface of `m`, scaled by `spacing`.
pub fn extract_surface(m: &Mask3D, spacing: Spacing) -> Mesh {
    let faces = exposed_faces(m);
    if faces.is_empty() {
        return Mesh::default();
    }
    let edges = edge_table(&faces);
    let mut uf = resolve_corners(&faces, &edges);

    let mut vertex_of_root: HashMap<usize, u32> = HashMap::new();
    let mut mesh = Mesh::default();
    for (fi, f) in faces.iter().enumerate() {
        let mut ids = [0u32; 4];
        for k in 0..4 {
            let root = uf.find(fi * 4 + k);
            ids[k] = *vertex_of_root.entry(root).or_insert_with(|| {
                let c = f.corners[k];
                mesh.vertices.push([
                    c[0] as f64 * spacing.x,
                    c[1] as f64 * spacing.y,
                    c[2] as f64 * spacing.z,
                ]);
                (mesh.vertices.len() - 1) as u32
            });
        }
        mesh.triangles.push([ids[0], ids[1], ids[2]]);
        mesh.triangles.push([ids[0], ids[2], ids[3]]);
    }
    mesh
}

/// Half-open voxel box `[min, max)` per axis, `(z, y, x)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelBox {
    pub z: (usize, usize),
    pub y: (usize, usize),
    pub x: (usize, usize),
}

/// Box edges as 8 corner points and 12 index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSet {
    pub vertices: Vec<[f64; 3]>,
    pub edges: Vec<[u32; 2]>,
}

pub fn bbox_wireframe(b: VoxelBox, spacing: Spacing) -> Result<LineSet, MeshError> {
    for (axis, (lo, hi)) in [("z", b.z), ("y", b.y), ("x", b.x)] {
        if lo >= hi {
            return Err(MeshError::DegenerateBox(format!(
                "{axis} range [{lo}, {hi}) is empty"
            )));
        }
    }
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        let pick = |bit: usize, (lo, hi): (usize, usize)| if i & bit == 0 { lo } else { hi } as f64;
        vertices.push([
            pick(1, b.x) * spacing.x,
            pick(2, b.y) * spacing.y,
            pick(4, b.z) * spacing.z,
        ]);
    }
    // Corners differing in exactly one bit are joined.
    let mut edges = Vec::with_capacity(12);
    for i in 0u32..8 {
        for bit in [1, 2, 4] {
            if i & bit == 0 {
                edges.push([i, i | bit]);
            }
        }
    }
    Ok(LineSet { vertices, edges })
}

fn create(path: &Path) -> Result<BufWriter<File>, MeshError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// OBJ text with 6-decimal vertices, 1-based faces and optional line records.
pub fn obj_string(mesh: &Mesh, lines: Option<&LineSet>) -> String {
    let mut out = String::new();
    use std::fmt::Write as _;
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    if let Some(ls) = lines {
        let base = mesh.vertices.len() as u32;
        for v in &ls.vertices {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for e in &ls.edges {
            let _ = writeln!(out, "l {} {}", base + e[0] + 1, base + e[1] + 1);
        }
    }
    out
}

pub fn write_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(obj_string(mesh, None).as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

pub fn stl_bytes(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    let mut header = [0u8; 80];
    let tag = b"binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = mesh.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        let n = if len > 0.0 { n.map(|v| v / len) } else { n };
        for v in [n, a, b, c] {
            for comp in v {
                out.extend_from_slice(&(comp as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn write_stl_binary(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(&stl_bytes(mesh))
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;

    fn mask(d: usize, h: usize, w: usize, on: &[(usize, usize, usize)]) -> Mask3D {
        let mut m = Mask3D::empty(Dims3::new(d, h, w).unwrap(), Spacing::unit());
        for &(z, y, x) in on {
            m.set(z, y, x, true);
        }
        m
    }

    #[test]
    fn face_table_winds_outward() {
        for (n, quad) in FACES {
            let f = |c: Corner| c.map(|v| v as f64);
            let normal = cross(sub(f(quad[1]), f(quad[0])), sub(f(quad[2]), f(quad[0])));
            assert_eq!(normal, n.map(|v| v as f64));
        }
    }

    #[test]
    fn empty_mask_empty_mesh() {
        let m = extract_surface(&mask(2, 2, 2, &[]), Spacing::unit());
        assert!(m.vertices.is_empty() && m.triangles.is_empty());
    }

    #[test]
    fn single_voxel_cube() {
        let m = extract_surface(&mask(1, 1, 1, &[(0, 0, 0)]), Spacing::unit());
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bar_area() {
        let m = extract_surface(&mask(1, 1, 2, &[(0, 0, 0), (0, 0, 1)]), Spacing::unit());
        assert!((m.surface_area() - 10.0).abs() < 1e-12);
        assert_eq!(m.vertices.len(), 12);
    }

    #[test]
    fn edge_contact_splits_vertices() {
        // Two voxels sharing only the edge x=1,y=1.
        let m = extract_surface(&mask(1, 2, 2, &[(0, 0, 0), (0, 1, 1)]), Spacing::unit());
        assert_eq!(m.vertices.len(), 16);
        assert_eq!(m.triangles.len(), 24);
    }

    #[test]
    fn spacing_scales_coordinates() {
        let s = Spacing::new(2.0, 0.5, 0.25).unwrap();
        let m = extract_surface(&mask(1, 1, 1, &[(0, 0, 0)]), s);
        assert!((m.signed_volume() - 0.25).abs() < 1e-12);
        assert!(m.vertices.contains(&[0.25, 0.5, 2.0]));
    }

    #[test]
    fn wireframe_unit_box() {
        let b = VoxelBox {
            z: (0, 1),
            y: (0, 1),
            x: (0, 1),
        };
        let ls = bbox_wireframe(b, Spacing::unit()).unwrap();
        assert_eq!(ls.vertices.len(), 8);
        assert_eq!(ls.edges.len(), 12);
        for v in &ls.vertices {
            assert!(v.iter().all(|&c| c == 0.0 || c == 1.0));
        }
        for e in &ls.edges {
            let (a, b) = (ls.vertices[e[0] as usize], ls.vertices[e[1] as usize]);
            assert!((norm(sub(a, b)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wireframe_scales_z() {
        let b = VoxelBox {
            z: (3, 5),
            y: (0, 4),
            x: (1, 2),
        };
        let ls = bbox_wireframe(b, Spacing::new(2.0, 1.0, 1.0).unwrap()).unwrap();
        let zs: Vec<f64> = ls.vertices.iter().map(|v| v[2]).collect();
        let extent = zs.iter().cloned().fold(f64::MIN, f64::max) - zs.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(extent, 4.0);
    }

    #[test]
    fn wireframe_rejects_zero_width() {
        let b = VoxelBox {
            z: (0, 1),
            y: (0, 1),
            x: (2, 2),
        };
        assert!(matches!(
            bbox_wireframe(b, Spacing::unit()),
            Err(MeshError::DegenerateBox(_))
        ));
    }

    #[test]
    fn obj_counts() {
        let m = extract_surface(&mask(1, 1, 1, &[(0, 0, 0)]), Spacing::unit());
        let s = obj_string(&m, None);
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 12);
        assert!(s.starts_with("v 0.000000 0.000000 0.000000\n"));
        assert_eq!(obj_string(&Mesh::default(), None), "");
    }

    #[test]
    fn empty_stl_has_zero_count() {
        let b = stl_bytes(&Mesh::default());
        assert_eq!(b.len(), 84);
        assert_eq!(u32::from_le_bytes(b[80..84].try_into().unwrap()), 0);
    }
}
