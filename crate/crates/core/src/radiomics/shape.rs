use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::volgrid::BinaryMask;

pub const SHAPE_NAMES: [&str; 14] = [
    "MeshVolume",
    "VoxelVolume",
    "SurfaceArea",
    "SurfaceVolumeRatio",
    "Sphericity",
    "Maximum3DDiameter",
    "Maximum2DDiameterSlice",
    "Maximum2DDiameterColumn",
    "Maximum2DDiameterRow",
    "MajorAxisLength",
    "MinorAxisLength",
    "LeastAxisLength",
    "Elongation",
    "Flatness",
];

/// Closed triangle mesh of the mask boundary in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    /// Triangles with outward orientation (counter-clockwise seen from
    /// outside).
    pub triangles: Vec<[[f64; 3]; 3]>,
}

impl SurfaceMesh {
    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| 0.5 * cross(sub(t[1], t[0]), sub(t[2], t[0])).norm()).sum()
    }

    /// Enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| Vector3::from(t[0]).dot(&cross(t[1], t[2])) / 6.0)
            .sum()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a).cross(&Vector3::from(b))
}

/// Boundary surface of the mask by naive surface nets, the dual of marching
/// cubes. Voxel centres sit at lattice points; every lattice cell whose
/// eight corners straddle the boundary gets one vertex at the mean of its
/// crossing-edge midpoints, and every lattice edge joining an inside and an
/// outside voxel becomes a quad over the four cells around it.
pub fn surface_mesh(mask: &BinaryMask) -> SurfaceMesh {
    let g = mask.geometry();
    let dims = g.dims.map(|d| d as i64);
    let inside = |p: [i64; 3]| -> bool {
        (0..3).all(|a| p[a] >= 0 && p[a] < dims[a]) && mask.get(p[0] as usize, p[1] as usize, p[2] as usize)
    };
    // cells are named by their lowest corner and range over -1..dims
    let cell_dims = dims.map(|d| (d + 1) as usize);
    let cell_index = |c: [i64; 3]| -> usize {
        (c[0] + 1) as usize + cell_dims[0] * ((c[1] + 1) as usize + cell_dims[1] * (c[2] + 1) as usize)
    };
    let mut vertex: Vec<Option<[f64; 3]>> = vec![None; cell_dims.iter().product()];
    let mut cell_vertex = |c: [i64; 3]| -> [f64; 3] {
        let k = cell_index(c);
        if let Some(v) = vertex[k] {
            return v;
        }
        let mut sum = [0.0; 3];
        let mut n = 0.0;
        for a in 0..3 {
            let (b, d) = ((a + 1) % 3, (a + 2) % 3);
            for (i, j) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let mut p = c;
                p[b] += i;
                p[d] += j;
                let mut q = p;
                q[a] += 1;
                if inside(p) != inside(q) {
                    for e in 0..3 {
                        sum[e] += p[e] as f64 + if e == a { 0.5 } else { 0.0 };
                    }
                    n += 1.0;
                }
            }
        }
        let v = std::array::from_fn(|e| sum[e] / n * g.spacing[e]);
        vertex[k] = Some(v);
        v
    };
    let mut triangles = Vec::new();
    for z in -1..dims[2] {
        for y in -1..dims[1] {
            for x in -1..dims[0] {
                let p = [x, y, z];
                let pin = inside(p);
                for a in 0..3 {
                    let mut q = p;
                    q[a] += 1;
                    if pin == inside(q) {
                        continue;
                    }
                    let (b, d) = ((a + 1) % 3, (a + 2) % 3);
                    let around = [(1, 1), (0, 1), (0, 0), (1, 0)].map(|(i, j)| {
                        let mut c = p;
                        c[b] -= i;
                        c[d] -= j;
                        cell_vertex(c)
                    });
                    // counter-clockwise in the (b, d) plane faces +a, which
                    // is outward when p is the inside voxel
                    let [v0, v1, v2, v3] = around;
                    if pin {
                        triangles.push([v0, v1, v2]);
                        triangles.push([v0, v2, v3]);
                    } else {
                        triangles.push([v0, v2, v1]);
                        triangles.push([v0, v3, v2]);
                    }
                }
            }
        }
    }
    SurfaceMesh { triangles }
}

/// Voxels with a face neighbour outside the mask (or on the lattice edge).
fn boundary_points(mask: &BinaryMask) -> Vec<[f64; 3]> {
    let g = mask.geometry();
    let mut out = Vec::new();
    for (i, &b) in mask.data().iter().enumerate() {
        if !b {
            continue;
        }
        let c = g.coords(i);
        let edge = (0..3).any(|a| {
            [-1i64, 1].iter().any(|&d| {
                let mut n = [c[0] as i64, c[1] as i64, c[2] as i64];
                n[a] += d;
                g.checked_index(n[0], n[1], n[2]).is_none_or(|j| !mask.data()[j])
            })
        });
        if edge {
            out.push(std::array::from_fn(|a| c[a] as f64 * g.spacing[a]));
        }
    }
    out
}

/// Largest centre-to-centre distance, overall and within planes of fixed
/// z (slice), fixed y (column) and fixed x (row).
fn diameters(points: &[[f64; 3]]) -> [f64; 4] {
    let mut best = [0.0f64; 4];
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d = sub(*p, *q);
            let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            best[0] = best[0].max(d2);
            if d[2] == 0.0 {
                best[1] = best[1].max(d2);
            }
            if d[1] == 0.0 {
                best[2] = best[2].max(d2);
            }
            if d[0] == 0.0 {
                best[3] = best[3].max(d2);
            }
        }
    }
    best.map(f64::sqrt)
}

/// Eigenvalues (descending) of the population covariance of voxel-centre
/// coordinates in millimetres.
fn principal_variances(mask: &BinaryMask) -> [f64; 3] {
    let g = mask.geometry();
    let pts: Vec<Vector3<f64>> = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| {
            let c = g.coords(i);
            Vector3::new(c[0] as f64 * g.spacing[0], c[1] as f64 * g.spacing[1], c[2] as f64 * g.spacing[2])
        })
        .collect();
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Vector3<f64>>() / n;
    let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>() / n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// The 14 shape descriptors of a nonempty mask. Axis lengths are
/// `4 sqrt(eigenvalue)`; elongation and flatness are 0 when the major
/// variance is 0.
pub fn shape(mask: &BinaryMask) -> [f64; 14] {
    assert!(!mask.is_empty(), "shape of an empty mask");
    let mesh = surface_mesh(mask);
    let mesh_volume = mesh.volume();
    let area = mesh.area();
    let voxel_volume = mask.volume_mm3();
    let d = diameters(&boundary_points(mask));
    let [l1, l2, l3] = principal_variances(mask);
    let ratio = |a: f64| if l1 > 0.0 { (a / l1).sqrt() } else { 0.0 };
    [
        mesh_volume,
        voxel_volume,
        area,
        area / mesh_volume,
        (36.0 * std::f64::consts::PI * mesh_volume * mesh_volume).cbrt() / area,
        d[0],
        d[1],
        d[2],
        d[3],
        4.0 * l1.sqrt(),
        4.0 * l2.sqrt(),
        4.0 * l3.sqrt(),
        ratio(l2),
        ratio(l3),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    fn sphere(r: f64, spacing: f64) -> BinaryMask {
        let n = (2.0 * r / spacing).ceil() as usize + 5;
        let c = (n / 2) as f64;
        let g = Geometry::new([n; 3], [spacing; 3], [0.0; 3]).unwrap();
        BinaryMask::from_fn(g, |x, y, z| {
            let d2 = [x, y, z].iter().map(|&v| ((v as f64 - c) * spacing).powi(2)).sum::<f64>();
            d2 <= r * r
        })
    }

    #[test]
    fn mesh_is_closed() {
        // a closed surface encloses the same volume wherever the origin is
        let g = Geometry::unit([4, 4, 4]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| (x + 2 * y + z) % 3 != 0 && x > 0);
        let mesh = surface_mesh(&m);
        let shifted = SurfaceMesh {
            triangles: mesh.triangles.iter().map(|t| t.map(|p| [p[0] + 7.0, p[1] - 3.0, p[2] + 11.0])).collect(),
        };
        assert!((mesh.volume() - shifted.volume()).abs() < 1e-9);
        assert!(mesh.volume() > 0.0);
    }

    #[test]
    fn box_mesh_volume() {
        let g = Geometry::new([6, 5, 4], [1.0, 2.0, 0.5], [0.0; 3]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| (1..5).contains(&x) && (1..4).contains(&y) && (1..3).contains(&z));
        let f = shape(&m);
        assert_eq!(f[1], 4.0 * 3.0 * 2.0);
        assert!(f[0] > 0.0 && f[0] < f[1]);
    }

    #[test]
    fn rod_diameter() {
        let g = Geometry::unit([1, 1, 5]).unwrap();
        let m = BinaryMask::from_fn(g, |_, _, _| true);
        let f = shape(&m);
        assert_eq!(f[5], 4.0);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], 4.0);
        assert_eq!(f[8], 4.0);
    }

    #[test]
    fn sphere_r8() {
        let r = 8.0;
        let f = shape(&sphere(r, 1.0));
        let v = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert!((f[0] - v).abs() / v < 0.05, "mesh volume {}", f[0]);
        assert!(f[4] >= 0.95, "sphericity {}", f[4]);
        assert!((f[12] - 1.0).abs() < 1e-9 && (f[13] - 1.0).abs() < 1e-9);
    }
}
