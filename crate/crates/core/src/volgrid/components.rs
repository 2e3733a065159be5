use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Geometry};

/// Summary of one connected instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub id: u32,
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub longest_axial_diameter_mm: f64,
    /// Physical centroid (mm).
    pub centroid: [f64; 3],
}

/// Instance ids per voxel (0 = background) plus per-instance summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabeling {
    geom: Geometry,
    ids: Vec<u32>,
    instances: Vec<InstanceInfo>,
}

impl InstanceLabeling {
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn instances(&self) -> &[InstanceInfo] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, id: u32) -> Option<&InstanceInfo> {
        id.checked_sub(1).and_then(|i| self.instances.get(i as usize))
    }

    pub fn instance_mask(&self, id: u32) -> BinaryMask {
        BinaryMask::new(self.geom, self.ids.iter().map(|&i| i == id).collect())
            .expect("labeling buffer matches its geometry")
    }

    /// Builds a labeling from raw ids, e.g. loaded from disk. Ids need not be
    /// contiguous; they are relabelled in order of first appearance.
    pub fn from_ids(geom: Geometry, raw: &[u32]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let ids: Vec<u32> = raw
            .iter()
            .map(|&r| {
                if r == 0 {
                    0
                } else {
                    let next = remap.len() as u32 + 1;
                    *remap.entry(r).or_insert(next)
                }
            })
            .collect();
        let instances = summarize(&geom, &ids, remap.len());
        Self { geom, ids, instances }
    }
}

const NEIGHBORS_26: [(i64, i64, i64); 26] = {
    let mut out = [(0i64, 0i64, 0i64); 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = (dx, dy, dz);
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// 26-connected components. Ids are assigned in raster order of each
/// component's first voxel.
pub fn connected_components(m: &BinaryMask) -> InstanceLabeling {
    let geom = *m.geometry();
    let mask = m.data();
    let mut ids = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = geom.coords(i);
            for &(dx, dy, dz) in &NEIGHBORS_26 {
                if let Some(j) = geom.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
                    if mask[j] && ids[j] == 0 {
                        ids[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    let instances = summarize(&geom, &ids, next as usize);
    InstanceLabeling { geom, ids, instances }
}

fn summarize(geom: &Geometry, ids: &[u32], n: usize) -> Vec<InstanceInfo> {
    let mut count = vec![0usize; n];
    let mut sum = vec![[0.0f64; 3]; n];
    let mut members: Vec<Vec<[usize; 3]>> = vec![Vec::new(); n];
    for (i, &id) in ids.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let k = id as usize - 1;
        let c = geom.coords(i);
        let w = geom.world(c);
        count[k] += 1;
        for a in 0..3 {
            sum[k][a] += w[a];
        }
        members[k].push(c);
    }
    (0..n)
        .map(|k| InstanceInfo {
            id: k as u32 + 1,
            voxel_count: count[k],
            volume_mm3: count[k] as f64 * geom.voxel_volume(),
            longest_axial_diameter_mm: axial_diameter_of(geom, &members[k]),
            centroid: sum[k].map(|s| s / count[k].max(1) as f64),
        })
        .collect()
}

/// Longest in-plane distance between boundary pixel centres over all axial
/// slices of the instance marked in `m`. A single voxel has diameter 0.
pub fn longest_axial_diameter(m: &BinaryMask) -> f64 {
    let geom = m.geometry();
    let voxels: Vec<[usize; 3]> = m
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| geom.coords(i))
        .collect();
    axial_diameter_of(geom, &voxels)
}

fn axial_diameter_of(geom: &Geometry, voxels: &[[usize; 3]]) -> f64 {
    if voxels.is_empty() {
        return 0.0;
    }
    let mut by_z: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for v in voxels {
        by_z.entry(v[2]).or_default().push((v[0], v[1]));
    }
    let (sx, sy) = (geom.spacing[0], geom.spacing[1]);
    let mut best = 0.0f64;
    for pixels in by_z.values() {
        let set: std::collections::HashSet<(usize, usize)> = pixels.iter().copied().collect();
        let inside = |x: i64, y: i64| x >= 0 && y >= 0 && set.contains(&(x as usize, y as usize));
        let boundary: Vec<(f64, f64)> = pixels
            .iter()
            .filter(|&&(x, y)| {
                let (x, y) = (x as i64, y as i64);
                !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1))
            })
            .map(|&(x, y)| (x as f64 * sx, y as f64 * sy))
            .collect();
        for i in 0..boundary.len() {
            for j in i + 1..boundary.len() {
                let dx = boundary[i].0 - boundary[j].0;
                let dy = boundary[i].1 - boundary[j].1;
                best = best.max((dx * dx + dy * dy).sqrt());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_disjoint_cubes() {
        let g = Geometry::unit([6, 3, 3]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| y < 2 && z < 2 && (x < 2 || (3..5).contains(&x)));
        let lab = connected_components(&m);
        assert_eq!(lab.len(), 2);
        assert!(lab.instances().iter().all(|i| i.voxel_count == 8 && i.volume_mm3 == 8.0));
        assert_eq!(lab.ids()[0], 1);
    }

    #[test]
    fn diagonal_contact_is_connected() {
        let g = Geometry::unit([2, 2, 2]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| (x, y, z) == (0, 0, 0) || (x, y, z) == (1, 1, 1));
        assert_eq!(connected_components(&m).len(), 1);
    }

    /// Union-find over all 26-adjacent foreground pairs.
    fn union_find_partition(m: &BinaryMask) -> Vec<usize> {
        let g = m.geometry();
        let n = g.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in 0..n {
                if i < j && m.data()[i] && m.data()[j] {
                    let a = g.coords(i);
                    let b = g.coords(j);
                    if (0..3).all(|k| a[k].abs_diff(b[k]) <= 1) {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    #[test]
    fn matches_union_find_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dims in [[8, 8, 8], [10, 10, 10], [5, 7, 3]] {
            for density in [0.1, 0.25, 0.4] {
                let g = Geometry::unit(dims).unwrap();
                let m = BinaryMask::from_fn(g, |_, _, _| rng.random::<f64>() < density);
                let lab = connected_components(&m);
                let roots = union_find_partition(&m);
                for i in 0..g.len() {
                    for j in 0..g.len() {
                        if m.data()[i] && m.data()[j] {
                            assert_eq!(lab.ids()[i] == lab.ids()[j], roots[i] == roots[j]);
                        }
                    }
                }
                // idempotent: relabelling a single component yields one instance
                for inst in lab.instances() {
                    assert_eq!(connected_components(&lab.instance_mask(inst.id)).len(), 1);
                }
            }
        }
    }

    #[test]
    fn diameter_cases() {
        let g = Geometry::unit([3, 3, 3]).unwrap();
        let single = BinaryMask::from_fn(g, |x, y, z| (x, y, z) == (1, 1, 1));
        assert_eq!(longest_axial_diameter(&single), 0.0);

        let g2 = Geometry::new([7, 3, 3], [2.0; 3], [0.0; 3]).unwrap();
        let row = BinaryMask::from_fn(g2, |x, y, z| (1..6).contains(&x) && y == 1 && z == 1);
        assert!((longest_axial_diameter(&row) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_diameter_within_five_percent() {
        let g = Geometry::unit([25, 25, 25]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| {
            let d = [x as f64 - 12.0, y as f64 - 12.0, z as f64 - 12.0];
            d.iter().map(|v| v * v).sum::<f64>() <= 100.0
        });
        let d = longest_axial_diameter(&m);
        assert!((d - 20.0).abs() / 20.0 <= 0.05, "{d}");
        let lab = connected_components(&m);
        assert!((lab.instances()[0].longest_axial_diameter_mm - d).abs() < 1e-12);
    }
}
