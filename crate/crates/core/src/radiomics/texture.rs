//! Gray-level texture matrices and their features.
//!
//! All matrices are indexed by gray level `1..=ng` (row `i - 1`). GLCM and
//! GLRLM features are computed per direction and averaged over the
//! directions whose matrix is nonempty; GLSZM zones are 26-connected; GLDM
//! counts 26-neighbours of identical level.

use super::{DiscretizedVolume, RadiomicsError};

/// The 13 unique unit offsets of the 26-neighbourhood, one per +/- pair.
pub const OFFSETS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [-1, 1, 0],
    [0, 1, 0],
    [1, 1, 0],
    [-1, -1, 1],
    [0, -1, 1],
    [1, -1, 1],
    [-1, 0, 1],
    [0, 0, 1],
    [1, 0, 1],
    [-1, 1, 1],
    [0, 1, 1],
    [1, 1, 1],
];

pub const GLCM_NAMES: [&str; 22] = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumEntropy",
    "SumSquares",
];

pub const GLRLM_NAMES: [&str; 16] = [
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
];

pub const GLSZM_NAMES: [&str; 16] = [
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "GrayLevelVariance",
    "ZoneVariance",
    "ZoneEntropy",
    "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
];

pub const GLDM_NAMES: [&str; 14] = [
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
    "GrayLevelNonUniformity",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "GrayLevelVariance",
    "DependenceVariance",
    "DependenceEntropy",
    "LowGrayLevelEmphasis",
    "HighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
];

/// Positions of the GLDM features inside the shared size-matrix feature set.
const GLDM_FROM_SIZE: [usize; 14] = [0, 1, 2, 4, 5, 7, 8, 9, 10, 11, 12, 13, 14, 15];

/// Dense count matrix with `rows` gray levels and `cols` size bins
/// (co-occurrence partner level, run length, zone size or dependence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, counts: vec![0; rows * cols] }
    }

    /// Count at 1-based level `i` and 1-based column `j`.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[(i - 1) * self.cols + (j - 1)]
    }

    fn bump(&mut self, i: usize, j: usize) {
        self.counts[(i - 1) * self.cols + (j - 1)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn log2_term(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn require_two(dv: &DiscretizedVolume) -> Result<(), RadiomicsError> {
    let n = dv.roi_count();
    if n < 2 {
        Err(RadiomicsError::TooFewVoxels(n))
    } else {
        Ok(())
    }
}

fn neighbour(dv: &DiscretizedVolume, c: [usize; 3], d: [i64; 3]) -> Option<usize> {
    let p: [i64; 3] = std::array::from_fn(|a| c[a] as i64 + d[a]);
    if (0..3).any(|a| p[a] < 0 || p[a] >= dv.dims[a] as i64) {
        return None;
    }
    Some(dv.index([p[0] as usize, p[1] as usize, p[2] as usize]))
}

/// Symmetric co-occurrence counts for one offset.
pub fn glcm_matrix(dv: &DiscretizedVolume, offset: [i64; 3]) -> CountMatrix {
    let ng = dv.ng as usize;
    let mut m = CountMatrix::zeros(ng, ng);
    for (i, &a) in dv.levels.iter().enumerate() {
        if a == 0 {
            continue;
        }
        if let Some(j) = neighbour(dv, dv.coords(i), offset) {
            let b = dv.levels[j];
            if b != 0 {
                m.bump(a as usize, b as usize);
                m.bump(b as usize, a as usize);
            }
        }
    }
    m
}

/// GLCM features of one symmetric count matrix; `None` when it is empty.
pub fn glcm_features_of(m: &CountMatrix) -> Option<[f64; 22]> {
    let ng = m.rows;
    let total = m.total();
    if total == 0 {
        return None;
    }
    let p = |i: usize, j: usize| m.get(i, j) as f64 / total as f64;
    let mut px = vec![0.0; ng + 1];
    let mut py = vec![0.0; ng + 1];
    let mut psum = vec![0.0; 2 * ng + 1];
    let mut pdiff = vec![0.0; ng];
    for i in 1..=ng {
        for j in 1..=ng {
            let v = p(i, j);
            px[i] += v;
            py[j] += v;
            psum[i + j] += v;
            pdiff[i.abs_diff(j)] += v;
        }
    }
    let mux: f64 = (1..=ng).map(|i| i as f64 * px[i]).sum();
    let muy: f64 = (1..=ng).map(|j| j as f64 * py[j]).sum();
    let sdx = (1..=ng).map(|i| (i as f64 - mux).powi(2) * px[i]).sum::<f64>().sqrt();
    let sdy = (1..=ng).map(|j| (j as f64 - muy).powi(2) * py[j]).sum::<f64>().sqrt();
    let ngf = ng as f64;

    let mut f = [0.0; 22];
    let (mut hxy, mut hxy1, mut hxy2) = (0.0, 0.0, 0.0);
    for i in 1..=ng {
        for j in 1..=ng {
            let v = p(i, j);
            let (fi, fj) = (i as f64, j as f64);
            let d = fi - fj;
            let s = fi + fj - mux - muy;
            f[0] += v * fi * fj;
            f[2] += v * s.powi(4);
            f[3] += v * s.powi(3);
            f[4] += v * s * s;
            f[5] += v * d * d;
            f[10] += v * v;
            f[14] += v / (1.0 + d * d);
            f[15] += v / (1.0 + d * d / (ngf * ngf));
            f[16] += v / (1.0 + d.abs());
            f[17] += v / (1.0 + d.abs() / ngf);
            if i != j {
                f[18] += v / (d * d);
            }
            f[19] = f64::max(f[19], v);
            f[21] += v * (fi - mux).powi(2);
            hxy -= log2_term(v);
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy1 -= v * pxy.log2();
                hxy2 -= pxy * pxy.log2();
            }
        }
    }
    f[1] = mux;
    f[6] = if sdx * sdy > 0.0 { (f[0] - mux * muy) / (sdx * sdy) } else { 1.0 };
    f[7] = (0..ng).map(|k| k as f64 * pdiff[k]).sum();
    f[8] = -(0..ng).map(|k| log2_term(pdiff[k])).sum::<f64>();
    f[9] = (0..ng).map(|k| (k as f64 - f[7]).powi(2) * pdiff[k]).sum();
    f[11] = hxy;
    let hx = -(1..=ng).map(|i| log2_term(px[i])).sum::<f64>();
    let hy = -(1..=ng).map(|j| log2_term(py[j])).sum::<f64>();
    let hmax = hx.max(hy);
    f[12] = if hmax > 0.0 { (hxy - hxy1) / hmax } else { 0.0 };
    f[13] = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();
    f[20] = -(2..=2 * ng).map(|k| log2_term(psum[k])).sum::<f64>();
    Some(f)
}

fn average<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> [f64; N] {
    let mut acc = [0.0; N];
    let mut n = 0;
    for r in rows {
        for k in 0..N {
            acc[k] += r[k];
        }
        n += 1;
    }
    if n > 0 {
        for v in &mut acc {
            *v /= n as f64;
        }
    }
    acc
}

/// GLCM features averaged over the 13 offsets. A roi with no neighbouring
/// voxel pairs yields zeros.
pub fn glcm(dv: &DiscretizedVolume) -> Result<[f64; 22], RadiomicsError> {
    require_two(dv)?;
    Ok(average(OFFSETS.iter().filter_map(|&o| glcm_features_of(&glcm_matrix(dv, o)))))
}

/// Run-length counts along one direction; columns are run lengths
/// `1..=max(dims)`.
pub fn glrlm_matrix(dv: &DiscretizedVolume, dir: [i64; 3]) -> CountMatrix {
    let max_len = *dv.dims.iter().max().unwrap();
    let mut m = CountMatrix::zeros(dv.ng as usize, max_len);
    let back = dir.map(|d| -d);
    for (i, &a) in dv.levels.iter().enumerate() {
        if a == 0 {
            continue;
        }
        let c = dv.coords(i);
        if neighbour(dv, c, back).is_some_and(|j| dv.levels[j] == a) {
            continue;
        }
        let mut len = 1;
        let mut cur = c;
        while let Some(j) = neighbour(dv, cur, dir) {
            if dv.levels[j] != a {
                break;
            }
            len += 1;
            cur = dv.coords(j);
        }
        m.bump(a as usize, len);
    }
    m
}

/// The 16 size-matrix features shared by GLRLM and GLSZM, for count matrix
/// `m` over `np` roi voxels. `None` when the matrix is empty.
pub fn size_features_of(m: &CountMatrix, np: usize) -> Option<[f64; 16]> {
    let nz = m.total() as f64;
    if nz == 0.0 {
        return None;
    }
    let mut f = [0.0; 16];
    let mut row = vec![0.0; m.rows + 1];
    let mut col = vec![0.0; m.cols + 1];
    let (mut mui, mut muj) = (0.0, 0.0);
    for i in 1..=m.rows {
        for j in 1..=m.cols {
            let c = m.get(i, j) as f64;
            if c == 0.0 {
                continue;
            }
            row[i] += c;
            col[j] += c;
            let p = c / nz;
            mui += p * i as f64;
            muj += p * j as f64;
        }
    }
    for i in 1..=m.rows {
        for j in 1..=m.cols {
            let c = m.get(i, j) as f64;
            if c == 0.0 {
                continue;
            }
            let p = c / nz;
            let (i2, j2) = ((i * i) as f64, (j * j) as f64);
            f[0] += p / j2;
            f[1] += p * j2;
            f[7] += p * (i as f64 - mui).powi(2);
            f[8] += p * (j as f64 - muj).powi(2);
            f[9] -= log2_term(p);
            f[10] += p / i2;
            f[11] += p * i2;
            f[12] += p / (i2 * j2);
            f[13] += p * i2 / j2;
            f[14] += p * j2 / i2;
            f[15] += p * i2 * j2;
        }
    }
    let gln: f64 = row.iter().map(|r| r * r).sum();
    let sn: f64 = col.iter().map(|c| c * c).sum();
    f[2] = gln / nz;
    f[3] = gln / (nz * nz);
    f[4] = sn / nz;
    f[5] = sn / (nz * nz);
    f[6] = nz / np as f64;
    Some(f)
}

pub fn glrlm(dv: &DiscretizedVolume) -> Result<[f64; 16], RadiomicsError> {
    require_two(dv)?;
    let np = dv.roi_count();
    Ok(average(OFFSETS.iter().filter_map(|&o| size_features_of(&glrlm_matrix(dv, o), np))))
}

/// Zone counts: 26-connected groups of equal level; columns are zone sizes
/// `1..=roi voxels`.
pub fn glszm_matrix(dv: &DiscretizedVolume) -> CountMatrix {
    let np = dv.roi_count().max(1);
    let mut m = CountMatrix::zeros(dv.ng as usize, np);
    let mut seen = vec![false; dv.levels.len()];
    let mut stack = Vec::new();
    for start in 0..dv.levels.len() {
        let a = dv.levels[start];
        if a == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let c = dv.coords(i);
            for d in neighbourhood26() {
                if let Some(j) = neighbour(dv, c, d) {
                    if !seen[j] && dv.levels[j] == a {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        m.bump(a as usize, size);
    }
    m
}

pub fn glszm(dv: &DiscretizedVolume) -> Result<[f64; 16], RadiomicsError> {
    require_two(dv)?;
    Ok(size_features_of(&glszm_matrix(dv), dv.roi_count()).expect("nonempty roi has zones"))
}

fn neighbourhood26() -> impl Iterator<Item = [i64; 3]> {
    (-1..=1)
        .flat_map(|z| (-1..=1).flat_map(move |y| (-1..=1).map(move |x| [x, y, z])))
        .filter(|d| *d != [0, 0, 0])
}

/// Dependence counts with cutoff 0: column `j` holds voxels with `j - 1`
/// equal-level roi neighbours (`j` in `1..=27`).
pub fn gldm_matrix(dv: &DiscretizedVolume) -> CountMatrix {
    let mut m = CountMatrix::zeros(dv.ng as usize, 27);
    for (i, &a) in dv.levels.iter().enumerate() {
        if a == 0 {
            continue;
        }
        let c = dv.coords(i);
        let dep = neighbourhood26().filter(|&d| neighbour(dv, c, d).is_some_and(|j| dv.levels[j] == a)).count();
        m.bump(a as usize, dep + 1);
    }
    m
}

pub fn gldm(dv: &DiscretizedVolume) -> Result<[f64; 14], RadiomicsError> {
    require_two(dv)?;
    let all = size_features_of(&gldm_matrix(dv), dv.roi_count()).expect("nonempty roi");
    Ok(GLDM_FROM_SIZE.map(|k| all[k]))
}
