//! Match database loading, two-view model re-estimation, and
//! connectivity-preserving pair filtering.
//!
//! On-disk layout of a match directory (all binary data little-endian):
//! - `manifest.tsv`: one image per line, `image_id name width height camera_id`,
//!   tab-separated;
//! - `pairs.tsv`: one pair per line, `pair_index i j kind inlier_count m00..m22`
//!   with `kind` in {F, H} and the nine model entries row-major;
//! - `pair_<index>.bin`: `u32` correspondence count, then count records of
//!   four `f32`s `x1 y1 x2 y2` in pixels (origin top-left, +x right, +y down).
//!
//! Keypoints are deduplicated per image by exact coordinate bits while
//! loading, so the same physical keypoint shared by several pairs maps to a
//! single index; track construction relies on this.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SymmetricEigen};

use crate::geometry::{Mat3, ModelKind, TwoViewModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("need at least {needed} active correspondences, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("degenerate point configuration for model estimation")]
    DegenerateConfiguration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u32,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub camera_id: u32,
}

/// Per-image keypoint store. `pixels` holds the raw observed coordinates and
/// never changes; `norm` holds calibrated (undistorted, normalized)
/// coordinates once intrinsics are known.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Keypoints {
    pub pixels: Vec<[f64; 2]>,
    pub norm: Vec<[f64; 2]>,
}

/// Verified correspondences between one image pair (`i < j` by image id).
#[derive(Debug, Clone)]
pub struct MatchPair {
    pub i: u32,
    pub j: u32,
    /// keypoint indices into the two images' tables, parallel arrays
    pub kp1: Vec<u32>,
    pub kp2: Vec<u32>,
    /// frontend (later: re-estimated) model in pixel coordinates
    pub model: Option<TwoViewModel>,
    /// model mapped to normalized camera coordinates by calibration
    pub calibrated_model: Option<TwoViewModel>,
    pub inlier_count: u32,
    pub active: Vec<bool>,
    /// correspondences at indices >= this were added by track completion
    pub synthetic_from: usize,
}

impl MatchPair {
    pub fn len(&self) -> usize {
        self.kp1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp1.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchGraph {
    /// sorted by image id
    pub images: Vec<ImageRecord>,
    /// sorted distinct camera ids
    pub cameras: Vec<u32>,
    pub pairs: Vec<MatchPair>,
    /// parallel to `images`
    pub keypoints: Vec<Keypoints>,
    pub calibrated: bool,
    index: BTreeMap<u32, usize>,
}

impl MatchGraph {
    pub fn new(images: Vec<ImageRecord>) -> Self {
        let mut images = images;
        images.sort_by_key(|im| im.id);
        let index = images.iter().enumerate().map(|(k, im)| (im.id, k)).collect();
        let mut cameras: Vec<u32> = images.iter().map(|im| im.camera_id).collect();
        cameras.sort_unstable();
        cameras.dedup();
        let keypoints = images.iter().map(|_| Keypoints::default()).collect();
        MatchGraph { images, cameras, pairs: Vec::new(), keypoints, calibrated: false, index }
    }

    pub fn image_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// pair indices incident to each image (by image index)
    pub fn pairs_by_image(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.images.len()];
        for (pi, p) in self.pairs.iter().enumerate() {
            out[self.index[&p.i]].push(pi);
            out[self.index[&p.j]].push(pi);
        }
        out
    }

    /// Existing pair index for the unordered image pair, if any.
    pub fn find_pair(&self, i: u32, j: u32) -> Option<usize> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().position(|p| p.i == a && p.j == b)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        for im in &self.images {
            if im.width == 0 || im.height == 0 {
                return Err(IngestError::Integrity(format!(
                    "image {} has zero dimension",
                    im.id
                )));
            }
        }
        for (pi, p) in self.pairs.iter().enumerate() {
            if p.i >= p.j {
                return Err(IngestError::Integrity(format!("pair {pi} not ordered i < j")));
            }
            let (ii, ij) = match (self.image_index(p.i), self.image_index(p.j)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(IngestError::Integrity(format!(
                        "pair {pi} references unknown image ({}, {})",
                        p.i, p.j
                    )))
                }
            };
            if p.kp1.len() != p.kp2.len() || p.kp1.len() != p.active.len() {
                return Err(IngestError::Integrity(format!("pair {pi} length mismatch")));
            }
            if let Some(model) = &p.model {
                if model.kind == ModelKind::Fundamental && p.len() < 8 {
                    return Err(IngestError::Integrity(format!(
                        "fundamental pair {pi} has {} < 8 correspondences",
                        p.len()
                    )));
                }
            }
            let (n1, n2) = (self.keypoints[ii].pixels.len(), self.keypoints[ij].pixels.len());
            if p.kp1.iter().any(|&k| k as usize >= n1) || p.kp2.iter().any(|&k| k as usize >= n2) {
                return Err(IngestError::Integrity(format!("pair {pi} keypoint out of range")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Parse { file: file.display().to_string(), line, msg: msg.into() }
}

/// Loads a match directory into a fully indexed graph.
pub fn load_match_graph(dir: &Path) -> Result<MatchGraph, IngestError> {
    let manifest_path = dir.join("manifest.tsv");
    let manifest = fs::read_to_string(&manifest_path)?;
    let mut images = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(&manifest_path, lineno + 1, "expected 5 tab-separated fields"));
        }
        let id = fields[0]
            .parse::<u32>()
            .map_err(|e| parse_err(&manifest_path, lineno + 1, format!("image_id: {e}")))?;
        let width = fields[2]
            .parse::<u32>()
            .map_err(|e| parse_err(&manifest_path, lineno + 1, format!("width: {e}")))?;
        let height = fields[3]
            .parse::<u32>()
            .map_err(|e| parse_err(&manifest_path, lineno + 1, format!("height: {e}")))?;
        let camera_id = fields[4]
            .parse::<u32>()
            .map_err(|e| parse_err(&manifest_path, lineno + 1, format!("camera_id: {e}")))?;
        if width == 0 || height == 0 {
            return Err(parse_err(&manifest_path, lineno + 1, "zero image dimension"));
        }
        images.push(ImageRecord { id, name: fields[1].to_string(), width, height, camera_id });
    }
    {
        let mut ids: Vec<u32> = images.iter().map(|im| im.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != images.len() {
            return Err(IngestError::Integrity("duplicate image ids in manifest".into()));
        }
    }
    let mut graph = MatchGraph::new(images);

    // per-image keypoint dedup by exact f32 bit pattern
    let mut kp_maps: Vec<BTreeMap<(u32, u32), u32>> = vec![BTreeMap::new(); graph.images.len()];
    let mut intern = |maps: &mut Vec<BTreeMap<(u32, u32), u32>>,
                      kps: &mut Vec<Keypoints>,
                      img_idx: usize,
                      x: f32,
                      y: f32|
     -> u32 {
        let key = (x.to_bits(), y.to_bits());
        if let Some(&k) = maps[img_idx].get(&key) {
            return k;
        }
        let k = kps[img_idx].pixels.len() as u32;
        kps[img_idx].pixels.push([x as f64, y as f64]);
        maps[img_idx].insert(key, k);
        k
    };

    let pairs_path = dir.join("pairs.tsv");
    let pairs_text = fs::read_to_string(&pairs_path)?;
    for (lineno, line) in pairs_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 14 {
            return Err(parse_err(&pairs_path, lineno + 1, "expected 14 tab-separated fields"));
        }
        let pair_index = fields[0]
            .parse::<u64>()
            .map_err(|e| parse_err(&pairs_path, lineno + 1, format!("pair_index: {e}")))?;
        let i = fields[1]
            .parse::<u32>()
            .map_err(|e| parse_err(&pairs_path, lineno + 1, format!("i: {e}")))?;
        let j = fields[2]
            .parse::<u32>()
            .map_err(|e| parse_err(&pairs_path, lineno + 1, format!("j: {e}")))?;
        let kind = match fields[3] {
            "F" => ModelKind::Fundamental,
            "H" => ModelKind::Homography,
            other => {
                return Err(parse_err(&pairs_path, lineno + 1, format!("model kind {other:?}")))
            }
        };
        let inlier_count = fields[4]
            .parse::<u32>()
            .map_err(|e| parse_err(&pairs_path, lineno + 1, format!("inlier_count: {e}")))?;
        let mut m = [0.0f64; 9];
        for (k, f) in fields[5..].iter().enumerate() {
            m[k] = f
                .parse::<f64>()
                .map_err(|e| parse_err(&pairs_path, lineno + 1, format!("model entry: {e}")))?;
        }
        let (ii, ij) = match (graph.image_index(i), graph.image_index(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(IngestError::Integrity(format!(
                    "pairs.tsv line {}: unknown image id in pair ({i}, {j})",
                    lineno + 1
                )))
            }
        };
        if i >= j {
            return Err(parse_err(&pairs_path, lineno + 1, "pair must satisfy i < j"));
        }

        let bin_path = dir.join(format!("pair_{pair_index}.bin"));
        let mut bytes = Vec::new();
        fs::File::open(&bin_path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 4 {
            return Err(parse_err(&bin_path, 0, "truncated header"));
        }
        let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + count * 16 {
            return Err(parse_err(
                &bin_path,
                0,
                format!("expected {} bytes for {count} records, got {}", 4 + count * 16, bytes.len()),
            ));
        }
        let mut kp1 = Vec::with_capacity(count);
        let mut kp2 = Vec::with_capacity(count);
        for r in 0..count {
            let at = 4 + r * 16;
            let f = |o: usize| f32::from_le_bytes(bytes[at + o..at + o + 4].try_into().unwrap());
            kp1.push(intern(&mut kp_maps, &mut graph.keypoints, ii, f(0), f(4)));
            kp2.push(intern(&mut kp_maps, &mut graph.keypoints, ij, f(8), f(12)));
        }
        let matrix = Matrix3::from_row_slice(&m);
        if matrix.norm() < 1e-15 {
            return Err(parse_err(&pairs_path, lineno + 1, "zero model matrix"));
        }
        graph.pairs.push(MatchPair {
            i,
            j,
            active: vec![true; count],
            synthetic_from: count,
            kp1,
            kp2,
            model: Some(TwoViewModel::new(kind, matrix, inlier_count)),
            calibrated_model: None,
            inlier_count,
        });
    }
    graph.validate()?;
    Ok(graph)
}

/// Writes the raw match database (runtime masks and calibration state are
/// not persisted). Inverse of [`load_match_graph`].
pub fn save_match_graph(graph: &MatchGraph, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for im in &graph.images {
        if im.name.contains('\t') || im.name.contains('\n') {
            return Err(IngestError::Integrity(format!("image name {:?} contains separator", im.name)));
        }
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            im.id, im.name, im.width, im.height, im.camera_id
        ));
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;

    let mut pairs_tsv = String::new();
    for (pi, p) in graph.pairs.iter().enumerate() {
        let model = p.model.as_ref().ok_or_else(|| {
            IngestError::Integrity(format!("pair {pi} has no model; cannot persist"))
        })?;
        let kind = match model.kind {
            ModelKind::Fundamental => "F",
            ModelKind::Homography => "H",
        };
        pairs_tsv.push_str(&format!("{pi}\t{}\t{}\t{kind}\t{}", p.i, p.j, p.inlier_count));
        for r in 0..3 {
            for c in 0..3 {
                pairs_tsv.push_str(&format!("\t{}", model.m[(r, c)]));
            }
        }
        pairs_tsv.push('\n');

        let ii = graph.image_index(p.i).unwrap();
        let ij = graph.image_index(p.j).unwrap();
        let mut bytes = Vec::with_capacity(4 + p.len() * 16);
        bytes.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for k in 0..p.len() {
            let a = graph.keypoints[ii].pixels[p.kp1[k] as usize];
            let b = graph.keypoints[ij].pixels[p.kp2[k] as usize];
            for v in [a[0], a[1], b[0], b[1]] {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(dir.join(format!("pair_{pi}.bin")))?;
        f.write_all(&bytes)?;
    }
    fs::write(dir.join("pairs.tsv"), pairs_tsv)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Two-view model estimation (plain least squares on verified inliers)
// ---------------------------------------------------------------------------

/// Similarity that centers the points and scales RMS distance to sqrt(2).
fn hartley_normalization(pts: &[[f64; 2]]) -> Mat3 {
    let n = pts.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in pts {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mut dist = 0.0;
    for p in pts {
        dist += ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
    }
    dist /= n;
    let s = if dist > 1e-12 { 2.0f64.sqrt() / dist } else { 1.0 };
    Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply_h(t: &Mat3, p: &[f64; 2]) -> [f64; 2] {
    let w = t[(2, 0)] * p[0] + t[(2, 1)] * p[1] + t[(2, 2)];
    [
        (t[(0, 0)] * p[0] + t[(0, 1)] * p[1] + t[(0, 2)]) / w,
        (t[(1, 0)] * p[0] + t[(1, 1)] * p[1] + t[(1, 2)]) / w,
    ]
}

type Normal9 = SMatrix<f64, 9, 9>;

/// Smallest-eigenvector solve of the 9x9 normal matrix; errors out when the
/// nullspace is not one-dimensional (degenerate configuration).
fn smallest_nullvector(ata: &Normal9) -> Result<[f64; 9], IngestError> {
    let eig = SymmetricEigen::new(*ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lmax = eig.eigenvalues[order[8]].max(0.0);
    let second = eig.eigenvalues[order[1]].max(0.0);
    if lmax <= 0.0 || second <= 1e-12 * lmax {
        return Err(IngestError::DegenerateConfiguration);
    }
    let v = eig.eigenvectors.column(order[0]);
    let mut out = [0.0; 9];
    for k in 0..9 {
        out[k] = v[k];
    }
    Ok(out)
}

fn accumulate_normal(rows: impl Iterator<Item = [f64; 9]>) -> Normal9 {
    let mut ata = Normal9::zeros();
    for row in rows {
        for a in 0..9 {
            for b in a..9 {
                ata[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..9 {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
    }
    ata
}

/// Deterministic sign: make the largest-magnitude entry positive.
fn fix_sign(m: &mut Mat3) {
    let mut best = (0, 0);
    let mut mag = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            if m[(r, c)].abs() > mag {
                mag = m[(r, c)].abs();
                best = (r, c);
            }
        }
    }
    if m[best] < 0.0 {
        m.neg_mut();
    }
}

/// Normalized 8-point linear least squares over all given correspondences,
/// with rank-2 projection and Frobenius normalization.
pub fn reestimate_fundamental(
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
) -> Result<TwoViewModel, IngestError> {
    if p1.len() < 8 {
        return Err(IngestError::InsufficientMatches { needed: 8, got: p1.len() });
    }
    assert_eq!(p1.len(), p2.len());
    let t1 = hartley_normalization(p1);
    let t2 = hartley_normalization(p2);
    let ata = accumulate_normal(p1.iter().zip(p2.iter()).map(|(a, b)| {
        let x1 = apply_h(&t1, a);
        let x2 = apply_h(&t2, b);
        [
            x2[0] * x1[0],
            x2[0] * x1[1],
            x2[0],
            x2[1] * x1[0],
            x2[1] * x1[1],
            x2[1],
            x1[0],
            x1[1],
            1.0,
        ]
    }));
    let f = smallest_nullvector(&ata)?;
    let fm = Matrix3::from_row_slice(&f);
    // rank-2 projection
    let svd = fm.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let d = Mat3::new(
        svd.singular_values[0],
        0.0,
        0.0,
        0.0,
        svd.singular_values[1],
        0.0,
        0.0,
        0.0,
        0.0,
    );
    let f_rank2 = u * d * vt;
    let mut denorm = t2.transpose() * f_rank2 * t1;
    denorm /= denorm.norm();
    fix_sign(&mut denorm);
    Ok(TwoViewModel { kind: ModelKind::Fundamental, m: denorm, inlier_count: p1.len() as u32 })
}

/// Normalized DLT homography fit over all given correspondences.
pub fn reestimate_homography(
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
) -> Result<TwoViewModel, IngestError> {
    if p1.len() < 4 {
        return Err(IngestError::InsufficientMatches { needed: 4, got: p1.len() });
    }
    assert_eq!(p1.len(), p2.len());
    let t1 = hartley_normalization(p1);
    let t2 = hartley_normalization(p2);
    let rows = p1.iter().zip(p2.iter()).flat_map(|(a, b)| {
        let x1 = apply_h(&t1, a);
        let x2 = apply_h(&t2, b);
        [
            [x1[0], x1[1], 1.0, 0.0, 0.0, 0.0, -x2[0] * x1[0], -x2[0] * x1[1], -x2[0]],
            [0.0, 0.0, 0.0, x1[0], x1[1], 1.0, -x2[1] * x1[0], -x2[1] * x1[1], -x2[1]],
        ]
    });
    let ata = accumulate_normal(rows);
    let h = smallest_nullvector(&ata)?;
    let hm = Matrix3::from_row_slice(&h);
    let t2inv = t2.try_inverse().ok_or(IngestError::DegenerateConfiguration)?;
    let mut denorm = t2inv * hm * t1;
    denorm /= denorm.norm();
    fix_sign(&mut denorm);
    Ok(TwoViewModel { kind: ModelKind::Homography, m: denorm, inlier_count: p1.len() as u32 })
}

// ---------------------------------------------------------------------------
// Connectivity filtering
// ---------------------------------------------------------------------------

/// Largest connected component (ties broken toward the smallest image id)
/// over images, with pairs filtered by `keep`.
fn components(graph: &MatchGraph, keep: impl Fn(&MatchPair) -> bool) -> Vec<usize> {
    let n = graph.images.len();
    let mut adj = vec![Vec::new(); n];
    for p in graph.pairs.iter().filter(|p| keep(p)) {
        let a = graph.image_index(p.i).unwrap();
        let b = graph.image_index(p.j).unwrap();
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    comp
}

fn is_connected(comp: &[usize]) -> bool {
    comp.iter().all(|&c| c == 0) // component ids assigned in discovery order
}

/// Filters pairs by inlier count, halving the threshold while the image
/// graph is disconnected. Images still disconnected from the main component
/// at `min_threshold` are returned as outliers and removed.
pub fn filter_graph_connectivity(
    graph: &MatchGraph,
    start_threshold: u32,
    min_threshold: u32,
) -> (MatchGraph, Vec<u32>) {
    assert!(start_threshold >= min_threshold && min_threshold >= 1);
    if graph.images.len() <= 1 {
        return (graph.clone(), Vec::new());
    }

    let mut threshold = start_threshold;
    let final_threshold = loop {
        let comp = components(graph, |p| p.inlier_count >= threshold);
        if is_connected(&comp) || threshold <= min_threshold {
            break threshold;
        }
        threshold = (threshold / 2).max(min_threshold);
    };

    let comp = components(graph, |p| p.inlier_count >= final_threshold);
    // main component: the largest; ties go to the one containing the
    // smallest image id (= lowest component id, discovery order)
    let ncomp = comp.iter().max().map(|c| c + 1).unwrap_or(0);
    let mut sizes = vec![0usize; ncomp];
    for &c in &comp {
        sizes[c] += 1;
    }
    let main = (0..ncomp).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap_or(0);

    let outliers: Vec<u32> = graph
        .images
        .iter()
        .enumerate()
        .filter(|(k, _)| comp[*k] != main)
        .map(|(_, im)| im.id)
        .collect();

    let kept_images: Vec<ImageRecord> = graph
        .images
        .iter()
        .enumerate()
        .filter(|(k, _)| comp[*k] == main)
        .map(|(_, im)| im.clone())
        .collect();
    let mut out = MatchGraph::new(kept_images);
    for im in &out.images {
        let old_idx = graph.image_index(im.id).unwrap();
        let new_idx = out.image_index(im.id).unwrap();
        out.keypoints[new_idx] = graph.keypoints[old_idx].clone();
    }
    out.calibrated = graph.calibrated;
    for p in &graph.pairs {
        if p.inlier_count >= final_threshold
            && out.image_index(p.i).is_some()
            && out.image_index(p.j).is_some()
        {
            out.pairs.push(p.clone());
        }
    }
    (out, outliers)
}
