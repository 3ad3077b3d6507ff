//! Overlap and surface-distance metrics.
//!
//! Surface pixels are foreground pixels with a 4-neighbour that is
//! background or outside the frame. HD95 is the 95th percentile (linear
//! interpolation between order statistics) of the union of both directed
//! surface-distance sets; ASD is the mean of that union. Distances are
//! Euclidean, in pixels.

use std::fmt::Write as _;

use crate::error::{check_dims, Result};
use crate::grid::{BinaryMask, LabelField};

/// `2|A∩B| / (|A|+|B|)`; 1 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (inter, total) = a
        .bits()
        .zip(b.bits())
        .fold((0usize, 0usize), |(i, t), (x, y)| (i + (x && y) as usize, t + x as usize + y as usize));
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// `|A∩B| / |A∪B|`; 1 when both are empty.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (inter, union) =
        a.bits().zip(b.bits()).fold((0usize, 0usize), |(i, u), (x, y)| (i + (x && y) as usize, u + (x || y) as usize));
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Flat indices of the surface pixels of `m`, in raster order.
pub fn surface_pixels(m: &BinaryMask) -> Vec<usize> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !m.get(y - 1, x)
                || !m.get(y + 1, x)
                || !m.get(y, x - 1)
                || !m.get(y, x + 1);
            if edge {
                out.push(y * w + x);
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], hull: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    hull.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&v) => {
                    let vf = v as f64;
                    let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
                    if s <= *bounds.last().unwrap() {
                        hull.pop();
                        bounds.pop();
                    } else {
                        hull.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if hull.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < hull.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let v = hull[k];
        let d = qf - v as f64;
        *o = d * d + f[v];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest seed.
fn squared_distance_map(h: usize, w: usize, seeds: &[usize]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; h * w];
    for &s in seeds {
        grid[s] = 0.0;
    }
    let (mut hull, mut bounds) = (Vec::new(), Vec::new());
    let mut column = vec![0.0; h];
    let mut out = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            column[y] = grid[y * w + x];
        }
        edt_1d(&column, &mut out[..h], &mut hull, &mut bounds);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut out[..w], &mut hull, &mut bounds);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Union of both directed surface-distance multisets: distances from each
/// surface pixel of `a` (raster order) followed by those of `b`.
/// `None` when either mask is empty.
pub fn symmetric_surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<Option<Vec<f64>>> {
    check_dims(a.dims(), b.dims())?;
    let (sa, sb) = (surface_pixels(a), surface_pixels(b));
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    let (h, w) = a.dims();
    let to_b = squared_distance_map(h, w, &sb);
    let to_a = squared_distance_map(h, w, &sa);
    let mut out: Vec<f64> = sa.iter().map(|&i| to_b[i].sqrt()).collect();
    out.extend(sb.iter().map(|&i| to_a[i].sqrt()));
    Ok(Some(out))
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    Ok(symmetric_surface_distances(a, b)?.map(|d| percentile(&d, 95.0)))
}

pub fn asd(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    Ok(symmetric_surface_distances(a, b)?.map(|d| d.iter().sum::<f64>() / d.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub dc: f64,
    pub jc: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

/// Scores for each foreground class (index 0 ↔ class 1).
pub fn score_labels(pred: &LabelField, truth: &LabelField) -> Result<Vec<ClassScores>> {
    check_dims(pred.dims(), truth.dims())?;
    (1..truth.classes() as u8)
        .map(|c| {
            let (p, t) = (pred.class_mask(c), truth.class_mask(c));
            let distances = symmetric_surface_distances(&p, &t)?;
            Ok(ClassScores {
                dc: dice(&p, &t)?,
                jc: jaccard(&p, &t)?,
                hd95: distances.as_ref().map(|d| percentile(d, 95.0)),
                asd: distances.as_ref().map(|d| d.iter().sum::<f64>() / d.len() as f64),
            })
        })
        .collect()
}

/// Aggregate over one (domain, class) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    /// `None` for the all-domain row.
    pub domain: Option<usize>,
    pub class: usize,
    pub dc: f64,
    pub jc: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
    pub n: usize,
    /// Samples whose surface distances were undefined (an empty mask).
    pub n_undefined: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricSummary>,
}

fn summarize(domain: Option<usize>, class: usize, scores: &[ClassScores]) -> MetricSummary {
    let n = scores.len();
    let mean = |f: &dyn Fn(&ClassScores) -> f64| scores.iter().map(f).sum::<f64>() / n.max(1) as f64;
    let defined: Vec<&ClassScores> = scores.iter().filter(|s| s.hd95.is_some()).collect();
    let dist_mean = |f: &dyn Fn(&ClassScores) -> f64| {
        (!defined.is_empty()).then(|| defined.iter().map(|s| f(s)).sum::<f64>() / defined.len() as f64)
    };
    MetricSummary {
        domain,
        class,
        dc: mean(&|s| s.dc),
        jc: mean(&|s| s.jc),
        hd95: dist_mean(&|s| s.hd95.unwrap()),
        asd: dist_mean(&|s| s.asd.unwrap()),
        n,
        n_undefined: n - defined.len(),
    }
}

impl EvalReport {
    /// Builds per-domain and overall rows from `(domain, per-class scores)` items.
    pub fn from_scores(items: &[(usize, Vec<ClassScores>)]) -> Self {
        let classes = items.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
        let mut domains: Vec<usize> = items.iter().map(|(d, _)| *d).collect();
        domains.sort_unstable();
        domains.dedup();
        let mut rows = Vec::new();
        for d in domains.iter().copied().map(Some).chain(std::iter::once(None)) {
            for k in 0..classes {
                let scores: Vec<ClassScores> =
                    items.iter().filter(|(dom, _)| d.map_or(true, |d| *dom == d)).map(|(_, s)| s[k]).collect();
                rows.push(summarize(d, k + 1, &scores));
            }
        }
        Self { rows }
    }

    /// Class-averaged DC of one domain.
    pub fn domain_dc(&self, domain: usize) -> Option<f64> {
        let rows: Vec<&MetricSummary> = self.rows.iter().filter(|r| r.domain == Some(domain)).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.dc).sum::<f64>() / rows.len() as f64)
    }

    /// Mean over the given domains of their class-averaged DC.
    pub fn mean_dc_over(&self, domains: &[usize]) -> Option<f64> {
        let per: Vec<f64> = domains.iter().filter_map(|&d| self.domain_dc(d)).collect();
        (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
    }

    /// Class-averaged DC over every sample.
    pub fn overall_dc(&self) -> f64 {
        let rows: Vec<&MetricSummary> = self.rows.iter().filter(|r| r.domain.is_none()).collect();
        rows.iter().map(|r| r.dc).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# hd95/asd: union of both directed surface-distance sets, 4-connected surfaces, linear-interpolated percentile\n");
        out.push_str("domain,class,dc,jc,hd95,asd,n,n_undefined\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let domain = r.domain.map_or_else(|| "all".to_string(), |d| d.to_string());
            let _ = writeln!(
                out,
                "{domain},{},{:.6},{:.6},{},{},{},{}",
                r.class,
                r.dc,
                r.jc,
                opt(r.hd95),
                opt(r.asd),
                r.n,
                r.n_undefined
            );
        }
        out
    }
}
