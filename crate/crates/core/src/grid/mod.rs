//! Raster types shared by every stage of the pipeline.
//!
//! A [`Grid`] is a single H×W plane of finite reals stored row-major. The
//! remaining types are thin wrappers that add a semantic invariant on top:
//! [`MultiGrid`] (channels of equal size), [`ProbField`] (per-pixel class
//! distributions), [`LabelField`] (per-pixel class indices) and
//! [`BinaryMask`] (a grid whose values are exactly 0 or 1).

pub mod io;

use crate::error::{check_dims, Error, Result};

/// Tolerance on the per-pixel sum of a [`ProbField`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!("empty extent {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::InvalidGrid(format!("{} values for a {height}x{width} grid", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a grid from values the caller guarantees are finite and sized.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Self::from_raw(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        assert!(data.iter().all(|v| v.is_finite()), "from_fn produced a non-finite value");
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self::from_raw(self.height, self.width, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Channels of equally sized grids (image channels or class planes).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiGrid {
    planes: Vec<Grid>,
}

impl MultiGrid {
    pub fn new(planes: Vec<Grid>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::InvalidGrid("multigrid needs at least one plane".into()))?;
        let dims = first.dims();
        for p in &planes[1..] {
            check_dims(dims, p.dims())?;
        }
        Ok(Self { planes })
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn plane(&self, c: usize) -> &Grid {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Grid] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Grid> {
        self.planes
    }

    pub fn map_planes(&self, f: impl FnMut(&Grid) -> Grid) -> Self {
        Self { planes: self.planes.iter().map(f).collect() }
    }
}

impl From<Grid> for MultiGrid {
    fn from(g: Grid) -> Self {
        Self { planes: vec![g] }
    }
}

/// Per-pixel probability distribution over `classes` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbField {
    planes: MultiGrid,
}

impl ProbField {
    pub fn new(planes: MultiGrid) -> Result<Self> {
        if planes.channels() < 2 {
            return Err(Error::InvalidGrid("a probability field needs at least 2 classes".into()));
        }
        let n = planes.plane(0).len();
        for i in 0..n {
            let mut sum = 0.0;
            for p in planes.planes() {
                let v = p.as_slice()[i];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidGrid(format!("probability {v} out of range at pixel {i}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidGrid(format!("probabilities sum to {sum} at pixel {i}")));
            }
        }
        Ok(Self { planes })
    }

    pub(crate) fn from_raw(planes: MultiGrid) -> Self {
        Self { planes }
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        assert!(classes >= 2);
        let v = 1.0 / classes as f64;
        Self::from_raw(MultiGrid { planes: (0..classes).map(|_| Grid::filled(height, width, v)).collect() })
    }

    pub fn classes(&self) -> usize {
        self.planes.channels()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes.dims()
    }

    pub fn len(&self) -> usize {
        self.planes.plane(0).len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn plane(&self, c: usize) -> &Grid {
        self.planes.plane(c)
    }

    pub fn as_multigrid(&self) -> &MultiGrid {
        &self.planes
    }

    /// Probability of class `c` at flat pixel index `i`.
    #[inline]
    pub fn prob(&self, c: usize, i: usize) -> f64 {
        self.planes.plane(c).as_slice()[i]
    }

    pub fn max_prob(&self, i: usize) -> f64 {
        (0..self.classes()).map(|c| self.prob(c, i)).fold(f64::MIN, f64::max)
    }
}

/// Per-pixel class assignment. Class 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelField {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<u8>,
}

impl LabelField {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidGrid(format!("{} labels for a {height}x{width} field", data.len())));
        }
        if !(2..=256).contains(&classes) {
            return Err(Error::InvalidGrid(format!("unsupported class count {classes}")));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::InvalidGrid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self { height, width, classes, data })
    }

    pub fn from_fn(height: usize, width: usize, classes: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, classes, data).expect("from_fn produced an invalid label")
    }

    pub fn background(height: usize, width: usize, classes: usize) -> Self {
        Self::from_fn(height, width, classes, |_, _| 0)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn class_mask(&self, class: u8) -> BinaryMask {
        BinaryMask::from_bools(self.height, self.width, self.data.iter().map(|&v| v == class))
    }

    pub fn foreground_mask(&self) -> BinaryMask {
        BinaryMask::from_bools(self.height, self.width, self.data.iter().map(|&v| v != 0))
    }

    pub fn one_hot(&self) -> ProbField {
        let planes = (0..self.classes)
            .map(|c| {
                let data = self.data.iter().map(|&v| if v as usize == c { 1.0 } else { 0.0 }).collect();
                Grid::from_raw(self.height, self.width, data)
            })
            .collect();
        ProbField::from_raw(MultiGrid { planes })
    }
}

/// A grid whose values are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
}

impl BinaryMask {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidGrid(format!("mask value {v} is not binary")));
        }
        Ok(Self { grid })
    }

    pub fn from_bools(height: usize, width: usize, bits: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<f64> = bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        assert_eq!(data.len(), height * width);
        Self { grid: Grid::from_raw(height, width, data) }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self { grid: Grid::from_fn(height, width, |y, x| if f(y, x) { 1.0 } else { 0.0 }) }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { grid: Grid::filled(height, width, 1.0) }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { grid: Grid::zeros(height, width) }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.grid.get(y, x) == 1.0
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        self.grid.as_slice()[i] == 1.0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.grid.as_slice().iter().map(|&v| v == 1.0)
    }

    pub fn as_grid(&self) -> &Grid {
        &self.grid
    }

    pub fn count_ones(&self) -> usize {
        self.bits().filter(|&b| b).count()
    }

    pub fn not(&self) -> Self {
        let (h, w) = self.dims();
        Self::from_bools(h, w, self.bits().map(|b| !b))
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        let (h, w) = self.dims();
        Ok(Self::from_bools(h, w, self.bits().zip(other.bits()).map(|(a, b)| a && b)))
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        let (h, w) = self.dims();
        Ok(Self::from_bools(h, w, self.bits().zip(other.bits()).map(|(a, b)| a || b)))
    }
}

/// Per pixel, the most probable class. Ties go to the lowest class index.
pub fn argmax_field(p: &ProbField) -> LabelField {
    let (h, w) = p.dims();
    let classes = p.classes();
    let data = (0..p.len())
        .map(|i| {
            let mut best = 0;
            let mut best_p = p.prob(0, i);
            for c in 1..classes {
                let v = p.prob(c, i);
                if v > best_p {
                    best = c;
                    best_p = v;
                }
            }
            best as u8
        })
        .collect();
    LabelField { height: h, width: w, classes, data }
}

/// Marks pixels whose maximal class probability reaches `tau` (inclusive).
pub fn confidence_mask(p: &ProbField, tau: f64) -> BinaryMask {
    let (h, w) = p.dims();
    BinaryMask::from_bools(h, w, (0..p.len()).map(|i| p.max_prob(i) >= tau))
}

/// Mask-driven composition: `self` where the mask is 1, `other` where it is 0.
pub trait Blend: Sized {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self>;
}

pub fn blend<T: Blend>(a: &T, b: &T, mask: &BinaryMask) -> Result<T> {
    a.blend(b, mask)
}

impl Blend for Grid {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        check_dims(self.dims(), mask.dims())?;
        // Selection rather than a⊙m + b⊙(1−m) keeps the result bit-exact.
        let data =
            self.data.iter().zip(&other.data).zip(mask.bits()).map(|((&a, &b), m)| if m { a } else { b }).collect();
        Ok(Grid::from_raw(self.height, self.width, data))
    }
}

impl Blend for MultiGrid {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self> {
        if self.channels() != other.channels() {
            return Err(Error::InvalidGrid(format!("channel mismatch: {} vs {}", self.channels(), other.channels())));
        }
        let planes =
            self.planes.iter().zip(&other.planes).map(|(a, b)| a.blend(b, mask)).collect::<Result<Vec<_>>>()?;
        Ok(MultiGrid { planes })
    }
}

impl Blend for ProbField {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self> {
        Ok(ProbField { planes: self.planes.blend(&other.planes, mask)? })
    }
}

impl Blend for LabelField {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        check_dims(self.dims(), mask.dims())?;
        if self.classes != other.classes {
            return Err(Error::InvalidGrid(format!("class count mismatch: {} vs {}", self.classes, other.classes)));
        }
        let data =
            self.data.iter().zip(&other.data).zip(mask.bits()).map(|((&a, &b), m)| if m { a } else { b }).collect();
        Ok(LabelField { data, ..self.clone() })
    }
}

impl Blend for BinaryMask {
    fn blend(&self, other: &Self, mask: &BinaryMask) -> Result<Self> {
        Ok(BinaryMask { grid: self.grid.blend(&other.grid, mask)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(planes: &[&[f64]], h: usize, w: usize) -> ProbField {
        let planes = planes.iter().map(|p| Grid::new(h, w, p.to_vec()).unwrap()).collect();
        ProbField::new(MultiGrid::new(planes).unwrap()).unwrap()
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_field(&field(&[&[0.5], &[0.5]], 1, 1)).as_slice(), &[0]);
        assert_eq!(argmax_field(&field(&[&[0.1], &[0.9]], 1, 1)).as_slice(), &[1]);
        assert_eq!(argmax_field(&field(&[&[0.2], &[0.5], &[0.3]], 1, 1)).as_slice(), &[1]);
    }

    #[test]
    fn confidence_threshold_is_inclusive() {
        assert!(confidence_mask(&field(&[&[0.96], &[0.04]], 1, 1), 0.95).bit(0));
        assert!(!confidence_mask(&field(&[&[0.5], &[0.5]], 1, 1), 0.95).bit(0));
        assert!(confidence_mask(&field(&[&[0.95], &[0.05]], 1, 1), 0.95).bit(0));
    }

    #[test]
    fn blend_left_half() {
        let a = Grid::filled(4, 6, 1.0);
        let b = Grid::zeros(4, 6);
        let m = BinaryMask::from_fn(4, 6, |_, x| x < 3);
        let out = blend(&a, &b, &m).unwrap();
        let expected = Grid::from_fn(4, 6, |_, x| if x < 3 { 1.0 } else { 0.0 });
        assert_eq!(out, expected);
        assert_eq!(blend(&a, &b, &BinaryMask::ones(4, 6)).unwrap(), a);
        assert_eq!(blend(&a, &b, &BinaryMask::zeros(4, 6)).unwrap(), b);
    }

    #[test]
    fn blend_rejects_mismatched_dims() {
        let a = Grid::zeros(4, 4);
        let b = Grid::zeros(4, 5);
        assert!(matches!(blend(&a, &b, &BinaryMask::ones(4, 4)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn constructors_validate() {
        assert!(Grid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Grid::new(0, 1, vec![]).is_err());
        assert!(LabelField::new(1, 2, 2, vec![0, 2]).is_err());
        assert!(BinaryMask::new(Grid::filled(1, 1, 0.5)).is_err());
        let bad = MultiGrid::new(vec![Grid::filled(1, 1, 0.7), Grid::filled(1, 1, 0.7)]).unwrap();
        assert!(ProbField::new(bad).is_err());
    }

    fn labels(h: usize, w: usize, c: usize) -> impl Strategy<Value = LabelField> {
        proptest::collection::vec(0..c as u8, h * w).prop_map(move |d| LabelField::new(h, w, c, d).unwrap())
    }

    fn mask(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |b| BinaryMask::from_bools(h, w, b))
    }

    fn probs(h: usize, w: usize, c: usize) -> impl Strategy<Value = ProbField> {
        proptest::collection::vec(0.01f64..1.0, h * w * c).prop_map(move |raw| {
            let n = h * w;
            let mut planes = vec![vec![0.0; n]; c];
            for i in 0..n {
                let s: f64 = (0..c).map(|k| raw[k * n + i]).sum();
                for k in 0..c {
                    planes[k][i] = raw[k * n + i] / s;
                }
            }
            let planes = planes.into_iter().map(|p| Grid::new(h, w, p).unwrap()).collect();
            ProbField::new(MultiGrid::new(planes).unwrap()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn argmax_inverts_one_hot(l in labels(5, 7, 3)) {
            prop_assert_eq!(argmax_field(&l.one_hot()), l);
        }

        #[test]
        fn blend_with_self_is_identity(l in labels(4, 4, 3), m in mask(4, 4)) {
            prop_assert_eq!(blend(&l, &l, &m).unwrap(), l.clone());
            let g = Grid::from_fn(4, 4, |y, x| (y * 4 + x) as f64 * 0.1);
            prop_assert_eq!(blend(&g, &g, &m).unwrap(), g);
        }

        #[test]
        fn confidence_mask_is_monotone(p in probs(4, 4, 3), lo in 0.3f64..0.9, step in 0.0f64..0.1) {
            let loose = confidence_mask(&p, lo);
            let strict = confidence_mask(&p, lo + step);
            for (l, s) in loose.bits().zip(strict.bits()) {
                prop_assert!(l || !s);
            }
        }
    }
}
