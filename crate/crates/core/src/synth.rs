//! Synthetic multi-domain segmentation benchmark.
//!
//! Every sample starts from a domain-independent geometry (one to three
//! smooth blobs, optionally with a core class inside each blob) rendered
//! into a clean content image. A [`DomainStyle`] then applies texture,
//! contrast, brightness, a multiplicative bias field, gamma and noise, so
//! style is the only systematic difference between domains.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::io::{grid_to_label, label_to_grid, read_grid, write_grid};
use crate::grid::{Grid, LabelField, MultiGrid};

const FOREGROUND_FRACTION: (f64, f64) = (0.05, 0.30);
const TEXTURE_AMPLITUDE: f64 = 0.06;
const BACKGROUND_LEVEL: f64 = 0.3;
const FOREGROUND_LEVEL: f64 = 0.65;
const CORE_LEVEL: f64 = 0.85;
/// Normalized blob radius below which the core class starts (3-class mode).
const CORE_RADIUS: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    pub gamma: f64,
    pub brightness: f64,
    pub contrast: f64,
    /// Amplitude of the smooth multiplicative bias field.
    pub bias_amplitude: f64,
    pub noise_sigma: f64,
    /// Cycles per image of the oriented texture; 0 disables texture.
    pub texture_frequency: f64,
}

impl DomainStyle {
    pub const IDENTITY: Self = Self {
        gamma: 1.0,
        brightness: 0.0,
        contrast: 1.0,
        bias_amplitude: 0.0,
        noise_sigma: 0.0,
        texture_frequency: 0.0,
    };

    /// The four default domains; domain 0 is the labeled one. Every target
    /// domain is brighter than domain 0, so one intensity threshold fits all
    /// of them, though not the one domain 0 alone suggests.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self {
                gamma: 1.0,
                brightness: 0.0,
                contrast: 1.0,
                bias_amplitude: 0.05,
                noise_sigma: 0.03,
                texture_frequency: 4.0,
            },
            Self {
                gamma: 1.0,
                brightness: 0.15,
                contrast: 1.0,
                bias_amplitude: 0.1,
                noise_sigma: 0.03,
                texture_frequency: 6.0,
            },
            Self {
                gamma: 0.7,
                brightness: 0.0,
                contrast: 1.0,
                bias_amplitude: 0.1,
                noise_sigma: 0.03,
                texture_frequency: 8.0,
            },
            Self {
                gamma: 1.0,
                brightness: 0.12,
                contrast: 0.85,
                bias_amplitude: 0.3,
                noise_sigma: 0.03,
                texture_frequency: 10.0,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.contrast.is_finite()
            && self.brightness.is_finite()
            && (0.0..1.0).contains(&self.bias_amplitude)
            && self.noise_sigma >= 0.0
            && self.texture_frequency >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid domain style {self:?}")))
        }
    }

    /// Renders `content` in this style. Output is clamped to [0, 1].
    pub fn apply<R: Rng + ?Sized>(&self, content: &Grid, rng: &mut R) -> Grid {
        let (h, w) = content.dims();
        let orientation = rng.gen_range(0.0..PI);
        let texture_phase = rng.gen_range(0.0..2.0 * PI);
        let bias: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(0.5..1.5), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
        let mut out = Grid::from_fn(h, w, |y, x| {
            let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
            let mut v = content.get(y, x);
            if self.texture_frequency > 0.0 {
                let along = fx * orientation.cos() + fy * orientation.sin();
                v += TEXTURE_AMPLITUDE * (2.0 * PI * self.texture_frequency * along + texture_phase).sin();
            }
            v = self.contrast * (v - 0.5) + 0.5 + self.brightness;
            let field: f64 =
                bias.iter().map(|&(f, py, px)| (PI * f * fy + py).cos() * (PI * f * fx + px).cos()).sum::<f64>()
                    / bias.len() as f64;
            v *= 1.0 + self.bias_amplitude * field;
            v.clamp(0.0, 1.0).powf(self.gamma)
        });
        if self.noise_sigma > 0.0 {
            out = out.map(|v| v + noise.sample(rng));
        }
        // Stored at single precision so in-memory and on-disk datasets agree.
        out.map(|v| v.clamp(0.0, 1.0) as f32 as f64)
    }
}

/// One smooth blob: a rotated ellipse with a sinusoidal boundary wobble.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    wobble: f64,
    lobes: f64,
    lobe_phase: f64,
}

impl Blob {
    fn sample<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Self {
        let side = h.min(w) as f64;
        Self {
            cy: rng.gen_range(0.2..0.8) * h as f64,
            cx: rng.gen_range(0.2..0.8) * w as f64,
            ry: rng.gen_range(0.08..0.22) * side,
            rx: rng.gen_range(0.08..0.22) * side,
            angle: rng.gen_range(0.0..PI),
            wobble: rng.gen_range(0.0..0.2),
            lobes: rng.gen_range(2..=4) as f64,
            lobe_phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    /// Normalized radius: below 1 inside the blob.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
        let theta = v.atan2(u);
        r / (1.0 + self.wobble * (self.lobes * theta + self.lobe_phase).sin())
    }
}

/// Domain-independent scene: blob layout, label and clean content image.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub label: LabelField,
    pub content: Grid,
}

impl Geometry {
    /// Rejection-samples blob layouts until the foreground fraction lies in
    /// [0.05, 0.30]. `classes` is 2 (blob) or 3 (blob with a core).
    pub fn sample<R: Rng + ?Sized>(h: usize, w: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if !(2..=3).contains(&classes) {
            return Err(Error::InvalidSpec(format!("synthetic data supports 2 or 3 classes, got {classes}")));
        }
        for _ in 0..1000 {
            let blobs: Vec<Blob> = (0..rng.gen_range(1..=3)).map(|_| Blob::sample(h, w, rng)).collect();
            let radius = |y: usize, x: usize| {
                blobs.iter().map(|b| b.radius(y as f64 + 0.5, x as f64 + 0.5)).fold(f64::INFINITY, f64::min)
            };
            let label = LabelField::from_fn(h, w, classes, |y, x| {
                let r = radius(y, x);
                if r >= 1.0 {
                    0
                } else if classes == 3 && r < CORE_RADIUS {
                    2
                } else {
                    1
                }
            });
            let fraction = label.foreground_mask().count_ones() as f64 / (h * w) as f64;
            if !(FOREGROUND_FRACTION.0..=FOREGROUND_FRACTION.1).contains(&fraction) {
                continue;
            }
            // Soft edges: intensity ramps over about one pixel around r = 1.
            let content = Grid::from_fn(h, w, |y, x| {
                let r = radius(y, x);
                let edge = 1.0 / (1.0 + ((r - 1.0) * 12.0).exp());
                let mut v = BACKGROUND_LEVEL + (FOREGROUND_LEVEL - BACKGROUND_LEVEL) * edge;
                if classes == 3 {
                    let core = 1.0 / (1.0 + ((r - CORE_RADIUS) * 20.0).exp());
                    v += (CORE_LEVEL - FOREGROUND_LEVEL) * core;
                }
                v
            });
            return Ok(Self { label, content });
        }
        Err(Error::InvalidSpec(format!("could not place blobs in a {h}x{w} frame")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: MultiGrid,
    pub label: LabelField,
    pub domain: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.labeled.first().map_or(2, |s| s.label.classes())
    }

    pub fn in_channels(&self) -> usize {
        self.labeled.first().map_or(1, |s| s.image.channels())
    }

    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.test.iter().chain(&self.unlabeled).map(|s| s.domain).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    fn all(&self) -> impl Iterator<Item = (Split, &Sample)> {
        self.labeled
            .iter()
            .map(|s| (Split::Labeled, s))
            .chain(self.unlabeled.iter().map(|s| (Split::Unlabeled, s)))
            .chain(self.test.iter().map(|s| (Split::Test, s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub size: usize,
    pub classes: usize,
    pub labeled: usize,
    pub unlabeled_per_domain: usize,
    pub test_per_domain: usize,
    pub domains: Vec<DomainStyle>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            size: 64,
            classes: 2,
            labeled: 8,
            unlabeled_per_domain: 50,
            test_per_domain: 20,
            domains: DomainStyle::defaults(),
        }
    }
}

/// SplitMix64 finalizer used to derive independent per-sample seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn split_tag(split: Split) -> u64 {
    split as u64
}

/// Renders sample `index` of `split` in `domain`. Geometry depends only on
/// `(seed, split, index)`; the style draw also depends on the domain.
pub fn render_sample(spec: &DatasetSpec, seed: u64, split: Split, index: usize, domain: usize) -> Result<Sample> {
    let style = spec.domains.get(domain).ok_or_else(|| Error::InvalidSpec(format!("no style for domain {domain}")))?;
    let mut geometry_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[split_tag(split), index as u64]));
    let geometry = Geometry::sample(spec.size, spec.size, spec.classes, &mut geometry_rng)?;
    let mut style_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[split_tag(split), index as u64, 1 + domain as u64]));
    let image = style.apply(&geometry.content, &mut style_rng);
    Ok(Sample { id: 0, image: image.into(), label: geometry.label, domain })
}

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    if spec.domains.len() < 2 {
        return Err(Error::InvalidSpec("at least two domains are required".into()));
    }
    if spec.size < 8 || spec.size % 2 != 0 {
        return Err(Error::InvalidSpec(format!("image size {} must be even and at least 8", spec.size)));
    }
    for d in &spec.domains {
        d.validate()?;
    }
    let mut next_id = 0;
    let mut make = |split: Split, index: usize, domain: usize| -> Result<Sample> {
        let mut s = render_sample(spec, seed, split, index, domain)?;
        s.id = next_id;
        next_id += 1;
        Ok(s)
    };
    let labeled = (0..spec.labeled).map(|i| make(Split::Labeled, i, 0)).collect::<Result<_>>()?;
    let per_domain = |n: usize| (0..spec.domains.len()).flat_map(move |d| (0..n).map(move |k| (d * n + k, d)));
    let unlabeled =
        per_domain(spec.unlabeled_per_domain).map(|(i, d)| make(Split::Unlabeled, i, d)).collect::<Result<_>>()?;
    let test = per_domain(spec.test_per_domain).map(|(i, d)| make(Split::Test, i, d)).collect::<Result<_>>()?;
    Ok(Dataset { labeled, unlabeled, test })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    best
}

const MANIFEST: &str = "manifest.txt";

fn sample_file(id: usize) -> String {
    format!("{id:05}.grid")
}

/// Writes `images/`, `labels/` and `manifest.txt` (`id domain split` per line).
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = format!("# classes {}\n", dataset.classes());
    for (split, s) in dataset.all() {
        write_grid(dir.join("images").join(sample_file(s.id)), &s.image)?;
        write_grid(dir.join("labels").join(sample_file(s.id)), &label_to_grid(&s.label))?;
        manifest.push_str(&format!("{} {} {}\n", s.id, s.domain, split.name()));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut classes = 2;
    let mut out = Dataset { labeled: vec![], unlabeled: vec![], test: vec![] };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(c) = comment.trim().strip_prefix("classes") {
                classes = c.trim().parse().map_err(|_| Error::Format(format!("bad class count in {line:?}")))?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, domain, split] = fields[..] else {
            return Err(Error::Format(format!("manifest line {line:?} needs `id domain split`")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad number {s:?} in manifest")));
        let (id, domain) = (parse(id)?, parse(domain)?);
        let image = read_grid(dir.join("images").join(sample_file(id)))?;
        let label = grid_to_label(&read_grid(dir.join("labels").join(sample_file(id)))?, classes)?;
        crate::error::check_dims(image.dims(), label.dims())?;
        let sample = Sample { id, image, label, domain };
        match Split::parse(split)? {
            Split::Labeled => out.labeled.push(sample),
            Split::Unlabeled => out.unlabeled.push(sample),
            Split::Test => out.test.push(sample),
        }
    }
    if out.labeled.is_empty() {
        return Err(Error::Format("dataset has no labeled samples".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec { labeled: 2, unlabeled_per_domain: 3, test_per_domain: 2, ..DatasetSpec::default() }
    }

    #[test]
    fn default_sizes_and_determinism() {
        let spec = DatasetSpec::default();
        let a = generate_dataset(&small_spec(), 7).unwrap();
        let b = generate_dataset(&small_spec(), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(&small_spec(), 8).unwrap());
        assert!(spec.unlabeled_per_domain * spec.domains.len() > spec.labeled);
        assert_eq!((a.labeled.len(), a.unlabeled.len(), a.test.len()), (2, 12, 8));
        assert!(a.labeled.iter().all(|s| s.domain == 0));
        assert_eq!(a.domains(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn identity_styles_make_domains_identical() {
        let spec = DatasetSpec { domains: vec![DomainStyle::IDENTITY; 3], ..small_spec() };
        let a = render_sample(&spec, 3, Split::Unlabeled, 5, 0).unwrap();
        let b = render_sample(&spec, 3, Split::Unlabeled, 5, 2).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
        let styled = render_sample(&small_spec(), 3, Split::Unlabeled, 5, 2).unwrap();
        assert_eq!(styled.label, a.label);
        assert_ne!(styled.image, a.image);
    }

    #[test]
    fn foreground_fraction_and_range() {
        for classes in [2, 3] {
            let spec = DatasetSpec { classes, ..small_spec() };
            let d = generate_dataset(&spec, 11).unwrap();
            for s in d.labeled.iter().chain(&d.unlabeled).chain(&d.test) {
                let f = s.label.foreground_mask().count_ones() as f64 / 4096.0;
                assert!((0.05..=0.30).contains(&f), "fraction {f}");
                assert!(s.image.plane(0).as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(s.label.classes(), classes);
            }
            if classes == 3 {
                assert!(d.test.iter().any(|s| s.label.as_slice().contains(&2)));
            }
        }
    }

    #[test]
    fn domains_differ_in_histogram() {
        let d = generate_dataset(&DatasetSpec::default(), 0).unwrap();
        let pixels = |dom: usize| -> Vec<f64> {
            d.test.iter().filter(|s| s.domain == dom).flat_map(|s| s.image.plane(0).as_slice().to_vec()).collect()
        };
        assert!(ks_statistic(&pixels(0), &pixels(3)) > 0.1);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert_eq!(ks_statistic(&[0.0, 2.0], &[1.0, 3.0]), 0.5);
    }

    #[test]
    fn directory_roundtrip() {
        let d = generate_dataset(&DatasetSpec { classes: 3, ..small_spec() }, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.lines().any(|l| l == "0 0 labeled"));
    }

    #[test]
    fn rejects_bad_specs() {
        let one = DatasetSpec { domains: vec![DomainStyle::IDENTITY], ..small_spec() };
        assert!(generate_dataset(&one, 0).is_err());
        let classes = DatasetSpec { classes: 5, ..small_spec() };
        assert!(generate_dataset(&classes, 0).is_err());
    }
}
