//! Synthetic mass-spectrometry instances: an isotopic-pattern dictionary,
//! sparse nonnegative ground truth and Gaussian noise.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoqError};

/// Isotopic envelope model: isotope `k` of a molecule with monoisotopic mass
/// `m` gets the Poisson weight `lambda^k e^-lambda / k!` with
/// `lambda = m / poisson_mass_scale`, and sits `k isotope_spacing / z`
/// Daltons above it. Isotopes below `truncation` times the largest weight
/// are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternModel {
    pub isotope_spacing: f64,
    pub poisson_mass_scale: f64,
    pub truncation: f64,
}

impl Default for PatternModel {
    fn default() -> Self {
        Self {
            isotope_spacing: 1.00235,
            poisson_mass_scale: 1800.0,
            truncation: 1e-4,
        }
    }
}

impl PatternModel {
    /// Relative isotope weights (largest = 1) for monoisotopic mass `mass`.
    pub fn envelope(&self, mass: f64) -> Vec<f64> {
        let lambda = mass / self.poisson_mass_scale;
        let mut weights = Vec::new();
        let mut w = (-lambda).exp();
        let mut k = 0usize;
        loop {
            weights.push(w);
            k += 1;
            w *= lambda / k as f64;
            let max = weights.iter().cloned().fold(0.0, f64::max);
            // past the mode the weights only decrease
            if (k as f64) > lambda && w < self.truncation * max {
                break;
            }
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        weights
            .into_iter()
            .map(|w| w / max)
            .filter(|&w| w >= self.truncation)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub n_atoms: usize,
    pub n_samples: usize,
    pub mass_min: f64,
    pub mass_max: f64,
    pub charge: u32,
    pub pattern: PatternModel,
    /// Standard deviation of each Gaussian isotope peak, in Daltons.
    pub peak_width: f64,
}

/// Peaks are evaluated out to this many widths from their center.
const PEAK_CUTOFF: f64 = 5.0;

impl DictionarySpec {
    pub const DEFAULT_PEAK_WIDTH: f64 = 0.15;

    /// `n` atoms and samples on the 1000 to 1100 Da grid at charge 1.
    pub fn square(n: usize) -> Self {
        Self {
            n_atoms: n,
            n_samples: n,
            mass_min: 1000.0,
            mass_max: 1100.0,
            charge: 1,
            pattern: PatternModel::default(),
            peak_width: Self::DEFAULT_PEAK_WIDTH,
        }
    }

    /// Same grid step as the full-size preset with `n` points from 1000 Da.
    pub fn same_step(n: usize) -> Self {
        let full = Self::square(1000);
        let step = full.sample_step();
        Self {
            mass_max: full.mass_min + step * (n as f64 - 1.0),
            ..Self::square(n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(SpoqError::Config(msg));
        if self.n_atoms == 0 || self.n_samples < 2 {
            return cfg(format!(
                "need at least one atom and two samples, got {} and {}",
                self.n_atoms, self.n_samples
            ));
        }
        if !(self.mass_min > 0.0 && self.mass_max > self.mass_min && self.mass_max.is_finite()) {
            return cfg(format!(
                "invalid mass range [{}, {}]",
                self.mass_min, self.mass_max
            ));
        }
        if self.charge == 0 {
            return cfg("charge must be positive".into());
        }
        let p = &self.pattern;
        if !(p.isotope_spacing > 0.0 && p.poisson_mass_scale > 0.0 && p.truncation > 0.0 && p.truncation < 1.0) {
            return cfg(format!("invalid pattern model {p:?}"));
        }
        if !(self.peak_width >= self.sample_step()) {
            return cfg(format!(
                "peak width {} is below the grid step {}",
                self.peak_width,
                self.sample_step()
            ));
        }
        Ok(())
    }

    pub fn sample_step(&self) -> f64 {
        (self.mass_max - self.mass_min) / (self.n_samples as f64 - 1.0)
    }

    pub fn sample_masses(&self) -> Array1<f64> {
        Array1::linspace(self.mass_min, self.mass_max, self.n_samples)
    }

    pub fn atom_masses(&self) -> Array1<f64> {
        if self.n_atoms == 1 {
            return Array1::from_elem(1, self.mass_min);
        }
        Array1::linspace(self.mass_min, self.mass_max, self.n_atoms)
    }
}

/// `M x N` nonnegative dictionary; column `n` is the rendered envelope of
/// atom `n`, scaled to unit maximum.
pub fn build_dictionary(spec: &DictionarySpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let grid = spec.sample_masses();
    let step = spec.sample_step();
    let mut d = Array2::zeros((spec.n_samples, spec.n_atoms));
    let inv = 1.0 / (2.0 * spec.peak_width * spec.peak_width);
    let reach = PEAK_CUTOFF * spec.peak_width;
    for (n, &mass) in spec.atom_masses().iter().enumerate() {
        for (k, &w) in spec.pattern.envelope(mass).iter().enumerate() {
            let center = mass + k as f64 * spec.pattern.isotope_spacing / spec.charge as f64;
            let lo = ((center - reach - spec.mass_min) / step).ceil().max(0.0) as usize;
            let hi = ((center + reach - spec.mass_min) / step).floor();
            if hi < 0.0 {
                continue;
            }
            let hi = (hi as usize).min(spec.n_samples - 1);
            for i in lo..=hi {
                let dm = grid[i] - center;
                d[[i, n]] += w * (-dm * dm * inv).exp();
            }
        }
        let max = d.column(n).iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(SpoqError::Config(format!(
                "atom {n} at {mass} Da renders no peak on the grid"
            )));
        }
        d.column_mut(n).mapv_inplace(|v| v / max);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x: Array1<f64>,
    /// Sorted indices of the nonzero entries.
    pub support: Vec<usize>,
    pub seed: u64,
}

/// Uniformly drawn support of size `p_nonzero` with amplitudes uniform on
/// `[lo, hi]`.
pub fn sample_ground_truth(n: usize, p_nonzero: usize, amplitude_range: (f64, f64), seed: u64) -> Result<GroundTruth> {
    if p_nonzero == 0 || p_nonzero > n {
        return Err(SpoqError::InvalidParameter(format!(
            "need 0 < P <= N, got P = {p_nonzero}, N = {n}"
        )));
    }
    let (lo, hi) = amplitude_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SpoqError::InvalidParameter(format!(
            "amplitude range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support = rand::seq::index::sample(&mut rng, n, p_nonzero).into_vec();
    support.sort_unstable();
    let mut x = Array1::zeros(n);
    for &j in &support {
        x[j] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    }
    Ok(GroundTruth { x, support, seed })
}

/// `y = D x + b` with `b ~ N(0, sigma^2 I)` and
/// `sigma = noise_percent / 100 * max(D x)`. Returns `(y, sigma)`.
pub fn synthesize_observation(
    d: &Array2<f64>,
    x: ArrayView1<f64>,
    noise_percent: f64,
    seed: u64,
) -> Result<(Array1<f64>, f64)> {
    if d.ncols() != x.len() {
        return Err(SpoqError::Dimension {
            expected: d.ncols(),
            got: x.len(),
        });
    }
    if !(noise_percent >= 0.0 && noise_percent.is_finite()) {
        return Err(SpoqError::InvalidParameter(format!(
            "noise level must be non-negative, got {noise_percent}"
        )));
    }
    let clean = d.dot(&x);
    let peak = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if noise_percent == 0.0 {
        return Ok((clean, 0.0));
    }
    if !(peak > 0.0) {
        return Err(SpoqError::Domain(
            "noise relative to a zero spectrum is undefined".into(),
        ));
    }
    let sigma = noise_percent / 100.0 * peak;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let normal = Normal::new(0.0, sigma).map_err(|e| SpoqError::InvalidParameter(e.to_string()))?;
    let y = clean.mapv(|v| v + normal.sample(&mut rng));
    Ok((y, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPreset {
    A,
    B,
    /// Reduced size for quick runs: 200 atoms and samples, 10 peaks.
    Small,
}

impl DatasetPreset {
    pub fn spec(self) -> DictionarySpec {
        match self {
            DatasetPreset::A | DatasetPreset::B => DictionarySpec::square(1000),
            DatasetPreset::Small => DictionarySpec::same_step(200),
        }
    }

    pub fn n_nonzero(self) -> usize {
        match self {
            DatasetPreset::A => 48,
            DatasetPreset::B => 94,
            DatasetPreset::Small => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetPreset::A => "a",
            DatasetPreset::B => "b",
            DatasetPreset::Small => "small",
        }
    }
}

impl std::str::FromStr for DatasetPreset {
    type Err = SpoqError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(DatasetPreset::A),
            "b" => Ok(DatasetPreset::B),
            "small" => Ok(DatasetPreset::Small),
            other => Err(SpoqError::Config(format!("unknown dataset preset '{other}'"))),
        }
    }
}

/// Everything needed to replay one experiment besides solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub preset: Option<DatasetPreset>,
    pub n_nonzero: usize,
    pub amplitude_range: (f64, f64),
    pub seed: u64,
    pub noise_percent: f64,
    pub sigma: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spec: DictionarySpec,
    pub meta: InstanceMeta,
    pub d: Array2<f64>,
    pub x_true: Array1<f64>,
    pub y: Array1<f64>,
}

const HEADER: &str = "# spoq instance v1";

impl Instance {
    pub const DEFAULT_AMPLITUDES: (f64, f64) = (1.0, 100.0);
    pub const DEFAULT_X_MAX: f64 = 1e5;

    pub fn generate(
        spec: &DictionarySpec,
        n_nonzero: usize,
        noise_percent: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = build_dictionary(spec)?;
        Self::with_dictionary(*spec, d, None, n_nonzero, noise_percent, seed)
    }

    pub fn from_preset(preset: DatasetPreset, noise_percent: f64, seed: u64) -> Result<Self> {
        let spec = preset.spec();
        let d = build_dictionary(&spec)?;
        Self::with_dictionary(spec, d, Some(preset), preset.n_nonzero(), noise_percent, seed)
    }

    /// Draws truth and noise for a dictionary built from `spec`, so sweeps can
    /// reuse one dictionary.
    pub fn with_dictionary(
        spec: DictionarySpec,
        d: Array2<f64>,
        preset: Option<DatasetPreset>,
        n_nonzero: usize,
        noise_percent: f64,
        seed: u64,
    ) -> Result<Self> {
        if d.dim() != (spec.n_samples, spec.n_atoms) {
            return Err(SpoqError::Dimension {
                expected: spec.n_samples * spec.n_atoms,
                got: d.len(),
            });
        }
        let truth = sample_ground_truth(spec.n_atoms, n_nonzero, Self::DEFAULT_AMPLITUDES, seed)?;
        let (y, sigma) = synthesize_observation(&d, truth.x.view(), noise_percent, seed)?;
        Ok(Self {
            spec,
            meta: InstanceMeta {
                preset,
                n_nonzero,
                amplitude_range: Self::DEFAULT_AMPLITUDES,
                seed,
                noise_percent,
                sigma,
                x_max: Self::DEFAULT_X_MAX,
            },
            d,
            x_true: truth.x,
            y,
        })
    }

    /// Noise-ball radius `sqrt(N) sigma`.
    pub fn xi(&self) -> f64 {
        (self.spec.n_atoms as f64).sqrt() * self.meta.sigma
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{HEADER}").ok();
        writeln!(out, "spec {}", to_json(&self.spec)?).ok();
        writeln!(out, "meta {}", to_json(&self.meta)?).ok();
        write_vector(&mut out, "x_true", self.x_true.view());
        write_vector(&mut out, "y", self.y.view());
        writeln!(out, "dictionary {} {}", self.d.nrows(), self.d.ncols()).ok();
        for row in self.d.rows() {
            write_row(&mut out, row);
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(SpoqError::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (line, header) = next("header")?;
        if header.trim() != HEADER {
            return Err(SpoqError::Parse {
                line,
                msg: format!("expected '{HEADER}'"),
            });
        }
        let (line, s) = next("spec")?;
        let spec: DictionarySpec = parse_json(line, &s, "spec")?;
        let (line, s) = next("meta")?;
        let meta: InstanceMeta = parse_json(line, &s, "meta")?;

        let mut read_vec = |name: &str| -> Result<Array1<f64>> {
            let (line, head) = next(name)?;
            let len = parse_head(line, &head, name, 1)?[0];
            let (line, body) = next(name)?;
            let v = parse_row(line, &body)?;
            if v.len() != len {
                return Err(SpoqError::Parse {
                    line,
                    msg: format!("{name}: expected {len} values, found {}", v.len()),
                });
            }
            Ok(Array1::from(v))
        };
        let x_true = read_vec("x_true")?;
        let y = read_vec("y")?;
        let (line, head) = next("dictionary")?;
        let dims = parse_head(line, &head, "dictionary", 2)?;
        let (m, n) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            let (line, body) = next("dictionary row")?;
            let row = parse_row(line, &body)?;
            if row.len() != n {
                return Err(SpoqError::Parse {
                    line,
                    msg: format!("dictionary row has {} values, expected {n}", row.len()),
                });
            }
            data.extend(row);
        }
        let d = Array2::from_shape_vec((m, n), data).map_err(|e| SpoqError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        if d.dim() != (spec.n_samples, spec.n_atoms) || x_true.len() != n || y.len() != m {
            return Err(SpoqError::Parse {
                line: 0,
                msg: "section sizes disagree with the spec".into(),
            });
        }
        Ok(Self {
            spec,
            meta,
            d,
            x_true,
            y,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| SpoqError::Config(e.to_string()))
}

fn write_vector(out: &mut String, name: &str, v: ArrayView1<f64>) {
    writeln!(out, "{name} {}", v.len()).ok();
    write_row(out, v);
}

fn write_row(out: &mut String, v: ArrayView1<f64>) {
    let mut first = true;
    for x in v.iter() {
        if !first {
            out.push(' ');
        }
        first = false;
        // Display prints the shortest string that round-trips
        write!(out, "{x}").ok();
    }
    out.push('\n');
}

fn parse_json<T: serde::de::DeserializeOwned>(line: usize, s: &str, key: &str) -> Result<T> {
    let body = s.strip_prefix(key).map(str::trim).ok_or_else(|| SpoqError::Parse {
        line,
        msg: format!("expected '{key}' section"),
    })?;
    serde_json::from_str(body).map_err(|e| SpoqError::Parse {
        line,
        msg: e.to_string(),
    })
}

fn parse_head(line: usize, s: &str, key: &str, count: usize) -> Result<Vec<usize>> {
    let mut parts = s.split_whitespace();
    if parts.next() != Some(key) {
        return Err(SpoqError::Parse {
            line,
            msg: format!("expected '{key}' section"),
        });
    }
    let dims: Vec<usize> = parts
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| SpoqError::Parse {
            line,
            msg: e.to_string(),
        })?;
    if dims.len() != count {
        return Err(SpoqError::Parse {
            line,
            msg: format!("'{key}' needs {count} sizes"),
        });
    }
    Ok(dims)
}

fn parse_row(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| SpoqError::Parse {
                line,
                msg: format!("'{t}': {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sparsity_degree;
    use crate::penalties::exact_ratio;
    use approx::assert_relative_eq;

    #[test]
    fn envelope_has_a_few_isotopes_near_1000_da() {
        let env = PatternModel::default().envelope(1000.0);
        assert!((3..=6).contains(&env.len()), "{env:?}");
        assert_eq!(env[0], 1.0);
        assert!(env.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn dictionary_is_nonnegative_with_unit_columns() {
        let d = build_dictionary(&DatasetPreset::Small.spec()).unwrap();
        assert_eq!(d.dim(), (200, 200));
        assert!(d.iter().all(|&v| v >= 0.0));
        for col in d.columns() {
            let max = col.iter().cloned().fold(0.0, f64::max);
            assert_relative_eq!(max, 1.0);
        }
    }

    #[test]
    fn distant_columns_have_disjoint_support() {
        let spec = DictionarySpec {
            mass_max: 1300.0,
            peak_width: 0.6,
            ..DictionarySpec::square(600)
        };
        let d = build_dictionary(&spec).unwrap();
        let overlap: f64 = d.column(0).iter().zip(d.column(599).iter()).map(|(a, b)| a * b).sum();
        assert_eq!(overlap, 0.0);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let spec = DictionarySpec {
            peak_width: 0.05,
            ..DictionarySpec::square(1000)
        };
        assert!(matches!(build_dictionary(&spec), Err(SpoqError::Config(_))));
    }

    #[test]
    fn ground_truth_sampling() {
        let dense = sample_ground_truth(20, 20, (1.0, 2.0), 3).unwrap();
        assert!(dense.x.iter().all(|&v| (1.0..=2.0).contains(&v)));
        let one = sample_ground_truth(50, 1, (1.0, 100.0), 9).unwrap();
        assert_eq!(one.support.len(), 1);
        assert_relative_eq!(exact_ratio(one.x.view(), 0.75, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        let a = sample_ground_truth(1000, 48, (1.0, 100.0), 7).unwrap();
        let b = sample_ground_truth(1000, 48, (1.0, 100.0), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(sparsity_degree(a.x.view(), 1e-4).unwrap(), 48);
        assert!(sample_ground_truth(10, 0, (1.0, 2.0), 0).is_err());
        assert!(sample_ground_truth(10, 11, (1.0, 2.0), 0).is_err());
    }

    #[test]
    fn noise_free_observation_is_exact() {
        let d = build_dictionary(&DatasetPreset::Small.spec()).unwrap();
        let t = sample_ground_truth(200, 10, (1.0, 100.0), 1).unwrap();
        let (y, sigma) = synthesize_observation(&d, t.x.view(), 0.0, 1).unwrap();
        assert_eq!(sigma, 0.0);
        assert_eq!(y, d.dot(&t.x));
        let zero = Array1::zeros(200);
        assert!(matches!(
            synthesize_observation(&d, zero.view(), 0.1, 1),
            Err(SpoqError::Domain(_))
        ));
    }

    #[test]
    fn noise_std_matches_sigma() {
        let n = 1_000_000;
        let d = Array2::from_elem((n, 1), 1.0);
        let (y, sigma) = synthesize_observation(&d, Array1::from_elem(1, 50.0).view(), 1.0, 11).unwrap();
        assert_relative_eq!(sigma, 0.5);
        let mean = y.mean().unwrap();
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.01);
        assert!((mean - 50.0).abs() < 0.01);
    }

    #[test]
    fn instance_text_roundtrip_is_exact() {
        let inst = Instance::from_preset(DatasetPreset::Small, 0.1, 5).unwrap();
        let mut buf = Vec::new();
        inst.write_to(&mut buf).unwrap();
        let back = Instance::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, inst);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn malformed_instances_are_parse_errors() {
        assert!(matches!(
            Instance::read_from("not an instance\n".as_bytes()),
            Err(SpoqError::Parse { line: 1, .. })
        ));
        let inst = Instance::from_preset(DatasetPreset::Small, 0.1, 5).unwrap();
        let mut buf = Vec::new();
        inst.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("y 200", "y 199", 1);
        assert!(matches!(
            Instance::read_from(text.as_bytes()),
            Err(SpoqError::Parse { .. })
        ));
    }

    #[test]
    fn preset_sparsity() {
        assert_eq!(DatasetPreset::A.n_nonzero(), 48);
        assert_eq!(DatasetPreset::B.n_nonzero(), 94);
        let spec = DatasetPreset::A.spec();
        assert_eq!((spec.n_atoms, spec.n_samples), (1000, 1000));
        assert_relative_eq!(DatasetPreset::Small.spec().sample_step(), spec.sample_step(), max_relative = 1e-12);
    }
}
